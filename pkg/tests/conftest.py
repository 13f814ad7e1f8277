import pytest

from microtrap.optics import (IlluminationBeam, ImagingTrainSpec, LensRect,
                              MicrolensArraySpec, SlmSpec, build_address_map)


@pytest.fixture(scope="session")
def slm():
    return SlmSpec()


@pytest.fixture(scope="session")
def mla():
    return MicrolensArraySpec()


@pytest.fixture(scope="session")
def beam():
    return IlluminationBeam()


@pytest.fixture(scope="session")
def imaging():
    return ImagingTrainSpec()


@pytest.fixture(scope="session")
def grid3(mla):
    return LensRect.centered(mla)


@pytest.fixture(scope="session")
def amap3(slm, mla, grid3):
    return build_address_map(slm, mla, 2.0, grid3)
