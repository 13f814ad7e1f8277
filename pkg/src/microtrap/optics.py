"""Addressing optics: LCD modulator, microlens array and re-imaging telescope.

Everything here is in SI units (metres, watts). Lens indices are ``(i, j)``
with ``i`` along x (SLM columns) and ``j`` along y (SLM rows). Lens positions
are measured from the central lens ``(n_x // 2, n_y // 2)``, which is also the
default centre of the illumination beam.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import AddressingError, DomainError

Lens = tuple[int, int]

#: Area of one microlens expressed in SLM pixels.
DISK_AREA_PX = 80.0


@dataclass(frozen=True)
class SlmSpec:
    n_cols: int = 1024
    n_rows: int = 768
    pixel_pitch: float = 19e-6
    t_floor: float = 1.0 / 270.0
    t_levels: int = 256
    rise_time: float = 60e-3
    fall_time: float = 10e-3
    absolute_throughput: float = 0.059

    def __post_init__(self):
        if not 0.0 < self.t_floor < 1.0:
            raise DomainError(f"t_floor must lie in (0, 1), got {self.t_floor}")
        if self.t_levels < 2:
            raise DomainError(f"t_levels must be >= 2, got {self.t_levels}")
        if self.n_cols < 1 or self.n_rows < 1:
            raise DomainError("pixel counts must be positive")
        for name in ("pixel_pitch", "rise_time", "fall_time"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if not 0.0 < self.absolute_throughput <= 1.0:
            raise DomainError("absolute_throughput must lie in (0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        """Mask array shape, ``(rows, cols)``."""
        return (self.n_rows, self.n_cols)

    @property
    def active_area(self) -> tuple[float, float]:
        return (self.n_cols * self.pixel_pitch, self.n_rows * self.pixel_pitch)

    @property
    def max_level(self) -> int:
        return self.t_levels - 1


@dataclass(frozen=True, eq=False)
class SlmMask:
    """Per-pixel drive levels of the modulator, ``levels[row, col]``."""

    levels: np.ndarray
    spec: SlmSpec = field(default_factory=SlmSpec)

    def __post_init__(self):
        levels = np.array(self.levels, copy=True)
        if levels.shape != self.spec.shape:
            raise DomainError(
                f"mask shape {levels.shape} does not match SLM {self.spec.shape}")
        if not np.issubdtype(levels.dtype, np.integer):
            if not np.all(levels == np.round(levels)):
                raise DomainError("mask levels must be integers")
        if levels.size and (levels.min() < 0 or levels.max() > self.spec.max_level):
            raise DomainError(f"mask levels must lie in [0, {self.spec.max_level}]")
        dtype = np.uint8 if self.spec.max_level <= 255 else np.uint16
        levels = levels.astype(dtype)
        levels.setflags(write=False)
        object.__setattr__(self, "levels", levels)

    @classmethod
    def uniform(cls, level: int, spec: SlmSpec | None = None) -> "SlmMask":
        spec = spec or SlmSpec()
        return cls(np.full(spec.shape, level, dtype=np.int64), spec)

    def __eq__(self, other):
        if not isinstance(other, SlmMask):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.levels, other.levels)

    __hash__ = None


@dataclass(frozen=True)
class IlluminationBeam:
    power: float = 137e-3
    waist_radius: float = 700e-6
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.power < 0:
            raise DomainError("beam power must be >= 0")
        if self.waist_radius <= 0:
            raise DomainError("beam waist must be positive")

    def intensity(self, x, y):
        """Gaussian intensity profile in the lens-array plane (W/m^2)."""
        w2 = self.waist_radius ** 2
        r2 = (np.asarray(x) - self.center[0]) ** 2 + (np.asarray(y) - self.center[1]) ** 2
        return 2 * self.power / (np.pi * w2) * np.exp(-2 * r2 / w2)


@dataclass(frozen=True)
class MicrolensArraySpec:
    n_x: int = 50
    n_y: int = 50
    pitch: float = 125e-6
    lens_diameter: float = 100e-6
    focal_length: float = 1e-3

    def __post_init__(self):
        if self.n_x < 1 or self.n_y < 1:
            raise DomainError("lens counts must be positive")
        if min(self.pitch, self.lens_diameter, self.focal_length) <= 0:
            raise DomainError("microlens lengths must be positive")
        if self.lens_diameter > self.pitch:
            raise DomainError("lens diameter exceeds the pitch")

    @property
    def center_index(self) -> Lens:
        return (self.n_x // 2, self.n_y // 2)

    def contains(self, lens: Lens) -> bool:
        return 0 <= lens[0] < self.n_x and 0 <= lens[1] < self.n_y

    def lens_position(self, lens: Lens) -> tuple[float, float]:
        """Lens centre in the lens-array plane, relative to the central lens."""
        ic, jc = self.center_index
        return ((lens[0] - ic) * self.pitch, (lens[1] - jc) * self.pitch)


@dataclass(frozen=True)
class LensRect:
    """Rectangle of lens indices ``[i0, i0 + width) x [j0, j0 + height)``."""

    i0: int
    j0: int
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DomainError("lens rectangle must be non-empty")

    @classmethod
    def full(cls, mla: MicrolensArraySpec) -> "LensRect":
        return cls(0, 0, mla.n_x, mla.n_y)

    @classmethod
    def centered(cls, mla: MicrolensArraySpec, width: int = 3, height: int = 3) -> "LensRect":
        ic, jc = mla.center_index
        return cls(ic - width // 2, jc - height // 2, width, height)

    def __contains__(self, lens) -> bool:
        i, j = lens
        return self.i0 <= i < self.i0 + self.width and self.j0 <= j < self.j0 + self.height

    def __iter__(self) -> Iterator[Lens]:
        # row-major: j outer, i inner, so (i0, j0) is top-left
        for j in range(self.j0, self.j0 + self.height):
            for i in range(self.i0, self.i0 + self.width):
                yield (i, j)

    def __len__(self) -> int:
        return self.width * self.height

    def fits(self, mla: MicrolensArraySpec) -> bool:
        return (self.i0 >= 0 and self.j0 >= 0
                and self.i0 + self.width <= mla.n_x and self.j0 + self.height <= mla.n_y)


@dataclass(frozen=True, eq=False)
class LensAddressMap:
    """Pixel disk on the SLM belonging to each addressable lens."""

    centers: Mapping[Lens, tuple[float, float]]
    radius_px: float
    relay_demag: float
    shape: tuple[int, int]
    subset: LensRect

    def center_px(self, lens: Lens) -> tuple[float, float]:
        try:
            return self.centers[lens]
        except KeyError:
            raise AddressingError(f"lens {lens} is not in the mapped subset") from None

    def disk_pixels(self, lens: Lens) -> tuple[np.ndarray, np.ndarray]:
        """Row and column indices of the pixels whose centres lie in the disk."""
        try:
            return self._pixel_cache[lens]
        except KeyError:
            raise AddressingError(f"lens {lens} is not in the mapped subset") from None

    @cached_property
    def _pixel_cache(self) -> dict[Lens, tuple[np.ndarray, np.ndarray]]:
        return {lens: _disk_pixels(cx, cy, self.radius_px, self.shape)
                for lens, (cx, cy) in self.centers.items()}


def _disk_pixels(cx, cy, radius, shape):
    n_rows, n_cols = shape
    c0, c1 = max(0, math.floor(cx - radius)), min(n_cols - 1, math.ceil(cx + radius))
    r0, r1 = max(0, math.floor(cy - radius)), min(n_rows - 1, math.ceil(cy + radius))
    rows, cols = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    inside = (cols - cx) ** 2 + (rows - cy) ** 2 <= radius ** 2
    rr, cc = rows[inside], cols[inside]
    rr.setflags(write=False)
    cc.setflags(write=False)
    return rr, cc


def build_address_map(slm: SlmSpec, mla: MicrolensArraySpec, relay_demag: float = 2.0,
                      used_subset: LensRect | None = None,
                      origin_px: tuple[float, float] | None = None,
                      disk_area_px: float = DISK_AREA_PX) -> LensAddressMap:
    """Map every lens of ``used_subset`` to a pixel disk on the modulator.

    The central lens images onto ``origin_px`` (default: the middle of the
    pixel grid). Pixel ``(col, row)`` has its centre at coordinate
    ``(col, row)``.

    Raises
    ------
    AddressingError
        If a disk would extend beyond the pixel grid.
    DomainError
        On a non-positive demagnification, a subset outside the array, or
        overlapping disks.
    """
    if relay_demag <= 0:
        raise DomainError("relay_demag must be positive")
    if disk_area_px <= 0:
        raise DomainError("disk_area_px must be positive")
    subset = used_subset or LensRect.full(mla)
    if not subset.fits(mla):
        raise DomainError(f"lens subset {subset} exceeds the {mla.n_x}x{mla.n_y} array")
    if origin_px is None:
        origin_px = ((slm.n_cols - 1) / 2.0, (slm.n_rows - 1) / 2.0)
    radius = math.sqrt(disk_area_px / math.pi)
    spacing = mla.pitch * relay_demag / slm.pixel_pitch
    if (subset.width > 1 or subset.height > 1) and spacing < 2 * radius:
        raise DomainError(
            f"disks overlap: spacing {spacing:.3f} px < diameter {2 * radius:.3f} px")

    scale = relay_demag / slm.pixel_pitch
    centers = {}
    for lens in subset:
        x, y = mla.lens_position(lens)
        cx, cy = origin_px[0] + x * scale, origin_px[1] + y * scale
        if (cx - radius < -0.5 or cy - radius < -0.5
                or cx + radius > slm.n_cols - 0.5 or cy + radius > slm.n_rows - 0.5):
            raise AddressingError(
                f"disk of lens {lens} at pixel ({cx:.2f}, {cy:.2f}) lies outside "
                f"the {slm.n_cols}x{slm.n_rows} pixel grid")
        centers[lens] = (cx, cy)
    return LensAddressMap(centers=centers, radius_px=radius, relay_demag=relay_demag,
                          shape=slm.shape, subset=subset)


def level_to_transmission(level, slm: SlmSpec):
    """Relative transmission of a drive level, linear between floor and 1.

    Accepts a scalar or an integer array.
    """
    lv = np.asarray(level)
    if lv.size and (lv.min() < 0 or lv.max() > slm.max_level):
        raise DomainError(f"level must lie in [0, {slm.max_level}], got {level!r}")
    t = slm.t_floor + (1.0 - slm.t_floor) * lv / slm.max_level
    return float(t) if t.ndim == 0 else t


def rasterize_pattern(on_lenses: Iterable[Lens], on_level: int, off_level: int,
                      amap: LensAddressMap, slm: SlmSpec) -> SlmMask:
    """Paint disks for the mapped lenses on a dark (level 0) background."""
    for lv in (on_level, off_level):
        if not 0 <= lv <= slm.max_level:
            raise DomainError(f"level must lie in [0, {slm.max_level}], got {lv}")
    on = set(map(tuple, on_lenses))
    for lens in on:
        if lens not in amap.centers:
            raise AddressingError(f"lens {lens} is not in the mapped subset")
    levels = np.zeros(slm.shape, dtype=np.int64)
    for lens in amap.centers:
        rows, cols = amap.disk_pixels(lens)
        levels[rows, cols] = on_level if lens in on else off_level
    return SlmMask(levels, slm)


def mean_disk_transmission(mask: SlmMask, amap: LensAddressMap, lens: Lens) -> float:
    rows, cols = amap.disk_pixels(lens)
    return float(np.mean(level_to_transmission(mask.levels[rows, cols], mask.spec)))


@lru_cache(maxsize=4096)
def aperture_power(power: float, waist: float, radius: float, offset: float = 0.0,
                   nodes: int = 64, closed_form: bool = True) -> float:
    """Power of a Gaussian beam passing a circular aperture.

    ``offset`` is the distance between beam axis and aperture centre. The
    centred case uses the closed form unless ``closed_form=False``; otherwise
    a fixed ``nodes x nodes`` Gauss-Legendre rule in polar coordinates over
    the aperture.
    """
    if offset == 0.0 and closed_form:
        return power * -math.expm1(-2 * radius ** 2 / waist ** 2)
    r, wr = _gauss_legendre(nodes, 0.0, radius)
    th, wt = _gauss_legendre(nodes, 0.0, 2 * math.pi)
    rr, tt = np.meshgrid(r, th, indexing="ij")
    d2 = rr ** 2 + offset ** 2 - 2 * rr * offset * np.cos(tt)
    integrand = 2 * power / (math.pi * waist ** 2) * np.exp(-2 * d2 / waist ** 2) * rr
    return float(wr @ integrand @ wt)


@lru_cache(maxsize=None)
def _leggauss(n):
    return np.polynomial.legendre.leggauss(n)


def _gauss_legendre(n, a, b):
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def lens_input_power(mask: SlmMask, beam: IlluminationBeam, amap: LensAddressMap,
                     lens: Lens, mla: MicrolensArraySpec | None = None) -> float:
    """Power collected by one microlens behind the modulator (W)."""
    mla = mla or MicrolensArraySpec()
    amap.center_px(lens)
    x, y = mla.lens_position(lens)
    offset = math.hypot(x - beam.center[0], y - beam.center[1])
    raw = aperture_power(beam.power, beam.waist_radius, mla.lens_diameter / 2, offset)
    return raw * mean_disk_transmission(mask, amap, lens)


@dataclass(frozen=True)
class ImagingTrainSpec:
    f_relay: float = 80e-3
    f_objective: float = 35.5e-3
    numerical_aperture: float = 0.29
    throughput: float = 0.885

    def __post_init__(self):
        if self.f_relay <= 0 or self.f_objective <= 0:
            raise DomainError("focal lengths must be positive")
        if not 0.0 < self.numerical_aperture < 1.0:
            raise DomainError(
                f"numerical_aperture must lie in (0, 1), got {self.numerical_aperture}")
        if not 0.0 < self.throughput <= 1.0:
            raise DomainError("throughput must lie in (0, 1]")

    @property
    def demagnification(self) -> float:
        return self.f_relay / self.f_objective


@dataclass(frozen=True)
class TrapSite:
    lens: Lens
    position: tuple[float, float]
    power: float
    waist: float = 3.7e-6
    relative_transmission: float = 1.0


@dataclass(frozen=True)
class TrapSiteArray:
    sites: tuple[TrapSite, ...]
    pitch: float

    def __iter__(self):
        return iter(self.sites)

    def __len__(self):
        return len(self.sites)

    def __getitem__(self, lens: Lens) -> TrapSite:
        for s in self.sites:
            if s.lens == lens:
                return s
        raise KeyError(lens)

    @property
    def lenses(self) -> list[Lens]:
        return [s.lens for s in self.sites]


def project_focal_array(lens_powers: Mapping[Lens, float], imaging: ImagingTrainSpec,
                        mla: MicrolensArraySpec, waist: float = 3.7e-6,
                        transmissions: Mapping[Lens, float] | None = None,
                        offset: tuple[float, float] = (0.0, 0.0)) -> TrapSiteArray:
    """Re-image the lens-array focal plane into the trap plane."""
    if waist <= 0:
        raise DomainError("waist must be positive")
    pitch = mla.pitch / imaging.demagnification
    ic, jc = mla.center_index
    sites = []
    for lens in sorted(lens_powers, key=lambda l: (l[1], l[0])):
        p = lens_powers[lens]
        if p < 0:
            raise DomainError(f"negative power for lens {lens}")
        pos = (pitch * (lens[0] - ic) + offset[0], pitch * (lens[1] - jc) + offset[1])
        t = 1.0 if transmissions is None else transmissions[lens]
        sites.append(TrapSite(lens, pos, p * imaging.throughput, waist, t))
    return TrapSiteArray(tuple(sites), pitch)


def trap_sites(mask: SlmMask, beam: IlluminationBeam, amap: LensAddressMap,
               mla: MicrolensArraySpec, imaging: ImagingTrainSpec,
               waist: float = 3.7e-6, lenses: Iterable[Lens] | None = None) -> TrapSiteArray:
    """Full chain: mask and beam to per-site powers in the trap plane."""
    lenses = list(lenses) if lenses is not None else list(amap.centers)
    powers = {l: lens_input_power(mask, beam, amap, l, mla) for l in lenses}
    trans = {l: mean_disk_transmission(mask, amap, l) for l in lenses}
    return project_focal_array(powers, imaging, mla, waist, trans)


def diffraction_limits(wavelength: float, na: float) -> tuple[float, float]:
    """Return ``(min_structure, min_waist)`` = ``(lambda/2NA, lambda/(pi NA))``."""
    if not 0.0 < na < 1.0:
        raise DomainError(f"numerical aperture must lie in (0, 1), got {na}")
    return wavelength / (2 * na), wavelength / (math.pi * na)
