"""JSON run configuration: parsing, validation and conversion to model objects.

Keys carry their unit as a suffix (``_um``, ``_mw``, ``_ms``, ``_uk`` ...).
Every field is optional; ``{}`` reproduces the nominal setup.
"""
from __future__ import annotations

import json
import math
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import optics, spin, trap
from .errors import ConfigError, DomainError
from .experiments import ExperimentSpec, PatternSpec, site_ensembles
from .optics import LensRect

SCHEMA_VERSION = "1"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SlmSection(_Section):
    n_cols: int = Field(1024, gt=0)
    n_rows: int = Field(768, gt=0)
    pixel_pitch_um: float = Field(19.0, gt=0)
    t_floor: float = Field(1.0 / 270.0, gt=0, lt=1)
    t_levels: int = Field(256, ge=2, le=256)
    rise_time_ms: float = Field(60.0, gt=0)
    fall_time_ms: float = Field(10.0, gt=0)
    absolute_throughput: float = Field(0.059, gt=0, le=1)


class BeamSection(_Section):
    power_mw: float = Field(137.0, ge=0)
    waist_radius_um: float = Field(700.0, gt=0)
    center_um: tuple[float, float] = (0.0, 0.0)
    wavelength_um: float = Field(0.815, gt=0)


class MlaSection(_Section):
    n_x: int = Field(50, gt=0)
    n_y: int = Field(50, gt=0)
    pitch_um: float = Field(125.0, gt=0)
    lens_diameter_um: float = Field(100.0, gt=0)
    focal_length_um: float = Field(1000.0, gt=0)
    relay_demag: float = Field(2.0, gt=0)
    disk_area_px: float = Field(80.0, gt=0)


class ImagingSection(_Section):
    f_relay_um: float = Field(80_000.0, gt=0)
    f_objective_um: float = Field(35_500.0, gt=0)
    numerical_aperture: float = Field(0.29, gt=0, lt=1)
    throughput: float = Field(0.885, gt=0, le=1)
    waist_um: float = Field(3.7, gt=0)


class SpeciesSection(_Section):
    mass_kg: float = Field(1.4100e-25, gt=0)
    d1_wavelength_um: float = Field(0.79498, gt=0)
    d2_wavelength_um: float = Field(0.78024, gt=0)
    linewidth_mhz: float = Field(6.07, gt=0)
    saturation_intensity_w_m2: float = Field(16.7, gt=0)
    hyperfine_splitting_ghz: float = Field(3.036, gt=0)


class EnsembleSection(_Section):
    n_atoms: int = Field(2000, ge=1)
    temperature_uk: Optional[float] = Field(None, ge=0)
    kappa: float = Field(0.5, gt=0, le=1)
    depth_uk: Optional[float] = Field(None, gt=0)
    differential_shift_hz: Optional[float] = Field(None, ge=0)
    per_site_physics: bool = False


class NoiseSection(_Section):
    enabled: bool = True
    atoms_min: int = Field(10, ge=1)
    atoms_max: int = Field(100, ge=1)
    shots_per_point: int = Field(5, ge=1)
    rng_seed: int = Field(0, ge=0, lt=2 ** 64)
    irreversible_t2_ms: float = Field(50.0, gt=0)
    crosstalk_epsilon: Optional[float] = Field(4.2e-3, ge=0, le=1)

    @model_validator(mode="after")
    def _atom_range(self):
        if self.atoms_max < self.atoms_min:
            raise ValueError("atoms_max must be >= atoms_min")
        return self


class GridSection(_Section):
    i0: int = Field(24, ge=0)
    j0: int = Field(24, ge=0)
    width: int = Field(3, ge=1)
    height: int = Field(3, ge=1)


class PatternSection(_Section):
    kind: Literal["full", "checkerboard", "plaquettes", "ring", "explicit"] = "checkerboard"
    grid: Optional[GridSection] = None
    parity: Literal[0, 1] = 0
    block_w: int = Field(2, ge=1)
    block_h: int = Field(2, ge=1)
    gap: int = Field(1, ge=0)
    center: Optional[tuple[float, float]] = None
    inner_r: float = Field(0.0, ge=0)
    outer_r: float = Field(1.0, gt=0)
    lenses: tuple[tuple[int, int], ...] = ()


class ExperimentSection(_Section):
    protocol: Literal["ramsey", "echo", "spin_texture_ramsey"] = "ramsey"
    pattern: PatternSection = PatternSection()
    sites: GridSection = GridSection()
    scan_start_ms: float = Field(0.0, ge=0)
    scan_stop_ms: Optional[float] = Field(None, gt=0)
    scan_steps: int = Field(41, ge=2)
    t_pi_us: float = Field(200.0, gt=0)
    T_pi_ms: float = Field(4.0, gt=0)
    ramsey_detuning_khz: float = 1.0
    coupling_exponent: float = Field(1.0, gt=0)
    backend: Literal["analytic", "monte_carlo"] = "analytic"


class ImageSection(_Section):
    averages: int = Field(20, ge=1)
    pixel_scale_um: float = Field(1.0, gt=0)
    blob_sigma_um: Optional[float] = Field(None, gt=0)
    counts_per_atom: float = Field(2.0, ge=0)
    background: float = Field(5.0, ge=0)


class RunConfig(_Section):
    schema_version: Literal["1"] = SCHEMA_VERSION
    slm: SlmSection = SlmSection()
    beam: BeamSection = BeamSection()
    mla: MlaSection = MlaSection()
    imaging: ImagingSection = ImagingSection()
    species: SpeciesSection = SpeciesSection()
    ensemble: EnsembleSection = EnsembleSection()
    noise: NoiseSection = NoiseSection()
    experiment: ExperimentSection = ExperimentSection()
    image: ImageSection = ImageSection()

    # -- conversions to SI model objects ----------------------------------

    def slm_spec(self) -> optics.SlmSpec:
        s = self.slm
        return optics.SlmSpec(s.n_cols, s.n_rows, s.pixel_pitch_um * 1e-6, s.t_floor,
                              s.t_levels, s.rise_time_ms * 1e-3, s.fall_time_ms * 1e-3,
                              s.absolute_throughput)

    def beam_spec(self) -> optics.IlluminationBeam:
        b = self.beam
        return optics.IlluminationBeam(b.power_mw * 1e-3, b.waist_radius_um * 1e-6,
                                       (b.center_um[0] * 1e-6, b.center_um[1] * 1e-6))

    def mla_spec(self) -> optics.MicrolensArraySpec:
        m = self.mla
        return optics.MicrolensArraySpec(m.n_x, m.n_y, m.pitch_um * 1e-6,
                                         m.lens_diameter_um * 1e-6, m.focal_length_um * 1e-6)

    def imaging_spec(self) -> optics.ImagingTrainSpec:
        i = self.imaging
        return optics.ImagingTrainSpec(i.f_relay_um * 1e-6, i.f_objective_um * 1e-6,
                                       i.numerical_aperture, i.throughput)

    def species_spec(self) -> trap.AtomSpecies:
        s = self.species
        return trap.AtomSpecies("Rb85", s.mass_kg, s.d1_wavelength_um * 1e-6,
                                s.d2_wavelength_um * 1e-6, 2 * math.pi * s.linewidth_mhz * 1e6,
                                s.saturation_intensity_w_m2,
                                2 * math.pi * s.hyperfine_splitting_ghz * 1e9)

    def noise_model(self) -> spin.NoiseModel:
        n = self.noise
        return spin.NoiseModel((n.atoms_min, n.atoms_max), n.shots_per_point, n.rng_seed,
                               n.irreversible_t2_ms * 1e-3, n.crosstalk_epsilon, n.enabled)

    @property
    def wavelength(self) -> float:
        return self.beam.wavelength_um * 1e-6

    def site_grid(self) -> LensRect:
        g = self.experiment.sites
        return LensRect(g.i0, g.j0, g.width, g.height)

    def pattern_spec(self) -> PatternSpec:
        p = self.experiment.pattern
        grid = self.site_grid() if p.grid is None else LensRect(
            p.grid.i0, p.grid.j0, p.grid.width, p.grid.height)
        return PatternSpec(p.kind, grid, p.parity, p.block_w, p.block_h, p.gap,
                           p.center, p.inner_r, p.outer_r, tuple(map(tuple, p.lenses)))

    def address_map(self, subset: LensRect | None = None) -> optics.LensAddressMap:
        return optics.build_address_map(self.slm_spec(), self.mla_spec(), self.mla.relay_demag,
                                        subset or self.site_grid(),
                                        disk_area_px=self.mla.disk_area_px)

    def trap_sites(self, lit: set | None = None) -> optics.TrapSiteArray:
        """Trap-plane sites of the site grid; ``lit=None`` illuminates all of them."""
        grid = self.site_grid()
        amap = self.address_map(grid)
        slm = self.slm_spec()
        lit = set(grid) if lit is None else set(lit) & set(grid)
        mask = optics.rasterize_pattern(lit, slm.max_level, 0, amap, slm)
        return optics.trap_sites(mask, self.beam_spec(), amap, self.mla_spec(),
                                 self.imaging_spec(), self.imaging.waist_um * 1e-6)

    def experiment_spec(self) -> ExperimentSpec:
        e, ens = self.experiment, self.ensemble
        species = self.species_spec()
        sites = self.trap_sites()
        physics = site_ensembles(sites, self.wavelength, species,
                                 None if ens.temperature_uk is None else ens.temperature_uk * 1e-6,
                                 ens.kappa, ens.n_atoms)
        center = self.mla_spec().center_index
        ref = physics.get(center) or physics[sites.lenses[len(sites) // 2]]
        depth = ref.depth if ens.depth_uk is None else ens.depth_uk * 1e-6 * trap.k_B
        if ens.differential_shift_hz is None:
            delta0 = ref.delta0 if ens.depth_uk is None else \
                trap.differential_shift(depth, self.wavelength, species)
        else:
            delta0 = 2 * math.pi * ens.differential_shift_hz
        temperature = trap.default_temperature(depth) if ens.temperature_uk is None \
            else ens.temperature_uk * 1e-6
        uniform = spin.ThermalEnsemble(ens.n_atoms, temperature, depth, delta0, ens.kappa)
        stop = e.scan_stop_ms if e.scan_stop_ms is not None else (
            12.0 if e.protocol == "echo" else 8.0)
        return ExperimentSpec(
            protocol=e.protocol,
            addressed_pattern=self.pattern_spec(),
            sites=self.site_grid(),
            scan_start=e.scan_start_ms * 1e-3,
            scan_stop=stop * 1e-3,
            scan_steps=e.scan_steps,
            t_pi=e.t_pi_us * 1e-6,
            T_pi=e.T_pi_ms * 1e-3,
            ramsey_detuning=2 * math.pi * e.ramsey_detuning_khz * 1e3,
            ensemble=uniform,
            site_physics=physics if ens.per_site_physics else None,
            noise=self.noise_model(),
            backend=e.backend,
            slm=self.slm_spec(),
            mla=self.mla_spec(),
            relay_demag=self.mla.relay_demag,
            coupling_exponent=e.coupling_exponent,
        )

    def with_overrides(self, seed: int | None = None, backend: str | None = None,
                       no_noise: bool = False, protocol: str | None = None) -> "RunConfig":
        data = self.model_dump()
        if seed is not None:
            data["noise"]["rng_seed"] = seed
        if no_noise:
            data["noise"]["enabled"] = False
        if backend is not None:
            data["experiment"]["backend"] = backend
        if protocol is not None:
            data["experiment"]["protocol"] = protocol
        return _validate(data)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def _validate(data) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None
    _check_invariants(cfg)
    return cfg


def _describe(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        if err["type"] == "extra_forbidden":
            parts.append(f"unknown key '{loc}'")
        else:
            parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def _check_invariants(cfg: RunConfig) -> None:
    """Build every model object once so that all invariants fail at parse time."""
    try:
        cfg.slm_spec()
        cfg.beam_spec()
        mla = cfg.mla_spec()
        cfg.imaging_spec()
        cfg.species_spec()
        cfg.noise_model()
        grid = cfg.site_grid()
        if not grid.fits(mla):
            raise DomainError(f"experiment.sites {grid} exceeds the microlens array")
        pattern = cfg.pattern_spec()
        if not pattern.grid.fits(mla):
            raise DomainError(f"experiment.pattern.grid {pattern.grid} exceeds the array")
        cfg.address_map(grid)
        e = cfg.experiment
        stop = e.scan_stop_ms if e.scan_stop_ms is not None else (
            12.0 if e.protocol == "echo" else 8.0)
        if stop <= e.scan_start_ms:
            raise DomainError("experiment.scan_stop_ms must exceed scan_start_ms")
        if e.protocol == "echo" and not e.T_pi_ms < stop:
            raise DomainError("experiment.T_pi_ms must lie inside the scan range")
    except DomainError as exc:
        if type(exc) is DomainError:
            raise ConfigError(str(exc)) from None
        raise


def parse_config(raw: bytes | str) -> RunConfig:
    """Parse and fully validate a JSON configuration document."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError(f"config is not valid UTF-8: {exc}") from None
    try:
        data = json.loads(raw) if raw.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}") \
            from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return _validate(data)
