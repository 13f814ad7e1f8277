"""Illumination patterns, figure protocols and scan orchestration."""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Iterable, Mapping

import numpy as np

from . import spin
from .errors import DomainError, SequenceError
from .optics import (Lens, LensRect, MicrolensArraySpec, SlmSpec, TrapSiteArray,
                     build_address_map, mean_disk_transmission, rasterize_pattern)
from .spin import PulseEvent, PulseSequence, NoiseModel, ThermalEnsemble, stream
from .trap import AtomSpecies, RB85, default_temperature, differential_shift, dipole_depth

PROTOCOLS = ("ramsey", "echo", "spin_texture_ramsey")
BACKENDS = ("analytic", "monte_carlo")


# -- patterns -----------------------------------------------------------------

@dataclass(frozen=True)
class PatternSpec:
    """Which lenses of ``grid`` are illuminated.

    ``kind`` is one of ``full``, ``checkerboard``, ``plaquettes``, ``ring`` or
    ``explicit``. Ring radii and centre are in lens-pitch units and lens-index
    coordinates; ``center=None`` means the middle of ``grid``.
    """

    kind: str = "full"
    grid: LensRect = LensRect(24, 24, 3, 3)
    parity: int = 0
    block_w: int = 2
    block_h: int = 2
    gap: int = 1
    center: tuple[float, float] | None = None
    inner_r: float = 0.0
    outer_r: float = 1.0
    lenses: tuple[Lens, ...] = ()

    def __post_init__(self):
        if self.kind not in ("full", "checkerboard", "plaquettes", "ring", "explicit"):
            raise DomainError(f"unknown pattern kind {self.kind!r}")
        if self.kind == "checkerboard" and self.parity not in (0, 1):
            raise DomainError("checkerboard parity must be 0 or 1")
        if self.kind == "plaquettes" and (self.block_w < 1 or self.block_h < 1 or self.gap < 0):
            raise DomainError("plaquette blocks must be >= 1 and gap >= 0")
        if self.kind == "ring" and not 0 <= self.inner_r < self.outer_r:
            raise DomainError("ring annulus must satisfy 0 <= inner_r < outer_r")
        if self.kind == "explicit":
            for lens in self.lenses:
                if tuple(lens) not in self.grid:
                    raise DomainError(f"lens {tuple(lens)} lies outside the pattern grid")


def make_pattern(spec: PatternSpec) -> frozenset[Lens]:
    """Lens set selected by ``spec``. An empty selection warns but is valid."""
    g = spec.grid
    if spec.kind == "full":
        out = set(g)
    elif spec.kind == "checkerboard":
        out = {(i, j) for i, j in g if (i + j) % 2 == spec.parity}
    elif spec.kind == "plaquettes":
        px, py = spec.block_w + spec.gap, spec.block_h + spec.gap
        out = {(i, j) for i, j in g
               if (i - g.i0) % px < spec.block_w and (j - g.j0) % py < spec.block_h}
    elif spec.kind == "ring":
        cx, cy = spec.center if spec.center is not None else (
            g.i0 + (g.width - 1) / 2, g.j0 + (g.height - 1) / 2)
        out = {(i, j) for i, j in g
               if spec.inner_r <= math.hypot(i - cx, j - cy) <= spec.outer_r}
    else:
        out = {tuple(l) for l in spec.lenses}
    if not out:
        warnings.warn(f"pattern {spec.kind!r} selects no lenses", stacklevel=2)
    return frozenset(out)


# -- per-site physics ---------------------------------------------------------

def site_ensembles(sites: TrapSiteArray, wavelength: float, species: AtomSpecies = RB85,
                   temperature: float | None = None, kappa: float = 0.5,
                   n_atoms: int = 2000) -> dict[Lens, ThermalEnsemble]:
    """Thermal ensemble of every site from its trap power and waist."""
    out = {}
    for s in sites:
        u = dipole_depth(s.power, s.waist, wavelength, species)
        if u <= 0:
            raise DomainError(f"site {s.lens} has no trapping potential")
        t_at = default_temperature(u) if temperature is None else temperature
        out[s.lens] = ThermalEnsemble(n_atoms, t_at, u, differential_shift(u, wavelength, species),
                                      kappa)
    return out


def addressing_transmissions(addressed: Iterable[Lens], sites: LensRect, slm: SlmSpec,
                             mla: MicrolensArraySpec, relay_demag: float = 2.0
                             ) -> dict[Lens, float]:
    """Mean modulator transmission seen by each site for a binary on/off mask."""
    amap = build_address_map(slm, mla, relay_demag, sites)
    addressed = set(addressed) & set(sites)
    mask = rasterize_pattern(addressed, slm.max_level, 0, amap, slm)
    return {lens: mean_disk_transmission(mask, amap, lens) for lens in sites}


def nominal_ensemble(power: float = 1.23e-3, waist: float = 3.7e-6,
                     wavelength: float = 815e-9, n_atoms: int = 2000) -> ThermalEnsemble:
    """Ensemble of the central trap at the nominal operating point."""
    u = dipole_depth(power, waist, wavelength)
    return ThermalEnsemble(n_atoms, default_temperature(u), u,
                           differential_shift(u, wavelength))


# -- experiment description ---------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    """One figure protocol. Times in seconds, detuning in rad/s.

    ``ensemble`` is used for every site unless ``site_physics`` provides a
    per-site override.
    """

    protocol: str = "ramsey"
    addressed_pattern: PatternSpec = PatternSpec(kind="checkerboard")
    sites: LensRect = LensRect(24, 24, 3, 3)
    scan_start: float = 0.0
    scan_stop: float = 8e-3
    scan_steps: int = 41
    t_pi: float = 200e-6
    T_pi: float = 4e-3
    ramsey_detuning: float = 2 * math.pi * 1e3
    ensemble: ThermalEnsemble = field(default_factory=lambda: nominal_ensemble())
    site_physics: Mapping[Lens, ThermalEnsemble] | None = None
    noise: NoiseModel = NoiseModel()
    backend: str = "analytic"
    slm: SlmSpec = SlmSpec()
    mla: MicrolensArraySpec = MicrolensArraySpec()
    relay_demag: float = 2.0
    coupling_exponent: float = 1.0

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise DomainError(f"unknown protocol {self.protocol!r}")
        if self.backend not in BACKENDS:
            raise DomainError(f"unknown backend {self.backend!r}")
        if self.scan_steps < 2:
            raise DomainError("scan needs at least 2 steps")
        if self.scan_start < 0 or self.scan_stop <= self.scan_start:
            raise DomainError("scan range must satisfy 0 <= start < stop")
        if self.t_pi <= 0:
            raise DomainError("t_pi must be positive")
        if not self.sites.fits(self.mla):
            raise DomainError("site grid exceeds the microlens array")
        if self.protocol == "echo" and not 0 < self.T_pi < self.scan_stop:
            raise SequenceError(
                f"echo pulse at {self.T_pi * 1e3:g} ms lies outside the scan range "
                f"(0, {self.scan_stop * 1e3:g}] ms")

    def scan_values(self) -> np.ndarray:
        return np.linspace(self.scan_start, self.scan_stop, self.scan_steps)

    def ensemble_for(self, lens: Lens) -> ThermalEnsemble:
        if self.site_physics is not None and lens in self.site_physics:
            return self.site_physics[lens]
        return self.ensemble


def build_sequence(exp: ExperimentSpec, T: float, addressing: Mapping[Lens, float]
                   ) -> PulseSequence:
    """Pulse sequence of one scan point for every site of the register."""
    half, full = math.pi / 2, math.pi
    p = exp.coupling_exponent
    if exp.protocol == "ramsey":
        events = [PulseEvent(0.0, half, addressing=addressing, coupling_exponent=p),
                  PulseEvent(T, half, addressing=addressing, coupling_exponent=p)]
    elif exp.protocol == "echo":
        events = [PulseEvent(0.0, half)]
        if exp.T_pi < T:
            events.append(PulseEvent(exp.T_pi, full, addressing=addressing, coupling_exponent=p))
        events.append(PulseEvent(T, half))
    else:
        events = [PulseEvent(0.0, full, addressing=addressing, coupling_exponent=p),
                  PulseEvent(0.0, half),
                  PulseEvent(T, half)]
    return PulseSequence(tuple(events), T)


# -- results ------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    site_i: int
    site_j: int
    scan_ms: float
    p0_ideal: float
    p0_measured: float
    sem: float


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def sites(self) -> list[Lens]:
        return sorted({(r.site_i, r.site_j) for r in self.rows})

    def for_site(self, lens: Lens) -> list[ResultRow]:
        return [r for r in self.rows if (r.site_i, r.site_j) == tuple(lens)]

    def column(self, lens: Lens, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.for_site(lens)])


def spec_hash(exp: ExperimentSpec) -> str:
    payload = json.dumps(asdict(exp), sort_keys=True, default=_jsonable)
    return hashlib.sha256(payload.encode()).hexdigest()


def _jsonable(o):
    if isinstance(o, (set, frozenset)):
        return sorted(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return repr(o)


# -- orchestration ------------------------------------------------------------

def _site_rows(exp: ExperimentSpec, lens: Lens, scan: np.ndarray,
               addressing: Mapping[Lens, float]) -> list[ResultRow]:
    noise = exp.noise
    seed = noise.rng_seed
    i, j = lens
    ens = exp.ensemble_for(lens)
    t2 = noise.irreversible_T2
    epsilon = noise.crosstalk_epsilon if noise.enabled else None
    ideal = not noise.enabled

    energies = None
    if exp.backend == "monte_carlo":
        energies = ens.sample_energies(stream(seed, spin.STREAM_ENSEMBLE, i, j))
    n_atoms = noise.draw_atoms(stream(seed, spin.STREAM_ATOMS, i, j))

    rows = []
    for k, T in enumerate(scan):
        T = float(T)
        seq = build_sequence(exp, T, addressing)
        seq.check_mask_timing(exp.slm.rise_time)
        ops = seq.site_ops(lens, epsilon=epsilon, t_floor=exp.slm.t_floor, ideal=ideal)
        if exp.backend == "analytic":
            p0 = spin.analytic_p0(ops, T, exp.ramsey_detuning, ens.tau, t2)
        else:
            rng = stream(seed, spin.STREAM_PHASE, i, j, k)
            p0 = spin.mc_propagate(ops, T, energies, ens, exp.ramsey_detuning, t2, rng).p0()
        if noise.enabled:
            shots = spin.detect_shots(
                p0, n_atoms, noise.shots_per_point,
                [stream(seed, spin.STREAM_DETECT, i, j, k, s)
                 for s in range(noise.shots_per_point)])
            measured = float(shots.mean())
            sem = float(shots.std(ddof=1) / math.sqrt(shots.size)) if shots.size > 1 else 0.0
        else:
            measured, sem = p0, 0.0
        rows.append(ResultRow(i, j, T * 1e3, p0, measured, sem))
    return rows


def run_scan(exp: ExperimentSpec, max_workers: int = 1) -> ResultTable:
    """Evaluate every (site, scan point) of ``exp``.

    Each site draws from its own seeded streams, so the table does not depend
    on ``max_workers`` or scheduling order.
    """
    exp.validate()
    lenses = list(exp.sites)
    addressed = make_pattern(exp.addressed_pattern)
    addressing = addressing_transmissions(addressed, exp.sites, exp.slm, exp.mla,
                                          exp.relay_demag)
    scan = exp.scan_values()
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            parts = list(pool.map(lambda l: _site_rows(exp, l, scan, addressing), lenses))
    else:
        parts = [_site_rows(exp, l, scan, addressing) for l in lenses]
    rows = sorted((r for part in parts for r in part),
                  key=lambda r: (r.site_i, r.site_j, r.scan_ms))
    meta = {
        "seed": exp.noise.rng_seed,
        "backend": exp.backend,
        "protocol": exp.protocol,
        "spec_hash": spec_hash(exp),
        "addressed": sorted(addressed & set(lenses)),
    }
    return ResultTable(rows, meta)


def fringe_contrast(exp: ExperimentSpec, lens: Lens, T: float) -> float:
    """Ensemble fringe contrast ``2 |<rho_01>|`` just before the final pulse."""
    addressed = make_pattern(exp.addressed_pattern)
    addressing = addressing_transmissions(addressed, exp.sites, exp.slm, exp.mla,
                                          exp.relay_demag)
    seq = build_sequence(exp, T, addressing)
    noise = exp.noise
    ops = seq.site_ops(lens, epsilon=noise.crosstalk_epsilon if noise.enabled else None,
                       t_floor=exp.slm.t_floor, ideal=not noise.enabled)
    ens = exp.ensemble_for(lens)
    rho01 = spin.analytic_coherence(ops, T, exp.ramsey_detuning, ens.tau,
                                    noise.irreversible_T2)
    return 2 * abs(rho01)


# -- synthetic fluorescence ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class ImageGray:
    """Camera-like intensity image; ``origin`` is the trap-plane position of pixel (0, 0)."""

    data: np.ndarray
    pixel_scale: float
    origin: tuple[float, float]
    sigma: float

    def __post_init__(self):
        if np.any(self.data < 0):
            raise DomainError("image intensities must be nonnegative")

    def to_uint8(self) -> np.ndarray:
        peak = float(self.data.max()) if self.data.size else 0.0
        if peak <= 0:
            return np.zeros(self.data.shape, dtype=np.uint8)
        return np.clip(np.rint(self.data / peak * 255), 0, 255).astype(np.uint8)


def expected_image(sites: TrapSiteArray, atoms: Mapping[Lens, float], pixel_scale: float,
                   sigma: float, counts_per_atom: float, background: float,
                   margin: float) -> tuple[np.ndarray, tuple[float, float]]:
    xs = [s.position[0] for s in sites]
    ys = [s.position[1] for s in sites]
    x0, y0 = min(xs) - margin, min(ys) - margin
    nx = int(math.ceil((max(xs) + margin - x0) / pixel_scale)) + 1
    ny = int(math.ceil((max(ys) + margin - y0) / pixel_scale)) + 1
    x = x0 + pixel_scale * np.arange(nx)
    y = y0 + pixel_scale * np.arange(ny)
    img = np.full((ny, nx), float(background))
    for s in sites:
        amp = counts_per_atom * atoms.get(s.lens, 0.0)
        if amp == 0:
            continue
        gx = np.exp(-(x - s.position[0]) ** 2 / (2 * sigma ** 2))
        gy = np.exp(-(y - s.position[1]) ** 2 / (2 * sigma ** 2))
        img += amp * np.outer(gy, gx)
    return img, (x0, y0)


def synth_fluorescence_image(sites: TrapSiteArray, populations: Mapping[Lens, float],
                             noise: NoiseModel, averages: int = 20,
                             pixel_scale: float = 1e-6, sigma: float | None = None,
                             counts_per_atom: float = 2.0, background: float = 5.0,
                             margin: float | None = None) -> ImageGray:
    """Average of ``averages`` Poisson-noise frames of Gaussian atom blobs.

    Blob width defaults to 1.5 times the trap waist. Each site holds the
    same seeded atom number as in :func:`run_scan`.
    """
    if averages < 1:
        raise DomainError("averages must be >= 1")
    if len(sites) == 0:
        raise DomainError("no sites to image")
    for lens, p in populations.items():
        if not 0.0 <= p <= 1.0:
            raise DomainError(f"population {p} of site {lens} outside [0, 1]")
    if sigma is None:
        sigma = 1.5 * sites.sites[0].waist
    if margin is None:
        margin = max(5 * sigma, 0.5 * sites.pitch)
    seed = noise.rng_seed
    atoms = {s.lens: noise.draw_atoms(stream(seed, spin.STREAM_ATOMS, *s.lens))
             * populations.get(s.lens, 0.0) for s in sites}
    mean, origin = expected_image(sites, atoms, pixel_scale, sigma, counts_per_atom,
                                  background, margin)
    if noise.enabled:
        acc = np.zeros_like(mean)
        for f in range(averages):
            acc += stream(seed, spin.STREAM_IMAGE, f).poisson(mean)
        data = acc / averages
    else:
        data = mean
    return ImageGray(data, pixel_scale, origin, sigma)
