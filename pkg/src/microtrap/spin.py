"""Clock-state qubit dynamics of trapped thermal ensembles.

Conventions
-----------
Basis order is ``(|0>, |1>)``. A pulse of area ``theta`` about the equatorial
axis at azimuth ``phi`` is ``exp(-i theta/2 (cos phi X + sin phi Y))``. Free
evolution at detuning ``Delta`` multiplies the coherence ``rho_01`` by
``exp(-i Delta t)``. All atoms start in ``|1>`` unless stated otherwise, so a
Ramsey sequence at zero delay returns ``P0 = 1``.

Two backends evaluate a site's pulse sequence:

* ``analytic``: the density matrix is expanded in phase-history terms
  ``rho(Delta) = sum_k exp(i Delta k) M_k`` so the ensemble average reduces to
  the characteristic function of the detuning distribution at the keys ``k``.
  Exact for any sequence of instantaneous pulses.
* ``monte_carlo``: thermal energies are sampled explicitly and each atom's
  amplitudes are propagated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np
from scipy import constants as csts

from .errors import DomainError, SequenceError, TimingError

Site = Hashable

_KEY_DECIMALS = 13  # keys are times in seconds; 0.1 ps resolution


# -- pulses and sequences -----------------------------------------------------

@dataclass(frozen=True)
class PulseEvent:
    """A rotation applied at ``start_time``.

    ``addressing`` is ``None`` for a global beam, otherwise a mapping from site
    to relative transmission of the addressing modulator.
    """

    start_time: float
    pulse_area: float
    axis_phase: float = 0.0
    addressing: Mapping[Site, float] | None = None
    coupling_exponent: float = 1.0

    def __post_init__(self):
        if self.pulse_area < 0:
            raise DomainError("pulse_area must be >= 0")
        if self.start_time < 0:
            raise DomainError("start_time must be >= 0")
        if self.addressing is not None:
            for site, t in self.addressing.items():
                if not 0.0 <= t <= 1.0:
                    raise DomainError(f"transmission {t} of site {site} outside [0, 1]")

    @property
    def is_global(self) -> bool:
        return self.addressing is None


@dataclass(frozen=True)
class PulseSequence:
    """Time-ordered pulses followed by a readout at ``readout_time``.

    Events with equal start times are applied in the given order.
    """

    events: tuple[PulseEvent, ...]
    readout_time: float

    def __post_init__(self):
        events = tuple(sorted(self.events, key=lambda e: e.start_time))
        object.__setattr__(self, "events", events)
        if events and events[-1].start_time > self.readout_time:
            raise SequenceError("pulse scheduled after readout")

    def check_mask_timing(self, rise_time: float) -> None:
        """Reject addressed pulses whose masks differ but are closer than ``rise_time``."""
        masked = [e for e in self.events if not e.is_global]
        for a, b in zip(masked, masked[1:]):
            if dict(a.addressing) != dict(b.addressing) and \
                    b.start_time - a.start_time < rise_time:
                raise TimingError(
                    f"mask change between t={a.start_time * 1e3:.3f} ms and "
                    f"t={b.start_time * 1e3:.3f} ms is faster than the SLM rise time "
                    f"{rise_time * 1e3:.1f} ms")

    def site_ops(self, site: Site = None, epsilon: float | None = None,
                 t_floor: float = 1.0 / 270.0, ideal: bool = False):
        """Resolve the sequence for one site into ``[(time, angle, phase), ...]``."""
        ops = []
        for ev in self.events:
            if ev.is_global:
                t = 1.0
            else:
                try:
                    t = ev.addressing[site]
                except KeyError:
                    raise SequenceError(f"site {site} missing from pulse addressing") from None
            if ideal and not ev.is_global:
                theta = ev.pulse_area if t >= 1.0 else 0.0
            else:
                theta = pulse_angle(ev, t, epsilon=epsilon, t_floor=t_floor)
            ops.append((ev.start_time, theta, ev.axis_phase))
        return ops


def pulse_angle(event: PulseEvent, site_transmission: float, epsilon: float | None = None,
                t_floor: float = 1.0 / 270.0) -> float:
    """Rotation angle at a site seeing ``site_transmission`` of the coupling light.

    ``theta = area * T**p``. If ``epsilon`` is given, sites at the
    transmission floor instead receive ``area * epsilon``.
    """
    if epsilon is not None:
        if not 0.0 <= epsilon <= 1.0:
            raise DomainError("epsilon must lie in [0, 1]")
        if site_transmission <= t_floor * (1 + 1e-12):
            return event.pulse_area * epsilon
    return event.pulse_area * site_transmission ** event.coupling_exponent


# -- single-atom algebra ------------------------------------------------------

def rotation_matrix(theta: float, phi: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s * np.exp(-1j * phi)],
                     [-1j * s * np.exp(1j * phi), c]])


def bloch_from_rho(rho: np.ndarray) -> np.ndarray:
    """``(u, v, w)`` with ``w = P0 - P1``."""
    return np.array([2 * rho[0, 1].real, -2 * rho[0, 1].imag, (rho[0, 0] - rho[1, 1]).real])


def rho_from_bloch(b) -> np.ndarray:
    u, v, w = b
    return 0.5 * np.array([[1 + w, u - 1j * v], [u + 1j * v, 1 - w]])


@dataclass
class AtomEnsembleState:
    """Monte-Carlo register of one site: per-atom energies and amplitudes."""

    energies: np.ndarray
    amplitudes: np.ndarray  # shape (N, 2), complex

    @classmethod
    def prepared(cls, energies, initial: int = 1) -> "AtomEnsembleState":
        energies = np.asarray(energies, dtype=float)
        amps = np.zeros((energies.size, 2), dtype=complex)
        amps[:, initial] = 1.0
        return cls(energies, amps)

    def p0(self) -> float:
        return float(np.mean(np.abs(self.amplitudes[:, 0]) ** 2))

    def coherence(self) -> complex:
        """Ensemble-averaged ``rho_01``."""
        a = self.amplitudes
        return complex(np.mean(a[:, 0] * np.conj(a[:, 1])))


def apply_rotation(state, theta: float, axis_phase: float):
    """Rotate a Bloch vector (length-3 array) or every atom of an ensemble."""
    r = rotation_matrix(theta, axis_phase)
    if isinstance(state, AtomEnsembleState):
        return AtomEnsembleState(state.energies, state.amplitudes @ r.T)
    b = np.asarray(state, dtype=float)
    if b.shape != (3,):
        raise DomainError("Bloch vector must have three components")
    return bloch_from_rho(r @ rho_from_bloch(b) @ r.conj().T)


def free_evolve(state: AtomEnsembleState, duration: float, detunings: np.ndarray,
                phase_noise: np.ndarray | None = None) -> AtomEnsembleState:
    """Precess each atom at its own detuning; optional extra random phase."""
    phi = detunings * duration
    if phase_noise is not None:
        phi = phi + phase_noise
    half = np.exp(-0.5j * phi)
    amps = state.amplitudes * np.stack([half, np.conj(half)], axis=1)
    return AtomEnsembleState(state.energies, amps)


# -- envelopes and closed forms -----------------------------------------------

def envelope(t, tau: float):
    """Thermal Ramsey contrast ``[1 + (t/tau)^2]^(-3/2)``."""
    t = np.asarray(t, dtype=float)
    if math.isinf(tau):
        out = np.ones_like(t)
    else:
        out = (1.0 + (t / tau) ** 2) ** -1.5
    return float(out) if out.ndim == 0 else out


def thermal_characteristic(t, tau: float):
    """Exact average of ``exp(-i kappa delta0 E t / U)`` over ``E^2 exp(-E/kT)``.

    Its modulus is :func:`envelope`; the argument carries the mean shift.
    """
    t = np.asarray(t, dtype=float)
    if math.isinf(tau):
        return np.ones_like(t, dtype=complex)
    return (1.0 + 1j * t / tau) ** -3


def ramsey_signal(T, ramsey_detuning: float, tau: float, site_phase: float = 0.0,
                  t2_irr: float = math.inf):
    """``P0`` after pi/2 - T - pi/2 starting from ``|1>``."""
    T = np.asarray(T, dtype=float)
    if np.any(T < 0):
        raise DomainError("free evolution time must be >= 0")
    if tau <= 0:
        raise DomainError("tau must be positive")
    out = 0.5 * (1 + envelope(T, tau) * _decay(T, t2_irr)
                 * np.cos(ramsey_detuning * T + site_phase))
    return float(out) if out.ndim == 0 else out


def echo_signal(T, T_pi: float, tau: float, t2_irr: float = math.inf,
                site_addressed: bool = True, ramsey_detuning: float = 0.0,
                site_phase: float = 0.0):
    """``P0`` of a Ramsey sequence with a pi pulse at ``T_pi`` on addressed sites."""
    T = np.asarray(T, dtype=float)
    if not site_addressed:
        return ramsey_signal(T, ramsey_detuning, tau, site_phase, t2_irr)
    if T_pi <= 0 or np.any(T_pi >= T):
        raise SequenceError("echo pulse must fall strictly inside (0, T)")
    x = T - 2 * T_pi
    out = 0.5 * (1 - envelope(np.abs(x), tau) * _decay(T, t2_irr)
                 * np.cos(ramsey_detuning * x + site_phase))
    return float(out) if out.ndim == 0 else out


def _decay(T, t2_irr):
    return np.exp(-np.asarray(T) / t2_irr) if not math.isinf(t2_irr) else 1.0


# -- analytic backend ---------------------------------------------------------

class PhaseHistory:
    """Density matrix as ``sum_k exp(i Delta k) M_k`` over history keys ``k``."""

    def __init__(self, initial: int = 1):
        m = np.zeros((2, 2), dtype=complex)
        m[initial, initial] = 1.0
        # rounded key -> (exact key, matrix); rounding only decides which terms merge
        self.terms: dict[float, tuple[float, np.ndarray]] = {0.0: (0.0, m)}

    def rotate(self, theta: float, phi: float) -> None:
        if theta == 0.0:
            return
        r = rotation_matrix(theta, phi)
        rh = r.conj().T
        self.terms = {r_k: (k, r @ m @ rh) for r_k, (k, m) in self.terms.items()}

    def evolve(self, duration: float, t2_irr: float = math.inf) -> None:
        if duration == 0.0:
            return
        decay = math.exp(-duration / t2_irr) if not math.isinf(t2_irr) else 1.0
        out: dict[float, tuple[float, np.ndarray]] = {}

        def add(k, i, j, v):
            r_k = round(k, _KEY_DECIMALS) + 0.0
            entry = out.get(r_k)
            if entry is None:
                entry = out[r_k] = (k, np.zeros((2, 2), dtype=complex))
            entry[1][i, j] += v

        for k, m in self.terms.values():
            add(k, 0, 0, m[0, 0])
            add(k, 1, 1, m[1, 1])
            add(k - duration, 0, 1, m[0, 1] * decay)
            add(k + duration, 1, 0, m[1, 0] * decay)
        self.terms = out

    def average(self, chi: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        keys = np.array([k for k, _ in self.terms.values()])
        mats = np.stack([m for _, m in self.terms.values()])
        return np.einsum("k,kij->ij", chi(keys), mats)


def _chi_factory(ramsey_detuning: float, tau: float, exact_phase: bool):
    if exact_phase:
        return lambda k: np.exp(1j * ramsey_detuning * k) * thermal_characteristic(k, tau)
    return lambda k: np.exp(1j * ramsey_detuning * k) * envelope(np.abs(k), tau)


def _run_history(ops, until: float, t2_irr: float, initial: int) -> PhaseHistory:
    h = PhaseHistory(initial)
    now = 0.0
    for time, theta, phi in ops:
        if time > until:
            break
        h.evolve(time - now, t2_irr)
        now = time
        h.rotate(theta, phi)
    h.evolve(until - now, t2_irr)
    return h


def analytic_p0(ops: Sequence[tuple[float, float, float]], readout_time: float,
                ramsey_detuning: float, tau: float, t2_irr: float = math.inf,
                initial: int = 1, exact_phase: bool = False) -> float:
    """Ensemble ``P0`` for resolved site operations.

    With ``exact_phase=False`` the inhomogeneous spread is represented by the
    real symmetric envelope, so plain Ramsey reduces to
    ``0.5 [1 + C(T) cos(delta_R T)]``. ``exact_phase=True`` uses the full
    thermal characteristic function (what the Monte-Carlo backend converges to).
    """
    h = _run_history(ops, readout_time, t2_irr, initial)
    rho = h.average(_chi_factory(ramsey_detuning, tau, exact_phase))
    return min(1.0, max(0.0, float(rho[0, 0].real)))


def analytic_coherence(ops, at_time: float, ramsey_detuning: float, tau: float,
                       t2_irr: float = math.inf, initial: int = 1,
                       exact_phase: bool = False) -> complex:
    """Ensemble ``rho_01`` at ``at_time``, applying only pulses strictly before it."""
    before = [op for op in ops if op[0] < at_time]
    h = _run_history(before, at_time, t2_irr, initial)
    return complex(h.average(_chi_factory(ramsey_detuning, tau, exact_phase))[0, 1])


# -- Monte-Carlo backend ------------------------------------------------------

@dataclass(frozen=True)
class ThermalEnsemble:
    """Atoms of one site: count, temperature and trap parameters (SI units)."""

    n_atoms: int
    temperature: float
    depth: float
    delta0: float
    kappa: float = 0.5

    def __post_init__(self):
        if self.n_atoms < 1:
            raise DomainError("n_atoms must be >= 1")
        if self.temperature < 0 or self.depth <= 0 or self.delta0 < 0:
            raise DomainError("invalid ensemble parameters")
        if not 0.0 < self.kappa <= 1.0:
            raise DomainError("kappa must lie in (0, 1]")

    @property
    def tau(self) -> float:
        if self.temperature == 0 or self.delta0 == 0:
            return math.inf
        return self.depth / (self.kappa * self.delta0 * csts.k * self.temperature)

    def sample_energies(self, rng: np.random.Generator) -> np.ndarray:
        """Draws from ``rho(E) ~ E^2 exp(-E / k_B T)`` (a Gamma(3) law)."""
        return rng.gamma(3.0, csts.k * self.temperature, size=self.n_atoms)

    def detunings(self, energies: np.ndarray, ramsey_detuning: float) -> np.ndarray:
        """Per-atom detuning; ``ramsey_detuning`` is referenced to the trap bottom."""
        return ramsey_detuning - self.kappa * self.delta0 * energies / self.depth


def mc_propagate(ops, readout_time: float, energies: np.ndarray, ensemble: ThermalEnsemble,
                 ramsey_detuning: float, t2_irr: float = math.inf,
                 rng: np.random.Generator | None = None, initial: int = 1,
                 stop_before_last: bool = False) -> AtomEnsembleState:
    """Evolve every atom through the resolved operations up to ``readout_time``.

    Irreversible decoherence is a Wiener phase with variance ``2 t / T2`` per
    free-evolution segment; it needs ``rng`` when ``t2_irr`` is finite.
    """
    if stop_before_last and ops:
        ops = ops[:-1]
    det = ensemble.detunings(energies, ramsey_detuning)
    state = AtomEnsembleState.prepared(energies, initial)
    now = 0.0
    for time, theta, phi in list(ops) + [(readout_time, None, None)]:
        dt = time - now
        if dt > 0:
            noise = None
            if not math.isinf(t2_irr):
                if rng is None:
                    raise DomainError("finite T2 needs a random stream")
                noise = rng.normal(0.0, math.sqrt(2 * dt / t2_irr), size=energies.size)
            state = free_evolve(state, dt, det, noise)
            now = time
        if theta is not None and theta != 0.0:
            state = apply_rotation(state, theta, phi)
    return state


def mc_ensemble_signal(sequence: PulseSequence, ensemble: ThermalEnsemble, rng_seed: int,
                       *, sites: Sequence[Site] = (None,), ramsey_detuning: float = 0.0,
                       t2_irr: float = math.inf, epsilon: float | None = None,
                       t_floor: float = 1.0 / 270.0, energies=None,
                       initial: int = 1) -> dict[Site, float]:
    """Monte-Carlo ``P0`` for each requested site.

    Energies are drawn once per site from a stream keyed by ``rng_seed`` and
    the site's position in ``sites``; pass ``energies`` to fix them.
    """
    out = {}
    for idx, site in enumerate(sites):
        if energies is None:
            e = ensemble.sample_energies(stream(rng_seed, STREAM_ENSEMBLE, idx))
        else:
            e = np.asarray(energies, dtype=float)
        ops = sequence.site_ops(site, epsilon=epsilon, t_floor=t_floor)
        rng = stream(rng_seed, STREAM_PHASE, idx)
        state = mc_propagate(ops, sequence.readout_time, e, ensemble, ramsey_detuning,
                             t2_irr, rng, initial)
        out[site] = state.p0()
    return out


# -- randomness and detection -------------------------------------------------

STREAM_ENSEMBLE, STREAM_PHASE, STREAM_DETECT, STREAM_ATOMS, STREAM_IMAGE = range(5)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a named key, reproducible under ``seed``."""
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1),
                                spawn_key=tuple(int(k) & (2 ** 32 - 1) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class NoiseModel:
    """Detection and addressing imperfections.

    ``atoms_per_site`` is a fixed count or an inclusive ``(low, high)`` range
    drawn uniformly per site. ``crosstalk_epsilon=None`` falls back to the
    modulator floor. ``enabled=False`` gives ideal readout and perfect
    addressing contrast.
    """

    atoms_per_site: int | tuple[int, int] = (10, 100)
    shots_per_point: int = 5
    rng_seed: int = 0
    irreversible_T2: float = 50e-3
    crosstalk_epsilon: float | None = 4.2e-3
    enabled: bool = True

    def __post_init__(self):
        lo, hi = self.atom_range
        if lo < 1 or hi < lo:
            raise DomainError("atoms_per_site must be >= 1")
        if self.shots_per_point < 1:
            raise DomainError("shots_per_point must be >= 1")
        if self.irreversible_T2 <= 0:
            raise DomainError("irreversible_T2 must be positive")
        if self.crosstalk_epsilon is not None and not 0 <= self.crosstalk_epsilon <= 1:
            raise DomainError("crosstalk_epsilon must lie in [0, 1]")

    @property
    def atom_range(self) -> tuple[int, int]:
        a = self.atoms_per_site
        return (a, a) if isinstance(a, int) else (int(a[0]), int(a[1]))

    def draw_atoms(self, rng: np.random.Generator) -> int:
        lo, hi = self.atom_range
        return int(rng.integers(lo, hi + 1))


def detect_shots(p0_true: float, n_atoms: int, shots: int,
                 rngs: Sequence[np.random.Generator]) -> np.ndarray:
    """Per-shot surviving fractions after state-selective removal of ``|1>``."""
    if not -1e-12 <= p0_true <= 1 + 1e-12:
        raise DomainError(f"population {p0_true} outside [0, 1]")
    p = min(1.0, max(0.0, p0_true))
    return np.array([r.binomial(n_atoms, p) for r in rngs[:shots]], dtype=float) / n_atoms


def detect(p0_true: float, noise: NoiseModel, rng: np.random.Generator,
           n_atoms: int | None = None) -> float:
    """Mean measured ``|0>`` fraction over ``noise.shots_per_point`` shots."""
    if not -1e-12 <= p0_true <= 1 + 1e-12:
        raise DomainError(f"population {p0_true} outside [0, 1]")
    n = noise.draw_atoms(rng) if n_atoms is None else n_atoms
    counts = rng.binomial(n, min(1.0, max(0.0, p0_true)), size=noise.shots_per_point)
    return float(np.mean(counts) / n)
