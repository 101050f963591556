"""Nonlinear mass-spring-damper chain: assembly, forcing synthesis and RK4 time stepping.

Masses ``0..n_dof-1`` sit in a line. Element ``e`` (``0..n_dof``) joins mass ``e-1`` to
mass ``e``; elements ``0`` and ``n_dof`` attach to ground and exist only when that end is
grounded. Every element carries a linear spring, a linear dashpot and a cubic spring, so
its tension is ``k_lin*d + c_lin*d' + k_nl*d**3`` with ``d`` the element extension.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, IndexOutOfRange, InvalidParams, NonFiniteState
from .series import MultiChannelSeries, forcing_dofs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChainParams:
    n_dof: int = 20
    mass: float = 0.1
    k_lin: float = 100.0
    c_lin: float = 0.1
    k_nl: float = 2500.0
    grounded: tuple[bool, bool] = (True, True)

    def validate(self) -> None:
        if int(self.n_dof) != self.n_dof or self.n_dof < 1:
            raise InvalidParams(f"n_dof must be a positive integer, got {self.n_dof}")
        if not self.mass > 0:
            raise InvalidParams("mass must be positive")
        for name in ("k_lin", "c_lin", "k_nl"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise InvalidParams(f"{name} must be finite and non-negative")
        if len(self.grounded) != 2:
            raise InvalidParams("grounded must be a (left, right) pair")


@dataclass(frozen=True)
class State:
    displacement: np.ndarray
    velocity: np.ndarray
    time: float = 0.0

    @classmethod
    def zeros(cls, n_dof: int, time: float = 0.0) -> "State":
        return cls(np.zeros(n_dof), np.zeros(n_dof), time)

    def __post_init__(self):
        x = np.asarray(self.displacement, dtype=np.float64)
        v = np.asarray(self.velocity, dtype=np.float64)
        if x.shape != v.shape or x.ndim != 1:
            raise DimensionMismatch("displacement and velocity must be 1-D of equal length")
        object.__setattr__(self, "displacement", x)
        object.__setattr__(self, "velocity", v)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.displacement)) and np.all(np.isfinite(self.velocity)))

    def __neg__(self) -> "State":
        return State(-self.displacement, -self.velocity, self.time)


@dataclass(frozen=True)
class ChainSystem:
    """Assembled chain. Coefficient arrays have one slot per potential element (``n_dof + 1``);
    slots of absent (ungrounded) end elements hold zeros."""

    params: ChainParams
    mass: np.ndarray
    k_lin: np.ndarray
    c_lin: np.ndarray
    k_nl: np.ndarray
    present: np.ndarray = field(repr=False)

    @property
    def n_dof(self) -> int:
        return self.params.n_dof

    @property
    def n_elements(self) -> int:
        return int(self.present.sum())

    def element_nodes(self) -> list[tuple[int, int]]:
        """(left, right) mass indices of each present element; ``-1``/``n_dof`` denote ground."""
        return [(e - 1, e if e < self.n_dof else self.n_dof) for e in np.flatnonzero(self.present)]

    def _assemble(self, coeff: np.ndarray) -> np.ndarray:
        n = self.n_dof
        mat = np.zeros((n, n))
        idx = np.arange(n)
        mat[idx, idx] = coeff[:-1] + coeff[1:]
        mat[idx[:-1], idx[:-1] + 1] = -coeff[1:-1]
        mat[idx[:-1] + 1, idx[:-1]] = -coeff[1:-1]
        return mat

    @property
    def mass_matrix(self) -> np.ndarray:
        return np.diag(self.mass)

    @property
    def stiffness_matrix(self) -> np.ndarray:
        return self._assemble(self.k_lin)

    @property
    def damping_matrix(self) -> np.ndarray:
        return self._assemble(self.c_lin)

    def linearized(self) -> "ChainSystem":
        """The underlying linear system (cubic springs removed)."""
        return build_chain(_replace(self.params, k_nl=0.0))


def _replace(params: ChainParams, **changes) -> ChainParams:
    from dataclasses import replace

    return replace(params, **changes)


def build_chain(params: ChainParams) -> ChainSystem:
    params.validate()
    n = int(params.n_dof)
    present = np.ones(n + 1, dtype=bool)
    present[0] = bool(params.grounded[0])
    present[-1] = bool(params.grounded[1])
    if n == 1 and not present.any():
        raise InvalidParams("a single free mass needs at least one grounded end")
    mask = present.astype(np.float64)
    return ChainSystem(
        params=_replace(params, n_dof=n, grounded=(bool(params.grounded[0]), bool(params.grounded[1]))),
        mass=np.full(n, float(params.mass)),
        k_lin=params.k_lin * mask,
        c_lin=params.c_lin * mask,
        k_nl=params.k_nl * mask,
        present=present,
    )


def _extensions(system: ChainSystem, x: np.ndarray) -> np.ndarray:
    padded = np.zeros(system.n_dof + 2)
    padded[1:-1] = x
    return padded[1:] - padded[:-1]


def rhs(system: ChainSystem, state: State, force) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(velocity, acceleration)`` for the given state and external force."""
    force = np.asarray(force, dtype=np.float64)
    n = system.n_dof
    if force.shape != (n,) or state.displacement.shape != (n,):
        raise DimensionMismatch(f"expected vectors of length {n}")
    return state.velocity, _acceleration(system, state.displacement, state.velocity, force)


def _acceleration(system, x, v, force):
    d = _extensions(system, x)
    dv = _extensions(system, v)
    tension = system.k_lin * d + system.c_lin * dv + system.k_nl * d * d * d
    return (force - (tension[:-1] - tension[1:])) / system.mass


def rk4_step(system: ChainSystem, state: State, force_interp: Callable[[float], np.ndarray], dt: float) -> State:
    """One classical RK4 step; ``force_interp(t)`` is queried at t, t+dt/2 and t+dt."""
    if not dt > 0:
        raise InvalidParams("dt must be positive")
    t = state.time
    f0 = np.asarray(force_interp(t), dtype=np.float64)
    fm = np.asarray(force_interp(t + 0.5 * dt), dtype=np.float64)
    f1 = np.asarray(force_interp(t + dt), dtype=np.float64)
    if f0.shape != (system.n_dof,):
        raise DimensionMismatch(f"force must have length {system.n_dof}")
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        x, v = _rk4(system, state.displacement, state.velocity, f0, fm, f1, dt)
    out = State(x, v, t + dt)
    if not out.is_finite():
        raise NonFiniteState(step=0)
    return out


def _rk4(system, x, v, f0, fm, f1, dt):
    h2 = 0.5 * dt
    a1 = _acceleration(system, x, v, f0)
    x2 = x + h2 * v
    v2 = v + h2 * a1
    a2 = _acceleration(system, x2, v2, fm)
    x3 = x + h2 * v2
    v3 = v + h2 * a2
    a3 = _acceleration(system, x3, v3, fm)
    x4 = x + dt * v3
    v4 = v + dt * a3
    a4 = _acceleration(system, x4, v4, f1)
    x_new = x + dt / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4)
    v_new = v + dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    return x_new, v_new


def expand_forcing(forcing: MultiChannelSeries, n_dof: int) -> np.ndarray:
    """Full ``[n_steps, n_dof]`` force array from a drive-channel series (undriven DOFs are zero)."""
    dofs = forcing_dofs(forcing)
    if any(d < 0 or d >= n_dof for d in dofs):
        raise IndexOutOfRange(f"drive DOFs {dofs} outside [0, {n_dof})")
    full = np.zeros((forcing.n_steps, n_dof))
    full[:, dofs] = forcing.values
    return full


def simulate(system: ChainSystem, forcing: MultiChannelSeries, x0: State | None = None,
             return_velocity: bool = False):
    """Integrate the chain across the forcing record with one RK4 step per sample.

    Mid-step forcing is the average of the bracketing samples. Returns the displacement
    series, or ``(displacement, velocity)`` when ``return_velocity`` is set.
    """
    n = system.n_dof
    x0 = State.zeros(n) if x0 is None else x0
    if x0.displacement.shape != (n,):
        raise DimensionMismatch(f"initial state must have length {n}")
    if not x0.is_finite():
        raise InvalidParams("initial state must be finite")
    force = expand_forcing(forcing, n)
    dt = forcing.dt
    n_steps = forcing.n_steps
    disp = np.empty((n_steps, n))
    vel = np.empty((n_steps, n))
    x, v = x0.displacement.copy(), x0.velocity.copy()
    if n_steps:
        disp[0], vel[0] = x, v
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        for k in range(n_steps - 1):
            f0, f1 = force[k], force[k + 1]
            x, v = _rk4(system, x, v, f0, 0.5 * (f0 + f1), f1, dt)
            if not (np.isfinite(x).all() and np.isfinite(v).all()):
                raise NonFiniteState(step=k + 1)
            disp[k + 1], vel[k + 1] = x, v
    labels = tuple(f"x{i + 1}" for i in range(n))
    d_series = MultiChannelSeries(dt, disp, labels, forcing.t0)
    if return_velocity:
        return d_series, MultiChannelSeries(dt, vel, tuple(f"v{i + 1}" for i in range(n)), forcing.t0)
    return d_series


def hamiltonian(system: ChainSystem, x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Total mechanical energy; accepts single states or stacked ``[n_steps, n_dof]`` arrays."""
    x = np.atleast_2d(x)
    v = np.atleast_2d(v)
    padded = np.pad(x, ((0, 0), (1, 1)))
    d = np.diff(padded, axis=1)
    kinetic = 0.5 * (system.mass * v * v).sum(axis=1)
    potential = (0.5 * system.k_lin * d * d + 0.25 * system.k_nl * d ** 4).sum(axis=1)
    return kinetic + potential


def element_force_histories(system: ChainSystem, response: MultiChannelSeries, dof: int,
                            velocity: MultiChannelSeries | None = None,
                            include_damping: bool = False) -> MultiChannelSeries:
    """Restoring force on ``dof`` split into linear-spring and cubic-spring parts.

    With ``include_damping`` the dashpot force joins the linear channel; velocities come
    from ``velocity`` when given, else from second-order central differences.
    """
    n = system.n_dof
    if not 0 <= dof < n:
        raise IndexOutOfRange(f"dof {dof} outside [0, {n})")
    if response.channels != n:
        raise DimensionMismatch(f"response has {response.channels} channels, chain has {n}")
    x = response.values
    padded = np.pad(x, ((0, 0), (1, 1)))
    d_left = padded[:, dof + 1] - padded[:, dof]
    d_right = padded[:, dof + 2] - padded[:, dof + 1]
    kl, kr = system.k_lin[dof], system.k_lin[dof + 1]
    nl, nr = system.k_nl[dof], system.k_nl[dof + 1]
    linear = kl * d_left - kr * d_right
    cubic = nl * d_left ** 3 - nr * d_right ** 3
    if include_damping:
        if velocity is not None:
            v = velocity.values
        else:
            v = np.gradient(x, response.dt, axis=0, edge_order=2)
        vp = np.pad(v, ((0, 0), (1, 1)))
        linear = linear + system.c_lin[dof] * (vp[:, dof + 1] - vp[:, dof]) \
            - system.c_lin[dof + 1] * (vp[:, dof + 2] - vp[:, dof + 1])
    values = np.column_stack([linear, cubic])
    return MultiChannelSeries(response.dt, values, ("linear", "cubic"), response.t0)


@dataclass(frozen=True)
class ForcingSpec:
    drive_dofs: tuple[int, ...] = (0, 19)
    noise_std: float = 1.0
    cutoff_hz: float = 8.0
    fs: float = 100.0
    duration: float = 1000.0
    seed: int = 0
    n_taps: int = 101

    @property
    def n_steps(self) -> int:
        return int(round(self.duration * self.fs))

    def validate(self, n_dof: int | None = None) -> None:
        if not (0 < self.cutoff_hz < self.fs / 2):
            raise InvalidParams("cutoff_hz must lie in (0, fs/2)")
        if not self.duration > 0 or self.n_steps < 1:
            raise InvalidParams("duration must be positive")
        if self.noise_std < 0:
            raise InvalidParams("noise_std must be non-negative")
        if len(set(self.drive_dofs)) != len(self.drive_dofs) or not self.drive_dofs:
            raise InvalidParams("drive_dofs must be distinct and non-empty")
        if n_dof is not None and any(not 0 <= d < n_dof for d in self.drive_dofs):
            raise InvalidParams(f"drive_dofs {self.drive_dofs} outside [0, {n_dof})")


def generate_forcing(spec: ForcingSpec, n_dof: int | None = None) -> MultiChannelSeries:
    """Band-limited Gaussian forcing, one independent channel per drive DOF.

    White noise is passed once through a causal low-pass FIR (no start-up transient: the
    filter is run over ``n_taps - 1`` extra leading samples that are then dropped) and
    rescaled to the requested standard deviation.
    """
    from .spectral import design_lowpass

    spec.validate(n_dof)
    n = spec.n_steps
    fir = design_lowpass(spec.cutoff_hz, spec.fs, spec.n_taps)
    children = np.random.SeedSequence(spec.seed).spawn(len(spec.drive_dofs))
    values = np.zeros((n, len(spec.drive_dofs)))
    if spec.noise_std > 0:
        for j, child in enumerate(children):
            rng = np.random.default_rng(child)
            white = rng.normal(0.0, spec.noise_std, n + spec.n_taps - 1)
            filtered = np.convolve(white, fir.coefficients, mode="valid")
            std = filtered.std()
            values[:, j] = filtered * (spec.noise_std / std) if std > 0 else filtered
    labels = tuple(f"f{d + 1}" for d in spec.drive_dofs)
    return MultiChannelSeries(1.0 / spec.fs, values, labels)


def restoring_force_ratio(system: ChainSystem, response: MultiChannelSeries, dof: int) -> float:
    forces = element_force_histories(system, response, dof).values
    rms = np.sqrt(np.mean(forces ** 2, axis=0))
    return float(rms[1] / rms[0]) if rms[0] > 0 else 0.0


def calibrate_forcing(system: ChainSystem, spec: ForcingSpec, target_ratio: float = 1.0, dof: int = 9,
                      duration: float = 100.0, tol: float = 0.02, max_iter: int = 30) -> float:
    """Find the forcing std giving RMS(cubic)/RMS(linear) = ``target_ratio`` at ``dof``.

    Bisection in log(std) over short simulations of length ``duration``; the ratio grows
    monotonically with amplitude for a hardening chain.
    """
    from dataclasses import replace

    if system.params.k_nl <= 0:
        raise InvalidParams("calibration needs a nonlinear chain (k_nl > 0)")

    def ratio(std: float) -> float:
        forcing = generate_forcing(replace(spec, noise_std=std, duration=duration), system.n_dof)
        try:
            response = simulate(system, forcing)
        except NonFiniteState:
            return np.inf
        return restoring_force_ratio(system, response, dof)

    lo, hi = 1e-3, 1.0
    while ratio(hi) < target_ratio:
        lo, hi = hi, hi * 4
    while ratio(lo) > target_ratio:
        lo, hi = lo / 4, lo
    for _ in range(max_iter):
        mid = float(np.sqrt(lo * hi))
        r = ratio(mid)
        logger.debug("calibrate: std=%.5g ratio=%.4f", mid, r)
        if abs(r - target_ratio) <= tol * target_ratio:
            return mid
        if r < target_ratio:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


def modal_frequencies(system: ChainSystem) -> np.ndarray:
    """Undamped natural frequencies (Hz) of the underlying linear chain."""
    from scipy.linalg import eigh

    w2 = eigh(system.stiffness_matrix, system.mass_matrix, eigvals_only=True)
    return np.sqrt(np.clip(w2, 0, None)) / (2 * np.pi)
