"""Split-step integration of the Hartree equation ``i d/dt phi = (K + v*|phi|^2) phi``.

A single Strang substep of length ``h`` starting from ``a`` is

    a  ->  exp(-i h/2 W(a)) a  ->  kinetic flow  ->  b  ->  exp(-i h/2 W(b)) b

with ``W(psi) = v * |psi|^2``.  The potential kicks are exact because they do
not change ``|psi|``.  The default scheme composes three such substeps with
the Yoshida weights, which is fourth order and still time symmetric; plain
Strang (``scheme="strang"``) is available for comparison.

The trajectory keeps every substep start state, every post-kinetic state and
the potentials used by the kicks.  The backward Bogoliubov propagator replays
exactly these substeps, so no interpolation in time is ever needed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import NormDriftError, SpaceMismatchError, TrajectoryRangeError
from .space import Field, ModeSpace, convolve, density, inner, kinetic, pointwise, require_normalized

_CBRT2 = 2.0 ** (1.0 / 3.0)
SCHEMES = {
    "strang": (1.0,),
    "yoshida4": (1.0 / (2.0 - _CBRT2), -_CBRT2 / (2.0 - _CBRT2), 1.0 / (2.0 - _CBRT2)),
}
DEFAULT_DT = 1e-3
NORM_DRIFT_LIMIT = 1e-6
_TIME_ALIGN_TOL = 1e-9


def hartree_rhs(phi: Field, f: Field) -> Field:
    """Apply the Hartree operator ``K + v*|phi|^2`` built from ``phi`` to ``f``."""
    if f.space is not phi.space:
        raise SpaceMismatchError("fields live on different mode spaces")
    require_normalized(phi)
    pot = convolve(phi.space, density(phi))
    return kinetic(f) + pointwise(pot, f)


def mass(phi: Field) -> float:
    return float(np.real(inner(phi, phi)))


def energy(phi: Field) -> float:
    """Kinetic plus half the interaction energy (real part)."""
    rho = density(phi)
    return float(np.real(inner(phi, kinetic(phi)) + 0.5 * inner(rho, convolve(phi.space, rho))))


def _kinetic_energy(space: ModeSpace, a: np.ndarray) -> float:
    if space.is_spectral:
        ah = space.fft(a)
        return float(space.quadrature_weight * np.sum(space.dispersion * np.abs(ah) ** 2) / space.n_modes)
    return float(np.real(np.vdot(a, space.hopping @ a)))


@dataclass(frozen=True, eq=False)
class HartreeTrajectory:
    """Stored Hartree evolution on ``[0, t1]`` with step ``dt``.

    ``substep_starts[j]`` and ``substep_mids[j]`` are the start and
    post-kinetic states of substep ``j``; ``kick_potentials[j]`` is
    ``W(substep_starts[j])`` and ``kick_potentials[j + 1]`` is
    ``W(substep_mids[j])``.  Full-step ``n`` begins at substep
    ``n * len(weights)``.
    """

    space: ModeSpace
    dt: float
    n_steps: int
    scheme: str
    weights: tuple
    substep_starts: np.ndarray
    substep_mids: np.ndarray
    kick_potentials: np.ndarray
    mass_series: np.ndarray
    energy_series: np.ndarray

    t0 = 0.0

    @property
    def t1(self) -> float:
        return self.n_steps * self.dt

    @property
    def substeps_per_step(self) -> int:
        return len(self.weights)

    @property
    def times(self) -> np.ndarray:
        """Full-step times ``0, dt, ..., t1``."""
        return np.arange(self.n_steps + 1) * self.dt

    def step_index(self, t: float) -> int:
        """Index ``n`` with ``n * dt == t``; raises if ``t`` is off-grid or out of range."""
        n = int(round(t / self.dt))
        if abs(n * self.dt - t) > _TIME_ALIGN_TOL * max(1.0, abs(t)):
            raise TrajectoryRangeError(f"time {t!r} is not a multiple of dt={self.dt!r}")
        if n < 0 or n > self.n_steps:
            raise TrajectoryRangeError(f"time {t!r} outside trajectory range [0, {self.t1!r}]")
        return n

    def state(self, t: float) -> Field:
        return Field(self.space, self.substep_starts[self.step_index(t) * self.substeps_per_step])

    def half_state(self, n: int) -> Field:
        """Snapshot at ``(n + 1/2) dt``: post-kinetic state of the central substep."""
        if not 0 <= n < self.n_steps:
            raise TrajectoryRangeError(f"half step {n} outside trajectory")
        s = self.substeps_per_step
        return Field(self.space, self.substep_mids[n * s + s // 2])

    @property
    def initial_state(self) -> Field:
        return Field(self.space, self.substep_starts[0])

    def snapshot_times(self) -> np.ndarray:
        return np.arange(2 * self.n_steps + 1) * (0.5 * self.dt)

    def snapshot_array(self) -> np.ndarray:
        """``(2 n_steps + 1, n_modes)`` array of snapshots at half-step spacing."""
        s = self.substeps_per_step
        out = np.empty((2 * self.n_steps + 1, self.space.n_modes), dtype=complex)
        out[0::2] = self.substep_starts[::s]
        out[1::2] = self.substep_mids[s // 2::s]
        return out

    def snapshots(self) -> list:
        return [Field(self.space, a) for a in self.snapshot_array()]


def evolve(phi0: Field, t1: float, dt: float = DEFAULT_DT, scheme: str = "yoshida4") -> HartreeTrajectory:
    """Integrate from ``phi0`` at time 0 up to ``t1`` (a multiple of ``dt``)."""
    if dt <= 0 or t1 < 0:
        raise ValueError("need dt > 0 and t1 >= 0")
    try:
        weights = SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {sorted(SCHEMES)}") from None
    require_normalized(phi0, tol=1e-10, what="initial state")
    n_steps = int(round(t1 / dt))
    if abs(n_steps * dt - t1) > _TIME_ALIGN_TOL * max(1.0, t1):
        raise ValueError(f"t1={t1!r} is not a multiple of dt={dt!r}")

    space = phi0.space
    s = len(weights)
    n_sub = n_steps * s
    n = space.n_modes
    starts = np.empty((n_sub + 1, n), dtype=complex)
    mids = np.empty((n_sub, n), dtype=complex)
    pots = np.empty((n_sub + 1, n), dtype=float)
    mass_series = np.empty(n_steps + 1)
    energy_series = np.empty(n_steps + 1)
    flows = [space.kinetic_flow_operator(w * dt) for w in weights]
    wq = space.quadrature_weight

    a = np.array(phi0.amplitudes)
    starts[0] = a
    pots[0] = np.real(space.convolve_array(np.abs(a) ** 2))
    for step in range(n_steps + 1):
        j0 = step * s
        a = starts[j0]
        rho = np.abs(a) ** 2
        m = wq * np.sum(rho)
        mass_series[step] = m
        energy_series[step] = _kinetic_energy(space, a) + 0.5 * wq * np.sum(rho * pots[j0])
        if abs(m - 1.0) > NORM_DRIFT_LIMIT:
            raise NormDriftError(f"mass drifted to {m!r} at t={step * dt!r}")
        if step == n_steps:
            break
        for i, w in enumerate(weights):
            j = j0 + i
            h = w * dt
            b = flows[i](np.exp(-0.5j * h * pots[j]) * a)
            mids[j] = b
            pots[j + 1] = np.real(space.convolve_array(np.abs(b) ** 2))
            a = np.exp(-0.5j * h * pots[j + 1]) * b
            starts[j + 1] = a

    for arr in (starts, mids, pots, mass_series, energy_series):
        arr.setflags(write=False)
    return HartreeTrajectory(space, float(dt), n_steps, scheme, tuple(weights),
                             starts, mids, pots, mass_series, energy_series)


def write_conservation_csv(traj: HartreeTrajectory, path) -> None:
    """Columns ``t, mass, energy`` with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write("t,mass,energy\n")
        for t, m, e in zip(traj.times, traj.mass_series, traj.energy_series):
            fh.write(f"{t:.17g},{m:.17g},{e:.17g}\n")


_SNAP_HEADER = struct.Struct("<qqddq")


def write_snapshot_binary(traj: HartreeTrajectory, path) -> None:
    """Little-endian dump: header ``(d, M, L, dt, count)`` then interleaved re/im doubles.

    ``L`` is NaN for a lattice.  Snapshots are at half-step spacing.
    """
    snaps = traj.snapshot_array()
    space = traj.space
    L = space.box_length if space.box_length is not None else float("nan")
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(space.dimension, space.grid_points, L, traj.dt, snaps.shape[0]))
        fh.write(np.ascontiguousarray(snaps).astype("<c16").tobytes())


def read_snapshot_binary(path):
    """Return ``(header dict, snapshots array)`` from :func:`write_snapshot_binary` output."""
    with open(path, "rb") as fh:
        raw = fh.read()
    d, M, L, dt, count = _SNAP_HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<c16", offset=_SNAP_HEADER.size)
    return {"d": d, "M": M, "L": L, "dt": dt, "count": count}, data.reshape(count, M ** d)
