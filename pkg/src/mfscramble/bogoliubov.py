"""Projected pair kernels and the real-linear Bogoliubov propagator.

The propagator ``L(t; s)`` solves ``i d/ds psi = G_s psi`` with

    G_s f = h_s f + Kt1_s f - Kt2_s conj(f),    h_s = K + v*|phi_s|^2,

where ``Kt1 = q K1 q`` and ``Kt2 conj(f) = q K2 conj(q f)`` are the kernels
projected off the condensate ``phi_s``.  Both terms are written as maps of
``f``; the combination is real-linear but not complex-linear.

Numerically ``L`` is advanced with exactly the substeps of the Hartree run.
Inside a potential kick the condensate only picks up the phase
``exp(-i sigma W)``, so in the frame rotating with that phase the bounded part
``Kt1 - Kt2 J`` is autonomous; it is advanced there with one classical
Runge-Kutta step per half kick.  The kinetic substep is exact.  Because the
condensate is propagated by the same splitting, ``L(t;0) phi_t = phi_0`` holds
to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import SpaceMismatchError
from .hartree import HartreeTrajectory, hartree_rhs
from .space import (Field, ModeSpace, conj_field, convolve, inner, pointwise, project_out,
                    require_normalized)


# -- kernels on fields ----------------------------------------------------

def _same_space(phi: Field, f: Field):
    if f.space is not phi.space:
        raise SpaceMismatchError("fields live on different mode spaces")


def k1_apply(phi: Field, f: Field) -> Field:
    """``phi * (v * (conj(phi) f))``; Hermitian in ``f``."""
    _same_space(phi, f)
    return pointwise(phi, convolve(phi.space, pointwise(conj_field(phi), f)))


def k2_apply(phi: Field, f: Field) -> Field:
    """``phi * (v * (phi f))``; complex symmetric in ``f``."""
    _same_space(phi, f)
    return pointwise(phi, convolve(phi.space, pointwise(phi, f)))


def k1_tilde_apply(phi: Field, f: Field) -> Field:
    """``q K1 q f`` with ``q`` the projection off ``phi``."""
    return project_out(phi, k1_apply(phi, project_out(phi, f)))


def k2_tilde_apply(phi: Field, f: Field) -> Field:
    """``q K2 (J q J) f``.

    This is the ordering for which ``k2_tilde_apply(phi, conj(g))`` is the
    pair kernel acting on ``conj(q g)``; it annihilates ``conj(phi)`` and its
    range is orthogonal to ``phi``.
    """
    pc = conj_field(phi)
    require_normalized(phi)
    return project_out(phi, k2_apply(phi, f - inner(pc, f) * pc))


def generator_apply(phi: Field, f: Field) -> Field:
    """``h f + Kt1 f - Kt2 conj(f)`` around the condensate ``phi``."""
    return hartree_rhs(phi, f) + k1_tilde_apply(phi, f) - k2_tilde_apply(phi, conj_field(f))


# -- array-level bounded part ----------------------------------------------

def _bounded_exp(space: ModeSpace, c: np.ndarray, a: np.ndarray, tau: float) -> np.ndarray:
    """Approximate ``exp(-i tau (Kt1 - Kt2 J))`` around the fixed condensate ``c``.

    With ``B a = -i (Kt1 - Kt2 J) a`` the flow ``a' = B a`` is linear and
    autonomous, so one classical RK4 step equals the degree-4 Taylor
    polynomial, evaluated here in Horner form.  For a real even kernel
    ``v * conj(y) = conj(v * y)``; with ``C = v * (conj(c) q a)`` both kernels
    fuse into ``B a = q[2 c Im C]``, a single convolution.
    """
    cw = space.quadrature_weight * np.conj(c)
    cc = np.conj(c)

    def rate(x):
        qx = x - np.multiply.outer(x @ cw, c)
        y = (2.0 * c) * space.convolve_array(cc * qx).imag
        return y - np.multiply.outer(y @ cw, c)

    acc = a + (tau / 4.0) * rate(a)
    acc = a + (tau / 3.0) * rate(acc)
    acc = a + (tau / 2.0) * rate(acc)
    return a + tau * rate(acc)


# -- propagator -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LPropagator:
    """Bogoliubov propagator bound to one Hartree trajectory.

    Time arguments must lie on the trajectory's full-step grid.  Adjacent
    potential kicks share their potential and their condensates differ by a
    known phase, so consecutive half kicks are merged into one; they are
    split only at full steps where fields enter or leave a sweep.
    """

    trajectory: HartreeTrajectory

    def __post_init__(self):
        traj = self.trajectory
        flows = {}
        for w in traj.weights:
            for sign in (1.0, -1.0):
                if (w, sign) not in flows:
                    flows[(w, sign)] = traj.space.kinetic_flow_operator(sign * w * traj.dt)
        object.__setattr__(self, "_flows", flows)

    @property
    def space(self) -> ModeSpace:
        return self.trajectory.space

    def _width(self, j: int) -> float:
        traj = self.trajectory
        return traj.weights[j % traj.substeps_per_step] * traj.dt

    def _kick(self, c: np.ndarray, pot: np.ndarray, tau: float, a: np.ndarray) -> np.ndarray:
        """Forward flow over a potential kick of signed length ``tau``.

        ``c`` is the condensate at the start of the kick; it moves as
        ``exp(-i s pot) c``, so the flow is that phase times the bounded flow
        around the fixed ``c``.
        """
        return np.exp(-1j * tau * pot) * _bounded_exp(self.space, c, a, tau)

    def _unkick(self, c: np.ndarray, pot: np.ndarray, tau: float, a: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`_kick` with the same arguments."""
        return _bounded_exp(self.space, c, np.exp(1j * tau * pot) * a, -tau)

    def _backward(self, arrays: np.ndarray, entry: np.ndarray, j_low: int) -> np.ndarray:
        """Run substeps down to substep index ``j_low``.

        ``entry[i]`` is the substep index at which field ``i`` joins; rows
        must be sorted so that ``entry`` is non-increasing.
        """
        traj = self.trajectory
        starts, mids, pots = traj.substep_starts, traj.substep_mids, traj.kick_potentials
        state = arrays.copy()
        total = state.shape[0]
        if total == 0:
            return state
        events = set(int(e) for e in entry) | {j_low}
        j_top = int(entry[0])
        active = int(np.sum(entry == j_top))
        if j_top > j_low:
            h = self._width(j_top - 1)
            state[:active] = self._unkick(mids[j_top - 1], pots[j_top], 0.5 * h, state[:active])
        for j in range(j_top - 1, j_low - 1, -1):
            h = self._width(j)
            state[:active] = self._flows[(traj.weights[j % traj.substeps_per_step], -1.0)](state[:active])
            if j in events:
                state[:active] = self._unkick(starts[j], pots[j], 0.5 * h, state[:active])
                while active < total and entry[active] == j:
                    active += 1
                if j > j_low:
                    hp = self._width(j - 1)
                    state[:active] = self._unkick(mids[j - 1], pots[j], 0.5 * hp, state[:active])
            else:
                hp = self._width(j - 1)
                state[:active] = self._unkick(mids[j - 1], pots[j], 0.5 * (h + hp), state[:active])
        return state

    def _forward(self, arrays: np.ndarray, j_from: int, exits: np.ndarray) -> np.ndarray:
        """Run substeps from ``j_from``; row ``i`` is recorded at substep ``exits[i]``."""
        traj = self.trajectory
        starts, mids, pots = traj.substep_starts, traj.substep_mids, traj.kick_potentials
        state = arrays.copy()
        out = np.empty_like(state)
        if state.shape[0] == 0:
            return out
        for i in np.nonzero(exits == j_from)[0]:
            out[i] = state[i]
        j_end = int(exits.max())
        if j_end == j_from:
            return out
        events = set(int(e) for e in exits)
        state = self._kick(starts[j_from], pots[j_from], 0.5 * self._width(j_from), state)
        for j in range(j_from, j_end):
            h = self._width(j)
            state = self._flows[(traj.weights[j % traj.substeps_per_step], 1.0)](state)
            if j + 1 in events:
                state = self._kick(mids[j], pots[j + 1], 0.5 * h, state)
                hit = exits == j + 1
                out[hit] = state[hit]
                if j + 1 < j_end:
                    state = self._kick(starts[j + 1], pots[j + 1], 0.5 * self._width(j + 1), state)
            else:
                hn = self._width(j + 1)
                state = self._kick(mids[j], pots[j + 1], 0.5 * (h + hn), state)
        return out

    def flow_array(self, a: np.ndarray, s_from: float, s_to: float) -> np.ndarray:
        """Solution at ``s_to`` of the generator flow with value ``a`` at ``s_from``.

        ``a`` may carry leading batch axes.
        """
        traj = self.trajectory
        s = traj.substeps_per_step
        n0, n1 = traj.step_index(s_from), traj.step_index(s_to)
        a = np.asarray(a, dtype=complex)
        flat = a.reshape(-1, a.shape[-1])
        if n1 < n0:
            out = self._backward(flat, np.full(flat.shape[0], n0 * s), n1 * s)
        else:
            out = self._forward(flat, n0 * s, np.full(flat.shape[0], n1 * s))
        return out.reshape(a.shape)

    def sweep_to_zero(self, arrays, times) -> np.ndarray:
        """Apply ``L(t_i; 0)`` to ``arrays[i]`` for every ``i`` in one backward pass.

        Each field joins the pass when the sweep reaches its own start time,
        so the cost is that of a single propagation from ``max(times)``.
        """
        traj = self.trajectory
        arrays = np.asarray(arrays, dtype=complex)
        if arrays.ndim != 2 or arrays.shape[0] != len(times):
            raise ValueError("need one field per start time")
        entry = np.array([traj.step_index(t) for t in times], dtype=int) * traj.substeps_per_step
        order = np.argsort(-entry, kind="stable")
        res = self._backward(arrays[order], entry[order], 0)
        out = np.empty_like(res)
        out[order] = res
        return out

    def sweep_from_zero(self, arrays, times) -> np.ndarray:
        """Apply ``L(0; t_i)`` to ``arrays[i]`` in one forward pass."""
        traj = self.trajectory
        arrays = np.asarray(arrays, dtype=complex)
        if arrays.ndim != 2 or arrays.shape[0] != len(times):
            raise ValueError("need one field per end time")
        exits = np.array([traj.step_index(t) for t in times], dtype=int) * traj.substeps_per_step
        return self._forward(arrays, 0, exits)


def _check_prop_field(prop: LPropagator, f: Field):
    if f.space is not prop.space:
        raise SpaceMismatchError("field and trajectory live on different mode spaces")


def propagate_L(prop: LPropagator, f: Field, t: float) -> Field:
    """``L(t; 0) f``: integrate backward from ``psi(t) = f`` to ``s = 0``."""
    _check_prop_field(prop, f)
    return Field(f.space, prop.flow_array(f.amplitudes, t, 0.0))


def propagate_L_adjoint_direction(prop: LPropagator, f: Field, t: float) -> Field:
    """``L(0; t) f``: integrate forward from ``psi(0) = f`` to ``s = t``; inverse of :func:`propagate_L`."""
    _check_prop_field(prop, f)
    return Field(f.space, prop.flow_array(f.amplitudes, 0.0, t))


def propagate_between(prop: LPropagator, f: Field, s_from: float, s_to: float) -> Field:
    """Value at ``s_to`` of the flow through ``f`` at ``s_from`` (either direction)."""
    _check_prop_field(prop, f)
    return Field(f.space, prop.flow_array(f.amplitudes, s_from, s_to))


def propagate_many(prop: LPropagator, fields, times) -> list:
    """``[L(t_i; 0) f_i]`` computed in a single shared backward sweep."""
    for f in fields:
        _check_prop_field(prop, f)
    out = prop.sweep_to_zero(np.array([f.amplitudes for f in fields]), list(times))
    return [Field(prop.space, a) for a in out]


# -- pairs and the doubled propagator ---------------------------------------

@dataclass(frozen=True, eq=False)
class PairField:
    """Element ``(first, second)`` of the doubled one-body space."""

    first: Field
    second: Field

    def __post_init__(self):
        if self.first.space is not self.second.space:
            raise SpaceMismatchError("pair components live on different mode spaces")

    @classmethod
    def j_real(cls, f: Field) -> "PairField":
        """The pair ``(f, conj(f))``."""
        return cls(f, conj_field(f))

    @property
    def space(self) -> ModeSpace:
        return self.first.space

    def __add__(self, other: "PairField") -> "PairField":
        return PairField(self.first + other.first, self.second + other.second)

    def __sub__(self, other: "PairField") -> "PairField":
        return PairField(self.first - other.first, self.second - other.second)

    def __mul__(self, scalar) -> "PairField":
        return PairField(self.first * scalar, self.second * scalar)

    __rmul__ = __mul__


def pair_conj(p: PairField) -> PairField:
    """The swap-conjugation ``(f, g) -> (conj(g), conj(f))``."""
    return PairField(conj_field(p.second), conj_field(p.first))


def s_inner(p: PairField, q: PairField) -> complex:
    """Indefinite pairing ``<p1, q1> - <p2, q2>``."""
    return inner(p.first, q.first) - inner(p.second, q.second)


def _j_real_parts(p: PairField):
    """Split ``p = (u, conj u) + i (w, conj w)``."""
    gbar = conj_field(p.second)
    u = (p.first + gbar) * 0.5
    w = (p.first - gbar) * (-0.5j)
    return u, w


def _assemble(lu: Field, lw: Field) -> PairField:
    return PairField(lu + 1j * lw, conj_field(lu) + 1j * conj_field(lw))


def propagate_pair(prop: LPropagator, p: PairField, t: float) -> PairField:
    """Doubled propagator ``Theta(t; 0)`` applied to ``p``.

    ``Theta`` commutes with the swap-conjugation, so it is fixed by its
    action ``(u, conj u) -> (L u, conj(L u))`` on swap-real pairs.
    """
    u, w = _j_real_parts(p)
    lu, lw = propagate_many(prop, [u, w], [t, t])
    return _assemble(lu, lw)


def propagate_pair_inverse(prop: LPropagator, p: PairField, t: float) -> PairField:
    """``Theta(t; 0)^{-1}`` applied to ``p`` via forward integration."""
    u, w = _j_real_parts(p)
    out = prop.sweep_from_zero(np.array([u.amplitudes, w.amplitudes]), [t, t])
    return _assemble(Field(u.space, out[0]), Field(u.space, out[1]))


# -- homogeneous background, per-mode closed form ---------------------------

def homogeneous_mode_block(space: ModeSpace, condensate: complex, mode: int, t: float) -> np.ndarray:
    """Real 4x4 matrix of ``L(t; 0)`` on the Fourier pair ``+k, -k`` (``d = 1``).

    The condensate is the constant field ``condensate`` on the spectral
    torus.  Coordinates are ``(Re a, Im a, Re b, Im b)`` for the field
    ``a e_k + b e_{-k}`` with normalized plane waves ``e_{+-k}``.  Computed
    in the frame rotating with the condensate phase, where the block is
    autonomous, by a matrix exponential.
    """
    if not space.is_spectral or space.dimension != 1:
        raise ValueError("homogeneous mode blocks are defined on a 1-d spectral torus")
    if mode == 0 or 2 * abs(mode) == space.grid_points:
        raise ValueError("mode must pair two distinct nonzero wave vectors")
    i_k = mode % space.grid_points
    k = space.kvectors[i_k, 0]
    vk = space.vhat[i_k]
    rho = abs(condensate) ** 2
    mu = rho * space.vhat[0]
    diag = k * k + rho * vk
    gamma = condensate ** 2 * vk
    gr, gi = gamma.real, gamma.imag
    # d/ds of (a, b) in the rotating frame: a' = -i(diag a - gamma conj b), likewise b
    gen = np.array([
        [0.0, diag, -gi, gr],
        [-diag, 0.0, gr, gi],
        [-gi, gr, 0.0, diag],
        [gr, gi, -diag, 0.0],
    ])
    back = scipy.linalg.expm(-t * gen)
    rot = np.array([[np.cos(mu * t), -np.sin(mu * t)], [np.sin(mu * t), np.cos(mu * t)]])
    # undo the rotating frame at s = t: a_rot(t) = exp(i mu t) a(t)
    frame = np.kron(np.eye(2), rot)
    return back @ frame


def mode_blocks_from_propagator(prop: LPropagator, modes, times) -> np.ndarray:
    """Numerical counterpart of :func:`homogeneous_mode_block`.

    Every entry of ``modes`` and ``times`` is handled in a single backward
    sweep.  Returns an array of shape ``(len(modes), len(times), 4, 4)``.
    """
    space = prop.space
    fields, ts, waves = [], [], []
    for m in modes:
        ep, em = Field.plane_wave(space, m), Field.plane_wave(space, -m)
        waves.append((ep, em))
        for t in times:
            fields.extend([ep, ep * 1j, em, em * 1j])
            ts.extend([t] * 4)
    out = propagate_many(prop, fields, ts)
    blocks = np.empty((len(modes), len(times), 4, 4))
    pos = 0
    for im, (ep, em) in enumerate(waves):
        for it in range(len(times)):
            for col in range(4):
                g = out[pos]
                pos += 1
                a, b = inner(ep, g), inner(em, g)
                blocks[im, it, :, col] = (a.real, a.imag, b.real, b.imag)
    return blocks


__all__ = [
    "k1_apply", "k2_apply", "k1_tilde_apply", "k2_tilde_apply", "generator_apply",
    "LPropagator", "propagate_L", "propagate_L_adjoint_direction", "propagate_between",
    "propagate_many", "PairField", "pair_conj", "s_inner", "propagate_pair",
    "propagate_pair_inverse", "homogeneous_mode_block", "mode_blocks_from_propagator",
]
