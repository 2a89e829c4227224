"""Large-N scrambling quantities built on the Bogoliubov propagator.

Everything factors through the fields

    g0 = q_0 B phi_0,        f_t = L(t; 0) q_t A phi_t,

and the real scalar ``Im <g0, f_t>``.  The squared commutator of the
time-evolved one-body observables tends to ``4 (Im <g0, f_t>)^2``; the
constant was confirmed against the exact finite-N oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .bogoliubov import (LPropagator, PairField, generator_apply, propagate_many, s_inner)
from .hartree import HartreeTrajectory
from .space import Field, Observable, apply_observable, conj_field, inner, project_out, require_normalized

#: ``otoc = OTOC_PREFACTOR * otoc_scalar**2``
OTOC_PREFACTOR = 4.0
MAX_PAIRING_ORDER = 12


def _propagator(traj: HartreeTrajectory, prop: LPropagator | None) -> LPropagator:
    if prop is None:
        return LPropagator(traj)
    if prop.trajectory is not traj:
        raise ValueError("propagator belongs to a different trajectory")
    return prop


def centered_source(traj: HartreeTrajectory, A: Observable, t: float) -> Field:
    """``q_t A phi_t``."""
    phi = traj.state(t)
    return project_out(phi, apply_observable(A, phi))


def propagated_sources(traj: HartreeTrajectory, A: Observable, times, prop=None) -> list:
    """``[L(t; 0) q_t A phi_t for t in times]`` in a single sweep."""
    prop = _propagator(traj, prop)
    return propagate_many(prop, [centered_source(traj, A, t) for t in times], times)


def otoc_scalar_series(traj: HartreeTrajectory, A: Observable, B: Observable, times,
                       prop=None) -> np.ndarray:
    g0 = centered_source(traj, B, 0.0)
    return np.array([inner(g0, f).imag for f in propagated_sources(traj, A, times, prop)])


def otoc_scalar(traj: HartreeTrajectory, A: Observable, B: Observable, t: float, prop=None) -> float:
    """``Im <q_0 B phi_0, L(t; 0) q_t A phi_t>``."""
    return float(otoc_scalar_series(traj, A, B, [t], prop)[0])


def otoc(traj: HartreeTrajectory, A: Observable, B: Observable, t: float, prop=None) -> float:
    """Large-N limit of the normalized squared commutator; never negative."""
    return OTOC_PREFACTOR * otoc_scalar(traj, A, B, t, prop) ** 2


def _apply_pair(A: Observable, p: PairField) -> PairField:
    return PairField(apply_observable(A, p.first), apply_observable(A, p.second))


def _split(p: PairField):
    """Swap-real parts ``u, w`` with ``p = (u, conj u) + i (w, conj w)``."""
    gbar = conj_field(p.second)
    return ((p.first + gbar) * 0.5).amplitudes, ((p.first - gbar) * (-0.5j)).amplitudes


def _join(space, u: np.ndarray, w: np.ndarray) -> PairField:
    lu, lw = Field(space, u), Field(space, w)
    return PairField(lu + 1j * lw, conj_field(lu) + 1j * conj_field(lw))


def otoc_symplectic_series(traj: HartreeTrajectory, A: Observable, B: Observable, times,
                           prop=None) -> np.ndarray:
    """:func:`otoc_symplectic_form` for several times, sharing two sweeps."""
    prop = _propagator(traj, prop)
    space = traj.space
    times = [float(t) for t in times]
    p0 = PairField.j_real(traj.initial_state)
    bp0 = _apply_pair(B, p0)
    rows0 = [*_split(p0), *_split(bp0)]
    four = [t for t in times for _ in range(4)]
    back = prop.sweep_from_zero(np.array(rows0 * len(times)), four)
    rows1 = []
    for i in range(len(times)):
        for k in (0, 2):
            rows1.extend(_split(_apply_pair(A, _join(space, back[4 * i + k], back[4 * i + k + 1]))))
    fwd = prop.sweep_to_zero(np.array(rows1), four)
    out = np.empty(len(times))
    for i in range(len(times)):
        a_p0 = _join(space, fwd[4 * i], fwd[4 * i + 1])
        a_bp0 = _join(space, fwd[4 * i + 2], fwd[4 * i + 3])
        comm = _apply_pair(B, a_p0) - a_bp0
        out[i] = (s_inner(p0, comm) / 1j).real
    return out


def otoc_symplectic_form(traj: HartreeTrajectory, A: Observable, B: Observable, t: float,
                         prop=None) -> float:
    """``<P, [B, Theta A Theta^{-1}] P>_S / i`` with ``P = (phi_0, conj phi_0)``.

    ``Theta^{-1}`` is applied by forward integration, ``A`` and ``B`` act on
    each component.  The pairing of swap-real pairs is purely imaginary, so
    the result is real; it equals ``4 * otoc_scalar`` because ``L`` maps
    ``phi_t`` to ``phi_0``.
    """
    return float(otoc_symplectic_series(traj, A, B, [t], prop)[0])


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """Complex symmetric multi-time covariance of propagated sources."""

    times: np.ndarray
    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def imag_norm(self) -> float:
        """Largest absolute imaginary part of any entry."""
        return float(np.max(np.abs(self.entries.imag), initial=0.0))


def sigma_matrix(traj: HartreeTrajectory, A: Observable, times, prop=None) -> CovarianceMatrix:
    """``Sigma[i, j] = <f_min(i,j), f_max(i,j)>`` with ``f_i = L(t_i;0) q A phi``."""
    times = [float(t) for t in times]
    fs = propagated_sources(traj, A, times, prop)
    m = len(times)
    sig = np.empty((m, m), dtype=complex)
    for i in range(m):
        for j in range(i, m):
            sig[i, j] = inner(fs[i], fs[j])
            sig[j, i] = sig[i, j]
    sig.setflags(write=False)
    return CovarianceMatrix(np.array(times), sig)


@dataclass(frozen=True)
class Pairing:
    """A perfect matching of ``{1, ..., m}`` as 1-based ``(i, j)`` pairs with ``i < j``.

    Pairs are listed with strictly increasing first elements.
    """

    pairs: tuple


def enumerate_pairings(m: int) -> list:
    """All ``(m - 1)!!`` pairings of ``{1, ..., m}`` in canonical form."""
    if m < 0 or m % 2:
        raise ValueError(f"pairings need an even order, got {m}")
    if m > MAX_PAIRING_ORDER:
        raise ValueError(f"pairing order {m} exceeds the cap {MAX_PAIRING_ORDER}")

    def rec(items):
        if not items:
            yield ()
            return
        first, rest = items[0], items[1:]
        for k, partner in enumerate(rest):
            for tail in rec(rest[:k] + rest[k + 1:]):
                yield ((first, partner),) + tail

    return [Pairing(p) for p in rec(tuple(range(1, m + 1)))]


def wick_moment(sigma: CovarianceMatrix, m: int) -> complex:
    """Sum over pairings of products of covariance entries; zero for odd ``m``."""
    if m != sigma.dim:
        raise ValueError(f"moment order {m} does not match covariance size {sigma.dim}")
    if m % 2:
        return 0j
    total = 0j
    ent = sigma.entries
    for p in enumerate_pairings(m):
        prod = 1 + 0j
        for i, j in p.pairs:
            prod *= ent[i - 1, j - 1]
        total += prod
    return complex(total)


def char_function(sigma: CovarianceMatrix, lam) -> complex:
    """``exp(-lam^T Sigma lam / 2)`` for a real vector ``lam``."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.size != sigma.dim:
        raise ValueError("lambda length does not match covariance size")
    return complex(np.exp(-0.5 * lam @ sigma.entries @ lam))


def gaussian_expectation(sigma: CovarianceMatrix, g: Callable[[np.ndarray], np.ndarray],
                         nodes: int = 64, imag_tol: float = 1e-6) -> float:
    """``E[prod_i g(X_i)]`` for ``X ~ N(0, Re Sigma)`` by tensor Gauss-Hermite quadrature.

    ``g`` must accept arrays.  Only ``m <= 3`` is supported.
    """
    m = sigma.dim
    if m > 3:
        raise ValueError("gaussian_expectation supports at most three variables")
    if sigma.imag_norm > imag_tol:
        raise ValueError(f"covariance has imaginary part {sigma.imag_norm:.3e} > {imag_tol:g}")
    cov = sigma.entries.real
    cov = 0.5 * (cov + cov.T)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("real part of the covariance is not positive definite") from None
    z, w = hermegauss(nodes)
    w = w / math.sqrt(2.0 * math.pi)
    grids = np.meshgrid(*([z] * m), indexing="ij")
    pts = np.stack([gr.ravel() for gr in grids])
    weights = np.ones(pts.shape[1])
    for wg in np.meshgrid(*([w] * m), indexing="ij"):
        weights = weights * wg.ravel()
    x = chol @ pts
    vals = np.ones(pts.shape[1])
    for i in range(m):
        vals = vals * np.asarray(g(x[i]), dtype=float)
    return float(np.sum(weights * vals))


def initial_rate(phi0: Field, A: Observable, B: Observable) -> float:
    """``Re <phi_0, B [G, A] phi_0>`` with ``G`` the Bogoliubov generator at time 0.

    This is the slope of ``otoc_scalar`` at ``t = 0``.
    """
    require_normalized(phi0)
    a_phi = apply_observable(A, phi0)
    comm = generator_apply(phi0, a_phi) - apply_observable(A, generator_apply(phi0, phi0))
    return float(inner(apply_observable(B, phi0), comm).real)


@dataclass(frozen=True)
class FitResult:
    rate: float
    intercept: float
    r2: float
    window: tuple


def _window(times, values, window):
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    ta, tb = window
    sel = (t >= ta - 1e-12) & (t <= tb + 1e-12)
    if np.count_nonzero(sel) < 2:
        raise ValueError("need at least two samples inside the fit window")
    return t[sel], y[sel]


def butterfly_fit(times: Sequence[float], values: Sequence[float], window) -> FitResult:
    """Least-squares fit ``log otoc(t) ~ c + rate * t`` on ``window``."""
    t, y = _window(times, values, window)
    if np.any(y <= 0):
        raise ValueError("OTOC values in the fit window must be positive")
    logy = np.log(y)
    rate, intercept = np.polyfit(t, logy, 1)
    resid = logy - (intercept + rate * t)
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    ss_res = float(np.sum(resid ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    if ss_tot == 0.0:
        rate = 0.0
    return FitResult(float(rate), float(intercept), float(r2), (float(window[0]), float(window[1])))


@dataclass(frozen=True)
class GrowthEnvelope:
    """Linear upper envelope ``intercept + rate * t`` of ``log otoc`` on a window."""

    rate: float
    intercept: float
    rms_residual: float
    curvature: float
    excess: float
    super_exponential: bool
    window: tuple


def _block_maxima(t, logy, lo, hi, blocks):
    edges = np.linspace(lo, hi, blocks + 1)
    bt, by = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (t >= a - 1e-12) & (t <= b + 1e-12)
        if np.any(sel):
            k = np.argmax(np.where(sel, logy, -np.inf))
            bt.append(t[k])
            by.append(logy[k])
    return np.array(bt), np.array(by)


def growth_envelope(times, values, window, blocks: int = 8, excess_tol: float = 1.0) -> GrowthEnvelope:
    """Check that ``log otoc`` stays below a straight line on ``window``.

    The window is cut into ``blocks`` equal pieces and the maximum of
    ``log otoc`` is taken on each.  A line is fitted through these block
    maxima and shifted up until it bounds every sample; ``rms_residual``
    measures how well a line describes the maxima.

    Super-exponential growth is detected by extrapolation: an envelope
    built the same way from the first half of the window, with its slope
    clamped at zero from below, is continued over the second half.  The
    largest amount by which the second-half samples exceed it is
    ``excess`` (in e-folds), and growth is flagged when it is above
    ``excess_tol``.  ``curvature`` is the quadratic coefficient through the
    block maxima, reported for information.  Samples that vanish exactly
    only lower the curve and are skipped.
    """
    t, y = _window(times, values, window)
    if np.any(y < 0):
        raise ValueError("OTOC values must be nonnegative")
    keep = y > 0
    t, logy = t[keep], np.log(y[keep])
    lo, hi = float(window[0]), float(window[1])
    bt, by = _block_maxima(t, logy, lo, hi, blocks)
    if bt.size < 3:
        raise ValueError("too few positive samples for an envelope")
    rate, icpt = np.polyfit(bt, by, 1)
    rms = float(np.sqrt(np.mean((by - (icpt + rate * bt)) ** 2)))
    icpt = float(np.max(logy - rate * t))
    curv = float(np.polyfit(bt, by, 2)[0])

    mid = 0.5 * (lo + hi)
    first, second = t <= mid, t > mid
    ft, fy = _block_maxima(t[first], logy[first], lo, mid, max(blocks // 2, 2))
    early_rate = max(float(np.polyfit(ft, fy, 1)[0]), 0.0) if ft.size >= 2 else 0.0
    early_icpt = float(np.max(logy[first] - early_rate * t[first]))
    excess = float(np.max(logy[second] - (early_icpt + early_rate * t[second]), initial=-np.inf))
    return GrowthEnvelope(float(rate), icpt, rms, curv, excess, bool(excess > excess_tol), (lo, hi))
