"""Exact finite-N bosons on a small lattice.

States of ``N`` bosons in ``M`` modes are indexed in colexicographic order of
the occupation vectors (compare ``n_M`` first, then ``n_{M-1}``, ...).  The
Hamiltonian

    H_N = dGamma(h0) + (1/2N) sum_jk v_jk (n_j n_k - delta_jk n_j)

is diagonalized once; time evolution and Heisenberg conjugation then act
through ``U exp(-i E t) U^dagger``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse

from .errors import BackendError, NormalizationError, ResourceCapError, SpaceMismatchError
from .hartree import evolve
from .space import Field, ModeSpace, Observable, expectation

MAX_SECTOR_DIM = 4000


class FockBasis:
    """Occupation-number basis of ``particles`` bosons in ``modes`` modes."""

    def __init__(self, modes: int, particles: int, max_dim: int = MAX_SECTOR_DIM):
        if modes < 1 or particles < 0:
            raise ValueError("need at least one mode and a nonnegative particle number")
        self.modes = int(modes)
        self.particles = int(particles)
        self.dim = math.comb(self.particles + self.modes - 1, self.modes - 1)
        if self.dim > max_dim:
            raise ResourceCapError(
                f"sector dimension {self.dim} exceeds the cap {max_dim} (N={particles}, M={modes})")
        # binom[r, c] = C(r, c), large enough for every rank term
        size = self.particles + self.modes + 1
        binom = np.zeros((size, self.modes + 1), dtype=np.int64)
        for r in range(size):
            for c in range(min(r, self.modes) + 1):
                binom[r, c] = math.comb(r, c)
        self._binom = binom
        states = np.zeros((self.dim, self.modes), dtype=np.int64)
        for i in range(self.dim):
            states[i] = self.unrank(i)
        states.setflags(write=False)
        self.states = states

    def _prefix(self, occ: np.ndarray) -> np.ndarray:
        return np.cumsum(occ, axis=-1)

    def rank(self, occ) -> int:
        """Position of an occupation vector in the basis."""
        occ = np.asarray(occ, dtype=np.int64)
        if occ.shape != (self.modes,) or occ.sum() != self.particles or np.any(occ < 0):
            raise ValueError(f"{occ.tolist()} is not a state of this sector")
        return int(self.rank_many(occ[None, :])[0])

    def rank_many(self, occ: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`rank` for an ``(n, modes)`` array (no validation)."""
        occ = np.asarray(occ, dtype=np.int64)
        if self.modes == 1:
            return np.zeros(occ.shape[0], dtype=np.int64)
        s = self._prefix(occ)
        j = np.arange(2, self.modes + 1)  # 1-based mode index
        # states preceding in mode j with the same higher occupations:
        # C(S_j + j - 1, j - 1) - C(S_{j-1} + j - 1, j - 1)
        upper = self._binom[s[:, 1:] + j - 1, j - 1]
        lower = self._binom[s[:, :-1] + j - 1, j - 1]
        return np.sum(upper - lower, axis=1)

    def unrank(self, index: int) -> tuple:
        if not 0 <= index < self.dim:
            raise IndexError(f"index {index} outside sector of dimension {self.dim}")
        occ = [0] * self.modes
        remaining = self.particles
        r = int(index)
        for j in range(self.modes, 1, -1):
            # count of states with n_j = a and prefix sum `remaining`
            a = 0
            while True:
                block = math.comb(remaining - a + j - 2, j - 2)
                if r < block:
                    break
                r -= block
                a += 1
            occ[j - 1] = a
            remaining -= a
        occ[0] = remaining
        return tuple(occ)


class ManyBodyOperator:
    """Matrix on a Fock sector; sparse when built, dense on demand."""

    def __init__(self, basis: FockBasis, matrix, hermitian: bool = True):
        self.basis = basis
        self.matrix = matrix
        self.hermitian = hermitian
        if matrix.shape != (basis.dim, basis.dim):
            raise SpaceMismatchError("operator size does not match the basis")
        if hermitian:
            diff = matrix - matrix.conj().T
            err = abs(diff).max() if scipy.sparse.issparse(diff) else np.max(np.abs(diff), initial=0.0)
            if err > 1e-12:
                raise ValueError(f"operator flagged Hermitian is not (deviation {err:.2e})")
        self._spectrum = None

    def dense(self) -> np.ndarray:
        m = self.matrix
        return m.toarray() if scipy.sparse.issparse(m) else np.asarray(m)

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def is_diagonal(self) -> bool:
        m = self.matrix
        if scipy.sparse.issparse(m):
            coo = m.tocoo()
            return bool(np.all((coo.row == coo.col) | (coo.data == 0)))
        return bool(np.count_nonzero(m - np.diag(np.diag(m))) == 0)

    def diagonal(self) -> np.ndarray:
        m = self.matrix
        return m.diagonal() if scipy.sparse.issparse(m) else np.diag(m).copy()

    def spectrum(self):
        """Cached eigendecomposition ``(E, U)`` of a Hermitian operator."""
        if not self.hermitian:
            raise ValueError("spectrum requires a Hermitian operator")
        if self._spectrum is None:
            d = self.dense()
            if np.max(np.abs(d.imag), initial=0.0) == 0.0:
                d = d.real
            try:
                E, U = scipy.linalg.eigh(d)
            except np.linalg.LinAlgError as exc:
                raise RuntimeError(f"eigendecomposition failed: {exc}") from exc
            self._spectrum = (E, U)
        return self._spectrum

    def evolve_state(self, v: np.ndarray, t: float) -> np.ndarray:
        """``exp(-i t M) v`` for this Hermitian operator ``M``."""
        E, U = self.spectrum()
        return U @ (np.exp(-1j * t * E) * (U.conj().T @ v))


@dataclass(frozen=True, eq=False)
class FockState:
    basis: FockBasis
    amplitudes: np.ndarray


def _one_body_matrix(basis: FockBasis, A) -> np.ndarray:
    if isinstance(A, Observable):
        if A.kind == "momentum":
            raise BackendError("momentum multipliers are not available on a lattice oracle")
        mat = np.diag(A.data) if A.kind == "position" else np.array(A.data)
    else:
        mat = np.asarray(A)
    if mat.shape != (basis.modes, basis.modes):
        raise SpaceMismatchError("one-body operator size does not match the number of modes")
    return mat


def dgamma(basis: FockBasis, A) -> ManyBodyOperator:
    """Second quantization ``sum_jk A_jk a_j^dagger a_k``.

    ``A`` is a lattice :class:`Observable` (position or dense) or a matrix.
    """
    mat = _one_body_matrix(basis, A)
    st = basis.states
    rows, cols, vals = [np.arange(basis.dim)], [np.arange(basis.dim)], [st @ np.diag(mat).astype(complex)]
    M = basis.modes
    for j in range(M):
        for k in range(M):
            if j == k or mat[j, k] == 0:
                continue
            src = np.nonzero(st[:, k] > 0)[0]
            if src.size == 0:
                continue
            new = np.array(st[src])
            amp = np.sqrt(new[:, k] * (new[:, j] + 1.0))
            new[:, k] -= 1
            new[:, j] += 1
            rows.append(basis.rank_many(new))
            cols.append(src)
            vals.append(mat[j, k] * amp)
    m = scipy.sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                shape=(basis.dim, basis.dim)).tocsr()
    herm = bool(np.allclose(mat, mat.conj().T, atol=1e-12, rtol=0))
    return ManyBodyOperator(basis, m, hermitian=herm)


def build_hamiltonian(basis: FockBasis, space: ModeSpace, N: int | None = None) -> ManyBodyOperator:
    """Mean-field Hamiltonian with the pair potential of the lattice ``space``."""
    if space.is_spectral:
        raise BackendError("the many-body oracle needs a lattice mode space")
    if space.n_modes != basis.modes:
        raise SpaceMismatchError("lattice size does not match the basis")
    if N is not None and N != basis.particles:
        raise ValueError("particle number does not match the basis")
    N = basis.particles
    kin = dgamma(basis, space.hopping)
    if N == 0:
        return kin
    n = basis.states.astype(float)
    v = space.potential
    inter = (np.einsum("sj,jk,sk->s", n, v, n) - n @ np.diag(v)) / (2.0 * N)
    return ManyBodyOperator(basis, (kin.matrix + scipy.sparse.diags(inter)).tocsr(), hermitian=True)


def evolve_heisenberg(H: ManyBodyOperator, O: ManyBodyOperator, t: float) -> ManyBodyOperator:
    """Dense ``exp(i t H) O exp(-i t H)``."""
    if O.basis is not H.basis:
        raise SpaceMismatchError("operators act on different bases")
    E, U = H.spectrum()
    ph = np.exp(1j * t * E)
    # U diag(ph) U^dag O U diag(ph)^* U^dag
    inner_m = (ph[:, None] * (U.conj().T @ O.dense() @ U)) * ph.conj()[None, :]
    out = U @ inner_m @ U.conj().T
    if O.hermitian:
        out = 0.5 * (out + out.conj().T)
    return ManyBodyOperator(H.basis, out, hermitian=O.hermitian)


def product_state(basis: FockBasis, phi: Field) -> FockState:
    """Condensate ``phi^{(x) N}`` in the occupation basis."""
    if phi.space.is_spectral:
        raise BackendError("product states need a lattice mode space")
    if phi.space.n_modes != basis.modes:
        raise SpaceMismatchError("field size does not match the basis")
    if abs(phi.norm() - 1.0) > 1e-10:
        raise NormalizationError(f"condensate has norm {phi.norm():.3e}")
    N = basis.particles
    occ = basis.states
    amp = phi.amplitudes
    mag = np.abs(amp)
    occupied_zero = (occ > 0) & (mag[None, :] == 0)
    logmag = np.where(occ > 0, occ * np.log(np.where(mag > 0, mag, 1.0))[None, :], 0.0).sum(axis=1)
    lg = np.vectorize(math.lgamma)
    logmag += 0.5 * (math.lgamma(N + 1) - lg(occ + 1.0).sum(axis=1))
    phase = occ @ np.angle(amp)
    psi = np.exp(logmag + 1j * phase)
    psi[np.any(occupied_zero, axis=1)] = 0.0
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-10:
        raise NormalizationError(f"product state norm {norm!r} is off")
    return FockState(basis, psi)


class ManyBodySystem:
    """Basis, Hamiltonian, condensate state and Hartree centering for one ``N``."""

    def __init__(self, space: ModeSpace, N: int, phi0: Field, dt: float = 1e-3,
                 max_dim: int = MAX_SECTOR_DIM):
        if phi0.space is not space:
            raise SpaceMismatchError("condensate lives on a different mode space")
        self.space = space
        self.N = int(N)
        self.phi0 = phi0
        self.dt = dt
        self.basis = FockBasis(space.n_modes, N, max_dim=max_dim)
        self.hamiltonian = build_hamiltonian(self.basis, space)
        self.psi = product_state(self.basis, phi0).amplitudes
        self._traj = None
        self._dgamma = {}

    def evolve(self, v: np.ndarray, t: float) -> np.ndarray:
        return self.hamiltonian.evolve_state(v, t)

    def observable_operator(self, A: Observable) -> ManyBodyOperator:
        key = id(A)
        if key not in self._dgamma:
            self._dgamma[key] = (A, dgamma(self.basis, A))
        return self._dgamma[key][1]

    def condensate(self, t: float) -> Field:
        """Lattice Hartree solution used for centering."""
        if self._traj is None or self._traj.t1 < t:
            horizon = max(t, 1.0)
            horizon = math.ceil(horizon / self.dt - 1e-9) * self.dt
            self._traj = evolve(self.phi0, horizon, self.dt)
        return self._traj.state(t)

    def heisenberg_apply(self, O: ManyBodyOperator, t: float, v: np.ndarray, shift: float = 0.0) -> np.ndarray:
        """``exp(i t H) (O - shift) exp(-i t H) v``."""
        w = self.evolve(v, t)
        w = O.apply(w) - shift * w
        return self.evolve(w, -t)


@functools.lru_cache(maxsize=16)
def _system(space: ModeSpace, N: int, phi0: Field, dt: float) -> ManyBodySystem:
    return ManyBodySystem(space, N, phi0, dt)


def system_for(space: ModeSpace, N: int, phi0: Field, dt: float = 1e-3) -> ManyBodySystem:
    """Shared :class:`ManyBodySystem`; fields and spaces are immutable, so caching by identity is safe."""
    return _system(space, int(N), phi0, float(dt))


def finite_n_otoc(space: ModeSpace, N: int, phi0: Field, A: Observable, B: Observable, t: float,
                  dt: float = 1e-3) -> float:
    """``|| [dGamma(B), e^{iHt} dGamma(A) e^{-iHt}] psi_N ||^2 / N^2``.

    Centering constants commute with everything and drop out of the
    commutator, so uncentered operators are used.
    """
    sysm = system_for(space, N, phi0, dt)
    dA, dB = sysm.observable_operator(A), sysm.observable_operator(B)
    psi = sysm.psi
    ab = sysm.heisenberg_apply(dA, t, dB.apply(psi))
    ba = dB.apply(sysm.heisenberg_apply(dA, t, psi))
    c = ba - ab
    return float(np.real(np.vdot(c, c))) / N ** 2


def finite_n_moment(space: ModeSpace, N: int, phi0: Field, A: Observable, times,
                    dt: float = 1e-3) -> complex:
    """``<psi_N, X_1 ... X_m psi_N>`` with ``X_i`` the centered, evolved ``dGamma(A)/sqrt(N)``."""
    sysm = system_for(space, N, phi0, dt)
    dA = sysm.observable_operator(A)
    v = np.array(sysm.psi, dtype=complex)
    for t in reversed(list(times)):
        shift = N * expectation(A, sysm.condensate(t))
        v = sysm.heisenberg_apply(dA, t, v, shift) / math.sqrt(N)
    return complex(np.vdot(sysm.psi, v))


def finite_n_char(space: ModeSpace, N: int, phi0: Field, A: Observable, times, lam,
                  dt: float = 1e-3) -> complex:
    """``<psi_N, prod_j exp(i lam_j X_j) psi_N>`` with ``X_j`` as in :func:`finite_n_moment`."""
    times = list(times)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.size != len(times):
        raise ValueError("need one lambda per time")
    sysm = system_for(space, N, phi0, dt)
    dA = sysm.observable_operator(A)
    if dA.is_diagonal():
        evals, evecs = dA.diagonal().real, None
    else:
        evals, evecs = dA.spectrum()
    v = np.array(sysm.psi, dtype=complex)
    for t, l in zip(reversed(times), reversed(lam)):
        shift = N * expectation(A, sysm.condensate(t))
        phase = np.exp(1j * l * (evals - shift) / math.sqrt(N))
        w = sysm.evolve(v, t)
        w = phase * w if evecs is None else evecs @ (phase * (evecs.conj().T @ w))
        v = sysm.evolve(w, -t)
    return complex(np.vdot(sysm.psi, v))
