"""One-body mode spaces, complex fields, interaction kernels and observables.

Two backends are supported:

* ``spectral`` -- the periodic box ``[0, L)^d`` sampled on ``M`` points per
  axis.  The kinetic operator is the Fourier multiplier ``|k|^2`` and the
  interaction is given by its Fourier symbol.
* ``lattice`` -- a finite set of ``M`` sites with an explicit real symmetric
  hopping matrix ``h0`` and a dense pair potential ``v[j, k]``.

Arrays of amplitudes are always flat, of length ``n_modes``; leading axes are
treated as batch axes by the array-level helpers on :class:`ModeSpace`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import BackendError, NormalizationError, SpaceMismatchError

SPECTRAL = "spectral"
LATTICE = "lattice"

_SYMMETRY_TOL = 1e-12


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class InteractionKernel:
    """Pair interaction in Fourier-symbol, dense-matrix or zero form.

    Use the named constructors.  A Fourier kernel stores a callable acting on
    an ``(n, d)`` array of wave vectors; a dense kernel stores ``v[j, k]``.
    The ``onsite`` kernel adapts to either backend.
    """

    kind: str
    name: str
    params: tuple = ()
    symbol: Optional[Callable[[np.ndarray], np.ndarray]] = None
    matrix: Optional[np.ndarray] = None

    @classmethod
    def gaussian(cls, strength: float, width: float) -> "InteractionKernel":
        """``v(x) = g (2 pi s^2)^{-d/2} exp(-|x|^2 / 2 s^2)``, so ``v_hat(0) = g``."""
        if width <= 0:
            raise ValueError("gaussian width must be positive")
        g, s = float(strength), float(width)
        return cls("fourier", "gaussian", (g, s),
                   symbol=lambda k: g * np.exp(-0.5 * s * s * np.sum(k * k, axis=-1)))

    @classmethod
    def coulomb3d(cls, strength: float = 1.0) -> "InteractionKernel":
        """Periodic Coulomb kernel ``4 pi g / |k|^2`` with the zero mode removed."""
        g = float(strength)

        def symbol(k):
            k2 = np.sum(k * k, axis=-1)
            out = np.zeros_like(k2)
            nz = k2 > 0
            out[nz] = 4.0 * np.pi * g / k2[nz]
            return out

        return cls("fourier", "coulomb3d", (g,), symbol=symbol)

    @classmethod
    def onsite(cls, strength: float) -> "InteractionKernel":
        """Contact interaction: constant symbol on a torus, ``u * I`` on a lattice."""
        return cls("onsite", "onsite", (float(strength),))

    @classmethod
    def zero(cls) -> "InteractionKernel":
        return cls("zero", "zero")

    @classmethod
    def fourier(cls, symbol: Callable[[np.ndarray], np.ndarray], name: str = "fourier"):
        """Custom Fourier symbol; must be real and even in ``k``."""
        return cls("fourier", name, (), symbol=symbol)

    @classmethod
    def dense(cls, matrix) -> "InteractionKernel":
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("dense interaction must be a square matrix")
        if np.max(np.abs(m - m.T), initial=0.0) > _SYMMETRY_TOL:
            raise ValueError("dense interaction must be symmetric")
        return cls("dense", "dense", (), matrix=_frozen(m))


def _validate_symbol(vhat: np.ndarray, kvec_index_neg: np.ndarray, what: str):
    if not np.all(np.isfinite(vhat)):
        raise ValueError(f"{what} is not finite")
    if np.max(np.abs(vhat - vhat[kvec_index_neg]), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(vhat))):
        raise ValueError(f"{what} is not even in k")


@dataclass(frozen=True, eq=False)
class ModeSpace:
    """Finite one-body configuration space.

    Equality is identity: fields combine only when they share the very same
    space object.  Build instances with :meth:`torus`, :meth:`lattice` or
    :meth:`ring`.
    """

    backend: str
    dimension: int
    grid_points: int
    box_length: Optional[float]
    interaction: InteractionKernel
    quadrature_weight: float
    # spectral data (flattened over the grid)
    kvectors: Optional[np.ndarray] = None
    dispersion: Optional[np.ndarray] = None
    vhat: Optional[np.ndarray] = None
    # lattice data
    hopping: Optional[np.ndarray] = None
    potential: Optional[np.ndarray] = None
    _neg_index: Optional[np.ndarray] = None
    _hop_eig: Optional[tuple] = None

    # -- construction -------------------------------------------------
    @classmethod
    def torus(cls, box_length: float, grid_points: int, interaction: InteractionKernel,
              dimension: int = 1) -> "ModeSpace":
        if dimension not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if box_length <= 0 or grid_points < 1:
            raise ValueError("box length and grid size must be positive")
        L, M, d = float(box_length), int(grid_points), int(dimension)
        ints = np.fft.fftfreq(M, d=1.0 / M)
        if M % 2 == 0:
            ints[M // 2] = M // 2  # Nyquist mode on the +k side
        k1 = 2.0 * np.pi / L * ints
        k = np.stack(np.meshgrid(*([k1] * d), indexing="ij"), axis=-1).reshape(-1, d)
        # index of -k on the grid (wrapped, as the FFT sees it)
        idx1 = (-np.arange(M)) % M
        neg = np.ravel_multi_index(np.meshgrid(*([idx1] * d), indexing="ij"), (M,) * d).ravel()
        eps = np.sum(k * k, axis=-1)
        if interaction.kind == "fourier":
            vhat = np.asarray(interaction.symbol(k), dtype=float).reshape(-1)
        elif interaction.kind == "onsite":
            vhat = np.full(M ** d, interaction.params[0])
        elif interaction.kind == "zero":
            vhat = np.zeros(M ** d)
        else:
            raise BackendError("dense interaction requires the lattice backend")
        _validate_symbol(vhat, neg, "interaction symbol")
        return cls(SPECTRAL, d, M, L, interaction, (L / M) ** d,
                   kvectors=_frozen(k), dispersion=_frozen(eps), vhat=_frozen(vhat),
                   _neg_index=_frozen(neg))

    @classmethod
    def lattice(cls, hopping, interaction: InteractionKernel) -> "ModeSpace":
        h = np.asarray(hopping)
        if np.iscomplexobj(h):
            if np.max(np.abs(h.imag), initial=0.0) > _SYMMETRY_TOL:
                raise ValueError("hopping matrix must be real symmetric")
            h = h.real
        h = h.astype(float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("hopping matrix must be square")
        if np.max(np.abs(h - h.T), initial=0.0) > _SYMMETRY_TOL:
            raise ValueError("hopping matrix must be real symmetric")
        M = h.shape[0]
        if interaction.kind == "dense":
            v = interaction.matrix
            if v.shape != (M, M):
                raise SpaceMismatchError("interaction matrix size does not match lattice")
        elif interaction.kind == "onsite":
            v = interaction.params[0] * np.eye(M)
        elif interaction.kind == "zero":
            v = np.zeros((M, M))
        else:
            raise BackendError("Fourier-symbol interactions require the spectral backend")
        evals, evecs = scipy.linalg.eigh(h)
        return cls(LATTICE, 1, M, None, interaction, 1.0,
                   hopping=_frozen(h), potential=_frozen(v),
                   _hop_eig=(_frozen(evals), _frozen(evecs)))

    @classmethod
    def ring(cls, sites: int, hopping: float, interaction: InteractionKernel) -> "ModeSpace":
        """Periodic chain with ``h0 = -hopping * adjacency``."""
        if sites < 1:
            raise ValueError("need at least one site")
        h = np.zeros((sites, sites))
        for j in range(sites):
            if sites > 1:
                h[j, (j + 1) % sites] -= hopping
                h[(j + 1) % sites, j] -= hopping
        if sites == 2:
            h /= 2.0  # both neighbours coincide; keep a single bond
        return cls.lattice(h, interaction)

    # -- basic properties ---------------------------------------------
    @property
    def is_spectral(self) -> bool:
        return self.backend == SPECTRAL

    @property
    def n_modes(self) -> int:
        return self.grid_points ** self.dimension

    @property
    def grid_shape(self) -> tuple:
        return (self.grid_points,) * self.dimension

    def positions(self) -> np.ndarray:
        """Grid coordinates ``(n_modes, d)``; site indices on a lattice."""
        if not self.is_spectral:
            return np.arange(self.n_modes, dtype=float)[:, None]
        x1 = np.arange(self.grid_points) * (self.box_length / self.grid_points)
        return np.stack(np.meshgrid(*([x1] * self.dimension), indexing="ij"), axis=-1).reshape(-1, self.dimension)

    # -- array-level kernels (batched over leading axes) -----------------
    def fft(self, a: np.ndarray) -> np.ndarray:
        d = self.dimension
        if d == 1:
            return np.fft.fft(a, axis=-1)
        shp = a.shape[:-1] + self.grid_shape
        axes = tuple(range(-d, 0))
        return np.fft.fftn(a.reshape(shp), axes=axes).reshape(a.shape)

    def ifft(self, a: np.ndarray) -> np.ndarray:
        d = self.dimension
        if d == 1:
            return np.fft.ifft(a, axis=-1)
        shp = a.shape[:-1] + self.grid_shape
        axes = tuple(range(-d, 0))
        return np.fft.ifftn(a.reshape(shp), axes=axes).reshape(a.shape)

    def inner_array(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.quadrature_weight * np.sum(np.conj(a) * b, axis=-1)

    def convolve_array(self, rho: np.ndarray) -> np.ndarray:
        if self.is_spectral:
            return self.ifft(self.vhat * self.fft(rho))
        return rho @ self.potential  # potential is symmetric

    def interaction_is_zero(self) -> bool:
        data = self.vhat if self.is_spectral else self.potential
        return not np.any(data)

    def kinetic_array(self, a: np.ndarray) -> np.ndarray:
        if self.is_spectral:
            return self.ifft(self.dispersion * self.fft(a))
        return a @ self.hopping

    def kinetic_flow_array(self, a: np.ndarray, tau: float) -> np.ndarray:
        """Apply ``exp(-i tau K)`` to ``a``; ``tau`` may be negative."""
        if self.is_spectral:
            return self.ifft(np.exp(-1j * tau * self.dispersion) * self.fft(a))
        return a @ self.kinetic_propagator(tau).T

    def kinetic_flow_operator(self, tau: float) -> Callable[[np.ndarray], np.ndarray]:
        """Precomputed ``exp(-i tau K)`` as a callable, for repeated use."""
        if self.is_spectral:
            phase = np.exp(-1j * tau * self.dispersion)
            return lambda a: self.ifft(phase * self.fft(a))
        prop_t = np.ascontiguousarray(self.kinetic_propagator(tau).T)
        return lambda a: a @ prop_t

    def kinetic_propagator(self, tau: float) -> np.ndarray:
        """Dense ``exp(-i tau h0)`` (lattice backend)."""
        if self.is_spectral:
            raise BackendError("dense kinetic propagator only exists on a lattice")
        evals, evecs = self._hop_eig
        return (evecs * np.exp(-1j * tau * evals)) @ evecs.T


@dataclass(frozen=True, eq=False)
class Field:
    """Complex amplitude vector over a :class:`ModeSpace`.

    The amplitude array is read-only; arithmetic returns new fields.
    """

    space: ModeSpace
    amplitudes: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if a.size != self.space.n_modes:
            raise SpaceMismatchError(
                f"field has {a.size} amplitudes but the space has {self.space.n_modes} modes")
        object.__setattr__(self, "amplitudes", _frozen(a))

    @classmethod
    def from_function(cls, space: ModeSpace, fn: Callable) -> "Field":
        """Sample ``fn`` at the grid points (a 1-D coordinate array when d=1)."""
        x = space.positions()
        arg = x[:, 0] if space.dimension == 1 else tuple(x[:, i] for i in range(space.dimension))
        return cls(space, np.broadcast_to(np.asarray(fn(arg), dtype=complex), (space.n_modes,)))

    @classmethod
    def zeros(cls, space: ModeSpace) -> "Field":
        return cls(space, np.zeros(space.n_modes, dtype=complex))

    @classmethod
    def plane_wave(cls, space: ModeSpace, mode) -> "Field":
        """Normalized ``exp(i k.x)`` for the integer wave-vector ``mode``."""
        if not space.is_spectral:
            raise BackendError("plane waves need the spectral backend")
        n = np.atleast_1d(np.asarray(mode, dtype=float))
        k = 2.0 * np.pi / space.box_length * n
        x = space.positions()
        vol = space.box_length ** space.dimension
        return cls(space, np.exp(1j * x @ k) / np.sqrt(vol))

    def _check(self, other: "Field"):
        if not isinstance(other, Field):
            return NotImplemented
        if other.space is not self.space:
            raise SpaceMismatchError("fields live on different mode spaces")
        return None

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return Field(self.space, self.amplitudes + other.amplitudes)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return Field(self.space, self.amplitudes - other.amplitudes)

    def __mul__(self, scalar):
        if isinstance(scalar, Field):
            return NotImplemented
        return Field(self.space, self.amplitudes * complex(scalar))

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Field(self.space, self.amplitudes / complex(scalar))

    def __neg__(self):
        return Field(self.space, -self.amplitudes)

    def norm(self) -> float:
        return float(np.sqrt(np.real(inner(self, self))))

    def normalized(self) -> "Field":
        n = self.norm()
        if n == 0:
            raise NormalizationError("cannot normalize the zero field")
        return self / n


def require_normalized(phi: Field, tol: float = 1e-8, what: str = "condensate"):
    n = phi.norm()
    if abs(n - 1.0) > tol:
        raise NormalizationError(f"{what} has norm {n:.3e}, expected 1 within {tol:g}")


def inner(f: Field, g: Field) -> complex:
    """L^2 pairing, conjugate-linear in the first slot."""
    if g.space is not f.space:
        raise SpaceMismatchError("fields live on different mode spaces")
    return complex(f.space.inner_array(f.amplitudes, g.amplitudes))


def conj_field(f: Field) -> Field:
    return Field(f.space, np.conj(f.amplitudes))


def convolve(space: ModeSpace, rho: Field) -> Field:
    """``v * rho`` (Fourier multiplier on the torus, matrix product on a lattice)."""
    if rho.space is not space:
        raise SpaceMismatchError("density lives on a different mode space")
    return Field(space, space.convolve_array(rho.amplitudes))


def density(phi: Field) -> Field:
    return Field(phi.space, np.abs(phi.amplitudes) ** 2)


def pointwise(f: Field, g: Field) -> Field:
    if g.space is not f.space:
        raise SpaceMismatchError("fields live on different mode spaces")
    return Field(f.space, f.amplitudes * g.amplitudes)


def kinetic(f: Field) -> Field:
    return Field(f.space, f.space.kinetic_array(f.amplitudes))


def project_out(phi: Field, f: Field) -> Field:
    """``f - <phi, f> phi``."""
    require_normalized(phi)
    return f - inner(phi, f) * phi


def project_out_conj(phi: Field, f: Field) -> Field:
    """Remove the component of ``f`` along ``conj(phi)``."""
    require_normalized(phi)
    pc = conj_field(phi)
    return f - inner(pc, f) * pc


@dataclass(frozen=True, eq=False)
class Observable:
    """Real self-adjoint one-body operator.

    ``kind`` is ``position`` (multiplication by a real vector), ``momentum``
    (real even Fourier multiplier, spectral backend only) or ``dense`` (real
    symmetric matrix).
    """

    kind: str
    data: np.ndarray
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("position", "momentum", "dense"):
            raise ValueError(f"unknown observable representation {self.kind!r}")
        a = np.asarray(self.data)
        if np.iscomplexobj(a):
            if np.max(np.abs(a.imag), initial=0.0) > 0:
                raise ValueError("observable data must be real")
            a = a.real
        a = np.asarray(a, dtype=float)
        if self.kind == "dense":
            if a.ndim != 2 or a.shape[0] != a.shape[1]:
                raise ValueError("dense observable must be a square matrix")
            if np.max(np.abs(a - a.T), initial=0.0) > _SYMMETRY_TOL:
                raise ValueError("dense observable must be symmetric")
        else:
            a = a.reshape(-1)
        object.__setattr__(self, "data", _frozen(a))

    @classmethod
    def position(cls, values, label: str = "") -> "Observable":
        return cls("position", values, label)

    @classmethod
    def momentum(cls, values, label: str = "") -> "Observable":
        return cls("momentum", values, label)

    @classmethod
    def dense(cls, matrix, label: str = "") -> "Observable":
        return cls("dense", matrix, label)

    @classmethod
    def identity(cls, space: ModeSpace) -> "Observable":
        return cls("position", np.ones(space.n_modes), "identity")

    @classmethod
    def position_fn(cls, space: ModeSpace, fn: Callable, label: str = "") -> "Observable":
        return cls.position(np.real(Field.from_function(space, fn).amplitudes), label)

    @classmethod
    def momentum_fn(cls, space: ModeSpace, fn: Callable, label: str = "") -> "Observable":
        """Multiplier ``fn(k)`` evaluated on the ``(n_modes, d)`` wave-vector array."""
        if not space.is_spectral:
            raise BackendError("momentum multipliers need the spectral backend")
        return cls.momentum(np.asarray(fn(space.kvectors), dtype=float).reshape(-1), label)

    def check_space(self, space: ModeSpace):
        n = space.n_modes
        if self.kind == "momentum":
            if not space.is_spectral:
                raise BackendError("momentum multipliers need the spectral backend")
            if np.max(np.abs(self.data - self.data[space._neg_index]), initial=0.0) > _SYMMETRY_TOL:
                raise ValueError("momentum multiplier must be even in k")
        size = self.data.shape[0]
        if size != n:
            raise SpaceMismatchError(f"observable has size {size}, space has {n} modes")

    def apply_array(self, space: ModeSpace, a: np.ndarray) -> np.ndarray:
        if self.kind == "position":
            return self.data * a
        if self.kind == "momentum":
            return space.ifft(self.data * space.fft(a))
        return a @ self.data.T

    def matrix(self, space: ModeSpace) -> np.ndarray:
        """Dense real matrix of the observable on ``space``."""
        self.check_space(space)
        if self.kind == "position":
            return np.diag(self.data)
        if self.kind == "dense":
            return np.array(self.data)
        eye = np.eye(space.n_modes)
        return np.real(self.apply_array(space, eye))


def apply_observable(A: Observable, f: Field) -> Field:
    A.check_space(f.space)
    return Field(f.space, A.apply_array(f.space, f.amplitudes))


def expectation(A: Observable, phi: Field) -> float:
    return float(np.real(inner(phi, apply_observable(A, phi))))
