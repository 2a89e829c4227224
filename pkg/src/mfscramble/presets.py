"""Reference configurations used by the tests, the acceptance suite and the CLI.

``cfg_a``  periodic line, L = 2 pi, M = 64, Gaussian pair potential (g=1,
           width 0.5), condensate proportional to ``1 + 0.1 cos x``,
           A = cos x, B = k^2.
``cfg_b``  the same torus with the homogeneous condensate ``1/sqrt(L)``.
``cfg_c``  three-site ring with hopping 1 and onsite interaction u=1,
           condensate proportional to ``(1, 0.8, 0.6)``, A = n_3, B = n_1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .space import Field, InteractionKernel, ModeSpace, Observable


@dataclass(frozen=True, eq=False)
class Preset:
    name: str
    space: ModeSpace
    phi0: Field
    A: Observable
    B: Observable
    dt: float = 1e-3


def _torus():
    return ModeSpace.torus(2.0 * np.pi, 64, InteractionKernel.gaussian(1.0, 0.5))


def cfg_a() -> Preset:
    sp = _torus()
    phi0 = Field.from_function(sp, lambda x: 1.0 + 0.1 * np.cos(x)).normalized()
    A = Observable.position_fn(sp, np.cos, "cos x")
    B = Observable.momentum_fn(sp, lambda k: np.sum(k * k, axis=-1), "k^2")
    return Preset("CFG-A", sp, phi0, A, B)


def cfg_b() -> Preset:
    sp = _torus()
    phi0 = Field(sp, np.full(sp.n_modes, 1.0 / np.sqrt(2.0 * np.pi)))
    A = Observable.position_fn(sp, np.cos, "cos x")
    B = Observable.momentum_fn(sp, lambda k: np.sum(k * k, axis=-1), "k^2")
    return Preset("CFG-B", sp, phi0, A, B)


def cfg_c() -> Preset:
    sp = ModeSpace.ring(3, 1.0, InteractionKernel.onsite(1.0))
    phi0 = Field(sp, np.array([1.0, 0.8, 0.6])).normalized()
    A = Observable.position([0.0, 0.0, 1.0], "n_3")
    B = Observable.position([1.0, 0.0, 0.0], "n_1")
    return Preset("CFG-C", sp, phi0, A, B)


PRESETS = {"cfg_a": cfg_a, "cfg_b": cfg_b, "cfg_c": cfg_c}
