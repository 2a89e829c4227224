"""Declarative experiment configuration (INI syntax).

Example::

    [space]
    backend = spectral
    box_length = 2*pi
    grid_points = 64

    [interaction]
    kind = gaussian
    strength = 1.0
    width = 0.5

    [initial_state]
    profile = cosine_perturbed
    amplitude = 0.1

    [evolution]
    t_max = 5.0
    dt = 0.001

    [observables]
    A = position cos 1
    B = momentum power 2

    [experiment]
    pipeline = otoc-series
    t_step = 0.25

Unknown sections and keys are errors, reported with their line number.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .space import Field, InteractionKernel, ModeSpace, Observable

PIPELINES = ("hartree-run", "otoc-series", "wick-check", "oracle-converge", "bogo-spectrum")

_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*(\*?\s*pi)?\s*$")


def parse_number(text: str) -> float:
    """Plain float, or a multiple of pi written as ``pi``, ``2pi`` or ``2*pi``."""
    m = _NUM.match(text)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ValueError(f"not a number: {text!r}")
    val = float(m.group(1)) if m.group(1) is not None else 1.0
    return val * math.pi if m.group(2) else val


def _floats(text: str) -> list:
    text = re.sub(r"\s*\*\s*pi|(?<=[\d.])\s+pi\b", "pi", text)
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if not parts:
        raise ValueError("empty list")
    return [parse_number(p) for p in parts]


def _ints(text: str) -> list:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise ValueError(f"expected integers: {text!r}")
    return [int(v) for v in vals]


def _matrix(text: str) -> np.ndarray:
    rows = [r for r in text.split(";") if r.strip()]
    mat = np.array([_floats(r) for r in rows])
    if mat.ndim != 2:
        raise ValueError("matrix rows differ in length")
    return mat


def _pos(f):
    def inner(text):
        v = f(text)
        vals = v if isinstance(v, list) else [v]
        if any(x <= 0 for x in vals):
            raise ValueError(f"must be positive: {text!r}")
        return v
    return inner


def _nonneg_floats(text):
    v = _floats(text)
    if any(x < 0 for x in v):
        raise ValueError(f"must be nonnegative: {text!r}")
    return v


def _choice(*options):
    def inner(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"{t!r} is not one of {', '.join(options)}")
        return t
    return inner


def _int(text):
    v = _ints(text)
    if len(v) != 1:
        raise ValueError("expected one integer")
    return v[0]


def _float(text):
    v = _floats(text)
    if len(v) != 1:
        raise ValueError("expected one number")
    return v[0]


def _window(text):
    v = _floats(text)
    if len(v) != 2 or v[0] >= v[1]:
        raise ValueError("window needs two increasing numbers")
    return (v[0], v[1])


def _str(text):
    return text.strip()


# section -> key -> (parser, default); default None means "optional, no default"
SCHEMA = {
    "space": {
        "backend": (_choice("spectral", "lattice"), "spectral"),
        "dimension": (_pos(_int), 1),
        "box_length": (_pos(_float), 2.0 * math.pi),
        "grid_points": (_pos(_int), 64),
        "sites": (_pos(_int), None),
        "hopping": (_float, 1.0),
        "hopping_matrix": (_matrix, None),
    },
    "interaction": {
        "kind": (_choice("gaussian", "coulomb3d", "onsite", "zero", "dense"), "gaussian"),
        "strength": (_float, 1.0),
        "width": (_pos(_float), 0.5),
        "matrix": (_matrix, None),
    },
    "initial_state": {
        "profile": (_choice("homogeneous", "cosine_perturbed", "gaussian_bump", "plane_wave", "explicit"),
                    "homogeneous"),
        "amplitude": (_float, 0.1),
        "width": (_pos(_float), 1.0),
        "center": (_float, None),
        "mode": (_int, 1),
        "values": (_floats, None),
    },
    "evolution": {
        "t_max": (_pos(_float), 1.0),
        "dt": (_pos(_float), 1e-3),
        "scheme": (_choice("yoshida4", "strang"), "yoshida4"),
        "mass_tol": (_pos(_float), 1e-10),
        "energy_tol": (_pos(_float), 1e-6),
    },
    "observables": {
        "A": (_str, None),
        "B": (_str, None),
    },
    "experiment": {
        "pipeline": (_choice(*PIPELINES), None),
        "t_step": (_pos(_float), None),
        "times": (_nonneg_floats, None),
        "fit_window": (_window, None),
        "n_list": (_pos(_ints), None),
        "m": (_pos(_int), None),
        "lambdas": (_floats, None),
        "k_max": (_pos(_int), 10),
        "tolerance": (_pos(_float), None),
        "max_dim": (_pos(_int), 4000),
    },
    "output": {
        "directory": (_str, "out"),
        "formats": (_str, "csv, json"),
    },
}


def _parse_observable(text: str, space: ModeSpace, line) -> Observable:
    tokens = text.split()
    if not tokens:
        raise ConfigError("empty observable definition", line)
    kind, args = tokens[0], tokens[1:]
    try:
        if kind == "identity" and not args:
            return Observable.identity(space)
        if kind == "position" and args:
            shape, rest = args[0], args[1:]
            if shape in ("cos", "sin") and len(rest) == 1:
                k = parse_number(rest[0])
                fn = np.cos if shape == "cos" else np.sin
                ax = space.positions()[:, 0]
                return Observable.position(fn(k * ax), text)
            if shape == "gaussian" and len(rest) == 2:
                c, w = parse_number(rest[0]), parse_number(rest[1])
                ax = space.positions()[:, 0]
                return Observable.position(np.exp(-0.5 * ((ax - c) / w) ** 2), text)
            if shape == "values":
                vals = _floats(" ".join(rest))
                if len(vals) != space.n_modes:
                    raise ValueError(f"expected {space.n_modes} values, got {len(vals)}")
                return Observable.position(vals, text)
        if kind == "momentum" and len(args) == 2:
            if not space.is_spectral:
                raise ValueError("momentum multipliers need the spectral backend")
            k2 = np.sum(space.kvectors ** 2, axis=-1)
            if args[0] == "power":
                p = parse_number(args[1])
                return Observable.momentum(np.sqrt(k2) ** p, text)
            if args[0] == "gaussian":
                w = parse_number(args[1])
                return Observable.momentum(np.exp(-0.5 * w * w * k2), text)
        if kind == "dense" and args:
            mat = _matrix(" ".join(args))
            obs = Observable.dense(mat, text)
            obs.check_space(space)
            return obs
    except ValueError as exc:
        raise ConfigError(f"bad observable {text!r}: {exc}", line) from None
    raise ConfigError(f"unrecognized observable definition {text!r}", line)


@dataclass
class ExperimentConfig:
    """Parsed configuration; ``values`` holds every key with defaults resolved."""

    values: dict
    lines: dict = field(default_factory=dict)
    source: str = "<string>"

    # -- parsing -----------------------------------------------------
    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "ExperimentConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None,
                                           strict=True, empty_lines_in_values=False)
        parser.optionxform = str  # keep key case
        try:
            parser.read_string(text, source=source)
        except configparser.DuplicateOptionError as exc:
            raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno) from None
        except configparser.DuplicateSectionError as exc:
            raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno) from None
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError("content before the first section header", exc.lineno) from None
        except configparser.ParsingError as exc:
            lineno = exc.errors[0][0] if exc.errors else None
            raise ConfigError("cannot parse line", lineno) from None
        lines = _line_map(text)
        values = {}
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lines.get((section, None)))
        for section, keys in SCHEMA.items():
            values[section] = {}
            given = parser[section] if parser.has_section(section) else {}
            for key in given:
                if key not in keys:
                    raise ConfigError(f"unknown key {key!r} in [{section}]", lines.get((section, key)))
            for key, (parse, default) in keys.items():
                if key in given:
                    raw = given[key]
                    try:
                        values[section][key] = parse(raw)
                    except (ValueError, TypeError) as exc:
                        raise ConfigError(f"[{section}] {key}: {exc}", lines.get((section, key))) from None
                else:
                    values[section][key] = default
        cfg = cls(values, lines, source)
        cfg._validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, str(path))

    def line(self, section, key=None):
        return self.lines.get((section, key))

    def _validate(self):
        sp = self.values["space"]
        if sp["backend"] == "lattice":
            if sp["sites"] is None and sp["hopping_matrix"] is None:
                raise ConfigError("lattice backend needs 'sites' or 'hopping_matrix'", self.line("space"))
        ev = self.values["evolution"]
        n = ev["t_max"] / ev["dt"]
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError("t_max must be a multiple of dt", self.line("evolution", "t_max"))

    # -- builders ----------------------------------------------------
    def override_dt(self, dt: float) -> None:
        if dt <= 0:
            raise ConfigError("--dt must be positive")
        self.values["evolution"]["dt"] = float(dt)
        self._validate()

    def build_kernel(self) -> InteractionKernel:
        it = self.values["interaction"]
        kind = it["kind"]
        if kind == "gaussian":
            return InteractionKernel.gaussian(it["strength"], it["width"])
        if kind == "coulomb3d":
            return InteractionKernel.coulomb3d(it["strength"])
        if kind == "onsite":
            return InteractionKernel.onsite(it["strength"])
        if kind == "zero":
            return InteractionKernel.zero()
        if it["matrix"] is None:
            raise ConfigError("dense interaction needs 'matrix'", self.line("interaction", "kind"))
        return InteractionKernel.dense(it["matrix"])

    def build_space(self) -> ModeSpace:
        sp = self.values["space"]
        kernel = self.build_kernel()
        try:
            if sp["backend"] == "spectral":
                return ModeSpace.torus(sp["box_length"], sp["grid_points"], kernel, sp["dimension"])
            if sp["hopping_matrix"] is not None:
                return ModeSpace.lattice(sp["hopping_matrix"], kernel)
            return ModeSpace.ring(sp["sites"], sp["hopping"], kernel)
        except ValueError as exc:
            raise ConfigError(f"invalid space/interaction: {exc}", self.line("space")) from None

    def build_initial_state(self, space: ModeSpace) -> Field:
        st = self.values["initial_state"]
        prof = st["profile"]
        x = space.positions()[:, 0]
        try:
            if prof == "homogeneous":
                f = Field(space, np.ones(space.n_modes))
            elif prof == "cosine_perturbed":
                if not space.is_spectral:
                    raise ValueError("cosine_perturbed needs the spectral backend")
                f = Field(space, 1.0 + st["amplitude"] * np.cos(2 * np.pi / space.box_length * x))
            elif prof == "gaussian_bump":
                if not space.is_spectral:
                    raise ValueError("gaussian_bump needs the spectral backend")
                L = space.box_length
                c = st["center"] if st["center"] is not None else 0.5 * L
                dx = (x - c + 0.5 * L) % L - 0.5 * L
                f = Field(space, 1.0 + st["amplitude"] * np.exp(-0.5 * (dx / st["width"]) ** 2))
            elif prof == "plane_wave":
                f = Field.plane_wave(space, [st["mode"]] + [0] * (space.dimension - 1))
            else:
                if st["values"] is None or len(st["values"]) != space.n_modes:
                    raise ValueError(f"explicit profile needs {space.n_modes} values")
                f = Field(space, np.array(st["values"]))
            return f.normalized()
        except ValueError as exc:
            raise ConfigError(f"initial state: {exc}", self.line("initial_state", "profile")) from None

    def build_observable(self, name: str, space: ModeSpace) -> Observable:
        text = self.values["observables"][name]
        if text is None:
            raise ConfigError(f"observable {name} is not defined", self.line("observables"))
        return _parse_observable(text, space, self.line("observables", name))

    def resolved(self) -> dict:
        """JSON-friendly copy of all values (matrices as nested lists)."""
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, tuple):
                return list(v)
            return v
        return {s: {k: conv(v) for k, v in keys.items()} for s, keys in self.values.items()}


def _line_map(text: str) -> dict:
    """``(section, key) -> line`` and ``(section, None) -> header line``."""
    out = {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in ";#":
            continue
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            out.setdefault((section, None), no)
            continue
        if raw[:1].isspace():
            continue
        key = re.split(r"[=:]", s, maxsplit=1)[0].strip()
        out.setdefault((section, key), no)
    return out
