"""Run configuration: INI-style sections parsed strictly into model objects.

Layout::

    [model]
    game_class = mpmfg          ; mfg | mpmfg | gmfg
    A = 0.1, 0.3                ; one value, or one per population / block
    weights = 1, 0.5; 0.5, 1    ; rows separated by ';'
    proportions = 0.5, 0.5

    [grid]
    horizon = 1.0
    n_steps = 200

    [graphon]                   ; gmfg and reduce-check
    kind = step                 ; constant | step | min | exp_decay
    m_points = 32

    [solver]
    method = picard

    [simulate]
    sweep = 5, 20, 100, 500
    n_reps = 50
    seed = 2024

    [output]
    dir = out

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .equilibrium import SolverOptions
from .errors import ConfigError
from .graphon import GraphonSpec
from .mfc import OptimizerOptions
from .model import COEFF_NAMES, GraphonModel, LqCoefficients, PopulationModel, TimeGrid, make_grid, validate
from .simulate import SimConfig

GAME_CLASSES = ("mfg", "mpmfg", "gmfg")
SEED_LIMIT = 2**64

_KEYS = {
    "model": set(COEFF_NAMES) | {"game_class", "weights", "proportions"},
    "grid": {"horizon", "n_steps"},
    "graphon": {"kind", "value", "weights", "scale", "beta", "m_points"},
    "solver": {"method", "damping", "tol", "max_iter", "opt_tol", "opt_max_iter"},
    "simulate": {
        "sweep",
        "n_players",
        "n_reps",
        "seed",
        "deviation_knots",
        "holdout",
        "max_evals",
        "simplex_radius",
        "threads",
    },
    "output": {"dir"},
}


def _float(section: str, key: str, text: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {text!r}") from None
    if not np.isfinite(val):
        raise ConfigError(f"[{section}] {key}: value must be finite")
    return val


def _int(section: str, key: str, text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {text!r}") from None


def _floats(section: str, key: str, text: str) -> list[float]:
    parts = [p.strip() for p in text.split(",")]
    if any(p == "" for p in parts):
        raise ConfigError(f"[{section}] {key}: empty list entry in {text!r}")
    return [_float(section, key, p) for p in parts]


def _ints(section: str, key: str, text: str) -> list[int]:
    parts = [p.strip() for p in text.split(",")]
    if any(p == "" for p in parts):
        raise ConfigError(f"[{section}] {key}: empty list entry in {text!r}")
    return [_int(section, key, p) for p in parts]


def _matrix(section: str, key: str, text: str) -> np.ndarray:
    rows = [_floats(section, key, row) for row in text.split(";")]
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"[{section}] {key}: rows have different lengths")
    return np.array(rows, dtype=float)


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration; ``raw`` keeps the normalized key/value text for echoing."""

    raw: dict = field(default_factory=dict)
    source: str = ""

    def has(self, section: str) -> bool:
        return section in self.raw

    def require(self, *sections: str) -> None:
        missing = [s for s in sections if s not in self.raw]
        if missing:
            raise ConfigError("missing section(s): " + ", ".join(f"[{s}]" for s in missing))

    def get(self, section: str, key: str, default=None):
        return self.raw.get(section, {}).get(key, default)

    # -- model ---------------------------------------------------------
    @property
    def game_class(self) -> str:
        self.require("model")
        gc = self.get("model", "game_class", "mfg").strip().lower()
        if gc not in GAME_CLASSES:
            raise ConfigError(f"[model] game_class must be one of {GAME_CLASSES}, got {gc!r}")
        return gc

    def coefficient_sets(self) -> list[LqCoefficients]:
        self.require("model")
        lists = {}
        for name in COEFF_NAMES:
            text = self.get("model", name)
            if text is not None:
                lists[name] = _floats("model", name, text)
        lengths = {len(v) for v in lists.values() if len(v) > 1}
        if len(lengths) > 1:
            raise ConfigError(f"[model] coefficient lists have inconsistent lengths {sorted(lengths)}")
        k = next(iter(lengths)) if lengths else 1
        w = self.get("model", "weights")
        if not lengths and w is not None and self.game_class == "mpmfg":
            # scalar coefficients shared by every population
            k = _matrix("model", "weights", w).shape[0]
        sets = []
        for i in range(k):
            kw = {name: (vals[i] if len(vals) > 1 else vals[0]) for name, vals in lists.items()}
            sets.append(LqCoefficients(**kw))
        return sets

    def population_model(self) -> PopulationModel:
        coeffs = self.coefficient_sets()
        k = len(coeffs)
        w = self.get("model", "weights")
        weights = _matrix("model", "weights", w) if w is not None else np.ones((k, k))
        prop = self.get("model", "proportions")
        proportions = _floats("model", "proportions", prop) if prop is not None else None
        return _validated(PopulationModel(tuple(coeffs), weights, proportions))

    def graphon_spec(self) -> GraphonSpec:
        self.require("graphon")
        kind = self.get("graphon", "kind", "constant").strip().lower()
        try:
            if kind == "constant":
                return GraphonSpec.constant(_float("graphon", "value", self.get("graphon", "value", "1")))
            if kind == "step":
                text = self.get("graphon", "weights") or self.get("model", "weights")
                if text is None:
                    raise ConfigError("[graphon] step kind needs weights (in [graphon] or [model])")
                w = _matrix("graphon", "weights", text)
                scale = self.get("graphon", "scale")
                return GraphonSpec.step(w, _float("graphon", "scale", scale) if scale else float(w.shape[0]))
            if kind in ("min", "exp_decay"):
                return GraphonSpec.family(kind, _float("graphon", "beta", self.get("graphon", "beta", "0")))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"[graphon] {exc}") from None
        raise ConfigError(f"[graphon] unknown kind {kind!r}")

    @property
    def m_points(self) -> int:
        self.require("graphon")
        text = self.get("graphon", "m_points")
        if text is None:
            raise ConfigError("[graphon] m_points is required")
        m = _int("graphon", "m_points", text)
        if m < 1:
            raise ConfigError("[graphon] m_points must be >= 1")
        return m

    def graphon_model(self) -> GraphonModel:
        coeffs = self.coefficient_sets()
        return _validated(GraphonModel(tuple(coeffs), self.graphon_spec(), self.m_points))

    def model(self):
        gc = self.game_class
        if gc == "gmfg":
            return self.graphon_model()
        m = self.population_model()
        if gc == "mfg" and m.n_populations != 1:
            raise ConfigError("[model] game_class mfg needs a single population")
        if gc == "mfg" and not np.array_equal(m.weights, np.ones((1, 1))):
            raise ConfigError("[model] game_class mfg requires weights = 1")
        return m

    # -- numerics ------------------------------------------------------
    def grid(self) -> TimeGrid:
        self.require("grid")
        for key in ("horizon", "n_steps"):
            if self.get("grid", key) is None:
                raise ConfigError(f"[grid] {key} is required")
        try:
            return make_grid(_float("grid", "horizon", self.get("grid", "horizon")), _int("grid", "n_steps", self.get("grid", "n_steps")))
        except ValueError as exc:
            raise ConfigError(f"[grid] {exc}") from None

    def solver_options(self) -> SolverOptions:
        kw = {}
        if (m := self.get("solver", "method")) is not None:
            kw["method"] = m.strip().lower()
        for key, conv in (("damping", _float), ("tol", _float), ("max_iter", _int)):
            if (v := self.get("solver", key)) is not None:
                kw[key] = conv("solver", key, v)
        try:
            opts = SolverOptions(**kw)
        except ValueError as exc:
            raise ConfigError(f"[solver] {exc}") from None
        if not 0 < opts.damping <= 1 or opts.tol <= 0 or opts.max_iter < 1:
            raise ConfigError("[solver] need 0 < damping <= 1, tol > 0 and max_iter >= 1")
        return opts

    def optimizer_options(self) -> OptimizerOptions:
        kw = {}
        if (v := self.get("solver", "opt_tol")) is not None:
            kw["tol"] = _float("solver", "opt_tol", v)
        if (v := self.get("solver", "opt_max_iter")) is not None:
            kw["max_iter"] = _int("solver", "opt_max_iter", v)
        return OptimizerOptions(**kw)

    def sweep(self) -> list[int]:
        self.require("simulate")
        text = self.get("simulate", "sweep")
        if text is None:
            raise ConfigError("[simulate] sweep is required")
        ns = _ints("simulate", "sweep", text)
        if any(n < 2 for n in ns):
            raise ConfigError(f"[simulate] every sweep entry must be >= 2, got {ns}")
        return ns

    def seed(self) -> int:
        seed = _int("simulate", "seed", self.get("simulate", "seed", "0"))
        if not 0 <= seed < SEED_LIMIT:
            raise ConfigError("[simulate] seed must be an unsigned 64-bit integer")
        return seed

    def sim_config(self, n_players: int | None = None, threads: int = 1) -> SimConfig:
        self.require("simulate")
        g = self.get
        try:
            return SimConfig(
                n_players=n_players or _int("simulate", "n_players", g("simulate", "n_players", "2")),
                n_reps=_int("simulate", "n_reps", g("simulate", "n_reps", "50")),
                seed=self.seed(),
                deviation_knots=_int("simulate", "deviation_knots", g("simulate", "deviation_knots", "5")),
                holdout=_float("simulate", "holdout", g("simulate", "holdout", "0.5")),
                max_evals=_int("simulate", "max_evals", g("simulate", "max_evals", "200")),
                simplex_radius=_float("simulate", "simplex_radius", g("simulate", "simplex_radius", "0.1")),
                threads=threads,
            )
        except ValueError as exc:
            raise ConfigError(f"[simulate] {exc}") from None

    def config_threads(self) -> int | None:
        v = self.get("simulate", "threads")
        return None if v is None else _int("simulate", "threads", v)

    def output_dir(self) -> Path:
        return Path(self.get("output", "dir", "."))

    def with_override(self, section: str, key: str, value: str) -> RunConfig:
        raw = {s: dict(kv) for s, kv in self.raw.items()}
        raw.setdefault(section, {})[key] = value
        return RunConfig(raw, self.source)


def _validated(model):
    try:
        return validate(model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(
        interpolation=None,
        inline_comment_prefixes=(";", "#"),
        strict=True,
        empty_lines_in_values=False,
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from None
    raw = {}
    for section in parser.sections():
        if section not in _KEYS:
            raise ConfigError(f"unknown section [{section}]")
        keys = dict(parser.items(section))
        unknown = sorted(set(keys) - _KEYS[section])
        if unknown:
            raise ConfigError(f"[{section}] unknown key(s): {', '.join(unknown)}")
        raw[section] = {k: v.strip() for k, v in keys.items()}
    return RunConfig(raw, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
