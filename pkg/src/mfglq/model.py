"""Model definitions: LQ coefficients, population and graphon models, time grid."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import InvalidGrid, ValidationError
from .graphon import GraphonSpec, block_index, graphon_violations, midpoints


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Uniform grid ``t_k = k T / n`` for ``k = 0..n``."""

    horizon: float
    n_steps: int

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1) * self.horizon / self.n_steps
        t[-1] = self.horizon
        return t

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_steps) + 0.5) * self.horizon / self.n_steps

    def refined(self, factor: int = 2) -> TimeGrid:
        return TimeGrid(self.horizon, self.n_steps * factor)

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return self.horizon == other.horizon and self.n_steps == other.n_steps

    def __hash__(self):
        return hash((self.horizon, self.n_steps))


def make_grid(horizon: float, n_steps: int) -> TimeGrid:
    try:
        horizon = float(horizon)
    except (TypeError, ValueError):
        raise InvalidGrid(f"horizon must be a real number, got {horizon!r}") from None
    if not (math.isfinite(horizon) and horizon > 0):
        raise InvalidGrid(f"horizon must be > 0, got {horizon}")
    if isinstance(n_steps, bool) or int(n_steps) != n_steps or n_steps < 2:
        raise InvalidGrid(f"n_steps must be an integer >= 2, got {n_steps!r}")
    return TimeGrid(horizon, int(n_steps))


@dataclass(frozen=True)
class LqCoefficients:
    """Scalar constants of the linear-quadratic model for one population.

    Drift ``A x + Abar m + B a``; running cost
    ``(Q x^2 + Qbar (x - S m)^2 + C a^2) / 2``; terminal cost
    ``(Q_T x^2 + Qbar_T (x - S_T m)^2) / 2``; initial law
    ``N(x0_mean, x0_std^2)``. Here ``m`` is the relevant mean-field aggregate.
    """

    A: float = 0.0
    Abar: float = 0.0
    B: float = 1.0
    C: float = 1.0
    Q: float = 0.0
    Qbar: float = 0.0
    S: float = 0.0
    Q_T: float = 0.0
    Qbar_T: float = 0.0
    S_T: float = 0.0
    sigma: float = 0.0
    x0_mean: float = 0.0
    x0_std: float = 1.0

    @property
    def nu(self) -> float:
        return 0.5 * self.sigma**2

    @property
    def gain(self) -> float:
        """``B^2 / C``, the feedback coefficient in the state equations."""
        return self.B**2 / self.C

    def scaled_costs(self, lam: float) -> LqCoefficients:
        return replace(
            self, Q=lam * self.Q, Qbar=lam * self.Qbar, C=lam * self.C, Q_T=lam * self.Q_T, Qbar_T=lam * self.Qbar_T
        )


COEFF_NAMES = tuple(f.name for f in fields(LqCoefficients))


@dataclass(frozen=True, eq=False)
class PopulationModel:
    """K homogeneous populations with interaction weights ``w[k, l]``.

    ``proportions`` are only used by the finite-player simulator to allocate
    players across populations; they default to uniform.
    """

    coeffs: tuple[LqCoefficients, ...]
    weights: np.ndarray
    proportions: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(self.coeffs))
        w = np.array(self.weights, dtype=float)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if self.proportions is not None:
            object.__setattr__(self, "proportions", tuple(float(p) for p in self.proportions))

    @classmethod
    def single(cls, coeffs: LqCoefficients) -> PopulationModel:
        return cls((coeffs,), np.ones((1, 1)))

    @property
    def n_populations(self) -> int:
        return len(self.coeffs)

    def population_shares(self) -> np.ndarray:
        if self.proportions is None:
            return np.full(self.n_populations, 1.0 / self.n_populations)
        return np.asarray(self.proportions, dtype=float)


@dataclass(frozen=True, eq=False)
class GraphonModel:
    """Continuum of players indexed by ``u`` in [0, 1].

    ``coeffs`` is a piecewise-constant map: ``L`` coefficient sets split [0, 1]
    into ``L`` equal blocks. One set means index-constant coefficients and
    ``L == m_points`` gives a per-discretization-point table.
    """

    coeffs: tuple[LqCoefficients, ...]
    graphon: GraphonSpec
    m_points: int

    def __post_init__(self):
        if isinstance(self.coeffs, LqCoefficients):
            object.__setattr__(self, "coeffs", (self.coeffs,))
        else:
            object.__setattr__(self, "coeffs", tuple(self.coeffs))

    def coefficients_at(self, u) -> list[LqCoefficients]:
        idx = np.atleast_1d(block_index(u, len(self.coeffs)))
        return [self.coeffs[i] for i in idx]

    def coefficients_at_points(self) -> list[LqCoefficients]:
        return self.coefficients_at(midpoints(self.m_points))


@dataclass(frozen=True)
class Violation:
    code: str
    field: str
    message: str

    def __str__(self):
        return f"{self.code} [{self.field}]: {self.message}"


def coefficient_violations(c: LqCoefficients, prefix: str = "") -> list[Violation]:
    out = []
    for name in COEFF_NAMES:
        val = getattr(c, name)
        if not isinstance(val, (int, float, np.floating, np.integer)) or not math.isfinite(val):
            out.append(Violation("NonFinite", prefix + name, f"{name} must be a finite real, got {val!r}"))
    if out:
        return out
    if not c.C > 0:
        out.append(Violation("NonPositiveC", prefix + "C", f"C must be > 0, got {c.C}"))
    for name in ("Q", "Qbar", "Q_T", "Qbar_T"):
        if getattr(c, name) < 0:
            out.append(Violation("NegativeCostWeight", prefix + name, f"{name} must be >= 0, got {getattr(c, name)}"))
    if not c.x0_std > 0:
        out.append(Violation("NonPositiveStd", prefix + "x0_std", f"x0_std must be > 0, got {c.x0_std}"))
    if c.sigma < 0:
        out.append(Violation("NegativeSigma", prefix + "sigma", f"sigma must be >= 0, got {c.sigma}"))
    return out


def violations(model: PopulationModel | GraphonModel) -> list[Violation]:
    """All invariant violations of ``model`` (empty when valid)."""
    out: list[Violation] = []
    if len(model.coeffs) == 0:
        return [Violation("DimensionMismatch", "coeffs", "at least one coefficient set is required")]
    for i, c in enumerate(model.coeffs):
        if not isinstance(c, LqCoefficients):
            out.append(Violation("DimensionMismatch", f"coeffs[{i}]", "expected LqCoefficients"))
            continue
        out.extend(coefficient_violations(c, prefix=f"coeffs[{i}]."))
    if isinstance(model, PopulationModel):
        k = model.n_populations
        w = model.weights
        if w.shape != (k, k):
            out.append(Violation("DimensionMismatch", "weights", f"weights must be {k}x{k}, got shape {w.shape}"))
        elif not np.all(np.isfinite(w)) or np.any(w < 0):
            out.append(Violation("NegativeWeight", "weights", "weights must be finite and >= 0"))
        if model.proportions is not None:
            p = np.asarray(model.proportions)
            if p.shape != (k,):
                out.append(Violation("DimensionMismatch", "proportions", f"expected {k} proportions, got {p.shape}"))
            elif np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
                out.append(Violation("InvalidProportions", "proportions", "proportions must be >= 0 and sum to 1"))
    elif isinstance(model, GraphonModel):
        if isinstance(model.m_points, bool) or int(model.m_points) != model.m_points or model.m_points < 1:
            out.append(Violation("DimensionMismatch", "m_points", f"m_points must be an integer >= 1, got {model.m_points!r}"))
        if not isinstance(model.graphon, GraphonSpec):
            out.append(Violation("InvalidGraphon", "graphon", "expected a GraphonSpec"))
        else:
            out.extend(Violation(code, "graphon." + fld, msg) for code, fld, msg in graphon_violations(model.graphon))
    else:
        raise TypeError(f"cannot validate {type(model).__name__}")
    return out


def validate(model):
    """Return ``model`` unchanged if valid, otherwise raise :class:`ValidationError`."""
    problems = violations(model)
    if problems:
        raise ValidationError(problems)
    return model
