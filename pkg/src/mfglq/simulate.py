"""Finite-N player simulation and epsilon-Nash gap estimation.

Players follow Euler-Maruyama on the solution's time grid and interact
through the empirical measure (the player's own state included). Realized
costs use a left-endpoint Riemann sum of the running cost plus the terminal
cost.

Randomness: player ``i`` in replication ``r`` of a run with ``N`` players
draws from its own Philox stream keyed by ``(seed, N, r, i)``, so results do
not depend on chunking or thread scheduling. Deviation candidates reuse the
same draws (common random numbers).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .equilibrium import GMFG, AffinePolicy, EquilibriumSolution
from .errors import Divergence
from .graphon import block_index, evaluate
from .model import GraphonModel, LqCoefficients, PopulationModel, TimeGrid
from .odecore import BLOWUP

log = logging.getLogger(__name__)

_CHUNK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``holdout`` is the fraction of replications kept out of the deviation
    search and used only to estimate the gap of the deviation it found.
    """

    n_players: int
    n_reps: int
    seed: int = 0
    deviation_knots: int = 5
    grid: TimeGrid | None = None
    holdout: float = 0.5
    max_evals: int = 200
    simplex_radius: float = 0.1
    threads: int = 1

    def __post_init__(self):
        if self.n_players < 1:
            raise ValueError("n_players must be >= 1")
        if self.n_reps < 1:
            raise ValueError("n_reps must be >= 1")
        if self.deviation_knots < 1:
            raise ValueError("deviation_knots must be >= 1")
        if not 0.0 <= self.holdout < 1.0:
            raise ValueError("holdout must lie in [0, 1)")

    def with_players(self, n: int) -> SimConfig:
        from dataclasses import replace

        return replace(self, n_players=int(n))


def allocate_players(shares, n_players: int) -> np.ndarray:
    """``round(p_k N)`` per population with largest-remainder correction."""
    shares = np.asarray(shares, dtype=float)
    raw = shares * n_players
    counts = np.floor(raw).astype(int)
    rest = n_players - counts.sum()
    if rest > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:rest]] += 1
    return counts


def _player_coeffs(coeffs: list[LqCoefficients]) -> dict[str, np.ndarray]:
    names = ("A", "Abar", "B", "C", "Q", "Qbar", "S", "Q_T", "Qbar_T", "S_T", "sigma", "x0_mean", "x0_std")
    return {name: np.array([getattr(c, name) for c in coeffs], dtype=float) for name in names}


class FinitePopulation:
    """N players with their coefficients, solution components and interaction rule."""

    def __init__(self, model, solution: EquilibriumSolution, n_players: int):
        self.n_players = n = int(n_players)
        self.solution = solution
        if isinstance(model, GraphonModel):
            u = (np.arange(1, n + 1) - 0.5) / n
            coeffs = model.coefficients_at(u)
            self.component = block_index(u, solution.dim)
            self.kernel = np.asarray(evaluate(model.graphon, u[:, None], u[None, :]), dtype=float) / n
            self.labels = None
        else:
            k = model.n_populations
            counts = allocate_players(model.population_shares(), n)
            if np.any(counts == 0):
                raise ValueError(f"{n} players leave some population empty (allocation {counts.tolist()})")
            self.labels = np.repeat(np.arange(k), counts)
            self.counts = counts
            self.starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
            self.weights = np.asarray(model.weights, dtype=float)
            self.component = self.labels
            self.kernel = None
            coeffs = [model.coeffs[i] for i in self.labels]
        self.coeffs = _player_coeffs(coeffs)
        self.b_over_c = self.coeffs["B"] / self.coeffs["C"]

    def aggregate(self, X: np.ndarray) -> np.ndarray:
        """Interaction aggregate seen by each player, shape like ``X`` ``(R, N)``."""
        if self.kernel is not None:
            return X @ self.kernel.T
        if len(self.counts) == 1:
            return np.broadcast_to(self.weights[0, 0] * X.mean(axis=1, keepdims=True), X.shape)
        means = np.add.reduceat(X, self.starts, axis=1) / self.counts
        return (means @ self.weights.T)[:, self.labels]

    def policy_arrays(self, policy: AffinePolicy) -> tuple[np.ndarray, np.ndarray]:
        return policy.pi[:, self.component].copy(), policy.rho[:, self.component].copy()


def _stream(seed: int, n_players: int, rep: int, player: int, n_draws: int) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(n_players), int(rep), int(player)))
    return np.random.Generator(np.random.Philox(ss)).standard_normal(n_draws)


def draw_noise(seed: int, n_players: int, reps, n_steps: int, threads: int = 1) -> np.ndarray:
    """Standard normals of shape ``(len(reps), N, n_steps + 1)``.

    Column 0 drives the initial state, column ``k`` the increment over step ``k - 1``.
    """
    reps = list(reps)
    out = np.empty((len(reps), n_players, n_steps + 1))

    def fill(j):
        for i in range(n_players):
            out[j, i] = _stream(seed, n_players, reps[j], i, n_steps + 1)

    if threads > 1 and len(reps) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            list(ex.map(fill, range(len(reps))))
    else:
        for j in range(len(reps)):
            fill(j)
    return out


@dataclass
class _RunOutput:
    costs: np.ndarray
    node_sum: np.ndarray | None = None
    node_sq: np.ndarray | None = None
    paths: np.ndarray | None = None


def run_players(
    pop: FinitePopulation,
    grid: TimeGrid,
    pi: np.ndarray,
    rho: np.ndarray,
    noise: np.ndarray,
    stats: bool = False,
    keep_paths: bool = False,
) -> _RunOutput:
    """Euler-Maruyama for all players; ``pi``/``rho`` are ``(n+1, N)`` node coefficients."""
    c = pop.coeffs
    n = grid.n_steps
    h = grid.dt
    sq = np.sqrt(h)
    R = noise.shape[0]
    X = c["x0_mean"] + c["x0_std"] * noise[:, :, 0]
    cost = np.zeros_like(X)
    onehot = None
    out = _RunOutput(costs=cost)
    if stats:
        d = pop.solution.dim
        onehot = np.zeros((pop.n_players, d))
        onehot[np.arange(pop.n_players), pop.component] = 1.0
        out.node_sum = np.empty((R, n + 1, d))
        out.node_sq = np.empty((R, n + 1, d))
    if keep_paths:
        out.paths = np.empty((R, pop.n_players, n + 1))
    bc = pop.b_over_c
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n + 1):
            if stats:
                out.node_sum[:, k] = X @ onehot
                out.node_sq[:, k] = (X * X) @ onehot
            if keep_paths:
                out.paths[:, :, k] = X
            agg = pop.aggregate(X)
            if k == n:
                dev = X - c["S_T"] * agg
                cost += 0.5 * (c["Q_T"] * X * X + c["Qbar_T"] * dev * dev)
                break
            alpha = -bc * (pi[k] * X + rho[k])
            dev = X - c["S"] * agg
            cost += h * 0.5 * (c["Q"] * X * X + c["Qbar"] * dev * dev + c["C"] * alpha * alpha)
            X = X + h * (c["A"] * X + c["Abar"] * agg + c["B"] * alpha) + c["sigma"] * sq * noise[:, :, k + 1]
    if not np.all(np.isfinite(X)) or np.any(np.abs(X) > BLOWUP) or not np.all(np.isfinite(cost)):
        raise Divergence("finite-player simulation produced non-finite states")
    out.costs = cost
    return out


@dataclass
class SimResult:
    """Empirical statistics of a finite-player simulation.

    Node statistics are per solution component (population, or graphon
    discretization cell). Standard errors come from replication-level
    estimates, which accounts for correlation among players of one run.
    """

    grid: TimeGrid
    n_players: int
    n_reps: int
    component: np.ndarray
    costs: np.ndarray
    rep_means: np.ndarray
    rep_second: np.ndarray
    counts: np.ndarray
    paths: np.ndarray | None = None

    @property
    def means(self) -> np.ndarray:
        return self.rep_means.mean(axis=0)

    @property
    def variances(self) -> np.ndarray:
        return self.rep_second.mean(axis=0) - self.means**2

    @property
    def mean_stderr(self) -> np.ndarray:
        return _stderr(self.rep_means)

    @property
    def variance_stderr(self) -> np.ndarray:
        dev = self.rep_second - self.means[None] ** 2
        return _stderr(dev)

    def average_cost(self, component: int | None = None) -> tuple[float, float]:
        """Average realized player cost and its replication-level standard error."""
        sel = slice(None) if component is None else self.component == component
        per_rep = self.costs[:, sel].mean(axis=1)
        return float(per_rep.mean()), float(_stderr(per_rep[:, None])[0])


def _stderr(samples: np.ndarray) -> np.ndarray:
    r = samples.shape[0]
    if r < 2:
        return np.full(samples.shape[1:], np.inf)
    return samples.std(axis=0, ddof=1) / np.sqrt(r)


def _check_grid(solution: EquilibriumSolution, config: SimConfig) -> TimeGrid:
    if config.grid is not None and config.grid != solution.grid:
        raise ValueError("simulation grid must equal the solution grid")
    return solution.grid


def simulate_population(
    model,
    solution: EquilibriumSolution,
    config: SimConfig,
    policy: AffinePolicy | None = None,
    keep_paths: bool = False,
) -> SimResult:
    """All players use ``policy`` (default: the equilibrium feedback)."""
    if not solution.converged:
        raise ValueError("solution did not converge; refusing to simulate it")
    grid = _check_grid(solution, config)
    pop = FinitePopulation(model, solution, config.n_players)
    policy = policy or solution.feedback_law()
    pi, rho = pop.policy_arrays(policy)
    n = grid.n_steps
    N = config.n_players
    chunk = max(1, _CHUNK_ELEMENTS // (N * (n + 1)))
    costs, sums, sqs, paths = [], [], [], []
    for start in range(0, config.n_reps, chunk):
        reps = range(start, min(config.n_reps, start + chunk))
        noise = draw_noise(config.seed, N, reps, n, config.threads)
        res = run_players(pop, grid, pi, rho, noise, stats=True, keep_paths=keep_paths)
        costs.append(res.costs)
        sums.append(res.node_sum)
        sqs.append(res.node_sq)
        if keep_paths:
            paths.append(res.paths)
    counts = np.bincount(pop.component, minlength=solution.dim).astype(float)
    safe = np.where(counts > 0, counts, np.nan)
    return SimResult(
        grid=grid,
        n_players=N,
        n_reps=config.n_reps,
        component=pop.component,
        costs=np.concatenate(costs),
        rep_means=np.concatenate(sums) / safe,
        rep_second=np.concatenate(sqs) / safe,
        counts=counts,
        paths=np.concatenate(paths) if keep_paths else None,
    )


@dataclass
class GapEntry:
    n_players: int
    gap: float
    std_error: float
    raw_gap: float
    unpaired_std_error: float
    eq_cost: float
    dev_cost: float
    deviation_params: dict
    n_search: int
    n_eval: int
    evaluations: int
    note: str = "lower bound: the best deviation found within an affine, piecewise-constant class"

    def to_dict(self) -> dict:
        return {
            "N": self.n_players,
            "gap": self.gap,
            "std_error": self.std_error,
            "raw_gap": self.raw_gap,
            "unpaired_std_error": self.unpaired_std_error,
            "eq_cost": self.eq_cost,
            "dev_cost": self.dev_cost,
            "deviation_params": self.deviation_params,
            "n_search": self.n_search,
            "n_eval": self.n_eval,
            "evaluations": self.evaluations,
            "note": self.note,
        }


@dataclass
class NashGapReport:
    entries: list[GapEntry] = field(default_factory=list)
    monotone_flag: bool = True
    noise_multiplier: float = 2.0

    def to_dict(self) -> dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "monotone_flag": self.monotone_flag,
            "noise_multiplier": self.noise_multiplier,
        }


class _Deviation:
    """Deviator (player 0) cost under CRN for piecewise-constant perturbations."""

    def __init__(self, model, solution: EquilibriumSolution, config: SimConfig):
        if config.n_players < 2:
            raise ValueError("gap estimation needs at least two players")
        self.grid = _check_grid(solution, config)
        self.pop = FinitePopulation(model, solution, config.n_players)
        self.pi, self.rho = self.pop.policy_arrays(solution.feedback_law())
        n = self.grid.n_steps
        self.knots = config.deviation_knots
        self.knot_of_node = np.minimum((np.arange(n + 1) * self.knots) // n, self.knots - 1)
        self.noise = draw_noise(config.seed, config.n_players, range(config.n_reps), n, config.threads)

    def costs(self, params, reps=slice(None)) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        k = self.knots
        pi = self.pi.copy()
        rho = self.rho.copy()
        pi[:, 0] = self.pi[:, 0] + params[:k][self.knot_of_node]
        rho[:, 0] = self.rho[:, 0] + params[k:][self.knot_of_node]
        return run_players(self.pop, self.grid, pi, rho, self.noise[reps]).costs[:, 0]


def evaluate_deviation(dev: _Deviation, params, reps=slice(None)) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Paired comparison of equilibrium vs deviation on the given replications.

    Returns ``(mean difference, paired std error, eq costs, dev costs)``;
    the difference is equilibrium minus deviation, so positive means the
    deviation helps.
    """
    eq = dev.costs(np.zeros(2 * dev.knots), reps)
    dv = dev.costs(params, reps)
    diff = eq - dv
    se = float(_stderr(diff[:, None])[0]) if diff.shape[0] > 1 else 0.0
    return float(diff.mean()), se, eq, dv


def _split(n_reps: int, holdout: float) -> tuple[slice, slice]:
    n_eval = int(round(holdout * n_reps))
    if holdout <= 0 or n_reps < 2 or n_eval < 1:
        return slice(0, n_reps), slice(0, n_reps)
    n_eval = min(n_eval, n_reps - 1)
    return slice(0, n_reps - n_eval), slice(n_reps - n_eval, n_reps)


def estimate_nash_gap(model, solution: EquilibriumSolution, config: SimConfig) -> GapEntry:
    """Estimate how much player 0 can gain by deviating unilaterally.

    A Nelder-Mead search over ``2 * deviation_knots`` perturbations of the
    feedback coefficients minimizes the deviator's Monte-Carlo cost on the
    search replications; the gain of the best candidate is then measured on
    the held-out replications with paired differences.
    """
    dev = _Deviation(model, solution, config)
    search, held = _split(config.n_reps, config.holdout)
    dim = 2 * dev.knots
    counter = {"n": 0}

    def objective(x):
        counter["n"] += 1
        return float(dev.costs(x, search).mean())

    x0 = np.zeros(dim)
    simplex = np.vstack([x0, x0 + config.simplex_radius * np.eye(dim)])
    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": simplex,
            "maxfev": config.max_evals,
            "xatol": 1e-10,
            "fatol": 1e-12,
            "adaptive": False,
        },
    )
    best = np.asarray(res.x, dtype=float)
    if objective(best) > objective(x0):
        best = x0
    raw, se, eq, dv = evaluate_deviation(dev, best, held)
    r_eval = eq.shape[0]
    unpaired = float(np.sqrt(eq.var(ddof=1) / r_eval + dv.var(ddof=1) / r_eval)) if r_eval > 1 else 0.0
    return GapEntry(
        n_players=config.n_players,
        gap=max(0.0, raw),
        std_error=se,
        raw_gap=raw,
        unpaired_std_error=unpaired,
        eq_cost=float(eq.mean()),
        dev_cost=float(dv.mean()),
        deviation_params={"delta_p": best[: dev.knots].tolist(), "delta_r": best[dev.knots :].tolist()},
        n_search=search.stop - search.start,
        n_eval=r_eval,
        evaluations=counter["n"],
    )


def monotone_within_noise(entries: list[GapEntry], k: float = 2.0) -> bool:
    ordered = sorted(entries, key=lambda e: e.n_players)
    for a, b in zip(ordered, ordered[1:]):
        if b.gap > a.gap + k * np.hypot(a.std_error, b.std_error):
            return False
    return True


def convergence_sweep(model, solution: EquilibriumSolution, Ns, config: SimConfig) -> NashGapReport:
    """Gap estimates for each ``N`` in ``Ns``; streams are keyed by ``N``."""
    Ns = [int(n) for n in Ns]
    if not Ns:
        raise ValueError("Ns must be non-empty")
    if any(n < 2 for n in Ns):
        raise ValueError("every N must be >= 2")
    entries = []
    for n in Ns:
        entry = estimate_nash_gap(model, solution, config.with_players(n))
        log.info("N=%d gap=%.3e se=%.3e", n, entry.gap, entry.std_error)
        entries.append(entry)
    report = NashGapReport(entries)
    report.monotone_flag = monotone_within_noise(entries, report.noise_multiplier)
    return report


__all__ = [
    "GMFG",
    "FinitePopulation",
    "GapEntry",
    "NashGapReport",
    "SimConfig",
    "SimResult",
    "allocate_players",
    "convergence_sweep",
    "draw_noise",
    "estimate_nash_gap",
    "evaluate_deviation",
    "run_players",
    "simulate_population",
]
