"""Equilibrium assembly for single-population, multi-population and graphon LQ games.

Order of solution: Riccati ``p`` per component, the coupled ``(z, r)`` block,
then ``s`` by backward quadrature and the Gaussian variance ``v`` forward.
The equilibrium value of component ``k`` is
``p_0 (sigma_0^2 + xbar_0^2) / 2 + r_0 xbar_0 + s_0``.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import OutOfHorizon
from .fbsolver import (
    DEFAULT_DAMPING,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    FbProblem,
    FbSolution,
    newton_solve,
    picard_solve,
)
from .graphon import discretize, midpoints
from .model import GraphonModel, LqCoefficients, PopulationModel, TimeGrid, validate
from .odecore import GridFunction, riccati_nodes_and_midpoints, rk4_backward_linear, rk4_forward_linear

MFG, MPMFG, GMFG = "MFG", "MPMFG", "GMFG"


@dataclass(frozen=True)
class SolverOptions:
    method: str = "picard"
    damping: float = DEFAULT_DAMPING
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.method not in ("picard", "newton"):
            raise ValueError(f"unknown forward-backward method {self.method!r}")


@dataclass(frozen=True, eq=False)
class AffinePolicy:
    """Affine feedback ``a_k(t, x) = -(B_k / C_k) (pi_k(t) x + rho_k(t))``.

    ``pi`` and ``rho`` are node values of shape ``(n+1, D)``; between nodes
    they are linearly interpolated.
    """

    grid: TimeGrid
    pi: np.ndarray
    rho: np.ndarray
    b_over_c: np.ndarray

    def __post_init__(self):
        n = self.grid.n_steps
        pi = np.asarray(self.pi, dtype=float).reshape(n + 1, -1)
        rho = np.asarray(self.rho, dtype=float).reshape(n + 1, -1)
        if pi.shape != rho.shape:
            raise ValueError("pi and rho must have the same shape")
        if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(rho))):
            raise ValueError("policy coefficients must be finite")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "b_over_c", np.atleast_1d(np.asarray(self.b_over_c, dtype=float)))

    @property
    def dim(self) -> int:
        return self.pi.shape[1]

    def action(self, component: int, t: float, x):
        T = self.grid.horizon
        if not (-1e-12 * T <= t <= T * (1 + 1e-12)):
            raise OutOfHorizon(f"t={t} outside [0, {T}]")
        t = min(max(t, 0.0), T)
        pi = GridFunction(self.grid, self.pi[:, component]).at(t)
        rho = GridFunction(self.grid, self.rho[:, component]).at(t)
        return -self.b_over_c[component] * (pi * np.asarray(x, dtype=float) + rho)

    def resample(self, grid: TimeGrid) -> AffinePolicy:
        """Same piecewise-linear coefficients sampled on the nodes of ``grid``."""
        if grid.horizon != self.grid.horizon:
            raise ValueError("resampling requires the same horizon")
        t = grid.times
        pi = np.column_stack([np.interp(t, self.grid.times, self.pi[:, k]) for k in range(self.dim)])
        rho = np.column_stack([np.interp(t, self.grid.times, self.rho[:, k]) for k in range(self.dim)])
        return AffinePolicy(grid, pi, rho, self.b_over_c)


FeedbackLaw = AffinePolicy


@dataclass(frozen=True, eq=False)
class EquilibriumSolution:
    """Grid-sampled equilibrium. All trajectory arrays have shape ``(n+1, D)``."""

    class_tag: str
    grid: TimeGrid
    coeffs: tuple[LqCoefficients, ...]
    problem: FbProblem
    p: np.ndarray
    r: np.ndarray
    s: np.ndarray
    z: np.ndarray
    variance: np.ndarray
    value: np.ndarray
    fb: FbSolution

    @property
    def dim(self) -> int:
        return self.p.shape[1]

    @property
    def converged(self) -> bool:
        return self.fb.converged

    @property
    def fb_meta(self) -> dict:
        return self.fb.meta()

    @property
    def interaction_mean(self) -> np.ndarray:
        """``L z``: the aggregate each component reacts to."""
        return self.problem.interact(self.z)

    def feedback_law(self) -> AffinePolicy:
        bc = np.array([c.B / c.C for c in self.coeffs])
        return AffinePolicy(self.grid, self.p, self.r, bc)

    def value_from_trajectories(self) -> np.ndarray:
        return _value(self.coeffs, self.p[0], self.r[0], self.s[0])


def _col(coeffs, name):
    return np.array([getattr(c, name) for c in coeffs], dtype=float)


def _value(coeffs, p0, r0, s0) -> np.ndarray:
    m0 = _col(coeffs, "x0_mean")
    sd0 = _col(coeffs, "x0_std")
    return 0.5 * p0 * (sd0**2 + m0**2) + r0 * m0 + s0


def _solve(coeffs: Sequence[LqCoefficients], grid: TimeGrid, interaction, tag: str, opts: SolverOptions):
    coeffs = tuple(coeffs)
    p, p_mid = riccati_nodes_and_midpoints(coeffs, grid)
    problem = FbProblem.from_coefficients(coeffs, grid, interaction, (p, p_mid))
    if opts.method == "newton":
        fb = newton_solve(problem, tol_fb=opts.tol, max_iter=max(1, min(opts.max_iter, 50)))
    else:
        fb = picard_solve(problem, damping=opts.damping, tol_fb=opts.tol, max_iter=opts.max_iter)
    z = fb.z.values
    r = fb.r.values
    lz = problem.interact(z)
    lz_mid = problem.interact(problem.z_mid(z, r))
    r_mid = problem.r_mid(z, r)

    nu = _col(coeffs, "sigma") ** 2 / 2
    g = problem.gain
    abar = problem.Abar
    qbar = _col(coeffs, "Qbar")
    S = _col(coeffs, "S")

    def source(pp, rr, lzz):
        return nu * pp - 0.5 * g * rr**2 + rr * abar * lzz + 0.5 * qbar * (S * lzz) ** 2

    d = problem.dim
    zeros_n = np.zeros((grid.n_steps + 1, d))
    zeros_mid = np.zeros((grid.n_steps, d))
    s_T = 0.5 * _col(coeffs, "Qbar_T") * (_col(coeffs, "S_T") * lz[-1]) ** 2
    s = rk4_backward_linear(zeros_n, zeros_mid, -source(p, r, lz), -source(p_mid, r_mid, lz_mid), s_T, grid).values

    v0 = _col(coeffs, "x0_std") ** 2
    sig2 = _col(coeffs, "sigma") ** 2
    variance = rk4_forward_linear(
        2.0 * problem.slope(p), 2.0 * problem.slope(p_mid), sig2[None, :], sig2[None, :], v0, grid
    ).values

    value = _value(coeffs, p[0], r[0], s[0])
    return EquilibriumSolution(tag, grid, coeffs, problem, p, r, s, z, variance, value, fb)


def solve_mfg(model: PopulationModel, grid: TimeGrid, opts: SolverOptions | None = None) -> EquilibriumSolution:
    validate(model)
    if model.n_populations != 1:
        raise ValueError("solve_mfg requires a single population")
    return _solve(model.coeffs, grid, None, MFG, opts or SolverOptions())


def solve_mpmfg(model: PopulationModel, grid: TimeGrid, opts: SolverOptions | None = None) -> EquilibriumSolution:
    validate(model)
    return _solve(model.coeffs, grid, model.weights, MPMFG, opts or SolverOptions())


def solve_gmfg(model: GraphonModel, grid: TimeGrid, opts: SolverOptions | None = None) -> EquilibriumSolution:
    validate(model)
    disc = discretize(model.graphon, model.m_points)
    coeffs = model.coefficients_at_points()
    return _solve(coeffs, grid, disc.operator(), GMFG, opts or SolverOptions())


def solve(model, grid: TimeGrid, opts: SolverOptions | None = None) -> EquilibriumSolution:
    """Dispatch on the model type (a one-population model is solved as an MFG)."""
    if isinstance(model, GraphonModel):
        return solve_gmfg(model, grid, opts)
    if model.n_populations == 1 and model.weights.shape == (1, 1) and model.weights[0, 0] == 1.0:
        return solve_mfg(model, grid, opts)
    return solve_mpmfg(model, grid, opts)


def feedback(solution: EquilibriumSolution, component: int, t: float, x):
    """Equilibrium action ``-B (p(t) x + r(t)) / C`` of ``component``."""
    return solution.feedback_law().action(component, t, x)


def controlled_mean(solution: EquilibriumSolution) -> GridFunction:
    """Mean of a representative state driven by the equilibrium feedback.

    The mean field ``L z`` is frozen at the solution and treated as an
    exogenous input, interpolated at half-nodes by a cubic spline. Agreement
    with ``z`` is the discrete form of the consistency condition.
    """
    pb = solution.problem
    grid = solution.grid
    z = solution.z
    r = solution.r
    lz = pb.interact(z)
    lz_mid = CubicSpline(grid.times, lz, axis=0)(grid.midpoints)
    r_mid = pb.r_mid(z, r)
    f = pb.Abar * lz - pb.gain * r
    f_mid = pb.Abar * lz_mid - pb.gain * r_mid
    return rk4_forward_linear(pb.slope(pb.p), pb.slope(pb.p_mid), f, f_mid, pb.z0, grid)


def index_points(model: GraphonModel) -> np.ndarray:
    return midpoints(model.m_points)
