"""Mean field control comparator for the single-population model.

The social cost of an affine policy ``a(t, x) = -(B/C)(pi_t x + rho_t)`` is
evaluated exactly in the Gaussian class: when every player uses the policy
the state law stays Gaussian, so mean ``m`` and variance ``v`` obey
closed ODEs (the mean field is generated by the policy itself) and the
expected cost is a function of ``(m, v, pi, rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .equilibrium import AffinePolicy, SolverOptions, solve_mfg
from .errors import Divergence
from .model import LqCoefficients, PopulationModel, TimeGrid, validate
from .odecore import BLOWUP

DEGENERATE_COST = 1e-12


@dataclass(frozen=True)
class OptimizerOptions:
    tol: float = 1e-6
    max_iter: int = 500
    rel_step: float = 1e-6
    armijo: float = 1e-4
    max_halvings: int = 60


@dataclass
class SocialCostReport:
    mfg_social_cost: float
    mfc_cost: float
    price_of_anarchy: float
    optimizer_meta: dict = field(default_factory=dict)
    mfg_value: float | None = None

    def to_dict(self) -> dict:
        return {
            "mfg_social_cost": self.mfg_social_cost,
            "mfc_cost": self.mfc_cost,
            "price_of_anarchy": self.price_of_anarchy,
            "mfg_value": self.mfg_value,
            "optimizer_meta": dict(self.optimizer_meta),
        }


def _single(model: PopulationModel) -> LqCoefficients:
    validate(model)
    if model.n_populations != 1:
        raise ValueError("mean field control is only supported for a single population")
    return model.coeffs[0]


def social_cost_batch(c: LqCoefficients, grid: TimeGrid, pi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Social cost for a batch of policies; ``pi``, ``rho`` have shape ``(batch, n+1)``.

    RK4 on ``(m, v, running cost)`` with the policy linearly interpolated at
    half-nodes, plus the expected terminal cost.
    """
    pi = np.atleast_2d(np.asarray(pi, dtype=float))
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    g = c.gain
    sig2 = c.sigma**2
    one_s = (1.0 - c.S) ** 2
    one_sT = (1.0 - c.S_T) ** 2
    a_mean = c.A + c.Abar

    def rhs(m, v, pk, rk):
        dm = (a_mean - g * pk) * m - g * rk
        dv = 2.0 * (c.A - g * pk) * v + sig2
        second = v + m * m
        run = 0.5 * (c.Q * second + c.Qbar * (v + one_s * m * m) + g * (pk * pk * second + 2.0 * pk * rk * m + rk * rk))
        return dm, dv, run

    batch = pi.shape[0]
    m = np.full(batch, c.x0_mean)
    v = np.full(batch, c.x0_std**2)
    cost = np.zeros(batch)
    h = grid.dt
    for k in range(grid.n_steps):
        p0, p1 = pi[:, k], pi[:, k + 1]
        r0, r1 = rho[:, k], rho[:, k + 1]
        ph, rh = 0.5 * (p0 + p1), 0.5 * (r0 + r1)
        a1, b1, c1 = rhs(m, v, p0, r0)
        a2, b2, c2 = rhs(m + 0.5 * h * a1, v + 0.5 * h * b1, ph, rh)
        a3, b3, c3 = rhs(m + 0.5 * h * a2, v + 0.5 * h * b2, ph, rh)
        a4, b4, c4 = rhs(m + h * a3, v + h * b3, p1, r1)
        m = m + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        v = v + (h / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
        cost = cost + (h / 6.0) * (c1 + 2 * c2 + 2 * c3 + c4)
    if not (np.all(np.isfinite(m)) and np.all(np.isfinite(v))) or np.any(np.abs(m) > BLOWUP) or np.any(v > BLOWUP):
        raise Divergence("policy destabilizes the controlled flow")
    terminal = 0.5 * (c.Q_T * (v + m * m) + c.Qbar_T * (v + one_sT * m * m))
    return cost + terminal


def social_cost(model: PopulationModel, policy: AffinePolicy, grid: TimeGrid | None = None) -> float:
    """Population-average cost when all players use ``policy``."""
    c = _single(model)
    grid = grid or policy.grid
    if policy.dim != 1:
        raise ValueError("policy must have a single component")
    return float(social_cost_batch(c, grid, policy.pi[:, 0][None], policy.rho[:, 0][None])[0])


def fd_gradient(fun_batch, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient; ``fun_batch`` maps ``(batch, dim)`` to ``(batch,)``."""
    x = np.asarray(x, dtype=float)
    h = rel_step * np.maximum(1.0, np.abs(x))
    eye = np.diag(h)
    vals = fun_batch(np.vstack([x + eye, x - eye]))
    n = x.shape[0]
    return (vals[:n] - vals[n:]) / (2.0 * h)


def optimize(model: PopulationModel, grid: TimeGrid, opts: OptimizerOptions | None = None, start: AffinePolicy | None = None):
    """Minimize the social cost over node values of ``(pi, rho)``.

    Gradient descent with finite-difference gradients, a Barzilai-Borwein
    trial step and Armijo backtracking, started from ``start`` (by default
    the MFG equilibrium feedback). Returns ``(policy, meta)``; ``meta`` holds
    the cost, iteration count, final gradient sup-norm and a convergence flag.
    """
    opts = opts or OptimizerOptions()
    c = _single(model)
    if start is None:
        start = solve_mfg(model, grid).feedback_law()
    n1 = grid.n_steps + 1

    def fb(xs):
        xs = np.atleast_2d(xs)
        return social_cost_batch(c, grid, xs[:, :n1], xs[:, n1:])

    x = np.concatenate([start.pi[:, 0], start.rho[:, 0]])
    fx = float(fb(x)[0])
    f_start = fx
    grad = fd_gradient(fb, x, opts.rel_step)
    step = 1.0 / grid.dt
    it = 0
    converged = False
    gnorm = float(np.max(np.abs(grad)))
    while it < opts.max_iter:
        if gnorm <= opts.tol:
            converged = True
            break
        it += 1
        g2 = float(grad @ grad)
        t = step
        accepted = False
        for _ in range(opts.max_halvings):
            trial = x - t * grad
            try:
                ft = float(fb(trial)[0])
            except Divergence:
                ft = np.inf
            if ft <= fx - opts.armijo * t * g2:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        new_grad = fd_gradient(fb, trial, opts.rel_step)
        s = trial - x
        y = new_grad - grad
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 2.0 * t
        x, fx, grad = trial, ft, new_grad
        gnorm = float(np.max(np.abs(grad)))
    if gnorm <= opts.tol:
        converged = True
    policy = AffinePolicy(grid, x[:n1], x[n1:], np.array([c.B / c.C]))
    meta = {
        "iterations": it,
        "grad_norm": gnorm,
        "converged": converged,
        "start_cost": f_start,
        "cost": fx,
    }
    return policy, meta


def price_of_anarchy(
    model: PopulationModel,
    grid: TimeGrid,
    opts: OptimizerOptions | None = None,
    solver_opts: SolverOptions | None = None,
) -> SocialCostReport:
    sol = solve_mfg(model, grid, solver_opts)
    law = sol.feedback_law()
    mfg_cost = social_cost(model, law, grid)
    _, meta = optimize(model, grid, opts, start=law)
    mfc_cost = float(meta["cost"])
    if abs(mfg_cost) < DEGENERATE_COST and abs(mfc_cost) < DEGENERATE_COST:
        ratio = 1.0
    else:
        ratio = mfg_cost / mfc_cost
    return SocialCostReport(mfg_cost, mfc_cost, ratio, meta, float(sol.value[0]))
