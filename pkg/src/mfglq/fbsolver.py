"""Coupled forward-backward block for the mean ``z`` and the offset ``r``.

For D components (one population, K populations or M graphon points)::

    dz/dt  = (A - g p) z + Abar (L z) - g r,          z(0) = z0
    -dr/dt = (A - g p) r + (p Abar - Qbar S) (L z),   r(T) = -Qbar_T S_T (L z(T))

with ``g = B^2 / C`` and ``L`` the interaction operator. Both solvers work on
the same discrete equations: one RK4 step per grid interval in which the
other unknown is needed at the half-node. It is taken from the cubic Hermite
interpolant built from node values and the ODE right-hand sides at the nodes,
which keeps the scheme fourth order. Picard sweeps iterate these steps (the
Hermite slopes use the previous iterate); Newton assembles them into one
sparse linear system. At a Picard fixed point both sets of equations
coincide, so the two solvers agree up to their stopping tolerances.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import Divergence, SingularSystem
from .model import LqCoefficients, TimeGrid
from .odecore import GridFunction, forcing_increment, linear_step_maps, propagate, riccati_nodes_and_midpoints

log = logging.getLogger(__name__)

DEFAULT_DAMPING = 0.5
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 500


@dataclass(frozen=True, eq=False)
class FbProblem:
    """Discretized forward-backward problem.

    ``interaction`` is the ``D x D`` matrix ``L``; ``None`` selects the
    single-population form in which ``Abar`` is folded into the state slope
    (``L`` is then the identity).
    """

    grid: TimeGrid
    p: np.ndarray
    p_mid: np.ndarray
    A: np.ndarray
    Abar: np.ndarray
    gain: np.ndarray
    qbar_s: np.ndarray
    qbarT_sT: np.ndarray
    z0: np.ndarray
    interaction: np.ndarray | None = None

    def __post_init__(self):
        n = self.grid.n_steps
        for name in ("A", "Abar", "gain", "qbar_s", "qbarT_sT", "z0"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        d = self.A.shape[0]
        if d == 0:
            raise ValueError("forward-backward problem needs at least one component")
        p = np.asarray(self.p, dtype=float).reshape(n + 1, -1)
        p_mid = np.asarray(self.p_mid, dtype=float).reshape(n, -1)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p_mid", p_mid)
        if p.shape != (n + 1, d) or p_mid.shape != (n, d):
            raise ValueError(f"p arrays must have shapes {(n + 1, d)} and {(n, d)}")
        for name in ("Abar", "gain", "qbar_s", "qbarT_sT", "z0"):
            if getattr(self, name).shape != (d,):
                raise ValueError(f"{name} must have length {d}")
        if self.interaction is not None:
            L = np.asarray(self.interaction, dtype=float)
            if L.shape != (d, d):
                raise ValueError(f"interaction must be {d}x{d}, got {L.shape}")
            object.__setattr__(self, "interaction", L)
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(p_mid))):
            raise ValueError("Riccati solution p must be finite")

    @classmethod
    def from_coefficients(
        cls,
        coeffs: Sequence[LqCoefficients],
        grid: TimeGrid,
        interaction=None,
        p: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> FbProblem:
        coeffs = list(coeffs)
        if not coeffs:
            raise ValueError("forward-backward problem needs at least one component")
        if p is None:
            p = riccati_nodes_and_midpoints(coeffs, grid)

        def col(fn):
            return np.array([fn(c) for c in coeffs], dtype=float)

        return cls(
            grid=grid,
            p=p[0],
            p_mid=p[1],
            A=col(lambda c: c.A),
            Abar=col(lambda c: c.Abar),
            gain=col(lambda c: c.gain),
            qbar_s=col(lambda c: c.Qbar * c.S),
            qbarT_sT=col(lambda c: c.Qbar_T * c.S_T),
            z0=col(lambda c: c.x0_mean),
            interaction=interaction,
        )

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def L(self) -> np.ndarray:
        return np.eye(self.dim) if self.interaction is None else self.interaction

    def interact(self, z: np.ndarray) -> np.ndarray:
        """``L z`` applied along the last axis."""
        if self.interaction is None:
            return z
        return z @ self.interaction.T

    def slope(self, p: np.ndarray) -> np.ndarray:
        """Closed-loop own-state slope ``A - g p``."""
        return self.A - self.gain * p

    def z_matrix(self, p: np.ndarray) -> np.ndarray:
        """``M_z`` for every row of ``p``: shape ``(len(p), D, D)``."""
        n = p.shape[0]
        d = self.dim
        idx = np.arange(d)
        out = np.zeros((n, d, d))
        if self.interaction is None:
            out[:, idx, idx] = self.A + self.Abar - self.gain * p
        else:
            out[:] = self.Abar[:, None] * self.interaction
            out[:, idx, idx] += self.slope(p)
        return out

    def r_matrix(self, p: np.ndarray) -> np.ndarray:
        n = p.shape[0]
        d = self.dim
        idx = np.arange(d)
        out = np.zeros((n, d, d))
        out[:, idx, idx] = -self.slope(p)
        return out

    def mf_source(self, p: np.ndarray) -> np.ndarray:
        """``p Abar - Qbar S``: coefficient of ``L z`` in the offset equation."""
        return p * self.Abar - self.qbar_s

    def terminal_r(self, z_T: np.ndarray) -> np.ndarray:
        return -self.qbarT_sT * self.interact(z_T)

    def z_rhs(self, p, z, r):
        if self.interaction is None:
            return (self.A + self.Abar - self.gain * p) * z - self.gain * r
        return self.slope(p) * z + self.Abar * self.interact(z) - self.gain * r

    def r_rhs(self, p, z, r):
        """``dr/dt`` (note the sign: the model equation is written for ``-dr/dt``)."""
        return -(self.slope(p) * r + self.mf_source(p) * self.interact(z))

    def hermite_mid(self, x: np.ndarray, dx: np.ndarray) -> np.ndarray:
        """Cubic Hermite values at the half-nodes from node values and slopes."""
        h = self.grid.dt
        return 0.5 * (x[:-1] + x[1:]) + (h / 8.0) * (dx[:-1] - dx[1:])

    def z_mid(self, z: np.ndarray, r: np.ndarray) -> np.ndarray:
        return self.hermite_mid(z, self.z_rhs(self.p, z, r))

    def r_mid(self, z: np.ndarray, r: np.ndarray) -> np.ndarray:
        return self.hermite_mid(r, self.r_rhs(self.p, z, r))


@dataclass(frozen=True, eq=False)
class FbSolution:
    """Solver output.

    ``residual`` is the stopping quantity of the solver that produced it: the
    last sup-norm Picard increment, or the sup-norm defect of the discrete
    linear system for Newton. The finite-difference defect is :func:`residual`.
    """

    z: GridFunction
    r: GridFunction
    iterations: int
    residual: float
    converged: bool
    method: str = "picard"

    def meta(self) -> dict:
        return {
            "method": self.method,
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "converged": bool(self.converged),
        }


class _Sweeps:
    """Precomputed affine step maps for the two half-sweeps of ``problem``."""

    def __init__(self, problem: FbProblem):
        self.problem = problem
        g = problem.grid
        mz_nodes = problem.z_matrix(problem.p)
        mz_mid = problem.z_matrix(problem.p_mid)
        mr_nodes = problem.r_matrix(problem.p)
        mr_mid = problem.r_matrix(problem.p_mid)
        self.zmaps = linear_step_maps(mz_nodes[:-1], mz_mid, mz_nodes[1:], g.dt)
        self.rmaps = linear_step_maps(mr_nodes[1:], mr_mid, mr_nodes[:-1], -g.dt)
        self.src_nodes = problem.mf_source(problem.p)
        self.src_mid = problem.mf_source(problem.p_mid)

    def forward(self, r: np.ndarray, z_guess: np.ndarray) -> np.ndarray:
        """``z`` given ``r``; ``z_guess`` only enters the Hermite slope of ``r``."""
        pb = self.problem
        f = -pb.gain * r
        f_mid = -pb.gain * pb.r_mid(z_guess, r)
        c = forcing_increment(self.zmaps, f[:-1], f_mid, f[1:])
        return propagate(self.zmaps.phi, c, pb.z0, times=pb.grid.times)

    def backward(self, z: np.ndarray, r_guess: np.ndarray) -> np.ndarray:
        """``r`` given ``z``; ``r_guess`` only enters the Hermite slope of ``z``."""
        pb = self.problem
        lz = pb.interact(z)
        f = -self.src_nodes * lz
        f_mid = -self.src_mid * pb.interact(pb.z_mid(z, r_guess))
        c = forcing_increment(self.rmaps, f[1:], f_mid, f[:-1])
        return propagate(self.rmaps.phi, c, pb.terminal_r(z[-1]), reverse=True, times=pb.grid.times)


def picard_solve(
    problem: FbProblem,
    damping: float = DEFAULT_DAMPING,
    tol_fb: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FbSolution:
    """Damped alternating sweeps: ``z`` forward given ``r``, then ``r`` backward given ``z``.

    Starts from ``r = 0`` and stops once the sup-norm change of ``(z, r)``
    between iterations is at most ``tol_fb``. On exhaustion of ``max_iter``
    the last iterate is returned with ``converged=False``.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError(f"damping must lie in (0, 1], got {damping}")
    sweeps = _Sweeps(problem)
    n, d = problem.grid.n_steps, problem.dim
    r = np.zeros((n + 1, d))
    z_prev = None
    z_guess = np.broadcast_to(problem.z0, (n + 1, d))
    change = np.inf
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        z = sweeps.forward(r, z_guess)
        r_tilde = sweeps.backward(z, r)
        r_new = (1.0 - damping) * r + damping * r_tilde
        dz = np.inf if z_prev is None else float(np.max(np.abs(z - z_prev)))
        change = max(dz, float(np.max(np.abs(r_new - r))))
        if not np.isfinite(change) and z_prev is not None:
            raise Divergence("Picard iteration produced non-finite iterates")
        r, z_prev, z_guess = r_new, z, z
        if change <= tol_fb:
            converged = True
            break
    if not converged:
        log.warning("Picard iteration stopped after %d iterations (change %.3e > %.1e)", it, change, tol_fb)
    z = sweeps.forward(r, z_guess)
    g = problem.grid
    return FbSolution(GridFunction(g, z), GridFunction(g, r), it, change, converged, "picard")


def _block_coo(rows0, cols0, blocks):
    """COO triplets for dense ``D x D`` blocks placed at ``(rows0[k], cols0[k])``."""
    n, d, _ = blocks.shape
    ii, jj = np.meshgrid(np.arange(d), np.arange(d), indexing="ij")
    rr = (rows0[:, None, None] + ii[None]).ravel()
    cc = (cols0[:, None, None] + jj[None]).ravel()
    return rr, cc, blocks.ravel()


def assemble_system(problem: FbProblem) -> tuple[sp.csc_matrix, np.ndarray]:
    """Sparse matrix and right-hand side of the stacked discrete system.

    Unknowns are ``[z_0, ..., z_n, r_0, ..., r_n]`` (each of length D); rows
    are the initial condition, the ``n`` forward steps, the terminal
    condition and the ``n`` backward steps, in that order.
    """
    sw = _Sweeps(problem)
    n, d = problem.grid.n_steps, problem.dim
    h8 = problem.grid.dt / 8.0
    nz = (n + 1) * d
    k = np.arange(n)
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    G = np.diag(problem.gain)
    L = problem.L
    # node slopes: z' = Mz z - G r,  r' = -Sl r - Src L z
    Mz = problem.z_matrix(problem.p)
    Sl = problem.slope(problem.p)[:, :, None] * np.eye(d)
    SrcL = sw.src_nodes[:, :, None] * L
    parts = []

    # z rows: z_{k+1} - phi z_k + w0 G r_k + w1 G r_{k+1} + wh G r_mid = 0
    zm = sw.zmaps
    WG = zm.w_mid @ G
    zrow = d + k * d
    parts.append(_block_coo(zrow, (k + 1) * d, eye + h8 * WG @ SrcL[1:]))
    parts.append(_block_coo(zrow, k * d, -zm.phi - h8 * WG @ SrcL[:-1]))
    parts.append(_block_coo(zrow, nz + k * d, (zm.w_start + 0.5 * zm.w_mid) @ G - h8 * WG @ Sl[:-1]))
    parts.append(_block_coo(zrow, nz + (k + 1) * d, (zm.w_end + 0.5 * zm.w_mid) @ G + h8 * WG @ Sl[1:]))
    parts.append(_block_coo(np.array([0]), np.array([0]), np.eye(d)[None]))

    # r rows: r_k - phi r_{k+1} + ws Src L z_{k+1} + we Src L z_k + wm Src_mid L z_mid = 0
    rm = sw.rmaps
    Hm = rm.w_mid @ (sw.src_mid[:, :, None] * L)
    rrow = nz + k * d
    parts.append(_block_coo(rrow, nz + k * d, eye - h8 * Hm @ G))
    parts.append(_block_coo(rrow, nz + (k + 1) * d, -rm.phi + h8 * Hm @ G))
    parts.append(_block_coo(rrow, (k + 1) * d, rm.w_start @ SrcL[1:] + 0.5 * Hm - h8 * Hm @ Mz[1:]))
    parts.append(_block_coo(rrow, k * d, rm.w_end @ SrcL[:-1] + 0.5 * Hm + h8 * Hm @ Mz[:-1]))
    # terminal: r_n + diag(Qbar_T S_T) L z_n = 0
    term = np.eye(d)[None]
    parts.append(_block_coo(np.array([nz + n * d]), np.array([nz + n * d]), term))
    parts.append(_block_coo(np.array([nz + n * d]), np.array([n * d]), (problem.qbarT_sT[:, None] * L)[None]))

    rows = np.concatenate([p[0] for p in parts])
    cols = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    size = 2 * nz
    mat = sp.csc_matrix((vals, (rows, cols)), shape=(size, size))
    rhs = np.zeros(size)
    rhs[:d] = problem.z0
    return mat, rhs


def newton_solve(problem: FbProblem, tol_fb: float = DEFAULT_TOL, max_iter: int = 20) -> FbSolution:
    """Solve the stacked two-point boundary system by Newton's method.

    The system is linear given ``p``, so the first step is exact up to the
    accuracy of the sparse LU solve; later steps are iterative refinement.
    """
    if problem.dim < 1:
        raise ValueError("empty problem")
    mat, rhs = assemble_system(problem)
    try:
        lu = spla.splu(mat)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    x = np.zeros_like(rhs)
    res = float(np.max(np.abs(rhs)))
    it = 0
    while it < max_iter:
        F = mat @ x - rhs
        res = float(np.max(np.abs(F)))
        if res <= tol_fb and it > 0:
            break
        it += 1
        x = x - lu.solve(F)
        if not np.all(np.isfinite(x)):
            raise SingularSystem("linear solve produced non-finite values")
    else:
        res = float(np.max(np.abs(mat @ x - rhs)))
    n, d = problem.grid.n_steps, problem.dim
    nz = (n + 1) * d
    z = x[:nz].reshape(n + 1, d)
    r = x[nz:].reshape(n + 1, d)
    g = problem.grid
    return FbSolution(GridFunction(g, z), GridFunction(g, r), it, res, res <= tol_fb, "newton")


def residual(problem: FbProblem, candidate: FbSolution) -> float:
    """Finite-difference defect of ``candidate`` in the continuous equations.

    Central differences at interior nodes minus the right-hand sides, sup over
    nodes and components, plus the boundary defects at ``t = 0`` and ``t = T``.
    """
    z = np.asarray(candidate.z.values, dtype=float).reshape(problem.grid.n_steps + 1, -1)
    r = np.asarray(candidate.r.values, dtype=float).reshape(problem.grid.n_steps + 1, -1)
    h = problem.grid.dt
    p = problem.p[1:-1]
    dz = (z[2:] - z[:-2]) / (2.0 * h) - problem.z_rhs(p, z[1:-1], r[1:-1])
    dr = (r[2:] - r[:-2]) / (2.0 * h) - problem.r_rhs(p, z[1:-1], r[1:-1])
    interior = max(float(np.max(np.abs(dz))), float(np.max(np.abs(dr))))
    b0 = float(np.max(np.abs(z[0] - problem.z0)))
    bT = float(np.max(np.abs(r[-1] - problem.terminal_r(z[-1]))))
    return interior + b0 + bT
