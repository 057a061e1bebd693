"""Fixed-step classical RK4 integration on a :class:`TimeGrid`.

Two flavours are provided. ``rk4_forward``/``rk4_backward`` take an arbitrary
right-hand side ``rhs(t, x)``. The ``*_linear`` variants handle
``dx/dt = M(t) x + f(t)`` with ``M`` and ``f`` given at nodes and midpoints;
there one RK4 step is an affine map, so the step matrices can be assembled for
all steps at once, which is what the forward-backward solver relies on.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import Divergence
from .model import LqCoefficients, TimeGrid

BLOWUP = 1e12


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values sampled on every node of ``grid``; axis 0 is time."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[0] != self.grid.n_steps + 1:
            raise ValueError(f"expected {self.grid.n_steps + 1} node values, got {vals.shape[0]}")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.shape[0]

    @property
    def initial(self):
        return self.values[0]

    @property
    def final(self):
        return self.values[-1]

    def at(self, t: float):
        """Linear interpolation in time."""
        n = self.grid.n_steps
        s = float(t) / self.grid.dt
        k = min(max(int(np.floor(s)), 0), n - 1)
        frac = s - k
        return (1.0 - frac) * self.values[k] + frac * self.values[k + 1]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


def _check(x, t: float) -> None:
    x = np.asarray(x)
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > BLOWUP):
        raise Divergence(f"solution left the finite range near t={t:.6g}")


def rk4_forward(rhs: Callable, initial, grid: TimeGrid) -> GridFunction:
    """Integrate ``dx/dt = rhs(t, x)`` from ``t_0`` with ``x(t_0) = initial``."""
    x0 = np.asarray(initial, dtype=float)
    out = np.empty((grid.n_steps + 1,) + x0.shape)
    out[0] = x0
    t = grid.times
    h = grid.dt
    x = x0
    for k in range(grid.n_steps):
        tk = t[k]
        k1 = rhs(tk, x)
        k2 = rhs(tk + 0.5 * h, x + 0.5 * h * k1)
        k3 = rhs(tk + 0.5 * h, x + 0.5 * h * k2)
        k4 = rhs(t[k + 1], x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check(x, t[k + 1])
        out[k + 1] = x
    return GridFunction(grid, out)


def rk4_backward(rhs: Callable, terminal, grid: TimeGrid) -> GridFunction:
    """Integrate ``dx/dt = rhs(t, x)`` from ``T`` down to 0 with ``x(T) = terminal``."""
    xT = np.asarray(terminal, dtype=float)
    n = grid.n_steps
    out = np.empty((n + 1,) + xT.shape)
    out[n] = xT
    t = grid.times
    h = -grid.dt
    x = xT
    for k in range(n, 0, -1):
        tk = t[k]
        k1 = rhs(tk, x)
        k2 = rhs(tk + 0.5 * h, x + 0.5 * h * k1)
        k3 = rhs(tk + 0.5 * h, x + 0.5 * h * k2)
        k4 = rhs(t[k - 1], x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        _check(x, t[k - 1])
        out[k - 1] = x
    return GridFunction(grid, out)


# ---------------------------------------------------------------------------
# linear systems


@dataclass(frozen=True, eq=False)
class StepMaps:
    """Affine RK4 step ``x_next = phi x + w_start f_start + w_mid f_mid + w_end f_end``.

    Every array has shape ``(n_steps, D, D)``; entry ``k`` is the step leaving
    node ``k`` (forward) or node ``k + 1`` (backward).
    """

    phi: np.ndarray
    w_start: np.ndarray
    w_mid: np.ndarray
    w_end: np.ndarray


def as_matrices(m) -> np.ndarray:
    """Promote per-node diagonals ``(n, D)`` to full matrices ``(n, D, D)``."""
    m = np.asarray(m, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim == 2:
        out = np.zeros(m.shape + (m.shape[1],))
        idx = np.arange(m.shape[1])
        out[:, idx, idx] = m
        return out
    return m


def _affine_stage(m0, mh, m1, x, f0, fh, f1, h):
    k1 = m0 @ x + f0
    k2 = mh @ (x + 0.5 * h * k1) + fh
    k3 = mh @ (x + 0.5 * h * k2) + fh
    k4 = m1 @ (x + h * k3) + f1
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def linear_step_maps(m_start, m_mid, m_end, h: float) -> StepMaps:
    """Batched RK4 step maps for ``dx/dt = M(t) x + f(t)`` with step ``h``.

    ``m_start``, ``m_mid``, ``m_end`` hold ``M`` at the start, midpoint and end
    of each step, shape ``(n, D, D)``. ``h`` is negative for backward sweeps.
    """
    m0, mh, m1 = (as_matrices(m) for m in (m_start, m_mid, m_end))
    n, d, _ = m0.shape
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    zero = np.zeros((n, d, d))
    return StepMaps(
        phi=_affine_stage(m0, mh, m1, eye, zero, zero, zero, h),
        w_start=_affine_stage(m0, mh, m1, zero, eye, zero, zero, h),
        w_mid=_affine_stage(m0, mh, m1, zero, zero, eye, zero, h),
        w_end=_affine_stage(m0, mh, m1, zero, zero, zero, eye, h),
    )


def forcing_increment(maps: StepMaps, f_start, f_mid, f_end) -> np.ndarray:
    """Per-step constant term ``c_k`` contributed by the forcing, shape ``(n, D)``."""
    return (
        np.einsum("kij,kj->ki", maps.w_start, f_start)
        + np.einsum("kij,kj->ki", maps.w_mid, f_mid)
        + np.einsum("kij,kj->ki", maps.w_end, f_end)
    )


def propagate(phi: np.ndarray, c: np.ndarray, x_first, reverse: bool = False, times=None) -> np.ndarray:
    """Run ``x_{k+1} = phi_k x_k + c_k`` (or its reverse-time mirror).

    Returns the full trajectory of shape ``(n + 1, D)`` indexed by node.
    """
    n, d, _ = phi.shape
    out = np.empty((n + 1, d))
    x = np.asarray(x_first, dtype=float).reshape(d)
    order = range(n - 1, -1, -1) if reverse else range(n)
    if reverse:
        out[n] = x
    else:
        out[0] = x
    if d == 1:
        ph = phi[:, 0, 0].tolist()
        cc = c[:, 0].tolist()
        xs = float(x[0])
        for k in order:
            xs = ph[k] * xs + cc[k]
            out[k if reverse else k + 1, 0] = xs
    else:
        for k in order:
            x = phi[k] @ x + c[k]
            out[k if reverse else k + 1] = x
    lim = np.abs(out)
    if not np.all(np.isfinite(out)) or np.any(lim > BLOWUP):
        bad = int(np.argmax(~np.isfinite(out).all(axis=1) | (lim > BLOWUP).any(axis=1)))
        t = times[bad] if times is not None else bad
        raise Divergence(f"linear propagation left the finite range near t={t}")
    return out


def _node_split(m_nodes, m_mid, reverse: bool):
    m_nodes = as_matrices(m_nodes)
    m_mid = as_matrices(m_mid)
    if reverse:
        return m_nodes[1:], m_mid, m_nodes[:-1]
    return m_nodes[:-1], m_mid, m_nodes[1:]


def _forcing_array(f, rows: int, d: int) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.ndim == 1 and f.shape[0] == rows and d == 1:
        f = f[:, None]
    return np.broadcast_to(f, (rows, d))


def _f_split(f_nodes, f_mid, n: int, d: int, reverse: bool):
    f_nodes = _forcing_array(f_nodes, n + 1, d)
    f_mid = _forcing_array(f_mid, n, d)
    if reverse:
        return f_nodes[1:], f_mid, f_nodes[:-1]
    return f_nodes[:-1], f_mid, f_nodes[1:]


def rk4_forward_linear(m_nodes, m_mid, f_nodes, f_mid, initial, grid: TimeGrid) -> GridFunction:
    """RK4 for ``dx/dt = M(t) x + f(t)`` forward from ``initial``.

    ``m_nodes``: ``(n+1, D)`` diagonal or ``(n+1, D, D)``; ``m_mid`` likewise
    with ``n`` midpoints. Forcing arrays broadcast to ``(n+1, D)`` / ``(n, D)``.
    """
    m0, mh, m1 = _node_split(m_nodes, m_mid, reverse=False)
    d = m0.shape[1]
    maps = linear_step_maps(m0, mh, m1, grid.dt)
    c = forcing_increment(maps, *_f_split(f_nodes, f_mid, grid.n_steps, d, reverse=False))
    return GridFunction(grid, propagate(maps.phi, c, initial, times=grid.times))


def rk4_backward_linear(m_nodes, m_mid, f_nodes, f_mid, terminal, grid: TimeGrid) -> GridFunction:
    """Backward mirror of :func:`rk4_forward_linear` from ``x(T) = terminal``."""
    m0, mh, m1 = _node_split(m_nodes, m_mid, reverse=True)
    d = m0.shape[1]
    maps = linear_step_maps(m0, mh, m1, -grid.dt)
    c = forcing_increment(maps, *_f_split(f_nodes, f_mid, grid.n_steps, d, reverse=True))
    return GridFunction(grid, propagate(maps.phi, c, terminal, reverse=True, times=grid.times))


# ---------------------------------------------------------------------------
# Riccati


def _stack(coeffs, name: str) -> np.ndarray:
    return np.array([getattr(c, name) for c in coeffs], dtype=float)


def solve_riccati(coeffs: LqCoefficients | Sequence[LqCoefficients], grid: TimeGrid) -> GridFunction:
    """Solve ``-dp/dt = 2 A p - B^2 p^2 / C + Q + Qbar`` with ``p_T = Q_T + Qbar_T``.

    A single coefficient set yields scalar node values; a sequence yields one
    column per component. Blow-up inside [0, T] raises :class:`Divergence`.
    """
    scalar = isinstance(coeffs, LqCoefficients)
    cs = [coeffs] if scalar else list(coeffs)
    a = _stack(cs, "A")
    g = _stack(cs, "B") ** 2 / _stack(cs, "C")
    q = _stack(cs, "Q") + _stack(cs, "Qbar")
    p_T = _stack(cs, "Q_T") + _stack(cs, "Qbar_T")

    def rhs(t, p):
        return -(2.0 * a * p - g * p * p + q)

    sol = rk4_backward(rhs, p_T, grid)
    if scalar:
        return GridFunction(grid, sol.values[:, 0])
    return sol


def riccati_nodes_and_midpoints(coeffs: Sequence[LqCoefficients], grid: TimeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Riccati solution at the nodes and midpoints of ``grid``, shapes ``(n+1, D)``, ``(n, D)``.

    Integrates on the doubly refined grid so midpoint values carry full RK4
    accuracy instead of interpolation error.
    """
    fine = solve_riccati(list(coeffs), grid.refined(2)).values
    return fine[::2].copy(), fine[1::2].copy()
