"""Graphon kernels on [0, 1]^2, midpoint discretization and the integral operator.

Kernels are represented by :class:`GraphonSpec`. A kernel is discretized on M
midpoints ``u_i = (i - 1/2) / M`` and the aggregate ``[W z]_u`` is
approximated by the midpoint rule with uniform weights ``1/M``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AsymmetricWeights, IndexOutOfRange, LengthMismatch

KINDS = ("constant", "step", "min", "exp_decay")

_SYM_TOL = 1e-14


@dataclass(frozen=True)
class GraphonSpec:
    """Interaction kernel.

    kind:
        ``constant`` (uses ``value``), ``step`` (block matrix ``weights``
        multiplied by ``scale``), ``min`` (``min(u, v)``) or ``exp_decay``
        (``exp(-beta |u - v|)``).
    """

    kind: str
    value: float = 1.0
    weights: tuple[tuple[float, ...], ...] | None = None
    scale: float = 1.0
    beta: float = 0.0

    @classmethod
    def constant(cls, c: float = 1.0) -> GraphonSpec:
        spec = cls("constant", value=float(c))
        _raise_if_invalid(spec)
        return spec

    @classmethod
    def step(cls, weights, scale: float = 1.0) -> GraphonSpec:
        w = np.asarray(weights, dtype=float)
        spec = cls("step", weights=_as_tuple(w), scale=float(scale))
        _raise_if_invalid(spec)
        return spec

    @classmethod
    def family(cls, name: str, beta: float = 0.0) -> GraphonSpec:
        if name not in ("min", "exp_decay"):
            raise ValueError(f"unknown graphon family {name!r}")
        spec = cls(name, beta=float(beta))
        _raise_if_invalid(spec)
        return spec

    @property
    def n_blocks(self) -> int:
        return len(self.weights) if self.kind == "step" else 1

    def weight_matrix(self) -> np.ndarray:
        return np.array(self.weights, dtype=float)

    def __call__(self, u, v):
        return evaluate(self, u, v)


def _as_tuple(w: np.ndarray) -> tuple[tuple[float, ...], ...]:
    if w.ndim != 2:
        raise ValueError("step weights must be a 2-d matrix")
    return tuple(tuple(float(x) for x in row) for row in w)


def graphon_violations(spec: GraphonSpec) -> list[tuple[str, str, str]]:
    """Return ``(code, field, message)`` triples for every broken invariant."""
    out = []
    if spec.kind not in KINDS:
        out.append(("InvalidGraphon", "kind", f"unknown graphon kind {spec.kind!r}"))
        return out
    if spec.kind == "constant" and not spec.value >= 0:
        out.append(("InvalidGraphon", "value", f"constant graphon value must be >= 0, got {spec.value}"))
    if spec.kind == "exp_decay" and not spec.beta >= 0:
        out.append(("InvalidGraphon", "beta", f"exp_decay beta must be >= 0, got {spec.beta}"))
    if spec.kind == "step":
        if spec.weights is None or len(spec.weights) == 0:
            out.append(("DimensionMismatch", "weights", "step graphon needs a non-empty weight matrix"))
            return out
        w = spec.weight_matrix()
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            out.append(("DimensionMismatch", "weights", f"step weights must be square, got shape {w.shape}"))
            return out
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            out.append(("NegativeWeight", "weights", "step weights must be finite and >= 0"))
        elif np.max(np.abs(w - w.T)) > _SYM_TOL:
            out.append(("AsymmetricWeights", "weights", "step weights must be symmetric"))
        if not spec.scale >= 0:
            out.append(("InvalidGraphon", "scale", f"step scale must be >= 0, got {spec.scale}"))
    return out


def _raise_if_invalid(spec: GraphonSpec) -> None:
    problems = graphon_violations(spec)
    if not problems:
        return
    code, _, msg = problems[0]
    if code == "AsymmetricWeights":
        raise AsymmetricWeights(msg)
    raise ValueError(msg)


def block_index(x, n_blocks: int):
    """0-based block of ``x`` in a partition of [0, 1] into equal intervals.

    The right endpoint 1 belongs to the last block.
    """
    idx = np.floor(np.asarray(x, dtype=float) * n_blocks).astype(int)
    return np.minimum(idx, n_blocks - 1)


def evaluate(spec: GraphonSpec, u, v):
    """Kernel value ``W(u, v)``; broadcasts over array arguments."""
    u_arr = np.asarray(u, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    for name, arr in (("u", u_arr), ("v", v_arr)):
        if np.any(~((arr >= 0.0) & (arr <= 1.0))):
            raise IndexOutOfRange(f"{name} must lie in [0, 1]")
    if spec.kind == "constant":
        out = np.full(np.broadcast(u_arr, v_arr).shape, spec.value)
    elif spec.kind == "step":
        w = spec.weight_matrix()
        k = w.shape[0]
        out = spec.scale * w[block_index(u_arr, k), block_index(v_arr, k)]
    elif spec.kind == "min":
        out = np.minimum(u_arr, v_arr)
    elif spec.kind == "exp_decay":
        out = np.exp(-spec.beta * np.abs(u_arr - v_arr))
    else:
        raise ValueError(f"unknown graphon kind {spec.kind!r}")
    if out.ndim == 0:
        return float(out)
    return out


def step_from_weights(weights) -> GraphonSpec:
    """Step graphon ``W(u, v) = K w[k, l]`` reproducing multi-population sums.

    With this scaling the block average of ``W z`` over block ``l`` gives
    ``sum_l w[k, l] z^l`` for block-constant ``z``.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"weights must be a square matrix, got shape {w.shape}")
    if np.max(np.abs(w - w.T)) > _SYM_TOL:
        raise AsymmetricWeights("weights must be symmetric to define a graphon")
    return GraphonSpec.step(w, scale=float(w.shape[0]))


def midpoints(m_points: int) -> np.ndarray:
    return (np.arange(1, m_points + 1) - 0.5) / m_points


@dataclass(frozen=True, eq=False)
class DiscretizedGraphon:
    m_points: int
    matrix: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return midpoints(self.m_points)

    def operator(self) -> np.ndarray:
        """Matrix ``L`` with ``apply(z) == L @ z``."""
        return self.matrix / self.m_points


def discretize(spec: GraphonSpec, m_points: int) -> DiscretizedGraphon:
    if int(m_points) < 1:
        raise ValueError("m_points must be >= 1")
    m = int(m_points)
    u = midpoints(m)
    mat = np.asarray(evaluate(spec, u[:, None], u[None, :]), dtype=float)
    # evaluation is symmetric up to rounding in |u - v|; enforce exactly
    mat = 0.5 * (mat + mat.T)
    mat.setflags(write=False)
    return DiscretizedGraphon(m, mat)


def apply(discretized: DiscretizedGraphon, z) -> np.ndarray:
    """Midpoint quadrature of ``int W(u_i, v) z(v) dv``.

    ``z`` may carry leading batch axes; the last axis must have length M.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 0 or z.shape[-1] != discretized.m_points:
        raise LengthMismatch(f"expected last axis of length {discretized.m_points}, got shape {z.shape}")
    return z @ discretized.matrix.T / discretized.m_points
