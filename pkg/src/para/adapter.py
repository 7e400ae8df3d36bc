"""PaRa and LoRA adapter types and the rank-reduction maps.

A PaRa adapter holds a learnable ``B`` (d x r). Its orthonormal factor ``Q``
removes ``span(Q)`` from the output space of a base weight::

    W_reduce = W0 - Q Q^T W0

Convolution kernels (c_out, c_in, h, w) are flattened row-major to
``c_out x (c_in*h*w)`` before the same reduction is applied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from para.errors import DegenerateColumns, ShapeError
from para.linalg import as_matrix, check_orthonormal, qr_thin

# boundary for large backbones; toy layers default to gamma = 1
BOUNDARY_GAMMA = Fraction(1, 40)


def as_gamma(gamma) -> Fraction:
    """Exact rational view of a rank-boundary factor (accepts ``"1/40"``)."""
    g = Fraction(gamma)
    if not 0 < g <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return g


@dataclass(frozen=True)
class ConvShape:
    c_out: int
    c_in: int
    h: int
    w: int

    def __post_init__(self):
        for name in ("c_out", "c_in", "h", "w"):
            if int(getattr(self, name)) < 1:
                raise ShapeError(f"ConvShape.{name} must be positive")

    @property
    def size(self) -> int:
        return self.c_out * self.c_in * self.h * self.w

    @property
    def in_features(self) -> int:
        return self.c_in * self.h * self.w

    def as_tuple(self):
        return (self.c_out, self.c_in, self.h, self.w)


@dataclass(frozen=True)
class RankPolicy:
    requested_rank: int
    gamma: Fraction | float | str = 1

    def __post_init__(self):
        if self.requested_rank < 1:
            raise ValueError("requested_rank must be >= 1")
        as_gamma(self.gamma)


def rank_adjust(policy: RankPolicy, base_rank: int) -> int:
    """Clamp the requested rank to ``floor(gamma * base_rank)``.

    Returns ``r`` when ``r <= gamma * base_rank``, otherwise the floor. A
    result of 0 means the layer should be left untouched.
    """
    if base_rank < 1:
        raise ValueError("base_rank must be >= 1")
    bound = as_gamma(policy.gamma) * base_rank
    r = policy.requested_rank
    if r <= bound:
        return r
    return math.floor(bound)


@dataclass(frozen=True)
class ParaAdapter:
    """Per-layer PaRa parameters.

    ``identity`` marks a layer that must not be reduced (e.g. its B never left
    zero). ``base_rank`` caches ``numerical_rank(W0)`` when known, and
    ``in_features`` records ``k`` so parameter counts can be compared with LoRA.
    """

    layer_name: str
    b: np.ndarray
    requested_rank: int
    gamma: Fraction | float | str = 1
    conv_shape: ConvShape | None = None
    in_features: int | None = None
    base_rank: int | None = None
    identity: bool = False

    def __post_init__(self):
        b = as_matrix(self.b, "b")
        object.__setattr__(self, "b", b)
        if b.shape[1] != self.requested_rank:
            raise ShapeError(
                f"{self.layer_name}: b has {b.shape[1]} columns, requested_rank is {self.requested_rank}"
            )
        as_gamma(self.gamma)
        if self.conv_shape is not None and b.shape[0] != self.conv_shape.c_out:
            raise ShapeError(f"{self.layer_name}: b rows must equal c_out={self.conv_shape.c_out}")

    @property
    def d(self) -> int:
        return self.b.shape[0]

    @property
    def policy(self) -> RankPolicy:
        return RankPolicy(self.requested_rank, self.gamma)

    def effective_rank(self, base_rank: int | None = None) -> int:
        base_rank = self.base_rank if base_rank is None else base_rank
        if base_rank is None:
            return self.requested_rank
        if base_rank < 1:
            return 0
        return rank_adjust(self.policy, base_rank)

    def with_b(self, b, **changes) -> "ParaAdapter":
        b = as_matrix(b, "b")
        return replace(self, b=b, requested_rank=b.shape[1], **changes)


@dataclass(frozen=True)
class LoraAdapter:
    layer_name: str
    b_up: np.ndarray
    a_down: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        b_up = as_matrix(self.b_up, "b_up")
        a_down = as_matrix(self.a_down, "a_down")
        if b_up.shape[1] != a_down.shape[0]:
            raise ShapeError(f"{self.layer_name}: inner dims {b_up.shape} x {a_down.shape}")
        object.__setattr__(self, "b_up", b_up)
        object.__setattr__(self, "a_down", a_down)

    @property
    def rank(self) -> int:
        return self.b_up.shape[1]

    def delta(self) -> np.ndarray:
        return self.alpha * (self.b_up @ self.a_down)


def derive_q(adapter: ParaAdapter, base_rank: int | None = None) -> np.ndarray:
    """Orthonormal factor of the rank-clamped B.

    B is truncated to its first ``rank_adjust`` columns before factorizing.
    A clamp to zero returns an empty ``d x 0`` matrix.

    Raises:
        DegenerateColumns: for a zero or collapsed B.
    """
    r_eff = adapter.effective_rank(base_rank)
    if r_eff == 0:
        return np.zeros((adapter.d, 0))
    return qr_thin(adapter.b[:, :r_eff]).q


def effective_q(adapter: ParaAdapter, base_rank: int | None = None) -> np.ndarray:
    """Like :func:`derive_q`, but identity/degenerate layers give an empty Q."""
    if adapter.identity:
        return np.zeros((adapter.d, 0))
    try:
        return derive_q(adapter, base_rank)
    except DegenerateColumns:
        return np.zeros((adapter.d, 0))


def _check_q(w0, q):
    w0 = as_matrix(w0, "w0")
    q = as_matrix(q, "q")
    if q.shape[0] != w0.shape[0]:
        raise ShapeError(f"q has {q.shape[0]} rows, w0 has {w0.shape[0]}")
    return w0, check_orthonormal(q)


def reduce_weight(w0, q) -> np.ndarray:
    """``W0 - Q Q^T W0``."""
    w0, q = _check_q(w0, q)
    if q.shape[1] == 0:
        return w0.copy()
    return w0 - q @ (q.T @ w0)


def apply_reduced(w0, q, x) -> np.ndarray:
    """Reduced layer output ``W0 x - Q (Q^T (W0 x))`` without forming ``Q Q^T``."""
    w0, q = _check_q(w0, q)
    x = as_matrix(x, "x")
    if x.shape[0] != w0.shape[1]:
        raise ShapeError(f"x has {x.shape[0]} rows, w0 has {w0.shape[1]} columns")
    h = w0 @ x
    if q.shape[1] == 0:
        return h
    return h - q @ (q.T @ h)


def flatten_kernel(kernel) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must have 4 axes (c_out, c_in, h, w), got {kernel.shape}")
    return kernel.reshape(kernel.shape[0], -1)


def unflatten_kernel(matrix, shape: ConvShape) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.size != shape.size or matrix.shape[0] != shape.c_out:
        raise ShapeError(f"cannot reshape {matrix.shape} to {shape.as_tuple()}")
    return matrix.reshape(shape.as_tuple())


def reduce_conv(kernel, b) -> np.ndarray:
    """Rank-reduce a (c_out, c_in, h, w) kernel with a B of ``c_out`` rows."""
    kernel = np.asarray(kernel, dtype=np.float64)
    w0 = flatten_kernel(kernel)
    b = as_matrix(b, "b")
    if b.shape[0] != kernel.shape[0]:
        raise ShapeError(f"b has {b.shape[0]} rows, kernel has c_out={kernel.shape[0]}")
    if b.shape[1] == 0:
        return kernel.copy()
    q = qr_thin(b).q
    return unflatten_kernel(reduce_weight(w0, q), ConvShape(*kernel.shape))


def param_count_para(d: int, r: int) -> int:
    if d < 1 or r < 1:
        raise ValueError("dimensions must be positive")
    return d * r


def param_count_lora(d: int, k: int, r: int) -> int:
    if d < 1 or k < 1 or r < 1:
        raise ValueError("dimensions must be positive")
    return (d + k) * r
