"""Composition of PaRa adapters with each other and with LoRA deltas.

Two PaRa reductions of the same base weight can be combined either by
orthonormalizing the union of their bases (``merge_para_qr``) or by applying
them one after the other (``merge_para_sequential``). The two agree exactly
when the projectors ``Q1 Q1^T`` and ``Q2 Q2^T`` commute on ``col(W0)`` (for
instance identical, nested, or mutually orthogonal subspaces). For subspaces
that overlap at an oblique angle the sequential product
``(I - P2)(I - P1) W0`` is not a projection of ``W0`` and the two differ; see
``sequential_defect``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from para.adapter import LoraAdapter, reduce_weight
from para.errors import ShapeError
from para.linalg import as_matrix, check_orthonormal, default_rank_tol, numerical_rank, pivoted_basis


class CombineMethod(str, enum.Enum):
    MERGED_QR = "merged_qr"
    SEQUENTIAL = "sequential"
    PARA_THEN_LORA = "para_then_lora"
    LORA_THEN_PARA = "lora_then_para"
    LORA_FORM = "lora_form"


@dataclass(frozen=True)
class CombinedWeight:
    w: np.ndarray
    method: CombineMethod
    effective_rank_removed: int


def _rank_removed(w0, w) -> int:
    tol = default_rank_tol(w0)
    return numerical_rank(w0, tol) - numerical_rank(w, tol)


def _check_pair(w0, q1, q2):
    w0 = as_matrix(w0, "w0")
    q1 = check_orthonormal(q1)
    q2 = check_orthonormal(q2)
    for name, q in (("q1", q1), ("q2", q2)):
        if q.shape[0] != w0.shape[0]:
            raise ShapeError(f"{name} has {q.shape[0]} rows, w0 has {w0.shape[0]}")
    return w0, q1, q2


def merged_basis(q1, q2, tol=1e-10) -> np.ndarray:
    """Orthonormal basis of ``span([Q1 Q2])``, dependent columns dropped."""
    q1 = check_orthonormal(q1)
    q2 = check_orthonormal(q2)
    if q1.shape[0] != q2.shape[0]:
        raise ShapeError(f"row mismatch {q1.shape} vs {q2.shape}")
    return pivoted_basis(np.hstack([q1, q2]), tol)


def merge_para_qr(w0, q1, q2) -> CombinedWeight:
    w0, q1, q2 = _check_pair(w0, q1, q2)
    qm = merged_basis(q1, q2)
    w = reduce_weight(w0, qm)
    return CombinedWeight(w, CombineMethod.MERGED_QR, _rank_removed(w0, w))


def merge_para_sequential(w0, q1, q2) -> CombinedWeight:
    """Use the Q1-reduced weight as the base for the Q2 reduction."""
    w0, q1, q2 = _check_pair(w0, q1, q2)
    w = reduce_weight(reduce_weight(w0, q1), q2)
    return CombinedWeight(w, CombineMethod.SEQUENTIAL, _rank_removed(w0, w))


def projectors_commute(q1, q2, atol=1e-10) -> bool:
    """True when ``Q1 Q1^T`` and ``Q2 Q2^T`` commute.

    Equivalent to ``Q1^T Q2`` being a partial isometry between the two bases,
    i.e. every principal angle between the subspaces is 0 or 90 degrees.
    """
    q1 = check_orthonormal(q1)
    q2 = check_orthonormal(q2)
    c = q1.T @ q2
    if c.size == 0:
        return True
    s = np.linalg.svd(c, compute_uv=False)
    return bool(np.all((s < atol) | (np.abs(s - 1.0) < atol)))


def sequential_defect(w0, q1, q2) -> float:
    """Relative Frobenius gap between sequential and merged-QR composition."""
    seq = merge_para_sequential(w0, q1, q2).w
    merged = merge_para_qr(w0, q1, q2).w
    scale = np.linalg.norm(w0)
    return float(np.linalg.norm(seq - merged) / scale) if scale > 0 else 0.0


def _check_lora(w0, q, lora: LoraAdapter):
    w0 = as_matrix(w0, "w0")
    q = check_orthonormal(q)
    if q.shape[0] != w0.shape[0]:
        raise ShapeError(f"q has {q.shape[0]} rows, w0 has {w0.shape[0]}")
    if lora.b_up.shape[0] != w0.shape[0] or lora.a_down.shape[1] != w0.shape[1]:
        raise ShapeError(
            f"LoRA delta {lora.b_up.shape[0]}x{lora.a_down.shape[1]} does not match w0 {w0.shape}"
        )
    return w0, q


def combine_para_then_lora(w0, q, lora: LoraAdapter) -> CombinedWeight:
    """Reduce first, then add the LoRA delta: ``W0 - QQ^T W0 + alpha B A``."""
    w0, q = _check_lora(w0, q, lora)
    w = reduce_weight(w0, q) + lora.delta()
    return CombinedWeight(w, CombineMethod.PARA_THEN_LORA, _rank_removed(w0, w))


def combine_lora_then_para(w0, q, lora: LoraAdapter) -> CombinedWeight:
    """Add the LoRA delta, then reduce: ``(I - QQ^T)(W0 + alpha B A)``.

    Diagnostic only. Any part of ``col(B)`` inside ``span(Q)`` is projected
    away, so when ``Q`` spans ``col(B)`` the LoRA has no effect at any alpha.
    """
    w0, q = _check_lora(w0, q, lora)
    w = reduce_weight(w0 + lora.delta(), q)
    return CombinedWeight(w, CombineMethod.LORA_THEN_PARA, _rank_removed(w0, w))


def combine_lora_form(w0, q, lora: LoraAdapter, alpha1: float, alpha2: float) -> CombinedWeight:
    """Treat PaRa as a LoRA pair (B=-Q, A=Q^T W0) and mix the factors.

    ``W0 + (-a1 Q + a2 B)(a1 Q^T W0 + a2 A)``. Kept as a diagnostic; it loses
    the projection structure that makes PaRa a rank reduction. ``lora.alpha``
    is ignored here, strength comes from ``alpha1`` and ``alpha2``.
    """
    w0, q = _check_lora(w0, q, lora)
    if q.shape[1] != lora.rank:
        raise ShapeError(f"q has {q.shape[1]} columns but the LoRA rank is {lora.rank}")
    left = -alpha1 * q + alpha2 * lora.b_up
    right = alpha1 * (q.T @ w0) + alpha2 * lora.a_down
    w = w0 + left @ right
    return CombinedWeight(w, CombineMethod.LORA_FORM, _rank_removed(w0, w))
