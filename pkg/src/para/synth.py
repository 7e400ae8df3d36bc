"""Seeded synthetic instances: low-rank weights, in-space bases, subspace pairs, planted tasks."""
from __future__ import annotations

import numpy as np

from para.model import Layer, ToyModel

PAIR_FAMILIES = ("identical", "orthogonal", "nested", "shared_direction", "generic")
COMMUTING_FAMILIES = ("identical", "orthogonal", "nested", "shared_orthogonal")


def orthonormal(rng, d, r) -> np.ndarray:
    if r == 0:
        return np.zeros((d, 0))
    q, rr = np.linalg.qr(rng.standard_normal((d, r)))
    return q * np.where(np.diag(rr) < 0, -1.0, 1.0)


def low_rank_matrix(rng, d, k, rank) -> np.ndarray:
    """``d x k`` Gaussian product of exact rank ``rank`` (with probability 1)."""
    return rng.standard_normal((d, rank)) @ rng.standard_normal((rank, k)) / np.sqrt(rank)


def in_space_basis(rng, w0, r) -> np.ndarray:
    """Orthonormal Q spanning ``r`` random combinations of the columns of ``w0``."""
    b = w0 @ rng.standard_normal((w0.shape[1], r))
    return np.linalg.qr(b)[0]


def rank_instance(rng, max_d=64, max_k=48, max_r=8):
    """Random ``(w0, q, base_rank, r)`` with Q inside col(W0)."""
    d = int(rng.integers(2, max_d + 1))
    k = int(rng.integers(2, max_k + 1))
    base_rank = int(rng.integers(1, min(d, k) + 1))
    r = int(rng.integers(1, min(max_r, base_rank) + 1))
    w0 = low_rank_matrix(rng, d, k, base_rank)
    return w0, in_space_basis(rng, w0, r), base_rank, r


def subspace_pair(rng, d, r1, r2, family):
    """Two orthonormal bases in R^d related according to ``family``.

    identical          Q2 = Q1 (r2 ignored)
    orthogonal         span(Q2) is orthogonal to span(Q1)
    nested             span(Q2) is a subspace of span(Q1)
    shared_direction   Q2 contains one column of Q1; its other columns are
                       random, orthogonalized only against that column
    shared_orthogonal  like shared_direction but the other columns are
                       orthogonal to all of Q1
    generic            independent random subspaces
    """
    q1 = orthonormal(rng, d, r1)
    if family == "identical":
        return q1, q1.copy()
    if family == "generic":
        return q1, orthonormal(rng, d, r2)
    if family == "nested":
        r2 = min(r2, r1)
        return q1, q1 @ orthonormal(rng, r1, r2)
    if family == "orthogonal":
        full = np.linalg.qr(np.hstack([q1, rng.standard_normal((d, r2))]))[0]
        return q1, full[:, r1 : r1 + r2]
    if family in ("shared_direction", "shared_orthogonal"):
        shared = q1[:, :1]
        if family == "shared_orthogonal":
            basis = np.hstack([q1, rng.standard_normal((d, r2 - 1))])
            extra = np.linalg.qr(basis)[0][:, r1 : r1 + r2 - 1]
        else:
            basis = np.hstack([shared, rng.standard_normal((d, r2 - 1))])
            extra = np.linalg.qr(basis)[0][:, 1:r2]
        return q1, np.hstack([shared, extra])
    raise ValueError(f"unknown family {family!r}")


def pair_instance(rng, family, max_d=64, max_k=48, max_r=8):
    """Full-row-rank W0 plus a subspace pair, so every Q lies in col(W0)."""
    r1 = int(rng.integers(1, max_r + 1))
    r2 = int(rng.integers(2 if family.startswith("shared") else 1, max_r + 1))
    d = int(rng.integers(r1 + r2 + 1, max_d + 1))
    k = int(rng.integers(d, max(d, max_k) + 1))
    w0 = rng.standard_normal((d, k))
    q1, q2 = subspace_pair(rng, d, r1, r2, family)
    return w0, q1, q2


def planted_task(seed=0, d=8, k=6, n=3, rank=1):
    """Single linear layer plus targets produced by a known rank-``rank`` reduction.

    Returns ``(model, targets, q_star)`` where ``q_star`` spans the planted
    subspace (inside col(W0)).
    """
    rng = np.random.default_rng(seed)
    w0 = rng.standard_normal((d, k)) / np.sqrt(k)
    q_star = in_space_basis(rng, w0, rank)
    x = rng.standard_normal((k, n))
    y = w0 @ x - q_star @ (q_star.T @ (w0 @ x))
    return ToyModel((Layer("layer0", w0),)), [(x, y)], q_star


def diversity_model(seed, dim=16):
    """Single ``dim x dim`` linear layer and a base input for diversity probes."""
    rng = np.random.default_rng(seed)
    w0 = rng.standard_normal((dim, dim)) / np.sqrt(dim)
    x = rng.standard_normal(dim)
    return ToyModel((Layer("layer0", w0),)), x
