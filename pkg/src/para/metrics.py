"""Output-diversity and stability measurements.

Diversity is scored as the mean SSIM over all unordered pairs of a sample
set: higher mean SSIM means the samples look more alike, i.e. less diverse.
SSIM here is the global single-window form::

    ((2 mu_a mu_b + C1)(2 cov_ab + C2)) / ((mu_a^2 + mu_b^2 + C1)(var_a + var_b + C2))

with ``C1 = (0.01 L)^2`` and ``C2 = (0.03 L)^2``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from para.adapter import ParaAdapter, effective_q, reduce_weight
from para.bundle import AdapterBundle
from para.errors import NonConforming, ShapeError
from para.linalg import as_matrix, default_rank_tol, null_space_basis, numerical_rank
from para.model import ToyModel


@dataclass(frozen=True)
class ImageGrid:
    pixels: np.ndarray
    dynamic_range: float = 1.0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ShapeError(f"pixels must be a non-empty 2-D grid, got shape {px.shape}")
        if self.dynamic_range <= 0:
            raise ValueError("dynamic_range must be > 0")
        # rendering round-off may land a hair outside [0, L]
        slack = 1e-12 * self.dynamic_range
        if px.min() < -slack or px.max() > self.dynamic_range + slack:
            raise ValueError(f"pixel values must lie in [0, {self.dynamic_range}]")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class DiversityReport:
    n_samples: int
    mean_pairwise_ssim: float
    std_pairwise_ssim: float
    nullity_gain: int = 0
    kernel_max_change: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def ssim(a: ImageGrid, b: ImageGrid) -> float:
    if a.pixels.shape != b.pixels.shape:
        raise ShapeError(f"grid shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    if a.dynamic_range != b.dynamic_range:
        raise ValueError("grids must share a dynamic range")
    big_l = a.dynamic_range
    c1 = (0.01 * big_l) ** 2
    c2 = (0.03 * big_l) ** 2
    x, y = a.pixels.ravel(), b.pixels.ravel()
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    vx, vy = np.mean(dx * dx), np.mean(dy * dy)
    cov = np.mean(dx * dy)
    num = (2 * mx * my + c1) * (2 * cov + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return float(num / den)


def pairwise_ssim(samples) -> DiversityReport:
    samples = list(samples)
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    shape = samples[0].pixels.shape
    if any(s.pixels.shape != shape for s in samples):
        raise ShapeError("all samples must share one grid shape")
    values = np.array([ssim(a, b) for a, b in itertools.combinations(samples, 2)])
    return DiversityReport(len(samples), float(values.mean()), float(values.std()))


def nullity_gain(w0, w_reduced) -> int:
    """Increase in kernel dimension, ``rank(W0) - rank(W_reduced)``.

    Both ranks use W0's default tolerance; a reduction can leave a matrix that
    is pure round-off, whose own relative tolerance would be meaningless.
    """
    w0 = as_matrix(w0, "w0")
    w_reduced = as_matrix(w_reduced, "w_reduced")
    if w0.shape != w_reduced.shape:
        raise ShapeError(f"shape mismatch {w0.shape} vs {w_reduced.shape}")
    cols = w0.shape[1]
    tol = default_rank_tol(w0)
    return (cols - numerical_rank(w_reduced, tol)) - (cols - numerical_rank(w0, tol))


def grid_shape(dim: int) -> tuple[int, int]:
    """Row-major grid for a ``dim``-vector: height ``floor(sqrt(dim))``, zero-padded width."""
    height = max(1, math.isqrt(dim))
    return height, math.ceil(dim / height)


def render_outputs(outputs) -> list[ImageGrid]:
    """Map output columns to [0, 1] grids with one affine map shared by all samples."""
    outputs = as_matrix(outputs, "outputs")
    dim, n = outputs.shape
    lo, hi = outputs.min(), outputs.max()
    span = hi - lo
    scaled = (outputs - lo) / span if span > 0 else np.zeros_like(outputs)
    scaled = np.clip(scaled, 0.0, 1.0)
    h, w = grid_shape(dim)
    grids = []
    for j in range(n):
        flat = np.zeros(h * w)
        flat[:dim] = scaled[:, j]
        grids.append(ImageGrid(flat.reshape(h, w)))
    return grids


def reduced_weights(model: ToyModel, bundle: AdapterBundle | None) -> dict:
    """Per-layer reduced weights for every non-identity adapter in ``bundle``."""
    if bundle is None:
        return {}
    if bundle.kind != "para":
        raise ValueError("expected a para bundle")
    out = {}
    for a in bundle.entries:
        layer = model.layer(a.layer_name)
        if a.d != layer.shape[0]:
            raise NonConforming(f"{a.layer_name}: adapter has {a.d} rows, layer outputs {layer.shape[0]}")
        base_rank = a.base_rank if a.base_rank is not None else numerical_rank(layer.w0)
        q = effective_q(a, base_rank)
        if q.shape[1]:
            out[a.layer_name] = reduce_weight(layer.w0, q)
    return out


def stability_probe(
    model: ToyModel,
    bundle: AdapterBundle | None,
    base_input,
    n_perturbations: int,
    noise_scale: float,
    seed: int,
    directions=None,
) -> DiversityReport:
    """Pairwise SSIM of outputs for Gaussian-perturbed copies of one input.

    ``directions`` (k x m) optionally confines the noise to their span. For
    single-layer models the report also carries ``kernel_max_change``: the
    largest output change caused by perturbations drawn from the kernel of the
    reduced weight (should sit at round-off level).
    """
    if n_perturbations < 2:
        raise ValueError("n_perturbations must be >= 2")
    if noise_scale <= 0:
        raise ValueError("noise_scale must be > 0")
    x = as_matrix(np.reshape(base_input, (-1, 1)) if np.ndim(base_input) == 1 else base_input, "base_input")
    if x.shape != (model.in_dim, 1):
        raise NonConforming(f"base_input must be a {model.in_dim}-vector")

    new = reduced_weights(model, bundle)
    weights = model.weights(new)
    rng = np.random.default_rng(seed)
    if directions is None:
        noise = rng.standard_normal((model.in_dim, n_perturbations))
    else:
        basis = as_matrix(directions, "directions")
        if basis.shape[0] != model.in_dim:
            raise NonConforming("directions must have one row per input feature")
        noise = basis @ rng.standard_normal((basis.shape[1], n_perturbations))
    outputs = model.forward(x + noise_scale * noise, weights)
    report = pairwise_ssim(render_outputs(outputs))

    gain = sum(nullity_gain(model.layer(name).w0, w) for name, w in new.items())
    kernel_change = None
    if len(model.layers) == 1:
        w = weights[0]
        kernel = null_space_basis(w, default_rank_tol(model.layers[0].w0))
        if kernel.shape[1]:
            dx = kernel @ rng.standard_normal((kernel.shape[1], n_perturbations))
            kernel_change = float(np.max(np.abs(w @ (x + dx) - w @ x)))
        else:
            kernel_change = 0.0
    return DiversityReport(
        report.n_samples,
        report.mean_pairwise_ssim,
        report.std_pairwise_ssim,
        gain,
        kernel_change,
    )


def concept_preserving_ladder(w0, base_input, ranks, layer_name="layer0") -> dict[int, ParaAdapter]:
    """Nested adapters that shrink output variation but keep ``W0 x`` intact.

    The basis is the left singular vectors of ``W0`` with the direction of the
    clean output ``W0 x`` projected out, so each rank removes the strongest
    remaining directions of input-driven variation. Rank 0 maps to an identity
    adapter. Used to reproduce the diversity trend on toy models.
    """
    w0 = as_matrix(w0, "w0")
    x = np.asarray(base_input, dtype=np.float64).reshape(-1)
    s = w0 @ x
    norm = np.linalg.norm(s)
    m = w0 - np.outer(s / norm, (s / norm) @ w0) if norm > 0 else w0
    u = np.linalg.svd(m, full_matrices=False)[0]
    d = w0.shape[0]
    out = {}
    for r in ranks:
        if r == 0:
            out[r] = ParaAdapter(layer_name, np.zeros((d, 1)), 1, identity=True, in_features=w0.shape[1])
        else:
            out[r] = ParaAdapter(layer_name, u[:, :r], r, in_features=w0.shape[1])
    return out
