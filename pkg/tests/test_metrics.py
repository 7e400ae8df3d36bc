import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from para.adapter import ParaAdapter, reduce_weight
from para.bundle import AdapterBundle
from para.errors import NonConforming, ShapeError
from para.linalg import null_space_basis
from para.metrics import (
    ImageGrid,
    concept_preserving_ladder,
    grid_shape,
    nullity_gain,
    pairwise_ssim,
    render_outputs,
    ssim,
    stability_probe,
)
from para.model import Layer, ToyModel
from para.synth import diversity_model

C1, C2 = 1e-4, 9e-4


def ssim_loops(a, b):
    """Brute-force global SSIM with explicit sums, L = 1."""
    xs = [v for row in a for v in row]
    ys = [v for row in b for v in row]
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    vx = sum((v - mx) ** 2 for v in xs) / n
    vy = sum((v - my) ** 2 for v in ys) / n
    cov = sum((p - mx) * (q - my) for p, q in zip(xs, ys)) / n
    return ((2 * mx * my + C1) * (2 * cov + C2)) / ((mx**2 + my**2 + C1) * (vx + vy + C2))


grids = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).random((4, 5)))


def test_ssim_examples(rng):
    a = ImageGrid(rng.random((4, 4)))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    zero, one = ImageGrid(np.zeros((3, 3))), ImageGrid(np.ones((3, 3)))
    assert ssim(zero, one) == pytest.approx(C1 / (1 + C1), rel=1e-12)
    assert ssim(zero, one) == pytest.approx(9.999e-5, abs=1e-8)
    with pytest.raises(ShapeError):
        ssim(a, ImageGrid(np.zeros((2, 8))))


@given(a=grids, b=grids)
def test_ssim_symmetric_bounded_and_matches_loops(a, b):
    ga, gb = ImageGrid(a), ImageGrid(b)
    v = ssim(ga, gb)
    assert v == ssim(gb, ga)
    assert -1.0 <= v <= 1.0
    assert v == pytest.approx(ssim_loops(a.tolist(), b.tolist()), abs=1e-12)


def test_image_grid_range():
    with pytest.raises(ValueError):
        ImageGrid(np.array([[1.5]]))
    with pytest.raises(ShapeError):
        ImageGrid(np.zeros(4))
    assert ImageGrid(np.full((1, 1), 255.0), dynamic_range=255.0).height == 1


def test_pairwise_examples(rng):
    same = [ImageGrid(np.full((2, 2), 0.3) + np.eye(2) * 0.1)] * 3
    rep = pairwise_ssim(same)
    assert rep.mean_pairwise_ssim == pytest.approx(1.0, abs=1e-12) and rep.std_pairwise_ssim == 0.0
    a, b = ImageGrid(rng.random((3, 3))), ImageGrid(rng.random((3, 3)))
    two = pairwise_ssim([a, b])
    assert two.mean_pairwise_ssim == ssim(a, b) and two.std_pairwise_ssim == 0.0
    with pytest.raises(ValueError):
        pairwise_ssim([a])


def test_pairwise_four_planted_samples():
    raw = [
        [[0.0, 0.5], [1.0, 0.5]],
        [[0.1, 0.4], [0.9, 0.6]],
        [[1.0, 0.0], [0.0, 1.0]],
        [[0.2, 0.2], [0.2, 0.8]],
    ]
    values = [ssim_loops(p, q) for p, q in itertools.combinations(raw, 2)]
    assert len(values) == 6
    rep = pairwise_ssim([ImageGrid(np.array(r)) for r in raw])
    assert rep.n_samples == 4
    assert rep.mean_pairwise_ssim == pytest.approx(sum(values) / 6, abs=1e-12)
    assert rep.std_pairwise_ssim == pytest.approx(np.std(values), abs=1e-12)


def test_nullity_gain_examples(rng):
    w0 = rng.standard_normal((5, 4))
    assert nullity_gain(w0, w0) == 0
    assert nullity_gain(np.eye(3), np.diag([0.0, 1.0, 1.0])) == 1
    for _ in range(100):
        w0 = rng.standard_normal((16, 12))
        q = np.linalg.qr(w0 @ rng.standard_normal((12, 3)))[0]
        assert nullity_gain(w0, reduce_weight(w0, q)) == 3
    with pytest.raises(ShapeError):
        nullity_gain(np.eye(2), np.eye(3))


def test_grid_shape_and_render():
    assert grid_shape(16) == (4, 4)
    assert grid_shape(10) == (3, 4)
    grids = render_outputs(np.array([[0.0, 2.0], [1.0, 4.0], [4.0, 3.0]]))
    assert grids[0].pixels.shape == (1, 3)
    np.testing.assert_allclose(grids[0].pixels, [[0.0, 0.25, 1.0]])
    np.testing.assert_allclose(grids[1].pixels, [[0.5, 1.0, 0.75]])


def _single_layer(rng, d=16):
    w0 = rng.standard_normal((d, d)) / math.sqrt(d)
    q = np.linalg.qr(rng.standard_normal((d, 4)))[0]
    return ToyModel((Layer("layer0", w0),)), AdapterBundle("para", (ParaAdapter("layer0", q, 4),))


def test_kernel_noise_gives_identical_outputs(rng):
    model, bundle = _single_layer(rng)
    w = reduce_weight(model.layer("layer0").w0, bundle.get("layer0").b)
    kernel = null_space_basis(w, 1e-9 * 16 * np.linalg.norm(model.layer("layer0").w0, 2))
    assert kernel.shape[1] == 4
    x = rng.standard_normal(16)
    rep = stability_probe(model, bundle, x, 6, 1.0, seed=3, directions=kernel[:, :1])
    assert rep.mean_pairwise_ssim == pytest.approx(1.0, abs=1e-9)
    assert rep.nullity_gain == 4
    assert rep.kernel_max_change <= 1e-9


def test_rank_zero_adapter_matches_base(rng):
    model, _ = _single_layer(rng)
    x = rng.standard_normal(16)
    ident = AdapterBundle("para", (ParaAdapter("layer0", np.zeros((16, 1)), 1, identity=True),))
    a = stability_probe(model, ident, x, 5, 0.5, seed=9)
    b = stability_probe(model, None, x, 5, 0.5, seed=9)
    assert a.mean_pairwise_ssim == b.mean_pairwise_ssim and a.std_pairwise_ssim == b.std_pairwise_ssim


@given(seed=st.integers(0, 2**32 - 1))
def test_kernel_perturbation_invariance(seed):
    rng = np.random.default_rng(seed)
    w0 = rng.standard_normal((10, 8))
    q = np.linalg.qr(w0 @ rng.standard_normal((8, 3)))[0]
    w = reduce_weight(w0, q)
    kernel = null_space_basis(w, 1e-9 * 10 * np.linalg.norm(w0, 2))
    x = rng.standard_normal((8, 1))
    dx = kernel @ rng.standard_normal((kernel.shape[1], 1)) * 10
    assert np.linalg.norm(w @ dx) <= 1e-12 * 10 * max(1.0, np.linalg.norm(dx))
    assert np.max(np.abs(w @ (x + dx) - w @ x)) <= 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_diversity_monotone_in_rank(seed):
    model, x = diversity_model(seed)
    ladder = concept_preserving_ladder(model.layer("layer0").w0, x, (0, 2, 4, 8))
    means = [
        stability_probe(model, AdapterBundle("para", (ladder[r],)), x, 16, 1.0, seed).mean_pairwise_ssim
        for r in (0, 2, 4, 8)
    ]
    assert all(a <= b for a, b in zip(means, means[1:])), means


def test_ladder_keeps_clean_output(rng):
    model, x = diversity_model(11)
    w0 = model.layer("layer0").w0
    ladder = concept_preserving_ladder(w0, x, (0, 3))
    assert ladder[0].identity
    q = ladder[3].b
    np.testing.assert_allclose(reduce_weight(w0, q) @ x, w0 @ x, atol=1e-12)


def test_probe_validation(rng):
    model, bundle = _single_layer(rng)
    with pytest.raises(ValueError):
        stability_probe(model, bundle, np.zeros(16), 1, 1.0, 0)
    with pytest.raises(ValueError):
        stability_probe(model, bundle, np.zeros(16), 4, 0.0, 0)
    with pytest.raises(NonConforming):
        stability_probe(model, bundle, np.zeros(15), 4, 1.0, 0)
