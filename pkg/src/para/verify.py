"""Randomized checks of the rank-reduction identities.

Each suite draws seeded instances, evaluates one identity per trial, and
returns a summary dict. ``run_all`` is what ``para verify`` prints.
"""
from __future__ import annotations

import time
from fractions import Fraction

import numpy as np

from para.adapter import (
    ConvShape,
    LoraAdapter,
    RankPolicy,
    flatten_kernel,
    rank_adjust,
    reduce_conv,
    reduce_weight,
    unflatten_kernel,
)
from para.combine import (
    combine_lora_then_para,
    combine_para_then_lora,
    merge_para_qr,
    merge_para_sequential,
    projectors_commute,
)
from para.linalg import column_space_basis, default_rank_tol, null_space_basis, numerical_rank, qr_thin
from para.metrics import nullity_gain
from para.synth import COMMUTING_FAMILIES, PAIR_FAMILIES, pair_instance, rank_instance

IDEMPOTENCE_TOL = 1e-12
EQUIVALENCE_TOL = 1e-9
ANNIHILATION_TOL = 1e-12
KERNEL_TOL = 1e-9
CONV_TOL = 1e-12


def _summary(name, outcomes, errors=None, **extra):
    outcomes = list(outcomes)
    out = {
        "suite": name,
        "trials": len(outcomes),
        "passed": int(sum(outcomes)),
        "failed": int(len(outcomes) - sum(outcomes)),
        "ok": bool(all(outcomes)),
    }
    if errors is not None:
        out["max_error"] = float(max(errors)) if errors else 0.0
    out.update(extra)
    return out


def rank_trials(trials, seed):
    """Yield ``(w0, q, base_rank, r, w_reduced)`` for the rank-theorem family."""
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        w0, q, base_rank, r = rank_instance(rng)
        yield w0, q, base_rank, r, reduce_weight(w0, q)


def suite_rank_theorem(trials, seed):
    outcomes, containment = [], []
    for w0, q, base_rank, r, w in rank_trials(trials, seed):
        tol = default_rank_tol(w0)
        ok = numerical_rank(w0) == base_rank and numerical_rank(w, tol) == base_rank - r
        basis = column_space_basis(w0)
        resid = w - basis @ (basis.T @ w)
        containment.append(float(np.linalg.norm(resid)))
        outcomes.append(ok and containment[-1] <= 1e-9)
    return _summary("rank_theorem", outcomes, containment)


def suite_idempotence(trials, seed):
    outcomes, errors = [], []
    for _, q, _, _, w in rank_trials(trials, seed):
        err = float(np.max(np.abs(reduce_weight(w, q) - w)))
        errors.append(err)
        outcomes.append(err <= IDEMPOTENCE_TOL)
    return _summary("idempotence", outcomes, errors)


def suite_nullity(trials, seed):
    outcomes = [nullity_gain(w0, w) == r for w0, _, _, r, w in rank_trials(trials, seed)]
    return _summary("nullity", outcomes)


def _pair_suite(name, families, trials, seed):
    rng = np.random.default_rng(seed)
    outcomes, errors, per_family = [], [], {f: [0, 0] for f in families}
    for t in range(trials):
        family = families[t % len(families)]
        w0, q1, q2 = pair_instance(rng, family)
        seq = merge_para_sequential(w0, q1, q2).w
        merged = merge_para_qr(w0, q1, q2)
        err = float(np.linalg.norm(seq - merged.w) / np.linalg.norm(w0))
        r1, r2 = q1.shape[1], q2.shape[1]
        in_bounds = max(r1, r2) <= merged.effective_rank_removed <= r1 + r2
        ok = err <= EQUIVALENCE_TOL and in_bounds
        errors.append(err)
        outcomes.append(ok)
        per_family[family][0] += int(ok)
        per_family[family][1] += 1
    by_family = {f: {"passed": p, "trials": n} for f, (p, n) in per_family.items()}
    return _summary(name, outcomes, errors, by_family=by_family)


def suite_sequential_merge(trials, seed):
    """Sequential vs merged-QR composition over all subspace-pair families."""
    return _pair_suite("sequential_merge", PAIR_FAMILIES, trials, seed)


def suite_sequential_merge_commuting(trials, seed):
    """Same comparison restricted to pairs whose projectors commute."""
    return _pair_suite("sequential_merge_commuting", COMMUTING_FAMILIES, trials, seed)


def annihilation_instance(rng, d=12, k=10, r=3):
    w0 = rng.standard_normal((d, k))
    b_up = rng.standard_normal((d, r))
    a_down = rng.standard_normal((r, k))
    return w0, b_up, a_down, qr_thin(b_up).q


def suite_annihilation(trials, seed, alphas=(0.0, 1.0, 5.0)):
    rng = np.random.default_rng(seed)
    outcomes, errors, spreads = [], [], []
    for _ in range(trials):
        w0, b_up, a_down, q = annihilation_instance(rng)
        after = [combine_lora_then_para(w0, q, LoraAdapter("l", b_up, a_down, a)).w for a in alphas]
        before = [combine_para_then_lora(w0, q, LoraAdapter("l", b_up, a_down, a)).w for a in alphas]
        err = max(float(np.max(np.abs(x - y))) for x in after for y in after)
        spread = max(float(np.linalg.norm(x - y)) for x in before for y in before)
        errors.append(err)
        spreads.append(spread)
        outcomes.append(err <= ANNIHILATION_TOL and spread > 1e-3)
    return _summary("annihilation", outcomes, errors, min_para_first_spread=float(min(spreads)))


def suite_rank_boundary(trials, seed):
    rng = np.random.default_rng(seed)
    table = [((4, Fraction(1, 40), 320), 4), ((16, Fraction(1, 40), 320), 8), ((1, Fraction(1, 40), 40), 1)]
    outcomes = [rank_adjust(RankPolicy(r, g), n) == want for (r, g, n), want in table]
    for _ in range(trials):
        r = int(rng.integers(1, 65))
        gamma = Fraction(int(rng.integers(1, 41)), 40)
        base = int(rng.integers(1, 1281))
        # direct re-evaluation in integer arithmetic: r <= g*n  <=>  r*den <= num*n
        num, den = gamma.numerator, gamma.denominator
        want = r if r * den <= num * base else (num * base) // den
        outcomes.append(rank_adjust(RankPolicy(r, gamma), base) == want)
    return _summary("rank_boundary", outcomes)


def suite_kernel_perturbation(trials, seed):
    rng = np.random.default_rng(seed)
    outcomes, errors = [], []
    for _ in range(trials):
        w0, q, _, _ = rank_instance(rng, max_d=24, max_k=24)
        w = reduce_weight(w0, q)
        kernel = null_space_basis(w, default_rank_tol(w0))
        x = rng.standard_normal((w.shape[1], 1))
        dx = kernel @ rng.standard_normal((kernel.shape[1], 4))
        err = float(np.max(np.abs(w @ (x + dx) - w @ x))) if kernel.shape[1] else 0.0
        errors.append(err)
        outcomes.append(err <= KERNEL_TOL)
    return _summary("kernel_perturbation", outcomes, errors)


def suite_out_of_space(trials, seed):
    """A Q column orthogonal to col(W0) changes nothing."""
    rng = np.random.default_rng(seed)
    outcomes, errors = [], []
    for _ in range(trials):
        d = int(rng.integers(6, 33))
        base_rank = int(rng.integers(2, d - 2))
        w0 = rng.standard_normal((d, base_rank)) @ rng.standard_normal((base_rank, d))
        col = column_space_basis(w0)
        inside = col @ np.linalg.qr(rng.standard_normal((col.shape[1], 1)))[0]
        outside = rng.standard_normal((d, 1))
        outside -= col @ (col.T @ outside)
        outside /= np.linalg.norm(outside)
        q = np.hstack([inside, outside])
        err = float(np.max(np.abs(reduce_weight(w0, q) - reduce_weight(w0, inside))))
        errors.append(err)
        outcomes.append(err <= 1e-10)
    return _summary("out_of_space", outcomes, errors)


def suite_conv(trials, seed):
    rng = np.random.default_rng(seed)
    outcomes, errors = [], []
    for _ in range(trials):
        shape = ConvShape(*(int(v) for v in rng.integers(1, 6, size=4)))
        c_out = shape.c_out
        kernel = rng.standard_normal(shape.as_tuple())
        r = int(rng.integers(1, c_out + 1))
        b = rng.standard_normal((c_out, r))
        direct = unflatten_kernel(reduce_weight(flatten_kernel(kernel), qr_thin(b).q), shape)
        err = float(np.max(np.abs(reduce_conv(kernel, b) - direct)))
        errors.append(err)
        outcomes.append(err <= CONV_TOL)
    return _summary("conv", outcomes, errors)


def suite_commuting_detector(trials, seed):
    """``projectors_commute`` predicts exactly when sequential == merged."""
    rng = np.random.default_rng(seed)
    outcomes = []
    for t in range(trials):
        family = (PAIR_FAMILIES + COMMUTING_FAMILIES)[t % (len(PAIR_FAMILIES) + len(COMMUTING_FAMILIES))]
        w0, q1, q2 = pair_instance(rng, family)
        seq = merge_para_sequential(w0, q1, q2).w
        merged = merge_para_qr(w0, q1, q2).w
        agree = np.linalg.norm(seq - merged) / np.linalg.norm(w0) <= EQUIVALENCE_TOL
        outcomes.append(bool(agree) == projectors_commute(q1, q2, atol=1e-8))
    return _summary("commuting_detector", outcomes)


SUITES = {
    "rank_theorem": suite_rank_theorem,
    "sequential_merge": suite_sequential_merge,
    "sequential_merge_commuting": suite_sequential_merge_commuting,
    "idempotence": suite_idempotence,
    "nullity": suite_nullity,
    "annihilation": suite_annihilation,
    "rank_boundary": suite_rank_boundary,
    "kernel_perturbation": suite_kernel_perturbation,
    "out_of_space": suite_out_of_space,
    "conv": suite_conv,
    "commuting_detector": suite_commuting_detector,
}


def run_all(trials=500, seed=0, skip=(), timings=False) -> dict:
    """Run every suite with ``trials`` instances each; deterministic per ``(trials, seed)``."""
    unknown = set(skip) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suites: {sorted(unknown)}")
    results = {}
    for i, (name, fn) in enumerate(SUITES.items()):
        if name in skip:
            continue
        start = time.perf_counter()
        res = fn(trials, seed + 1000 * i)
        if timings:
            res["seconds"] = round(time.perf_counter() - start, 3)
        results[name] = res
    return {
        "trials": trials,
        "seed": seed,
        "skipped": sorted(skip),
        "all_passed": all(r["ok"] for r in results.values()),
        "suites": results,
    }
