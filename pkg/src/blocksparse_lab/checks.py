"""Named invariant checks run by ``verify``.

Each check returns a dict with ``name``, ``passed`` and the measured values,
so a failure report says what was measured and against which threshold.
Library functions are looked up as module globals here, which lets a test
swap one out and confirm the matching check goes red.
"""

from __future__ import annotations

import logging
import math
import statistics
import time

import numpy as np

from .attention import (LayerParams, attention_density, dense_attention, logit_variance_direct,
                        logit_variance_trace, logits, project)
from .config import RunConfig
from .metrics import induced_budget, psnr, recall_at_budget, reference_pairs
from .numerics import normal_quantile, softmax_rows
from .partitioning import cocluster, nmi
from .profiling import CalibrationSet, collect_densities, fit_schedule
from .selection import block_recall, build_mask, coarse_estimate, sparse_attention
from .synth import gen_layer, gen_stack, gen_tokens, mix, perturb, random_tokens

log = logging.getLogger(__name__)

TRACE_REL_TOL = 1e-9
EXACT_TOL = 1e-12
SCALING_MAX_RATIO = 0.5
HETEROGENEITY_MIN_RATIO = 5.0
RECALL_MIN_WINS = 8
RHO_GRID = (0.25, 0.5, 0.75, 1.0)
REUSE_EPSILONS = (0.01, 0.1, 1.0)


def _random_layer(rng: np.random.Generator, d: int, d_prime: int) -> LayerParams:
    return LayerParams(0, 0, rng.standard_normal((d, d_prime)) / math.sqrt(d),
                       rng.standard_normal((d, d_prime)) / math.sqrt(d))


def trace_identity_gap(count: int = 50, ns=(16, 64, 256), d: int = 32, d_prime: int = 16,
                       seed: int = 0) -> list[float]:
    rng = np.random.default_rng(seed)
    gaps = []
    for i in range(count):
        n = ns[i % len(ns)]
        layer = _random_layer(rng, d, d_prime)
        x = random_tokens(n, d, int(rng.integers(2**63)), r_bound=1.0)
        direct = logit_variance_direct(logits(*project(x, layer), d_prime))
        closed = logit_variance_trace(x, layer)
        gaps.append(abs(direct - closed) / max(direct, 1e-12))
    return gaps


def check_trace_identity(config: RunConfig) -> dict:
    gaps = trace_identity_gap()
    worst = max(gaps)
    return {"name": "trace_identity", "passed": worst <= TRACE_REL_TOL,
            "max_rel_diff": worst, "threshold": TRACE_REL_TOL, "pairs": len(gaps)}


def stability_medians(config: RunConfig, ns=(128, 2048), pairs: int = 20,
                      layer_scale: float = 2.0) -> dict[int, float]:
    """Median |V(X) - V(X')| over independent input pairs, per token count."""
    base = config.synth.replace(r_bound=1.0, layers=1, heads_per_layer=1,
                                layer_scales=(layer_scale,))
    layer = gen_layer(base, 0, 0)
    out = {}
    for n in ns:
        spec = base.replace(n=n)
        diffs = []
        for i in range(pairs):
            v = [logit_variance_direct(logits(*project(gen_tokens(spec, mix(n, i, side)), layer),
                                              layer.d_prime)) for side in (0, 1)]
            diffs.append(abs(v[0] - v[1]))
        out[n] = statistics.median(diffs)
    return out


def check_stability_scaling(config: RunConfig) -> dict:
    med = stability_medians(config)
    ratio = med[2048] / med[128]
    return {"name": "stability_scaling", "passed": ratio <= SCALING_MAX_RATIO,
            "median_small_n": med[128], "median_large_n": med[2048], "ratio": ratio,
            "threshold": SCALING_MAX_RATIO}


def heterogeneity_stats(config: RunConfig, scales=(0.5, 1.0, 2.0, 4.0), n: int = 256,
                        inputs: int = 10, tau: float = 0.8) -> dict:
    spec = config.synth.replace(n=n, layers=len(scales), layer_scales=tuple(scales))
    cal = CalibrationSet(tuple(gen_tokens(spec, mix(spec.master_seed, 0xCA1, k))
                               for k in range(inputs)))
    samples = collect_densities(gen_stack(spec), cal, tau)
    per_layer = []
    within_std = []
    for l in range(spec.layers):
        cells = np.array([samples[l, h] for h in range(spec.heads_per_layer)])
        per_layer.append(cells.mean(axis=0))  # head-averaged density per input
        within_std.extend(cells.std(axis=1))
    means = [float(p.mean()) for p in per_layer]
    medians = [float(np.median(p)) for p in per_layer]
    return {"layer_scales": list(scales), "mean_density": means, "median_density": medians,
            "between_layer_range": max(means) - min(means),
            "mean_within_std": float(np.mean(within_std))}


def check_heterogeneity(config: RunConfig) -> dict:
    st = heterogeneity_stats(config)
    ratio = st["between_layer_range"] / max(st["mean_within_std"], 1e-300)
    med = st["median_density"]
    ordered = all(a > b for a, b in zip(med, med[1:]))
    return {"name": "heterogeneity", "passed": ratio >= HETEROGENEITY_MIN_RATIO and ordered,
            "range_over_std": ratio, "threshold": HETEROGENEITY_MIN_RATIO,
            "strictly_ordered": ordered, **st}


def exactness_errors(config: RunConfig, ns=(8, 64, 256), seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    out = []
    for n in ns:
        q, k, v = (rng.standard_normal((n, 16)) for _ in range(3))
        res = cocluster(q, k, min(config.k_q, n), min(config.k_k, n), config.i_max, seed)
        mask = build_mask(coarse_estimate(res, 16), 1.0)
        sparse = sparse_attention(q, k, v, res, mask)
        dense = dense_attention(q, k, v)
        out.append({"n": n, "max_abs_err": float(np.abs(sparse - dense).max()),
                    "psnr_db": psnr(dense, sparse).to_json()["psnr_db"]})
    return out


def check_exactness(config: RunConfig) -> dict:
    rows = exactness_errors(config)
    ok = all(r["max_abs_err"] <= EXACT_TOL and r["psnr_db"] == "inf" for r in rows)
    return {"name": "exactness", "passed": ok, "threshold": EXACT_TOL, "cases": rows}


def _is_nondecreasing(xs) -> bool:
    return all(b >= a for a, b in zip(xs, xs[1:]))


def frobenius_medians(config: RunConfig, seeds=range(10), layer_scale: float = 4.0) -> list[float]:
    errs = {rho: [] for rho in RHO_GRID}
    for s in seeds:
        spec = config.synth.replace(layers=1, heads_per_layer=1, layer_scales=(layer_scale,),
                                    master_seed=s)
        layer = gen_layer(spec, 0, 0)
        x = gen_tokens(spec, s)
        q, k = project(x, layer)
        res = cocluster(q, k, config.k_q, config.k_k, config.i_max, s)
        est = coarse_estimate(res, layer.d_prime)
        dense = dense_attention(q, k, x)
        for rho in RHO_GRID:
            errs[rho].append(float(np.linalg.norm(sparse_attention(q, k, x, res, build_mask(est, rho)) - dense)))
    return [statistics.median(errs[rho]) for rho in RHO_GRID]


def check_monotonicity(config: RunConfig) -> dict:
    spec = config.synth.replace(layers=1, heads_per_layer=1, layer_scales=(2.0,))
    layer = gen_layer(spec, 0, 0)
    x = gen_tokens(spec, 1)
    q, k = project(x, layer)
    a = softmax_rows(logits(q, k, layer.d_prime))
    taus = np.linspace(0.05, 1.0, 20)
    dens = [attention_density(a, t) for t in taus]
    res = cocluster(q, k, config.k_q, config.k_k, config.i_max, 1)
    est = coarse_estimate(res, layer.d_prime)
    recs = [block_recall(est, t) for t in taus]
    rhos = np.linspace(1.0 / config.k_k, 1.0, 12)
    masks = [build_mask(est, r).as_bool() for r in rhos]
    nested = all(np.all(m0 <= m1) for m0, m1 in zip(masks, masks[1:]))
    ref = reference_pairs(a, 0.5)
    total = config.k_q * config.k_k
    budgets = sorted({1, 2, total // 4, total // 2, induced_budget(ref, res), total})
    cover = [recall_at_budget(a, ref, res, est, b).covered_fraction for b in budgets]
    fro = frobenius_medians(config)
    parts = {
        "density_in_tau": _is_nondecreasing(dens),
        "block_recall_in_tau": _is_nondecreasing(recs),
        "mask_nested_in_rho": bool(nested),
        "recall_in_budget": _is_nondecreasing(cover),
        "median_frobenius_in_rho": all(b <= a_ for a_, b in zip(fro, fro[1:])),
    }
    return {"name": "monotonicity", "passed": all(parts.values()), **parts,
            "frobenius_medians": fro, "rho_grid": list(RHO_GRID)}


def check_schedule_arithmetic(config: RunConfig) -> dict:
    z = normal_quantile(0.95)
    sched = fit_schedule({(0, 0): [0.2, 0.4]}, alpha=0.95, tau=config.tau)
    s = sched.entries[0].sparsity
    ok = abs(z - 1.64485363) <= 1e-8 and abs(s - 0.535515) <= 1e-6
    return {"name": "schedule_arithmetic", "passed": ok, "z_0.95": z, "sparsity": s,
            "expected_sparsity": 0.535515}


def check_matched_recall(config: RunConfig) -> dict:
    from .pipeline import run_bench_recall
    rows = run_bench_recall(config)
    by_seed: dict[int, dict] = {}
    for r in rows:
        by_seed.setdefault(r["seed"], {})[r["method"]] = r["covered_fraction"]
    wins = sum(v["cocluster"] >= v["kmeans"] for v in by_seed.values())
    need = math.ceil(RECALL_MIN_WINS * len(by_seed) / 10)
    return {"name": "matched_recall", "passed": wins >= need, "wins": wins,
            "seeds": len(by_seed), "required_wins": need, "per_seed": by_seed}


def reuse_nmi_study(config: RunConfig, epsilons=REUSE_EPSILONS, seeds=range(10),
                    layer_scale: float = 4.0) -> dict:
    """Median NMI between clusterings before and after a perturbation of the tokens."""
    per_eps = {e: [] for e in epsilons}
    baseline = []
    for s in seeds:
        spec = config.synth.replace(layers=1, heads_per_layer=1, layer_scales=(layer_scale,),
                                    master_seed=s)
        layer = gen_layer(spec, 0, 0)
        x = gen_tokens(spec, s)
        r0 = cocluster(*project(x, layer), config.k_q, config.k_k, config.i_max, s)
        lq, lk = r0.query_partition.labels, r0.key_partition.labels
        for e in epsilons:
            xp = perturb(x, e, mix(s, 0xE9), spec.r_bound)
            r1 = cocluster(*project(xp, layer), config.k_q, config.k_k, config.i_max, s)
            per_eps[e].append((nmi(lq, r1.query_partition.labels)
                               + nmi(lk, r1.key_partition.labels)) / 2)
        rng = np.random.default_rng(mix(s, 0xBA5E))
        baseline.append((nmi(lq, rng.permutation(lq)) + nmi(lk, rng.permutation(lk))) / 2)
    return {"median_nmi": {str(e): statistics.median(v) for e, v in per_eps.items()},
            "median_baseline_nmi": statistics.median(baseline)}


def check_reuse_nmi(config: RunConfig) -> dict:
    st = reuse_nmi_study(config)
    med = [st["median_nmi"][str(e)] for e in REUSE_EPSILONS]
    above = med[0] > st["median_baseline_nmi"]
    monotone = all(b <= a for a, b in zip(med, med[1:]))
    return {"name": "reuse_nmi", "passed": above and monotone, "above_baseline": above,
            "nonincreasing": monotone, **st}


def check_determinism(config: RunConfig) -> dict:
    from dataclasses import replace
    from .io import dumps
    from .pipeline import run_pipeline
    small = replace(config, steps=3, reuse_interval=2)
    a = dumps(run_pipeline(small))
    b = dumps(run_pipeline(small))
    return {"name": "determinism", "passed": a == b, "report_bytes": len(a)}


CHECKS = (
    check_trace_identity,
    check_stability_scaling,
    check_heterogeneity,
    check_exactness,
    check_monotonicity,
    check_schedule_arithmetic,
    check_matched_recall,
    check_reuse_nmi,
    check_determinism,
)


def run_checks(config: RunConfig, only=None) -> list[dict]:
    out = []
    for fn in CHECKS:
        name = fn.__name__.removeprefix("check_")
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            res = fn(config)
        except Exception as exc:  # a crashing check is a failing check
            res = {"name": name, "passed": False, "error": f"{type(exc).__name__}: {exc}"}
        log.info("%s: %s (%.2fs)", name, "pass" if res["passed"] else "FAIL",
                 time.perf_counter() - t0)
        out.append(res)
    return out
