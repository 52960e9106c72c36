"""End-to-end commands: generate, profile, run the two-stage pipeline, bench recall.

Every command is a pure function of its ``RunConfig``; seeds come from the
config, never from ambient state. Work is fanned out per (layer, head) cell
and reassembled in cell order, so outputs do not depend on ``workers``.
"""

from __future__ import annotations

import csv
import io as _io
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .attention import LayerParams, dense_attention, logits, project
from .config import RunConfig
from .metrics import induced_budget, psnr, recall_at_budget, reference_pairs
from .numerics import softmax_rows
from .partitioning import CoClusterResult, Partition, block_means, cocluster, kmeans_pair
from .profiling import CalibrationSet, SparsitySchedule, profile
from .selection import block_recall, build_mask, coarse_estimate, select_rho, sparse_attention
from .synth import (STREAM_PIPELINE, calibration_seeds, cell_seed, gen_layer, gen_stack,
                    gen_tokens, mix, perturb)

log = logging.getLogger(__name__)

DRIFT_NOTE = ("simulated proxy: step-to-step drift is Gaussian perturbation of the tokens "
              "(scale epsilon per step, re-projected into the R-ball), not a denoising trajectory")


@contextmanager
def _pool(workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            yield ex
    else:
        yield None


def _map(executor, fn, items):
    return list(executor.map(fn, items)) if executor else [fn(i) for i in items]


def portable_config(config: RunConfig) -> dict:
    """Config as recorded in outputs: where and how parallel a run was is not content."""
    d = config.to_dict()
    d.pop("workers")
    d.pop("output_dir")
    return d


def _out(config: RunConfig) -> Path:
    root = Path(config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    return root


# --------------------------------------------------------------------- gen

def cmd_gen(config: RunConfig) -> Path:
    """Write stack weights and calibration inputs; returns the manifest path."""
    root = _out(config)
    spec = config.synth
    manifest = io.Manifest(root)
    io.write_json(root / "config.json", portable_config(config))
    manifest.add(root / "config.json", "config")
    for layer in gen_stack(spec):
        l, h = layer.layer_id, layer.head_id
        seed = cell_seed(spec.master_seed, l, h)
        for which, w in (("wq", layer.w_q), ("wk", layer.w_k)):
            p = io.write_matrix(root / "stack" / f"layer{l:03d}_head{h:03d}_{which}.svom", w)
            manifest.add(p, f"weight_{which}", layer=l, head=h, seed=seed)
    for k, seed in enumerate(calibration_seeds(spec, config.calibration_count)):
        p = io.write_matrix(root / "calibration" / f"input{k:03d}.svom", gen_tokens(spec, seed))
        manifest.add(p, "calibration", index=k, seed=seed)
    return manifest.save()


# ----------------------------------------------------------------- profile

def load_stack(root: Path, manifest: io.Manifest) -> list[LayerParams]:
    wq = {(e["layer"], e["head"]): e for e in manifest.of_kind("weight_wq")}
    wk = {(e["layer"], e["head"]): e for e in manifest.of_kind("weight_wk")}
    if not wq or set(wq) != set(wk):
        raise FileNotFoundError(f"{root / io.Manifest.FILENAME}: stack weights missing or unpaired")
    return [LayerParams(l, h, io.read_matrix(root / wq[l, h]["path"]),
                        io.read_matrix(root / wk[l, h]["path"]))
            for (l, h) in sorted(wq)]


def load_calibration(root: Path, manifest: io.Manifest) -> CalibrationSet:
    entries = sorted(manifest.of_kind("calibration"), key=lambda e: e["index"])
    if not entries:
        raise FileNotFoundError(f"{root / io.Manifest.FILENAME}: no calibration inputs listed")
    return CalibrationSet(tuple(io.read_matrix(root / e["path"]) for e in entries))


def cmd_profile(config: RunConfig) -> Path:
    root = _out(config)
    if not (root / io.Manifest.FILENAME).exists():
        raise FileNotFoundError(f"{root / io.Manifest.FILENAME} not found; run `gen` first")
    manifest = io.Manifest(root)
    stack = load_stack(root, manifest)
    cal = load_calibration(root, manifest)
    with _pool(config.workers) as ex:
        schedule = profile(stack, cal, config.tau, config.alpha, executor=ex)
    path = io.write_json(root / "schedule.json", schedule.to_json())
    manifest.add(path, "schedule")
    manifest.save()
    return path


def inline_schedule(config: RunConfig) -> SparsitySchedule:
    spec = config.synth
    cal = CalibrationSet(tuple(gen_tokens(spec, s)
                               for s in calibration_seeds(spec, config.calibration_count)))
    return profile(gen_stack(spec), cal, config.tau, config.alpha)


# ---------------------------------------------------------------- pipeline

def step_tokens(config: RunConfig) -> list[np.ndarray]:
    """Token matrices for every simulated step; shared by all cells."""
    spec = config.synth
    x = gen_tokens(spec, mix(spec.master_seed, STREAM_PIPELINE))
    out = [x]
    for t in range(1, config.steps):
        x = perturb(x, config.epsilon, mix(spec.master_seed, STREAM_PIPELINE, t), spec.r_bound)
        out.append(x)
    return out


def reuse_partitions(prev: CoClusterResult, q: np.ndarray, k: np.ndarray) -> CoClusterResult:
    """Keep the previous block labels; refresh centroids from the current tokens."""
    qp, kp = prev.query_partition, prev.key_partition
    return CoClusterResult(
        Partition(qp.labels, block_means(q, qp.labels, qp.k, qp.centroids), qp.k),
        Partition(kp.labels, block_means(k, kp.labels, kp.k, kp.centroids), kp.k),
        0, prev.seed)


@dataclass(frozen=True)
class _CellJob:
    config: RunConfig
    layer: int
    head: int
    entry: object
    xs: tuple


def _run_cell(job: _CellJob) -> list[dict]:
    cfg = job.config
    layer = gen_layer(cfg.synth, job.layer, job.head)
    records = []
    result = None
    for t, x in enumerate(job.xs):
        q, k = project(x, layer)
        v = x
        reclustered = result is None or t % cfg.reuse_interval == 0
        if reclustered:
            seed = mix(cell_seed(cfg.synth.master_seed, job.layer, job.head), t)
            result = cocluster(q, k, cfg.k_q, cfg.k_k, cfg.i_max, seed)
        else:
            result = reuse_partitions(result, q, k)
        est = coarse_estimate(result, layer.d_prime)
        recall = block_recall(est, cfg.tau)
        decision = select_rho(recall, job.entry, cfg.theta, cfg.rho_semantics, cfg.k_k)
        if cfg.rho_override is not None:
            rho, source = cfg.rho_override, "override"
        elif job.layer in cfg.dense_layers:
            rho, source = 1.0, "dense-layer"
        else:
            rho, source = decision.rho, "rule"
        mask = build_mask(est, rho)
        sparse = sparse_attention(q, k, v, result, mask)
        quality = psnr(dense_attention(q, k, v), sparse)
        kept = float(mask.as_bool()[result.query_partition.labels][:, result.key_partition.labels].mean())
        records.append({
            "layer": job.layer, "head": job.head, "step": t,
            "reclustered": reclustered,
            "recall_ratio": recall, "budget": decision.budget, "rule_rho": decision.rho,
            "rho": rho, "rho_source": source, "kept_pair_fraction": kept,
            **quality.to_json(),
        })
    return records


def _median(values):
    return statistics.median(values) if values else None


def _json_num(v):
    return "inf" if isinstance(v, float) and v == float("inf") else v


def run_pipeline(config: RunConfig, schedule: SparsitySchedule | None = None,
                 schedule_source: str = "inline") -> dict:
    if schedule is None:
        schedule = inline_schedule(config)
    xs = tuple(step_tokens(config))
    jobs = [_CellJob(config, l, h, schedule.entry(l, h), xs)
            for l in range(config.synth.layers) for h in range(config.synth.heads_per_layer)]
    with _pool(config.workers) as ex:
        per_cell = _map(ex, _run_cell, jobs)
    cells = [r for rs in per_cell for r in rs]
    psnrs = [float("inf") if r["psnr_db"] == "inf" else r["psnr_db"] for r in cells]
    return {
        "config": portable_config(config),
        "drift_model": DRIFT_NOTE,
        "schedule_source": schedule_source,
        "schedule": schedule.to_json(),
        "cells": cells,
        "aggregate": {
            "cells": len(cells),
            "reclustered_steps": sum(r["reclustered"] for r in cells),
            "median_psnr_db": _json_num(_median(psnrs)),
            "median_rel_fro_err": _median([r["rel_fro_err"] for r in cells]),
            "median_rho": _median([r["rho"] for r in cells]),
            "median_recall_ratio": _median([r["recall_ratio"] for r in cells]),
            "mean_kept_pair_fraction": float(np.mean([r["kept_pair_fraction"] for r in cells])),
        },
    }


def cmd_pipeline(config: RunConfig) -> Path:
    root = _out(config)
    sched_path = root / "schedule.json"
    if sched_path.exists():
        schedule = SparsitySchedule.from_json(io.read_json(sched_path))
        source = "schedule.json"
    else:
        schedule, source = None, "inline"
    report = run_pipeline(config, schedule, source)
    path = io.write_json(root / "report.json", report)
    manifest = io.Manifest(root)
    manifest.add(path, "report")
    manifest.save()
    return path


# ------------------------------------------------------------ bench recall

RECALL_FIELDS = ("seed", "method", "budget", "covered_fraction", "k_q", "k_k")


def recall_for_seed(config: RunConfig, seed: int) -> list[dict]:
    """Co-clustering vs independent K-means at the K-means-induced block-pair budget."""
    bench = config.recall
    spec = bench.synth(config.synth, seed)
    layer = gen_layer(spec, 0, 0)
    x = gen_tokens(spec, seed)
    q, k = project(x, layer)
    a = softmax_rows(logits(q, k, layer.d_prime))
    ref = reference_pairs(a, bench.mass_fraction)
    partitions = {
        "cocluster": cocluster(q, k, bench.k_q, bench.k_k, config.i_max, seed),
        "kmeans": kmeans_pair(q, k, bench.k_q, bench.k_k, bench.kmeans_iters, seed),
    }
    budget = induced_budget(ref, partitions["kmeans"])
    rows = []
    for name, result in partitions.items():
        rep = recall_at_budget(a, ref, result, coarse_estimate(result, layer.d_prime), budget,
                               method_name=name, seed=seed)
        rows.append(rep.to_json())
    return [{"seed": r["seed"], **{f: r[f] for f in RECALL_FIELDS if f != "seed"}} for r in rows]


def run_bench_recall(config: RunConfig) -> list[dict]:
    with _pool(config.workers) as ex:
        per_seed = _map(ex, _bench_job, [(config, s) for s in config.recall.seeds])
    return [r for rows in per_seed for r in rows]


def _bench_job(args):
    return recall_for_seed(*args)


def recall_csv(rows: list[dict]) -> str:
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=RECALL_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "covered_fraction": repr(float(r["covered_fraction"]))})
    return buf.getvalue()


def cmd_bench_recall(config: RunConfig) -> Path:
    root = _out(config)
    rows = run_bench_recall(config)
    path = root / "recall.csv"
    path.write_text(recall_csv(rows))
    jpath = io.write_json(root / "recall.json", {"reports": rows})
    manifest = io.Manifest(root)
    manifest.add(path, "recall_csv")
    manifest.add(jpath, "recall_json")
    manifest.save()
    return path
