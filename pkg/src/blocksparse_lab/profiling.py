"""Offline layer-wise sparsity profiling.

Each calibration input is pushed through every (layer, head); the attention
density of the resulting map is one sample. A Gaussian fitted to the samples
of a cell gives a conservative keep ratio ``d_hat = mean + z_alpha * std``
(capped at 1) and the cell's sparsity ``s = 1 - d_hat``.
"""

from __future__ import annotations

import json
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .attention import LayerParams, attention_density, logits, project
from .errors import ShapeError
from .numerics import as_matrix, gaussian_fit, normal_quantile, softmax_rows

DEFAULT_TAU = 0.95
DEFAULT_ALPHA = 0.95
DEFAULT_CALIBRATION_COUNT = 10

CellKey = tuple[int, int]


@dataclass(frozen=True)
class CalibrationSet:
    inputs: tuple[np.ndarray, ...]
    seed: int | None = None

    def __post_init__(self):
        inputs = tuple(as_matrix(x, "calibration input") for x in self.inputs)
        if not inputs:
            raise ValueError("a calibration set needs at least one input")
        dims = {x.shape[1] for x in inputs}
        if len(dims) != 1:
            raise ShapeError(f"calibration inputs disagree on d: {sorted(dims)}")
        object.__setattr__(self, "inputs", inputs)

    @property
    def d(self) -> int:
        return self.inputs[0].shape[1]


@dataclass(frozen=True)
class ScheduleEntry:
    layer_id: int
    head_id: int
    mean: float
    std: float
    d_hat: float
    sparsity: float
    sample_count: int

    def to_json(self) -> dict:
        return {"layer": self.layer_id, "head": self.head_id, "mean": self.mean,
                "std": self.std, "d_hat": self.d_hat, "sparsity": self.sparsity,
                "samples": self.sample_count}

    @classmethod
    def from_json(cls, d: dict) -> "ScheduleEntry":
        return cls(int(d["layer"]), int(d["head"]), float(d["mean"]), float(d["std"]),
                   float(d["d_hat"]), float(d["sparsity"]), int(d["samples"]))


@dataclass(frozen=True)
class SparsitySchedule:
    tau: float
    alpha: float
    entries: tuple[ScheduleEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        entries = tuple(sorted(self.entries, key=lambda e: (e.layer_id, e.head_id)))
        keys = [(e.layer_id, e.head_id) for e in entries]
        if len(set(keys)) != len(keys):
            raise ValueError("schedule has duplicate (layer, head) entries")
        object.__setattr__(self, "entries", entries)

    def entry(self, layer_id: int, head_id: int) -> ScheduleEntry:
        for e in self.entries:
            if e.layer_id == layer_id and e.head_id == head_id:
                return e
        raise KeyError((layer_id, head_id))

    def to_json(self) -> dict:
        return {"tau": self.tau, "alpha": self.alpha,
                "std_convention": "population (1/m)",
                "entries": [e.to_json() for e in self.entries]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, d: dict) -> "SparsitySchedule":
        return cls(float(d["tau"]), float(d["alpha"]),
                   tuple(ScheduleEntry.from_json(e) for e in d["entries"]))


def _check_probability(name: str, p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {p}")


def cell_density(layer: LayerParams, x: np.ndarray, tau: float) -> float:
    q, k = project(x, layer)
    return attention_density(softmax_rows(logits(q, k, layer.d_prime)), tau)


def _cell_samples(args) -> list[float]:
    layer, inputs, tau = args
    return [cell_density(layer, x, tau) for x in inputs]


def collect_densities(stack: Sequence[LayerParams], cal: CalibrationSet, tau: float = DEFAULT_TAU,
                      executor: Executor | None = None) -> dict[CellKey, list[float]]:
    """One density sample per (layer, head, calibration input).

    With an ``executor`` the cells are evaluated concurrently; the result is
    assembled in stack order either way.
    """
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    for layer in stack:
        if layer.d != cal.d:
            raise ShapeError(
                f"layer ({layer.layer_id}, {layer.head_id}) has d={layer.d}, inputs have d={cal.d}")
    jobs = [(layer, cal.inputs, tau) for layer in stack]
    results = list(executor.map(_cell_samples, jobs)) if executor else [_cell_samples(j) for j in jobs]
    out: dict[CellKey, list[float]] = {}
    for layer, samples in zip(stack, results):
        key = (layer.layer_id, layer.head_id)
        if key in out:
            raise ValueError(f"duplicate cell {key} in stack")
        out[key] = samples
    return out


def fit_entry(layer_id: int, head_id: int, samples: Sequence[float], alpha: float) -> ScheduleEntry:
    fit = gaussian_fit(samples)
    d_hat = min(1.0, fit.mean + normal_quantile(alpha) * fit.std)
    return ScheduleEntry(layer_id, head_id, fit.mean, fit.std, d_hat, 1.0 - d_hat, fit.sample_count)


def fit_schedule(samples: Mapping[CellKey, Sequence[float]], alpha: float = DEFAULT_ALPHA,
                 tau: float = DEFAULT_TAU) -> SparsitySchedule:
    _check_probability("alpha", alpha)
    _check_probability("tau", tau)
    entries = []
    for (layer_id, head_id), xs in sorted(samples.items()):
        if len(xs) == 0:
            raise ValueError(f"cell ({layer_id}, {head_id}) has no samples")
        entries.append(fit_entry(layer_id, head_id, xs, alpha))
    return SparsitySchedule(tau, alpha, tuple(entries))


def profile(stack: Sequence[LayerParams], cal: CalibrationSet, tau: float = DEFAULT_TAU,
            alpha: float = DEFAULT_ALPHA, executor: Executor | None = None) -> SparsitySchedule:
    return fit_schedule(collect_densities(stack, cal, tau, executor), alpha, tau)
