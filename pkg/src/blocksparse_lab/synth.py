"""Seeded synthetic layer stacks and token sets.

Tokens are drawn from a fixed mixture: cluster centers live on the sphere of
radius ``0.7 * r_bound`` and are a property of the distribution (seeded by
``master_seed``), while each input draws fresh noise from its own seed. Every
token is projected back into the ball of radius ``r_bound``.

Per-cell weights come from ``cell_seed(master_seed, layer, head)``, a
splitmix64-style mixer, so a cell's weights do not depend on the order in
which cells are generated.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .attention import LayerParams
from .errors import ConfigError
from .numerics import as_matrix

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Stream tags keep the different consumers of master_seed apart.
STREAM_CENTERS = 0xC3
STREAM_CALIBRATION = 0xCA
STREAM_PIPELINE = 0x91


def splitmix64(x: int) -> int:
    """One splitmix64 output for state ``x`` (increment by the golden gamma, then avalanche)."""
    z = (x + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def mix(*parts: int) -> int:
    """Fold integers into one 64-bit seed; order-sensitive, deterministic."""
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & _MASK64))
    return h


def cell_seed(master_seed: int, layer: int, head: int) -> int:
    return mix(master_seed, layer, head)


@dataclass(frozen=True)
class SynthSpec:
    n: int = 256
    d: int = 32
    d_prime: int = 16
    layers: int = 4
    heads_per_layer: int = 2
    r_bound: float = 4.0
    cluster_count: int = 8
    cluster_noise: float = 0.8
    layer_scales: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_scales", tuple(float(g) for g in self.layer_scales))
        self.validate()

    def validate(self) -> None:
        for name in ("n", "d", "d_prime", "layers", "heads_per_layer", "cluster_count"):
            if getattr(self, name) < 1:
                raise ConfigError(f"synth.{name} must be at least 1")
        if len(self.layer_scales) != self.layers:
            raise ConfigError(
                f"layer_scales has {len(self.layer_scales)} entries for {self.layers} layers")
        if any(g < 0 for g in self.layer_scales):
            raise ConfigError("layer_scales must be nonnegative")
        if not self.r_bound > 0:
            raise ConfigError("r_bound must be positive")
        if self.cluster_count > self.n:
            raise ConfigError("cluster_count cannot exceed n")
        if self.cluster_noise < 0:
            raise ConfigError("cluster_noise must be nonnegative")

    def replace(self, **changes) -> "SynthSpec":
        d = asdict(self)
        d.update(changes)
        if "layers" in changes and "layer_scales" not in changes:
            d["layer_scales"] = tuple(d["layer_scales"][: d["layers"]])
        return SynthSpec(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_scales"] = list(self.layer_scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


def gen_layer(spec: SynthSpec, layer: int, head: int) -> LayerParams:
    rng = np.random.default_rng(cell_seed(spec.master_seed, layer, head))
    scale = spec.layer_scales[layer] / math.sqrt(spec.d)
    w_q = rng.standard_normal((spec.d, spec.d_prime)) * scale
    w_k = rng.standard_normal((spec.d, spec.d_prime)) * scale
    return LayerParams(layer, head, w_q, w_k)


def gen_stack(spec: SynthSpec) -> list[LayerParams]:
    return [gen_layer(spec, l, h)
            for l in range(spec.layers) for h in range(spec.heads_per_layer)]


def cluster_centers(spec: SynthSpec) -> np.ndarray:
    rng = np.random.default_rng(mix(spec.master_seed, STREAM_CENTERS))
    c = rng.standard_normal((spec.cluster_count, spec.d))
    c /= np.linalg.norm(c, axis=1, keepdims=True)
    return 0.7 * spec.r_bound * c


def cluster_labels(spec: SynthSpec) -> np.ndarray:
    """Ground-truth round-robin cluster index of each token."""
    return np.arange(spec.n) % spec.cluster_count


def project_to_ball(x: np.ndarray, r_bound: float) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    scale = np.where(norms > r_bound, r_bound / np.where(norms > 0, norms, 1.0), 1.0)
    return x * scale


def gen_tokens(spec: SynthSpec, input_seed: int) -> np.ndarray:
    centers = cluster_centers(spec)
    rng = np.random.default_rng(mix(spec.master_seed, input_seed))
    x = centers[cluster_labels(spec)]
    if spec.cluster_noise > 0:
        x = x + spec.cluster_noise * rng.standard_normal((spec.n, spec.d))
    return project_to_ball(x, spec.r_bound)


def perturb(x, epsilon: float, seed: int, r_bound: float) -> np.ndarray:
    """Add seeded Gaussian noise of scale ``epsilon`` and re-project into the R-ball."""
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    x = as_matrix(x, "x")
    if epsilon == 0:
        return x.copy()
    rng = np.random.default_rng(seed)
    return project_to_ball(x + epsilon * rng.standard_normal(x.shape), r_bound)


def calibration_seeds(spec: SynthSpec, count: int) -> list[int]:
    return [mix(spec.master_seed, STREAM_CALIBRATION, k) for k in range(count)]


def random_tokens(n: int, d: int, seed: int, r_bound: float = 1.0) -> np.ndarray:
    """Uniform draws from the R-ball, used where no cluster structure is wanted."""
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    radii = r_bound * rng.uniform(size=(n, 1)) ** (1.0 / d)
    return g * radii
