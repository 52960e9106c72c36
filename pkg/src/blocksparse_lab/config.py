"""Run configuration shared by every CLI command."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError
from .partitioning import DEFAULT_I_MAX
from .profiling import DEFAULT_ALPHA, DEFAULT_CALIBRATION_COUNT, DEFAULT_TAU
from .selection import DEFAULT_THETA, RhoSemantics
from .synth import SynthSpec


@dataclass(frozen=True)
class RecallBenchSpec:
    """Clustered setup for the co-clustering vs K-means recall comparison."""

    n: int = 512
    k_q: int = 8
    k_k: int = 8
    layer_scale: float = 4.0
    mass_fraction: float = 0.5
    kmeans_iters: int = 10
    seeds: tuple[int, ...] = tuple(range(10))

    def synth(self, base: SynthSpec, seed: int) -> SynthSpec:
        return base.replace(n=self.n, layers=1, heads_per_layer=1,
                            layer_scales=(self.layer_scale,), master_seed=seed)


@dataclass(frozen=True)
class RunConfig:
    tau: float = DEFAULT_TAU
    alpha: float = DEFAULT_ALPHA
    theta: float = DEFAULT_THETA
    k_q: int = 16
    k_k: int = 32
    i_max: int = DEFAULT_I_MAX
    reuse_interval: int = 20
    rho_semantics: str = RhoSemantics.AS_WRITTEN.value
    calibration_count: int = DEFAULT_CALIBRATION_COUNT
    steps: int = 40
    # per-step drift applied by perturb(); stands in for denoising-step change
    epsilon: float = 0.01
    dense_layers: tuple[int, ...] = ()
    rho_override: float | None = None
    workers: int = 1
    synth: SynthSpec = field(default_factory=SynthSpec)
    recall: RecallBenchSpec = field(default_factory=RecallBenchSpec)
    output_dir: str = "."

    def __post_init__(self):
        object.__setattr__(self, "dense_layers", tuple(int(v) for v in self.dense_layers))
        self.validate()

    def validate(self) -> None:
        for name in ("tau", "alpha", "theta"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.alpha < 0.5:
            raise ConfigError("alpha below 0.5 would shrink the conservative density estimate")
        for name in ("k_q", "k_k", "i_max", "reuse_interval", "calibration_count", "steps", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        try:
            RhoSemantics(self.rho_semantics)
        except ValueError:
            raise ConfigError(f"rho_semantics must be one of "
                              f"{[s.value for s in RhoSemantics]}") from None
        if self.k_q > self.synth.n or self.k_k > self.synth.n:
            raise ConfigError(f"k_q/k_k ({self.k_q}/{self.k_k}) exceed n={self.synth.n}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be nonnegative")
        if self.rho_override is not None and not 0.0 < self.rho_override <= 1.0:
            raise ConfigError("rho_override must lie in (0, 1]")
        r = self.recall
        if r.k_q > r.n or r.k_k > r.n or min(r.k_q, r.k_k, r.kmeans_iters) < 1:
            raise ConfigError("recall bench block counts must lie in [1, n]")
        if not 0.0 < r.mass_fraction <= 1.0:
            raise ConfigError("recall.mass_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["synth"] = self.synth.to_dict()
        d["dense_layers"] = list(self.dense_layers)
        d["recall"]["seeds"] = list(self.recall.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        try:
            if "synth" in d and isinstance(d["synth"], dict):
                d["synth"] = SynthSpec.from_dict(d["synth"])
            if "recall" in d and isinstance(d["recall"], dict):
                rd = dict(d["recall"])
                if "seeds" in rd:
                    rd["seeds"] = tuple(int(s) for s in rd["seeds"])
                d["recall"] = RecallBenchSpec(**rd)
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def merged(self, overrides: dict) -> "RunConfig":
        """Apply flat overrides; ``synth.<key>`` and ``recall.<key>`` reach nested specs."""
        top, synth, recall = {}, {}, {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key.startswith("synth."):
                synth[key[6:]] = value
            elif key.startswith("recall."):
                recall[key[7:]] = value
            else:
                top[key] = value
        try:
            cfg = self
            if synth:
                top["synth"] = self.synth.replace(**synth)
            if recall:
                top["recall"] = replace(self.recall, **recall)
            return replace(cfg, **top)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
