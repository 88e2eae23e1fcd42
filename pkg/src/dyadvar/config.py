"""Run configuration shared by the CLI subcommands."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .vcnvard import GibbsConfig

ALL_MODELS = ("univariate", "panel", "nvard", "vcnvard")


@dataclass
class RunConfig:
    flows: str | None = None
    node_covariates: str | None = None
    dyad_covariates: str | None = None
    weights: str | None = None
    nodes: list[str] | None = None
    initial_period: str | None = None
    train_end: str | None = None
    test_period: str | None = None
    log_transform: bool = True
    log_covariates: list[str] | None = None  # None: every covariate when log_transform is on
    node_covariate_mode: str = "product"
    models: list[str] = field(default_factory=lambda: list(ALL_MODELS))
    varying: list[str] = field(default_factory=lambda: ["intercept", "distance"])
    chain_length: int = 300_000
    burn_in: int = 180_000
    thin: int = 10
    n_chains: int = 1
    scheme: str = "blocked"
    seed: int = 0
    outdir: str = "out"

    def __post_init__(self):
        for name in ("initial_period", "train_end", "test_period"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, str(v))
        if self.nodes is not None:
            self.nodes = [str(x) for x in self.nodes]
        unknown = set(self.models) - set(ALL_MODELS)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}; choose from {ALL_MODELS}")
        if self.node_covariate_mode not in ("product", "origin_dest"):
            raise ValueError("node_covariate_mode must be 'product' or 'origin_dest'")

    @property
    def gibbs(self) -> GibbsConfig:
        return GibbsConfig(self.chain_length, self.burn_in, self.thin, self.seed, self.n_chains, self.scheme)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | Path) -> dict:
    """Read a YAML (or JSON) mapping."""
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return data
