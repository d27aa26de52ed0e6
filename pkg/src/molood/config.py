"""Run configuration: one flat JSON object, unknown keys rejected."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .adapt import AdaptConfig
from .bench.split import SplitConfig
from .encoder import EncoderConfig
from .errors import BadConfig
from .selector.env import EnvConfig
from .selector.policy import PolicyConfig

CONFIG_ENV = "MOLOOD_CONFIG"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    dataset: str = "synthetic:default"
    data_seed: int = 0
    # retrieval and policy
    pool_size: int = 50
    subset_size: int = 5
    group_size: int = 33
    grpo_steps: int = 40
    kl_beta: float = 0.01
    clip_eps: float = 0.2
    tau_sim: float = 0.45
    hub_lambda: float = 0.3
    n_proxies: int = 3
    k_max: int = 8
    policy_lr: float = 1e-3
    policy_hidden: int = 64
    policy_center: bool = True
    eps_s: float = 1e-8
    # adaptation and training
    e_warm: int = 10
    tau_reg: float = 0.05
    beta_m: float = 0.9
    lr: float = 1e-3
    optimizer: str = "adam"
    batch: int = 64
    e_proxy: int = 5
    finetune_epochs: int = 200
    baseline_epochs: int = 200
    shallow_epochs: int = 40
    warm_epochs: int = 10
    max_group_samples: int | None = None
    max_proxy_samples: int | None = None
    # encoder
    d: int = 32
    layers: int = 3
    d_head: int = 32
    # benchmark
    k_total: int = 12
    n_source: int = 6
    task_threshold: int = 200
    max_tasks: int = 15
    alpha_comp: float = 0.5
    tau_dist: float = 0.0
    n_proj: int = 64
    min_members: int = 10

    def validate(self) -> "RunConfig":
        pos_int = ["pool_size", "subset_size", "n_proxies", "k_max", "policy_hidden", "batch",
                   "d", "layers", "d_head", "k_total", "n_source", "n_proj", "min_members"]
        for name in pos_int:
            if getattr(self, name) < 1:
                raise BadConfig(f"{name} must be >= 1")
        nonneg = ["grpo_steps", "e_warm", "e_proxy", "finetune_epochs", "baseline_epochs",
                  "shallow_epochs", "warm_epochs", "task_threshold", "max_tasks", "kl_beta",
                  "hub_lambda", "alpha_comp", "tau_dist", "lr", "policy_lr", "data_seed", "seed"]
        for name in nonneg:
            if getattr(self, name) < 0:
                raise BadConfig(f"{name} must be >= 0")
        if self.group_size < 2:
            raise BadConfig("group_size must be >= 2")
        if self.d < 2:
            raise BadConfig("d must be >= 2")
        if self.batch < 2:
            raise BadConfig("batch must be >= 2")
        if not 0 < self.clip_eps < 1:
            raise BadConfig("clip_eps must lie in (0, 1)")
        if not 0 <= self.beta_m < 1:
            raise BadConfig("beta_m must lie in [0, 1)")
        if not 0 <= self.tau_sim <= 1:
            raise BadConfig("tau_sim must lie in [0, 1]")
        if not 0 < self.eps_s < 1e-2:
            raise BadConfig("eps_s must be small and positive")
        if self.subset_size > self.pool_size:
            raise BadConfig("subset_size cannot exceed pool_size")
        if self.optimizer not in ("sgd", "adam"):
            raise BadConfig("optimizer must be 'sgd' or 'adam'")
        for name in ("max_group_samples", "max_proxy_samples"):
            v = getattr(self, name)
            if v is not None and v < 2:
                raise BadConfig(f"{name} must be >= 2 or null")
        return self

    # component configs ---------------------------------------------------
    def split_config(self) -> SplitConfig:
        return SplitConfig(self.k_total, self.n_source, self.task_threshold, self.max_tasks,
                           self.alpha_comp, self.tau_dist, self.n_proj)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.d, self.layers, d_head=self.d_head)

    def adapt_config(self, epochs: int, seed: int, align_mol: bool = True,
                     align_sub: bool = True) -> AdaptConfig:
        return AdaptConfig(epochs, self.lr, self.batch, self.e_warm, self.beta_m, self.tau_reg,
                           self.optimizer, align_mol, align_sub, seed)

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(self.policy_hidden, self.policy_lr, self.clip_eps, self.kl_beta,
                            self.group_size, self.eps_s, self.k_max,
                            center=self.policy_center)

    def env_config(self, seed: int) -> EnvConfig:
        return EnvConfig(self.n_proxies, self.pool_size, self.hub_lambda, self.tau_sim,
                         self.max_group_samples, self.max_proxy_samples, seed)

    def to_json(self) -> dict:
        return asdict(self)


def config_from_dict(d: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise BadConfig(f"unknown config keys: {', '.join(unknown)}")
    try:
        return RunConfig(**d).validate()
    except TypeError as exc:
        raise BadConfig(str(exc)) from exc


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Read a config file; ``MOLOOD_CONFIG`` replaces ``path`` when set."""
    env = os.environ.get(CONFIG_ENV)
    if env:
        path = env
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise BadConfig(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise BadConfig("config must be a JSON object")
    cfg = config_from_dict(data)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides).validate() if overrides else cfg
