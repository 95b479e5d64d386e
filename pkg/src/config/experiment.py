"""ExperimentConfig: everything one training run needs, built from a settings file."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from src.autodiff.optim import OPTIMIZER_MODES
from src.config.settings import Settings, format_value
from src.data.synthetic import SyntheticConfig
from src.model.kdl import KDLConfig
from src.model.pdl import PDLConfig

logger = logging.getLogger(__name__)

MODES = ("baseline", "pdl", "kdl", "dll")

_PDL_KEYS = ("grl_lambda", "eta", "mc_steps", "adversarial", "pattern_weight")
_KDL_KEYS = ("alpha0", "beta", "warmup_epochs", "gamma_base")
_SYNTHETIC_KEYS = (
    "n_a", "n_s", "n_p", "d", "zipf_s", "noise_sigma", "n_train", "n_test",
    "extra_pattern_prob", "single_actional", "single_spatial",
)
_RUN_KEYS = (
    "name", "mode", "optimizer", "lr", "epochs", "batch_size", "seed", "hidden",
    "train_path", "test_path", "vocab_path", "k_list", "head_quantile", "out_dir",
    "checkpoint_every", "progress",
)


@dataclass
class ExperimentConfig:
    name: str = "run"
    mode: str = "dll"
    optimizer: str = "adaptive"
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    hidden: int = 64
    pdl: PDLConfig = field(default_factory=PDLConfig)
    kdl: KDLConfig = field(default_factory=KDLConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    train_path: str = ""
    test_path: str = ""
    vocab_path: str = ""
    k_list: list[int] = field(default_factory=lambda: [1, 5, 10])
    head_quantile: float = 0.5
    out_dir: str = ""
    checkpoint_every: int = 1
    progress: bool = True

    @property
    def uses_synthetic(self) -> bool:
        return not self.train_path

    @property
    def output_dir(self) -> Path:
        return Path(self.out_dir) if self.out_dir else Path("runs") / self.name

    def validate(self) -> list[str]:
        errors = []
        if self.mode not in MODES:
            errors.append(f"Invalid mode: '{self.mode}'. Must be one of {MODES}")
        if self.optimizer not in OPTIMIZER_MODES:
            errors.append(f"Invalid optimizer: '{self.optimizer}'. Must be one of {OPTIMIZER_MODES}")
        if not self.lr > 0:
            errors.append(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            errors.append(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            errors.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.hidden < 1:
            errors.append(f"hidden must be >= 1, got {self.hidden}")
        if not self.k_list or min(self.k_list) < 1:
            errors.append(f"k_list needs values >= 1, got {self.k_list}")
        if not 0.0 < self.head_quantile < 1.0:
            errors.append(f"head_quantile must be in (0, 1), got {self.head_quantile}")
        if self.checkpoint_every < 0:
            errors.append(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.train_path and not (self.test_path and self.vocab_path):
            errors.append("train_path needs test_path and vocab_path as well")
        errors.extend(self.pdl.validate())
        errors.extend(self.kdl.validate())
        if self.uses_synthetic:
            errors.extend(self.synthetic.validate())
        return errors

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        """Build from a flat dict of setting values; missing keys take their defaults."""
        values = Settings(overrides=data).as_dict()
        return cls(
            pdl=PDLConfig(**{k: values[k] for k in _PDL_KEYS}),
            kdl=KDLConfig(**{k: values[k] for k in _KDL_KEYS}),
            synthetic=SyntheticConfig(seed=values["data_seed"], **{k: values[k] for k in _SYNTHETIC_KEYS}),
            **{k: values[k] for k in _RUN_KEYS},
        )

    def to_dict(self) -> dict:
        """Flat dict with one entry per settings key."""
        data = {k: getattr(self, k) for k in _RUN_KEYS}
        data.update({k: getattr(self.pdl, k) for k in _PDL_KEYS})
        data.update({k: getattr(self.kdl, k) for k in _KDL_KEYS})
        data.update({k: getattr(self.synthetic, k) for k in _SYNTHETIC_KEYS})
        data["data_seed"] = self.synthetic.seed
        data["k_list"] = list(self.k_list)
        return data

    def to_text(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.to_dict().items())


def load_experiment(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a settings file into a validated ExperimentConfig."""
    cfg = ExperimentConfig.from_dict(Settings(path, overrides).as_dict())
    errors = cfg.validate()
    if errors:
        raise ValueError(f"Invalid config {path}:\n  " + "\n  ".join(errors))
    logger.info(f"Config loaded: {path} (mode={cfg.mode}, optimizer={cfg.optimizer}, lr={cfg.lr})")
    return cfg
