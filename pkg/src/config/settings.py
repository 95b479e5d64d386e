"""Flat ``key = value`` experiment settings files."""

from __future__ import annotations

import logging
from pathlib import Path

logger = logging.getLogger(__name__)

_DEFAULTS = {
    "name": "",
    "mode": "dll",
    "optimizer": "adaptive",
    "lr": 1e-3,
    "epochs": 30,
    "batch_size": 64,
    "seed": 0,
    "hidden": 64,
    # pattern-level decoupling
    "grl_lambda": 0.13,
    "eta": 1e-2,
    "mc_steps": 1,
    "adversarial": True,
    "pattern_weight": 1.0,
    # knowledge-level decoupling
    "alpha0": 0.1,
    "beta": 1e-4,
    "warmup_epochs": 10,
    "gamma_base": 0.99,
    # external data; empty means synthetic
    "train_path": "",
    "test_path": "",
    "vocab_path": "",
    # synthetic benchmark
    "n_a": 8,
    "n_s": 6,
    "n_p": 30,
    "d": 64,
    "zipf_s": 1.5,
    "noise_sigma": 2.5,
    "n_train": 20000,
    "n_test": 4000,
    "data_seed": 0,
    "extra_pattern_prob": 0.02,
    "single_actional": 2,
    "single_spatial": 1,
    # reporting
    "k_list": [1, 5, 10],
    "head_quantile": 0.5,
    "out_dir": "",
    "checkpoint_every": 1,
    "progress": True,
}

SETTING_KEYS = tuple(_DEFAULTS)

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def parse_value(key: str, text: str):
    """Convert ``text`` to the type of ``key``'s default."""
    default = _DEFAULTS[key]
    text = text.strip()
    if isinstance(default, bool):
        if text.lower() in _TRUE:
            return True
        if text.lower() in _FALSE:
            return False
        raise ValueError(f"Setting '{key}': expected true/false, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, list):
            return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"Setting '{key}': cannot parse {text!r} as {type(default).__name__}") from None
    return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_settings(text: str, source: str = "<string>") -> dict:
    """Parse settings text into a dict of typed values for the keys it sets."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}: line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS:
            logger.warning(f"{source}: line {lineno}: unknown setting '{key}' ignored")
            continue
        values[key] = parse_value(key, raw)
    return values


class Settings:
    """Defaults with the values of an optional settings file layered on top."""

    def __init__(self, path: str | Path | None = None, overrides: dict | None = None):
        self._path = Path(path) if path is not None else None
        self._data: dict = {k: list(v) if isinstance(v, list) else v for k, v in _DEFAULTS.items()}
        if self._path is not None:
            self._load()
        if overrides:
            self.update(overrides)
        if not self._data["name"]:
            self._data["name"] = self._path.stem if self._path is not None else "run"

    def _load(self):
        self._data.update(parse_settings(self._path.read_text(encoding="utf-8"), str(self._path)))
        logger.debug(f"Settings loaded: {self._path}")

    def update(self, values: dict):
        for key, value in values.items():
            if key not in _DEFAULTS:
                logger.warning(f"Unknown setting '{key}' ignored")
                continue
            self._data[key] = parse_value(key, value) if isinstance(value, str) else value

    def __getitem__(self, key: str):
        return self._data[key]

    def as_dict(self) -> dict:
        return dict(self._data)

    def save(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"{key} = {format_value(value)}" for key, value in self._data.items()]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
