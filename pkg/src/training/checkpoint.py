"""Checkpoint files: a flat little-endian float64 blob plus a text manifest.

Manifest lines are either ``key = value`` scalars or
``array <name> <byte offset> <shape>`` entries in blob order, with ``()`` as
the shape of a 0-d array. Optimizer moments
are stored as the arrays ``moment1.<param>`` / ``moment2.<param>`` with their
step counts as ``steps.<param>`` scalars; run settings as ``config.<key>``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from src.autodiff.parameters import Moments, ParameterSet
from src.config.settings import SETTING_KEYS, format_value, parse_value

logger = logging.getLogger(__name__)

_DTYPE = np.dtype("<f8")
# shape field of a 0-d array
SCALAR_SHAPE = "()"


@dataclass
class Checkpoint:
    mode: str
    epoch: int
    iteration: int
    alpha: float
    config: dict = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)

    def add_parameters(self, params: ParameterSet):
        """Copy parameter values and their optimizer moments into the checkpoint."""
        for name, tensor in params:
            self.arrays[name] = tensor.values.copy()
        for name, state in params.moments.items():
            self.arrays[f"moment1.{name}"] = state.first.copy()
            self.arrays[f"moment2.{name}"] = state.second.copy()
            self.steps[name] = state.steps

    def restore_parameters(self, params: ParameterSet):
        params.load_state({name: self.arrays[name] for name, _ in params if name in self.arrays})
        params.moments = {
            name: Moments(self.arrays[f"moment1.{name}"].copy(), self.arrays[f"moment2.{name}"].copy(), steps)
            for name, steps in self.steps.items()
            if name in params
        }


def checkpoint_stem(epoch: int) -> str:
    return f"checkpoint_e{epoch:03d}"


def save_checkpoint(ckpt: Checkpoint, directory: str | Path) -> Path:
    """Write ``checkpoint_eNNN.bin`` and ``.manifest``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    stem = checkpoint_stem(ckpt.epoch)

    lines = [
        f"mode = {ckpt.mode}",
        f"epoch = {ckpt.epoch}",
        f"iteration = {ckpt.iteration}",
        f"alpha = {float(ckpt.alpha)!r}",
    ]
    lines += [f"config.{k} = {format_value(v)}" for k, v in ckpt.config.items()]
    lines += [f"steps.{k} = {v}" for k, v in ckpt.steps.items()]

    blobs, offset = [], 0
    for name, values in ckpt.arrays.items():
        data = np.ascontiguousarray(values, dtype=_DTYPE).tobytes()
        shape = ",".join(str(n) for n in values.shape) or SCALAR_SHAPE
        lines.append(f"array {name} {offset} {shape}")
        blobs.append(data)
        offset += len(data)

    (directory / f"{stem}.bin").write_bytes(b"".join(blobs))
    manifest = directory / f"{stem}.manifest"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Checkpoint saved: {manifest}")
    return manifest


def load_checkpoint(manifest: str | Path) -> Checkpoint:
    manifest = Path(manifest)
    blob = manifest.with_suffix(".bin").read_bytes()
    scalars: dict[str, str] = {}
    arrays: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("array "):
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"{manifest}: line {lineno}: malformed array entry")
            _, name, offset, shape_text = parts
            shape = () if shape_text == SCALAR_SHAPE else tuple(int(n) for n in shape_text.split(","))
            count = int(np.prod(shape))
            if int(offset) + count * _DTYPE.itemsize > len(blob):
                raise ValueError(f"{manifest}: line {lineno}: array '{name}' runs past the end of the data file")
            arrays[name] = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=int(offset)).reshape(shape).copy()
        elif "=" in line:
            key, value = (part.strip() for part in line.split("=", 1))
            scalars[key] = value
        else:
            raise ValueError(f"{manifest}: line {lineno}: expected 'key = value' or 'array ...'")

    missing = {"mode", "epoch", "iteration", "alpha"} - set(scalars)
    if missing:
        raise ValueError(f"{manifest}: missing scalar(s) {sorted(missing)}")
    config = {
        k[len("config."):]: parse_value(k[len("config."):], v)
        for k, v in scalars.items()
        if k.startswith("config.") and k[len("config."):] in SETTING_KEYS
    }
    steps = {k[len("steps."):]: int(v) for k, v in scalars.items() if k.startswith("steps.")}
    return Checkpoint(
        mode=scalars["mode"],
        epoch=int(scalars["epoch"]),
        iteration=int(scalars["iteration"]),
        alpha=float(scalars["alpha"]),
        config=config,
        arrays=arrays,
        steps=steps,
    )
