"""Text checkpoints: ``meta`` and ``param`` lines, floats at 17 significant digits."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, from_mapping

MAGIC = "gyronet-checkpoint 1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: ExperimentConfig
    params: dict[str, np.ndarray]
    epoch: int
    valid_accuracy: float
    vocab: int
    extra: dict[str, str] = field(default_factory=dict)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def dumps(ckpt: Checkpoint) -> str:
    lines = [MAGIC]
    lines.append(f"meta\tepoch\t{ckpt.epoch}")
    lines.append(f"meta\tvalid_accuracy\t{_fmt(ckpt.valid_accuracy)}")
    lines.append(f"meta\tvocab\t{ckpt.vocab}")
    for k, v in sorted(ckpt.extra.items()):
        lines.append(f"meta\t{k}\t{v}")
    for k, v in ckpt.config.to_items():
        lines.append(f"config\t{k}\t{v}")
    for name in sorted(ckpt.params):
        arr = np.asarray(ckpt.params[name], dtype=np.float64)
        shape = ",".join(map(str, arr.shape))
        lines.append(f"param\t{name}\t{shape}\t{' '.join(_fmt(v) for v in arr.ravel())}")
    return "\n".join(lines) + "\n"


def save(path: str | Path, ckpt: Checkpoint) -> None:
    for name, arr in ckpt.params.items():
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"parameter {name} has non-finite entries")
    Path(path).write_text(dumps(ckpt), encoding="utf-8", newline="\n")


def loads(text: str) -> Checkpoint:
    lines = text.split("\n")
    if not lines or lines[0] != MAGIC:
        raise CheckpointError("not a gyronet checkpoint")
    meta, cfg_items, params = {}, {}, {}
    for lineno, line in enumerate(lines[1:], 2):
        if not line:
            continue
        parts = line.split("\t")
        try:
            if parts[0] == "meta":
                meta[parts[1]] = parts[2]
            elif parts[0] == "config":
                cfg_items[parts[1]] = parts[2]
            elif parts[0] == "param":
                shape = tuple(int(s) for s in parts[2].split(",") if s)
                vals = np.array([float(v) for v in parts[3].split()], dtype=np.float64)
                params[parts[1]] = vals.reshape(shape)
            else:
                raise ValueError(f"unknown record {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            raise CheckpointError(f"line {lineno}: {exc}") from None
    extra = {k: v for k, v in meta.items() if k not in ("epoch", "valid_accuracy", "vocab")}
    return Checkpoint(from_mapping(cfg_items), params, int(meta["epoch"]), float(meta["valid_accuracy"]),
                      int(meta["vocab"]), extra)


def load(path: str | Path) -> Checkpoint:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CheckpointError(str(exc)) from None
    return loads(text)
