"""Synthetic datasets and their on-disk formats.

PREFIX files hold one pair per line, ``<label>\\t<ids>\\t<ids>``, with label 1
for a noisy prefix and 0 for a random sentence.  Embedding files start with a
``dim=<n> c=<float>`` header followed by ``<id>\\t<label>\\t<f1> ... <fn>`` rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import ball

FORMAT_VERSION = 1
SPLITS = ("train", "valid", "test")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SentencePair:
    tokens1: tuple[int, ...]
    tokens2: tuple[int, ...]
    label: int


@dataclass
class PrefixSplit:
    """A PREFIX split in padded array form, ready for batching."""

    tokens1: np.ndarray
    len1: np.ndarray
    tokens2: np.ndarray
    len2: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_pairs(cls, pairs: list[SentencePair]) -> "PrefixSplit":
        n = len(pairs)
        t1 = max((len(p.tokens1) for p in pairs), default=1)
        t2 = max((len(p.tokens2) for p in pairs), default=1)
        out = cls(
            np.zeros((n, t1), dtype=np.int64),
            np.zeros(n, dtype=np.int64),
            np.zeros((n, t2), dtype=np.int64),
            np.zeros(n, dtype=np.int64),
            np.zeros(n, dtype=np.int64),
        )
        for i, p in enumerate(pairs):
            out.tokens1[i, : len(p.tokens1)] = p.tokens1
            out.tokens2[i, : len(p.tokens2)] = p.tokens2
            out.len1[i] = len(p.tokens1)
            out.len2[i] = len(p.tokens2)
            out.labels[i] = p.label
        return out

    def subset(self, idx: np.ndarray) -> "PrefixSplit":
        l1, l2 = self.len1[idx], self.len2[idx]
        m1 = max(int(l1.max(initial=1)), 1)
        m2 = max(int(l2.max(initial=1)), 1)
        return PrefixSplit(self.tokens1[idx, :m1], l1, self.tokens2[idx, :m2], l2, self.labels[idx])


def replacement_count(z: float, prefix_len: int) -> int:
    """``round(z / 100 * prefix_len)`` with halves rounded up, computed exactly."""
    q = Fraction(str(z)) * prefix_len / 100
    return math.floor(q + Fraction(1, 2))


def _check_z(z: float) -> None:
    if not 0 <= z < 100:
        raise DataError(f"Z must lie in [0, 100), got {z}")


def gen_prefix_pairs(n_pairs: int, z: float, rng: np.random.Generator, vocab: int = 100,
                     max_len: int = 20) -> list[SentencePair]:
    """One noisy-prefix positive and one same-length random negative per premise."""
    _check_z(z)
    if n_pairs <= 0 or n_pairs % 2:
        raise DataError(f"pair count must be positive and even, got {n_pairs}")
    if vocab < 2 or max_len < 1:
        raise DataError("vocab must be >= 2 and max_len >= 1")
    pairs = []
    for _ in range(n_pairs // 2):
        length = int(rng.integers(1, max_len + 1))
        premise = rng.integers(0, vocab, size=length)
        plen = int(rng.integers(1, length + 1))
        noisy = premise[:plen].copy()
        k = replacement_count(z, plen)
        if k:
            pos = rng.choice(plen, size=k, replace=False)
            # uniform over vocab minus the original token
            draw = rng.integers(0, vocab - 1, size=k)
            noisy[pos] = draw + (draw >= noisy[pos])
        negative = rng.integers(0, vocab, size=plen)
        p1 = tuple(int(t) for t in premise)
        pairs.append(SentencePair(p1, tuple(int(t) for t in noisy), 1))
        pairs.append(SentencePair(p1, tuple(int(t) for t in negative), 0))
    return pairs


def format_pair(p: SentencePair) -> str:
    return f"{p.label}\t{' '.join(map(str, p.tokens1))}\t{' '.join(map(str, p.tokens2))}\n"


def write_prefix_file(path: str | Path, pairs: list[SentencePair]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(format_pair(p) for p in pairs)


def read_prefix_file(path: str | Path, vocab: int | None = None) -> list[SentencePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            try:
                if len(parts) != 3:
                    raise ValueError("expected 3 tab-separated fields")
                label = int(parts[0])
                t1 = tuple(int(t) for t in parts[1].split())
                t2 = tuple(int(t) for t in parts[2].split())
                if label not in (0, 1) or not t1 or not t2:
                    raise ValueError("bad label or empty sentence")
                if vocab is not None and any(not 0 <= t < vocab for t in t1 + t2):
                    raise ValueError("token outside vocabulary")
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            pairs.append(SentencePair(t1, t2, label))
    return pairs


def write_manifest(path: str | Path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in entries.items():
            fh.write(f"{k}: {v}\n")


def read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                k, _, v = line.partition(":")
                out[k.strip()] = v.strip()
    return out


def gen_prefix_dataset(out_dir: str | Path, z: float, n_train: int = 50_000, n_valid: int = 5_000,
                       n_test: int = 5_000, vocab: int = 100, max_len: int = 20,
                       seed: int = 0) -> Path:
    """Write ``train/valid/test.tsv`` plus ``manifest.txt`` into ``out_dir``.

    Each split draws from its own generator seeded by ``(seed, split index)``.
    """
    _check_z(z)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sizes = dict(zip(SPLITS, (n_train, n_valid, n_test)))
    for i, split in enumerate(SPLITS):
        rng = np.random.default_rng([seed, i])
        write_prefix_file(out / f"{split}.tsv", gen_prefix_pairs(sizes[split], z, rng, vocab, max_len))
    write_manifest(
        out / "manifest.txt",
        {
            "task": "prefix",
            "format_version": FORMAT_VERSION,
            "z": z,
            "vocab_size": vocab,
            "max_len": max_len,
            "n_train": n_train,
            "n_valid": n_valid,
            "n_test": n_test,
            "seed": seed,
            "replacement": "excludes original token; count round-half-up",
        },
    )
    return out


def load_prefix_dataset(data_dir: str | Path) -> tuple[dict[str, str], dict[str, PrefixSplit]]:
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.txt"
    if not manifest_path.exists():
        raise DataError(f"no manifest in {data_dir}")
    manifest = read_manifest(manifest_path)
    vocab = int(manifest["vocab_size"])
    splits = {s: PrefixSplit.from_pairs(read_prefix_file(data_dir / f"{s}.tsv", vocab)) for s in SPLITS}
    return manifest, splits


# --- labelled ball points --------------------------------------------------


@dataclass
class PointSet:
    """Labelled points in the ball of curvature ``-c``."""

    ids: list[str]
    coords: np.ndarray
    labels: np.ndarray
    c: float
    dim: int = field(init=False)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or len(coords) != len(self.ids):
            coords = coords.reshape(len(self.ids), -1)
        self.coords = coords
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.dim = self.coords.shape[1]

    def __len__(self):
        return len(self.ids)

    def subset(self, idx) -> "PointSet":
        idx = np.asarray(idx, dtype=np.int64)
        return PointSet([self.ids[i] for i in idx], self.coords[idx], self.labels[idx], self.c)


def gen_separable_ballpoints(n: int, dim: int, c: float, margin: float, seed: int = 0,
                             offset: float = 0.0, radius: float = 0.9,
                             max_tries: int = 1000) -> tuple[PointSet, ball.Hyperplane]:
    """Points uniform in the radius-``radius`` sub-ball, labelled by a random hyperplane.

    The hyperplane passes through ``p = offset * unit(a) / sqrt(c)``; points
    closer to it than ``margin`` are discarded.  Label 1 is the side where
    ``<-p + x, a> > 0``.
    """
    if not margin > 0:
        raise DataError("margin must be positive")
    rng = np.random.default_rng(seed)
    a = rng.normal(size=dim)
    a /= np.linalg.norm(a)
    scale = 1.0 / math.sqrt(c) if c > 0 else 1.0
    p = offset * scale * a
    plane = ball.Hyperplane(p, a)
    normal = plane.normal(c)
    kept: list[np.ndarray] = []
    total = 0
    budget = max_tries * n
    while total < n:
        if budget <= 0:
            raise DataError(f"margin {margin} too large: only {total} of {n} points accepted")
        draw = min(budget, max(4 * (n - total), 64))
        budget -= draw
        x = rng.normal(size=(draw, dim))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        x *= radius * scale * rng.uniform(size=(draw, 1)) ** (1.0 / dim)
        ok = ball.hyperplane_distance(x, plane, c)[:, 0] >= margin
        x = x[ok][: n - total]
        kept.append(x)
        total += len(x)
    coords = np.concatenate(kept)
    u = ball.mobius_add(-p, coords, c)
    labels = (np.sum(u * normal, axis=1) > 0).astype(np.int64)
    ids = [f"n{i:06d}" for i in range(n)]
    return PointSet(ids, coords, labels, c), plane


def save_embeddings(path: str | Path, points: PointSet) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dim={points.dim} c={points.c!r}\n")
        for pid, lab, row in zip(points.ids, points.labels, points.coords):
            fh.write(f"{pid}\t{int(lab)}\t{' '.join(format(float(v), '.17g') for v in row)}\n")


def load_embeddings(path: str | Path) -> PointSet:
    """Parse and validate an embedding file; errors name the offending line."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    try:
        head = dict(tok.split("=", 1) for tok in lines[0].split())
        dim, c = int(head["dim"]), float(head["c"])
    except (KeyError, ValueError, IndexError):
        raise DataError(f"{path}:1: header must read 'dim=<n> c=<float>'") from None
    if dim < 1 or c < 0:
        raise DataError(f"{path}:1: invalid dim or c")
    ids, labels, rows = [], [], []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
        try:
            label = int(parts[1])
            vals = [float(v) for v in parts[2].split()]
        except ValueError:
            raise DataError(f"{path}:{lineno}: unparseable label or coordinates") from None
        if label not in (0, 1):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1")
        if len(vals) != dim:
            raise DataError(f"{path}:{lineno}: expected {dim} coordinates, got {len(vals)}")
        row = np.array(vals)
        if not np.all(np.isfinite(row)) or (c > 0 and math.sqrt(c) * np.linalg.norm(row) >= 1.0):
            raise DataError(f"{path}:{lineno}: point outside the ball of curvature -{c}")
        ids.append(parts[0])
        labels.append(label)
        rows.append(row)
    coords = np.array(rows).reshape(len(rows), dim)
    return PointSet(ids, coords, np.array(labels, dtype=np.int64), c)


def split_subtree_task(points: PointSet, positive_ids, train_frac: float = 0.8,
                       seed: int = 0) -> tuple[PointSet, PointSet]:
    """Relabel by membership in ``positive_ids`` and split each class train/test."""
    positive = set(positive_ids)
    unknown = positive.difference(points.ids)
    if unknown:
        raise DataError(f"{len(unknown)} positive ids are not in the point set")
    if not positive:
        raise DataError("empty positive set")
    labels = np.array([1 if i in positive else 0 for i in points.ids], dtype=np.int64)
    relabelled = PointSet(list(points.ids), points.coords, labels, points.c)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in (1, 0):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        k = math.floor(train_frac * len(idx) + 0.5)
        train.append(idx[:k])
        test.append(idx[k:])
    return relabelled.subset(np.sort(np.concatenate(train))), relabelled.subset(np.sort(np.concatenate(test)))
