"""Training, evaluation and model selection for the entailment and MLR tasks."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import ball, checkpoint, layers
from .config import ExperimentConfig
from .data import DataError, PointSet, PrefixSplit, load_prefix_dataset
from .model import EntailmentModel, cross_entropy, predict
from .optim import HYP_EMBEDDING, HYP_OTHER, AdamState, Optimizer, adam_step, rsgd_step_full

log = logging.getLogger(__name__)

EVAL_CHUNK = 1024
BUCKET_POOL = 50
METRIC_FIELDS = ("epoch", "split", "loss", "accuracy", "f1", "norm1", "norm2", "skipped")


class TrainingError(RuntimeError):
    pass


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float
    f1: float
    norm1: float = float("nan")
    norm2: float = float("nan")
    skipped: int = 0
    wall_time: float = 0.0

    def row(self) -> list[str]:
        return [str(self.epoch), self.split] + [repr(float(getattr(self, k))) for k in METRIC_FIELDS[2:7]] + [
            str(self.skipped)
        ]


@dataclass
class TrainResult:
    history: list[MetricsRecord]
    best: checkpoint.Checkpoint
    best_epoch: int
    params: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def record(self, epoch: int, split: str) -> MetricsRecord:
        for r in self.history:
            if r.epoch == epoch and r.split == split:
                return r
        raise KeyError((epoch, split))

    @property
    def best_valid_accuracy(self) -> float:
        return self.record(self.best_epoch, "valid").accuracy

    @property
    def best_test_accuracy(self) -> float:
        return self.record(self.best_epoch, "test").accuracy


def metrics_csv(history: Sequence[MetricsRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in history:
        w.writerow(r.row())
    return buf.getvalue()


def f1_score(pred: np.ndarray, labels: np.ndarray, positive: int = 1) -> float:
    tp = int(np.sum((pred == positive) & (labels == positive)))
    fp = int(np.sum((pred == positive) & (labels != positive)))
    fn = int(np.sum((pred != positive) & (labels == positive)))
    den = 2 * tp + fp + fn
    return 2 * tp / den if den else 0.0


def accuracy(pred: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(pred == labels)) if len(labels) else float("nan")


# --- batching --------------------------------------------------------------


def make_batches(split: PrefixSplit, batch: int, rng: np.random.Generator, bucket: bool = True) -> list[np.ndarray]:
    """Shuffled minibatch index arrays.

    With ``bucket`` set, pools of ``BUCKET_POOL`` batches are sorted by sentence
    length before slicing so each batch pads to a similar length, then the
    batch order is shuffled again.
    """
    perm = rng.permutation(len(split))
    if not bucket:
        return [perm[i : i + batch] for i in range(0, len(perm), batch)]
    out = []
    pool = batch * BUCKET_POOL
    for i in range(0, len(perm), pool):
        chunk = perm[i : i + pool]
        order = np.lexsort((split.len2[chunk], split.len1[chunk]))
        chunk = chunk[order]
        out.extend(chunk[j : j + batch] for j in range(0, len(chunk), batch))
    return [out[k] for k in rng.permutation(len(out))]


def _length_order(split: PrefixSplit) -> np.ndarray:
    return np.lexsort((split.len2, split.len1))


# --- evaluation ------------------------------------------------------------


def forward_split(model: EntailmentModel, params, split: PrefixSplit):
    """Logits and sentence-embedding norms for a whole split (no recording)."""
    order = _length_order(split)
    logits = np.zeros((len(split), 2))
    n1 = np.zeros(len(split))
    n2 = np.zeros(len(split))
    for i in range(0, len(split), EVAL_CHUNK):
        idx = order[i : i + EVAL_CHUNK]
        sub = split.subset(idx)
        h1, h2 = model.encode(params, sub)
        logits[idx] = model.classify(params, model.features(params, h1, h2))
        n1[idx] = np.linalg.norm(h1, axis=-1)
        n2[idx] = np.linalg.norm(h2, axis=-1)
    return logits, n1, n2


def evaluate_params(model: EntailmentModel, params, split: PrefixSplit, epoch: int = 0,
                    name: str = "test") -> MetricsRecord:
    t0 = time.perf_counter()
    logits, n1, n2 = forward_split(model, params, split)
    pred = predict(logits)
    loss = float(cross_entropy(logits, split.labels))
    return MetricsRecord(epoch, name, loss, accuracy(pred, split.labels), f1_score(pred, split.labels),
                         float(n1.mean()), float(n2.mean()), 0, time.perf_counter() - t0)


def load_model(ckpt: checkpoint.Checkpoint) -> tuple[EntailmentModel, dict[str, np.ndarray]]:
    model = EntailmentModel(ckpt.config, ckpt.vocab)
    kinds = model.param_kinds()
    if set(kinds) != set(ckpt.params):
        raise checkpoint.CheckpointError("checkpoint parameters do not match the configured model")
    for name, kind in kinds.items():
        if kind in (HYP_EMBEDDING, HYP_OTHER) and not np.all(ball.in_ball(ckpt.params[name], ckpt.config.c)):
            raise checkpoint.CheckpointError(f"hyperbolic parameter {name} lies outside the ball")
    return model, {k: np.array(v) for k, v in ckpt.params.items()}


def evaluate(ckpt: checkpoint.Checkpoint, split: PrefixSplit, name: str = "test") -> MetricsRecord:
    model, params = load_model(ckpt)
    if split.tokens1.size and (split.tokens1.max() >= ckpt.vocab or split.tokens2.max() >= ckpt.vocab):
        raise DataError("split uses token ids beyond the checkpoint vocabulary")
    return evaluate_params(model, params, split, ckpt.epoch, name)


# --- training --------------------------------------------------------------


def train_step(model: EntailmentModel, params: dict, opt: Optimizer, batch: PrefixSplit) -> tuple[float, np.ndarray, bool]:
    tape = ad.Tape()
    leaves = {k: tape.leaf(v, name=k) for k, v in params.items()}
    logits = model.logits(leaves, batch)
    loss = cross_entropy(logits, batch.labels)
    grads = tape.backward(loss)
    ok = opt.step(params, {k: grads[v] for k, v in leaves.items()})
    return float(loss.value), predict(logits), ok


def train(cfg: ExperimentConfig, splits: dict[str, PrefixSplit] | None = None, vocab: int | None = None,
          out_dir: str | Path | None = None,
          on_epoch: Callable[[list[MetricsRecord]], None] | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs; keep the checkpoint with the best validation accuracy.

    Epoch 0 records the metrics of the initial parameters.  Everything is a
    function of ``cfg`` (including its seed) and the data, so reruns are
    bit-for-bit identical.
    """
    if splits is None:
        if not cfg.data:
            raise DataError("no dataset given (set data = <dir>)")
        manifest, splits = load_prefix_dataset(cfg.data)
        vocab = int(manifest["vocab_size"])
    if vocab is None:
        vocab = int(max(s.tokens1.max() for s in splits.values()) + 1)
    rng = np.random.default_rng(cfg.seed)
    model = EntailmentModel(cfg, vocab)
    params = model.init_params(rng)
    opt = Optimizer(model.param_groups(), cfg.c, cfg.optimizer_hyperbolic, cfg.safety)
    train_split = splits["train"]

    history: list[MetricsRecord] = []

    def snapshot(epoch: int, valid_acc: float) -> checkpoint.Checkpoint:
        return checkpoint.Checkpoint(cfg, {k: v.copy() for k, v in params.items()}, epoch, valid_acc, vocab)

    for name in ("train", "valid", "test"):
        history.append(evaluate_params(model, params, splits[name], 0, name))
    best = snapshot(0, history[1].accuracy)
    best_epoch = 0
    if on_epoch:
        on_epoch(history)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        skipped_before = opt.skipped
        losses, correct, seen, tp, fp, fn = [], 0, 0, 0, 0, 0
        for idx in make_batches(train_split, cfg.batch, rng, cfg.bucket):
            batch = train_split.subset(idx)
            loss, pred, _ = train_step(model, params, opt, batch)
            losses.append(loss * len(idx))
            correct += int(np.sum(pred == batch.labels))
            seen += len(idx)
            tp += int(np.sum((pred == 1) & (batch.labels == 1)))
            fp += int(np.sum((pred == 1) & (batch.labels == 0)))
            fn += int(np.sum((pred == 0) & (batch.labels == 1)))
        skipped = opt.skipped - skipped_before
        n_batches = math.ceil(len(train_split) / cfg.batch)
        if skipped == n_batches:
            raise TrainingError(f"epoch {epoch}: all {n_batches} steps skipped on non-finite gradients")
        den = 2 * tp + fp + fn
        train_rec = MetricsRecord(epoch, "train", float(np.sum(losses) / seen), correct / seen,
                                  2 * tp / den if den else 0.0, skipped=skipped,
                                  wall_time=time.perf_counter() - t0)
        valid_rec = evaluate_params(model, params, splits["valid"], epoch, "valid")
        test_rec = evaluate_params(model, params, splits["test"], epoch, "test")
        train_rec.norm1, train_rec.norm2 = valid_rec.norm1, valid_rec.norm2
        history.extend([train_rec, valid_rec, test_rec])
        if valid_rec.accuracy > best.valid_accuracy:
            best = snapshot(epoch, valid_rec.accuracy)
            best_epoch = epoch
        log.info("epoch %d loss %.4f train %.4f valid %.4f test %.4f (%.1fs)", epoch, train_rec.loss,
                 train_rec.accuracy, valid_rec.accuracy, test_rec.accuracy, train_rec.wall_time)
        if on_epoch:
            on_epoch(history)

    result = TrainResult(history, best, best_epoch, params)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def write_outputs(result: TrainResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(result.history), encoding="utf-8", newline="\n")
    checkpoint.save(out / "best.ckpt", result.best)
    # wall times vary between runs; keep them out of the reproducible files
    timing = "".join(f"{r.epoch},{r.split},{r.wall_time:.3f}\n" for r in result.history)
    (out / "timing.csv").write_text("epoch,split,seconds\n" + timing, encoding="utf-8")


# --- best of several runs --------------------------------------------------


@dataclass
class RunSummary:
    run: int
    seed: int
    best_epoch: int
    valid_accuracy: float
    test_accuracy: float
    test_f1: float


@dataclass
class BestOfResult:
    selected: int
    runs: list[RunSummary]

    @property
    def test_accuracy(self) -> float:
        return self.runs[self.selected].test_accuracy

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["run", "seed", "best_epoch", "valid_accuracy", "test_accuracy", "test_f1", "selected"])
        for r in self.runs:
            w.writerow([r.run, r.seed, r.best_epoch, repr(r.valid_accuracy), repr(r.test_accuracy),
                        repr(r.test_f1), int(r.run == self.selected)])
        return buf.getvalue()


def select_best(valid_accuracies: Sequence[float]) -> int:
    """Index of the highest validation accuracy; the earliest run wins ties."""
    if not valid_accuracies:
        raise ValueError("no runs")
    best = 0
    for i, v in enumerate(valid_accuracies):
        if v > valid_accuracies[best]:
            best = i
    return best


def summarize(run: int, cfg: ExperimentConfig, result: TrainResult) -> RunSummary:
    test = result.record(result.best_epoch, "test")
    return RunSummary(run, cfg.seed, result.best_epoch, result.best_valid_accuracy, test.accuracy, test.f1)


def _run_one(args) -> RunSummary:
    run, cfg, out_dir = args
    sub = None if out_dir is None else Path(out_dir) / f"run{run}"
    return summarize(run, cfg, train(cfg, out_dir=sub))


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("GYRONET_THREADS")
    if not raw:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        return default


def best_of_runs(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> BestOfResult:
    """Train ``cfg.runs`` copies with seeds ``seed + i``; report the best-validated run."""
    jobs = [(i, cfg.replace(seed=cfg.seed + i), out_dir) for i in range(cfg.runs)]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_run_one, jobs))
    else:
        summaries = [_run_one(j) for j in jobs]
    result = BestOfResult(select_best([s.valid_accuracy for s in summaries]), summaries)
    if out_dir is not None:
        Path(out_dir, "best_of.csv").write_text(result.to_csv(), encoding="utf-8", newline="\n")
    return result


# --- MLR comparison --------------------------------------------------------

MLR_VARIANTS = ("hyperbolic", "euclidean_direct", "log0_euclidean")


@dataclass
class MlrResult:
    variant: str
    train_f1: float
    test_f1: float
    test_accuracy: float
    params: dict[str, np.ndarray] = field(repr=False, default_factory=dict)


def balanced_batches(labels: np.ndarray, batch: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One pass over the larger class, each batch topped up from the smaller one.

    Every batch holds ``batch // 2`` examples of each class; the minority
    class is sampled with replacement.
    """
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if not len(pos) or not len(neg):
        raise DataError("both classes must be present in the training set")
    half = batch // 2
    major, minor = (neg, pos) if len(neg) >= len(pos) else (pos, neg)
    major = major[rng.permutation(len(major))]
    out = []
    for i in range(0, len(major), half):
        chunk = major[i : i + half]
        extra = minor[rng.integers(0, len(minor), size=len(chunk))]
        out.append(np.concatenate([chunk, extra]))
    return out


def mlr_logits(variant: str, params, x, c: float, cfg=ball.DEFAULT_SAFETY):
    if variant == "hyperbolic":
        return layers.hyp_mlr_logits(params["p"], params["a"], x, c, cfg)
    if variant == "log0_euclidean":
        x = ball.log0(x, c, cfg)
    elif variant != "euclidean_direct":
        raise ValueError(f"unknown MLR variant {variant!r}; expected one of {MLR_VARIANTS}")
    return layers.eucl_mlr_logits(params["A"], params["b"], x)


def compare_mlr(train_pts: PointSet, test_pts: PointSet, variant: str, epochs: int = 30, batch: int = 16,
                lr: float = 0.001, seed: int = 0) -> MlrResult:
    """Train one binary MLR variant with class-balanced minibatches; report F1.

    The hyperbolic variant moves its hyperplane offsets ``p`` with full RSGD
    and its normals ``a'`` (Euclidean parameters) with Adam; the Euclidean
    variants use Adam throughout.  All at learning rate ``lr``.
    """
    if variant not in MLR_VARIANTS:
        raise ValueError(f"unknown MLR variant {variant!r}; expected one of {MLR_VARIANTS}")
    if train_pts.c != test_pts.c:
        raise DataError("train and test points use different curvatures")
    c = train_pts.c
    rng = np.random.default_rng(seed)
    n = train_pts.dim
    if variant == "hyperbolic":
        params = {"p": layers.init_ball(rng, (2, n)), "a": layers.init_normal_param(rng, (2, n))}
    else:
        params = {"A": layers.init_normal_param(rng, (2, n)), "b": np.zeros(2)}
    adam = {k: AdamState(np.zeros_like(v), np.zeros_like(v)) for k, v in params.items()}

    for _ in range(epochs):
        for idx in balanced_batches(train_pts.labels, batch, rng):
            tape = ad.Tape()
            leaves = {k: tape.leaf(v, name=k) for k, v in params.items()}
            loss = cross_entropy(mlr_logits(variant, leaves, train_pts.coords[idx], c), train_pts.labels[idx])
            grads = tape.backward(loss)
            g = {k: grads[v] for k, v in leaves.items()}
            if not all(np.all(np.isfinite(v)) for v in g.values()):
                continue
            if variant == "hyperbolic":
                params["p"] = rsgd_step_full(params["p"], g["p"], lr, c)
                params["a"] = adam_step(adam["a"], params["a"], g["a"], lr)
            else:
                for k in params:
                    params[k] = adam_step(adam[k], params[k], g[k], lr)

    def scores(pts: PointSet):
        pred = predict(mlr_logits(variant, params, pts.coords, c))
        return f1_score(pred, pts.labels), accuracy(pred, pts.labels)

    train_f1, _ = scores(train_pts)
    test_f1, test_acc = scores(test_pts)
    return MlrResult(variant, train_f1, test_f1, test_acc, params)
