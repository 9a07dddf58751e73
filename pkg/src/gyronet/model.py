"""The sentence-pair entailment network.

Two encoders (one per sentence) over a shared word-embedding table, a fusion
layer taking both sentence embeddings and their squared distance, then a
two-class MLR.  Each stage is hyperbolic or Euclidean per the config;
``log0`` moves values out of the ball where a hyperbolic stage feeds a
Euclidean one.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from . import ball, layers
from .config import ExperimentConfig
from .data import PrefixSplit
from .optim import EUCLIDEAN, HYP_EMBEDDING, HYP_OTHER, ParamGroup

NUM_CLASSES = 2


class EntailmentModel:
    """Parameter layout and forward pass; parameters live outside in a dict."""

    def __init__(self, cfg: ExperimentConfig, vocab: int):
        self.cfg = cfg
        self.vocab = vocab
        self.c = cfg.c
        self.safety = cfg.safety
        self.kinds: dict[str, str] = {}

    # --- parameters ------------------------------------------------------

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        cfg, n = self.cfg, self.cfg.dim
        hyp_enc = cfg.hyperbolic_encoder
        params: dict[str, np.ndarray] = {}
        kinds: dict[str, str] = {}

        if hyp_enc:
            params["emb"] = layers.init_ball(rng, (self.vocab, n))
            kinds["emb"] = HYP_EMBEDDING
        else:
            params["emb"] = rng.uniform(-0.1, 0.1, size=(self.vocab, n))
            kinds["emb"] = EUCLIDEAN
        for enc in ("enc1", "enc2"):
            for name, val in layers.init_cell_params(rng, cfg.cell, n, n, hyp_enc).items():
                key = f"{enc}.{name}"
                params[key] = val
                kinds[key] = HYP_OTHER if (hyp_enc and name.startswith("b")) else EUCLIDEAN

        params["ffnn.M1"] = layers.init_matrix(rng, n, n)
        params["ffnn.M2"] = layers.init_matrix(rng, n, n)
        kinds["ffnn.M1"] = kinds["ffnn.M2"] = EUCLIDEAN
        if cfg.geometry_ffnn == "hyperbolic":
            params["ffnn.bd"] = layers.init_ball(rng, (n,))
            params["ffnn.b"] = layers.init_ball(rng, (n,))
            kinds["ffnn.bd"] = kinds["ffnn.b"] = HYP_OTHER
        else:
            params["ffnn.wd"] = layers.init_matrix(rng, n, 1)[:, 0]
            params["ffnn.b"] = np.zeros(n)
            kinds["ffnn.wd"] = kinds["ffnn.b"] = EUCLIDEAN

        if cfg.geometry_mlr == "hyperbolic":
            params["mlr.p"] = layers.init_ball(rng, (NUM_CLASSES, n))
            params["mlr.a"] = layers.init_normal_param(rng, (NUM_CLASSES, n))
            kinds["mlr.p"] = HYP_OTHER
            kinds["mlr.a"] = EUCLIDEAN
        else:
            params["mlr.A"] = layers.init_matrix(rng, NUM_CLASSES, n)
            params["mlr.b"] = np.zeros(NUM_CLASSES)
            kinds["mlr.A"] = kinds["mlr.b"] = EUCLIDEAN
        self.kinds = kinds
        return params

    def param_kinds(self) -> dict[str, str]:
        if not self.kinds:
            self.init_params(np.random.default_rng(0))
        return dict(self.kinds)

    def param_groups(self) -> list[ParamGroup]:
        cfg = self.cfg
        lrs = {EUCLIDEAN: cfg.lr_euclidean, HYP_EMBEDDING: cfg.lr_embedding, HYP_OTHER: cfg.lr_hyperbolic}
        kinds = self.param_kinds()
        groups = []
        for kind in (EUCLIDEAN, HYP_EMBEDDING, HYP_OTHER):
            names = sorted(k for k, v in kinds.items() if v == kind)
            if names:
                groups.append(ParamGroup(kind, lrs[kind], names))
        return groups

    # --- forward ---------------------------------------------------------

    def _cell(self, params: Mapping, prefix: str):
        cfg, c, safety = self.cfg, self.c, self.safety
        phi = cfg.cell_nonlinearity
        p = {name: params[f"{prefix}.{name}"] for name in layers.rnn_param_names(cfg.cell)}
        if cfg.hyperbolic_encoder:
            if cfg.cell == "gru":
                return lambda h, x: layers.hyp_gru_cell(p, h, x, c, phi, safety)
            return lambda h, x: layers.hyp_rnn_cell(p, h, x, c, phi, safety)
        if cfg.cell == "gru":
            return lambda h, x: layers.eucl_gru_cell(p, h, x, phi)
        return lambda h, x: layers.eucl_rnn_cell(p, h, x, phi)

    def _h0(self, batch: int) -> np.ndarray:
        h0 = np.zeros((batch, self.cfg.dim))
        if self.cfg.hyperbolic_encoder:
            h0[:, 0] = self.safety.origin_eps
        return h0

    def encode(self, params: Mapping, split: PrefixSplit):
        """Sentence embeddings ``(h1, h2)`` for every pair in ``split``."""
        b = len(split)
        h1 = layers.encode_sequence(self._cell(params, "enc1"), params["emb"], split.tokens1, split.len1, self._h0(b))
        h2 = layers.encode_sequence(self._cell(params, "enc2"), params["emb"], split.tokens2, split.len2, self._h0(b))
        return h1, h2

    def features(self, params: Mapping, h1, h2):
        """Fuse the two sentence embeddings and their squared distance."""
        cfg, c, safety = self.cfg, self.c, self.safety
        if cfg.hyperbolic_encoder:
            d = ball.distance(h1, h2, c, safety)
            d2 = ad.mul(d, d)
            pre = layers.concat_matvec(params["ffnn.M1"], params["ffnn.M2"], h1, h2, c, safety)
            pre = ball.mobius_add(pre, ball.mobius_scalar(d2, params["ffnn.bd"], c, safety), c, safety)
            pre = ball.mobius_add(pre, params["ffnn.b"], c, safety)
            return layers.apply_nonlinearity(cfg.ffnn_nonlinearity, pre, c, safety)
        diff = ad.sub(h1, h2)
        d2 = ad.dot(diff, diff)
        pre = ad.add(ad.matvec(params["ffnn.M1"], h1), ad.matvec(params["ffnn.M2"], h2))
        pre = ad.add(ad.add(pre, ad.mul(d2, params["ffnn.wd"])), params["ffnn.b"])
        return layers.euclidean_nonlinearity(cfg.ffnn_nonlinearity)(pre)

    def classify(self, params: Mapping, f):
        cfg, c, safety = self.cfg, self.c, self.safety
        if cfg.geometry_mlr == "hyperbolic":
            return layers.hyp_mlr_logits(params["mlr.p"], params["mlr.a"], f, c, safety)
        if cfg.geometry_ffnn == "hyperbolic":
            f = ball.log0(f, c, safety)
        return layers.eucl_mlr_logits(params["mlr.A"], params["mlr.b"], f)

    def logits(self, params: Mapping, split: PrefixSplit):
        h1, h2 = self.encode(params, split)
        return self.classify(params, self.features(params, h1, h2))


def cross_entropy(logits, labels: np.ndarray):
    """Mean softmax cross-entropy of integer ``labels``."""
    lv = ad.value(logits)
    shift = np.max(lv, axis=-1, keepdims=True)
    z = ad.sub(logits, shift)
    lse = ad.log(ad.sum(ad.exp(z), axis=-1))
    onehot = np.eye(lv.shape[-1])[labels]
    picked = ad.sum(ad.mul(z, onehot), axis=-1)
    return ad.mean(ad.sub(lse, picked))


def predict(logits) -> np.ndarray:
    """Argmax over classes; ties resolve to the lowest index."""
    return np.argmax(ad.value(logits), axis=-1)
