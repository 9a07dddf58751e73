import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gyronet import ball, checkpoint, data
from gyronet.checkpoint import Checkpoint, CheckpointError
from gyronet.config import ConfigError, ExperimentConfig, load_config, parse_text
from gyronet.model import EntailmentModel, cross_entropy, predict
from gyronet.train import (BestOfResult, RunSummary, TrainingError, compare_mlr, evaluate, f1_score,
                           make_batches, select_best, train)

FULL_HYP = dict(geometry_encoder="hyperbolic", geometry_ffnn="hyperbolic", geometry_mlr="hyperbolic")
FULL_EUC = dict(geometry_encoder="euclidean", geometry_ffnn="euclidean", geometry_mlr="euclidean")
HYP_EUC_MLR = dict(geometry_encoder="hyperbolic", geometry_ffnn="hyperbolic", geometry_mlr="euclidean")


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    out = tmp_path_factory.mktemp("prefix")
    data.gen_prefix_dataset(out, 10, 64, 32, 32, vocab=20, max_len=6, seed=3)
    return out


def splits_of(path):
    _, splits = data.load_prefix_dataset(path)
    return splits


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig()
        assert (cfg.dim, cfg.c, cfg.batch, cfg.epochs, cfg.runs) == (5, 1.0, 64, 30, 3)
        assert (cfg.lr_euclidean, cfg.lr_embedding, cfg.lr_hyperbolic) == (0.001, 0.1, 0.01)
        assert cfg.optimizer_hyperbolic == "rsgd_full"

    def test_round_trip(self, tmp_path):
        cfg = ExperimentConfig(cell="rnn", c=0.5, seed=7, **HYP_EUC_MLR)
        path = tmp_path / "x.cfg"
        path.write_text(cfg.to_text())
        assert load_config(path) == cfg

    def test_overrides_and_comments(self, tmp_path):
        path = tmp_path / "x.cfg"
        path.write_text("# comment\ncell = rnn  # trailing\nlr.embedding = 0.5\n")
        cfg = load_config(path, {"dim": "3", "optimizer.hyperbolic": "rsgd_projected"})
        assert (cfg.cell, cfg.lr_embedding, cfg.dim, cfg.optimizer_hyperbolic) == ("rnn", 0.5, 3, "rsgd_projected")

    @pytest.mark.parametrize("values", [
        {"bogus": "1"},
        {"dim": "five"},
        {"dim": "0"},
        {"geometry.encoder": "euclidean"},
        {"geometry.mlr": "hyperbolic", "geometry.ffnn": "euclidean"},
        {"cell": "lstm"},
        {"lr.euclidean": "-1"},
        {"bucket": "maybe"},
    ])
    def test_invalid(self, values):
        with pytest.raises(ConfigError):
            load_config(None, values)

    def test_bad_line(self):
        with pytest.raises(ConfigError):
            parse_text("dim 5\n")


class TestModel:
    def test_euclidean_uses_no_ball_ops(self, tiny, monkeypatch):
        model = EntailmentModel(ExperimentConfig(**FULL_EUC), 20)
        params = model.init_params(np.random.default_rng(0))

        def boom(*a, **k):
            raise AssertionError("ball op on the Euclidean path")

        for name in dir(ball):
            if callable(getattr(ball, name)) and not name[0].isupper() and not name.startswith("_"):
                monkeypatch.setattr(ball, name, boom)
        logits = model.logits(params, splits_of(tiny)["test"])
        assert logits.shape == (32, 2)

    def test_identical_sentences_zero_distance(self):
        for geo in (FULL_HYP, FULL_EUC):
            cfg = ExperimentConfig(**geo)
            model = EntailmentModel(cfg, 20)
            params = model.init_params(np.random.default_rng(1))
            pair = data.SentencePair((1, 2, 3), (1, 2, 3), 1)
            split = data.PrefixSplit.from_pairs([pair])
            params["enc2." + "W"] = params["enc1.W"]
            for k in list(params):
                if k.startswith("enc2."):
                    params[k] = params["enc1." + k[5:]]
            h1, h2 = model.encode(params, split)
            d = ball.distance(h1, h2, cfg.c) if geo is FULL_HYP else np.linalg.norm(h1 - h2, axis=-1)
            assert np.all(np.asarray(d) == 0.0)

    def test_param_groups_partition(self):
        for geo in (FULL_HYP, FULL_EUC, HYP_EUC_MLR):
            model = EntailmentModel(ExperimentConfig(**geo), 20)
            params = model.init_params(np.random.default_rng(0))
            names = [n for g in model.param_groups() for n in g.names]
            assert sorted(names) == sorted(params)

    def test_hyperbolic_params_in_ball(self):
        model = EntailmentModel(ExperimentConfig(**FULL_HYP), 20)
        params = model.init_params(np.random.default_rng(0))
        for name, kind in model.param_kinds().items():
            if kind != "euclidean":
                assert np.all(ball.in_ball(params[name], 1.0))

    def test_limit_equivalence(self, tiny):
        """Fully hyperbolic model at c = 1e-8 against a Euclidean one with transported parameters."""
        split = splits_of(tiny)["test"]
        common = dict(nonlin_cell="identity", nonlin_ffnn="identity", c=1e-8)
        hyp = EntailmentModel(ExperimentConfig(**FULL_HYP, **common), 20)
        euc = EntailmentModel(ExperimentConfig(**FULL_EUC, **common), 20)
        rng = np.random.default_rng(2)
        hp = hyp.init_params(rng)
        hp["emb"] = rng.uniform(-0.5, 0.5, hp["emb"].shape)
        for k in hp:
            if k.endswith((".b", ".br", ".bz", ".bd")):
                hp[k] = rng.uniform(-0.3, 0.3, hp[k].shape)
        hp["mlr.p"] = rng.uniform(-0.3, 0.3, hp["mlr.p"].shape)
        hp["mlr.a"] = rng.normal(size=hp["mlr.a"].shape)
        ep = {k: v for k, v in hp.items() if not k.startswith(("mlr.", "ffnn.bd"))}
        ep["ffnn.wd"] = 4 * hp["ffnn.bd"]
        ep["mlr.A"] = 4 * hp["mlr.a"]
        ep["mlr.b"] = 4 * np.sum(hp["mlr.p"] * hp["mlr.a"], axis=1)
        lh, le = hyp.logits(hp, split), euc.logits(ep, split)
        assert np.max(np.abs(lh - le)) <= 1e-3 * max(1.0, np.max(np.abs(le)))
        assert np.max(np.abs(le)) > 0.1

    def test_transition_identity(self, tiny):
        model = EntailmentModel(ExperimentConfig(**HYP_EUC_MLR), 20)
        rng = np.random.default_rng(3)
        params = model.init_params(rng)
        params["emb"] = rng.uniform(-0.5, 0.5, params["emb"].shape)
        h1, h2 = model.encode(params, splits_of(tiny)["test"])
        f = model.features(params, h1, h2)
        for v in (h1, h2, f):
            assert_allclose(ball.log0(ball.exp0(v, 1.0), 1.0), v, atol=1e-9)
            assert_allclose(ball.exp0(ball.log0(v, 1.0), 1.0), v, atol=1e-9)

    def test_predict_ties_low_index(self):
        assert list(predict(np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]))) == [0, 0, 1]

    def test_cross_entropy_symmetric(self):
        assert_allclose(cross_entropy(np.zeros((4, 2)), np.array([0, 1, 0, 1])), math.log(2))


class TestMetrics:
    def test_f1_hand_case(self):
        # tp = 1, fp = 1, fn = 1, tn = 1: precision = recall = 0.5
        pred, labels = np.array([1, 1, 0, 0]), np.array([1, 0, 1, 0])
        assert f1_score(pred, labels) == 0.5
        # tp = 2, fp = 1, fn = 0: precision 2/3, recall 1
        pred = np.array([1, 1, 1, 0])
        assert f1_score(pred, labels) == pytest.approx(2 * (2 / 3) * 1 / (2 / 3 + 1))

    def test_always_positive(self):
        labels = np.array([0, 1] * 50)
        pred = np.ones(100, dtype=int)
        from gyronet.train import accuracy

        assert accuracy(pred, labels) == 0.5
        assert f1_score(pred, labels) == pytest.approx(2 / 3)

    def test_perfect(self):
        from gyronet.train import accuracy

        labels = np.array([0, 1, 1, 0])
        assert accuracy(labels, labels) == 1.0 and f1_score(labels, labels) == 1.0

    def test_batches_cover_once(self, tiny):
        split = splits_of(tiny)["train"]
        for bucket in (True, False):
            batches = make_batches(split, 10, np.random.default_rng(0), bucket)
            assert sorted(np.concatenate(batches)) == list(range(len(split)))
            assert max(len(b) for b in batches) == 10


class TestTrain:
    def test_zero_epochs(self, tiny):
        res = train(ExperimentConfig(epochs=0, data=str(tiny)))
        assert [(r.epoch, r.split) for r in res.history] == [(0, "train"), (0, "valid"), (0, "test")]
        assert res.best_epoch == 0

    def test_initial_loss_is_ln2(self, tiny):
        for geo in (FULL_HYP, FULL_EUC, HYP_EUC_MLR):
            res = train(ExperimentConfig(epochs=0, data=str(tiny), **geo))
            assert abs(res.record(0, "train").loss - math.log(2)) < 0.01

    def test_history_and_checkpoint(self, tiny, tmp_path):
        cfg = ExperimentConfig(epochs=2, batch=16, data=str(tiny), cell="rnn")
        res = train(cfg, out_dir=tmp_path)
        assert len(res.history) == 9
        for r in res.history:
            assert 0 <= r.accuracy <= 1 and 0 <= r.f1 <= 1 and r.skipped == 0
        lines = (tmp_path / "metrics.csv").read_text().splitlines()
        assert lines[0].startswith("epoch,split,loss,accuracy,f1")
        assert len(lines) == 10
        ckpt = checkpoint.load(tmp_path / "best.ckpt")
        assert ckpt.epoch == res.best_epoch and ckpt.config == cfg
        rec = evaluate(ckpt, splits_of(tiny)["valid"], "valid")
        assert rec.accuracy == res.best_valid_accuracy == ckpt.valid_accuracy

    def test_reproducible(self, tiny, tmp_path):
        cfg = ExperimentConfig(epochs=2, batch=16, data=str(tiny))
        train(cfg, out_dir=tmp_path / "a")
        train(cfg, out_dir=tmp_path / "b")
        for name in ("metrics.csv", "best.ckpt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_learns_something(self, tiny):
        # far from the overfit oracle, but the loss must move down
        cfg = ExperimentConfig(epochs=5, batch=8, data=str(tiny), **FULL_EUC)
        res = train(cfg)
        assert res.record(5, "train").loss < res.record(1, "train").loss

    def test_all_steps_skipped_aborts(self, tiny, monkeypatch):
        from gyronet import optim

        monkeypatch.setattr(optim.Optimizer, "step", lambda self, p, g: bool(setattr(self, "skipped", self.skipped + 1)))
        with pytest.raises(TrainingError):
            train(ExperimentConfig(epochs=1, batch=16, data=str(tiny)))

    def test_missing_data(self, tmp_path):
        with pytest.raises(data.DataError):
            train(ExperimentConfig(epochs=0, data=str(tmp_path)))
        with pytest.raises(data.DataError):
            train(ExperimentConfig(epochs=0))

    def test_eval_vocab_mismatch(self, tiny, tmp_path):
        res = train(ExperimentConfig(epochs=0, data=str(tiny)))
        big = data.PrefixSplit.from_pairs([data.SentencePair((50,), (50,), 1)])
        with pytest.raises(data.DataError):
            evaluate(res.best, big)


@pytest.mark.slow
def test_overfit_sanity():
    """200 PREFIX-10% pairs, 200 epochs: the train split should be memorised."""
    pairs = data.gen_prefix_pairs(200, 10, np.random.default_rng(0))
    split = data.PrefixSplit.from_pairs(pairs)
    res = train(ExperimentConfig(epochs=200, seed=0), {"train": split, "valid": split, "test": split}, vocab=100)
    assert res.best_valid_accuracy == 1.0


class TestCheckpoint:
    def make(self):
        params = {"a": np.array([[0.1, 1 / 3]]), "b": np.array([np.pi])}
        return Checkpoint(ExperimentConfig(cell="rnn"), params, 4, 0.75, 20, {"note": "x"})

    def test_round_trip_exact(self, tmp_path):
        ck = self.make()
        checkpoint.save(tmp_path / "c", ck)
        back = checkpoint.load(tmp_path / "c")
        assert back.config == ck.config and back.epoch == 4 and back.valid_accuracy == 0.75
        assert back.vocab == 20 and back.extra == {"note": "x"}
        for k in ck.params:
            assert np.array_equal(back.params[k], ck.params[k])

    def test_errors(self, tmp_path):
        with pytest.raises(CheckpointError):
            checkpoint.loads("hello\n")
        with pytest.raises(CheckpointError):
            checkpoint.loads(checkpoint.MAGIC + "\nparam\tx\t2\t1.0 x\n")
        with pytest.raises(CheckpointError):
            checkpoint.load(tmp_path / "missing")
        ck = self.make()
        ck.params["a"] = np.array([np.nan])
        with pytest.raises(CheckpointError):
            checkpoint.save(tmp_path / "c", ck)

    def test_mismatched_params_rejected(self, tiny):
        from gyronet.train import load_model

        res = train(ExperimentConfig(epochs=0, data=str(tiny)))
        ck = res.best
        ck.params.pop("mlr.p")
        with pytest.raises(CheckpointError):
            load_model(ck)
        ck = train(ExperimentConfig(epochs=0, data=str(tiny))).best
        ck.params["mlr.p"] = ck.params["mlr.p"] + 5.0
        with pytest.raises(CheckpointError):
            load_model(ck)


class TestBestOf:
    def test_select(self):
        assert select_best([0.5]) == 0
        assert select_best([0.5, 0.7, 0.6]) == 1
        assert select_best([0.7, 0.6, 0.7]) == 0
        with pytest.raises(ValueError):
            select_best([])

    def test_result_csv(self):
        runs = [RunSummary(i, i, 1, v, t, t) for i, (v, t) in enumerate([(0.6, 0.9), (0.8, 0.7)])]
        res = BestOfResult(select_best([r.valid_accuracy for r in runs]), runs)
        assert res.test_accuracy == 0.7
        assert res.to_csv().splitlines()[2].endswith(",1")

    def test_runs_one(self, tiny, tmp_path):
        from gyronet.train import best_of_runs

        cfg = ExperimentConfig(epochs=1, batch=32, runs=1, data=str(tiny), **FULL_EUC)
        res = best_of_runs(cfg, tmp_path)
        single = train(cfg)
        assert res.test_accuracy == single.best_test_accuracy
        assert (tmp_path / "best_of.csv").exists() and (tmp_path / "run0" / "metrics.csv").exists()


class TestCompareMlr:
    def points(self, c=1.0, n=400, dim=2, seed=0):
        pts, _ = data.gen_separable_ballpoints(n, dim, c, 0.05, seed=seed, offset=0.2)
        ids = [i for i, lab in zip(pts.ids, pts.labels) if lab == 1]
        return data.split_subtree_task(pts, ids, 0.8, seed)

    def test_all_negative_rejected(self):
        pts, _ = data.gen_separable_ballpoints(40, 2, 1.0, 0.05)
        pts.labels[:] = 0
        with pytest.raises(data.DataError):
            compare_mlr(pts, pts, "hyperbolic", epochs=1)

    def test_unknown_variant(self):
        tr, te = self.points(n=40)
        with pytest.raises(ValueError):
            compare_mlr(tr, te, "softmax")

    def test_log0_matches_direct_near_flat(self):
        # moderate Euclidean norms under a nearly flat metric, where log0 is close to the identity
        tr, te = self.points(n=200)
        tr, te = (data.PointSet(p.ids, p.coords, p.labels, 1e-8) for p in (tr, te))
        a = compare_mlr(tr, te, "euclidean_direct", epochs=3)
        b = compare_mlr(tr, te, "log0_euclidean", epochs=3)
        assert a.test_f1 == b.test_f1
        for k in a.params:
            assert_allclose(a.params[k], b.params[k], rtol=1e-6, atol=1e-9)

    @pytest.mark.slow
    def test_hyperbolic_separates(self):
        tr, te = self.points(n=2000)
        res = compare_mlr(tr, te, "hyperbolic")
        assert res.test_f1 >= 0.95

    def test_balanced_batches(self):
        from gyronet.train import balanced_batches

        labels = np.array([1] * 3 + [0] * 29)
        for b in balanced_batches(labels, 16, np.random.default_rng(0)):
            assert np.sum(labels[b] == 1) == np.sum(labels[b] == 0)
