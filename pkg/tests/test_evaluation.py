import csv
import io
import json

import numpy as np
import pytest

from etana.datasets import Dataset, SplitPlan, make_folds
from etana.errors import ConfigError
from etana.evaluation import CSV_HEADER, bin_sweep, cost_sweep, run_eval, write_reports
from etana.fetana import SpsaSchedule
from etana.runtime import TrainConfig, classify_batch, fit_model


def noisy(seed=0, S=80, K=8, N=2, shift=0.6):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, N, S)
    X = rng.normal(size=(S, K)) + shift * y[:, None]
    return Dataset(X, y, [f"c{i}" for i in range(N)])


def separable(seed=1, S=60):
    # balanced classes, so the median edge of feature 0 falls in the gap between them
    rng = np.random.default_rng(seed)
    y = np.tile([0, 1], S // 2)
    X = rng.normal(size=(S, 6))
    X[:, 0] = y + 0.1 * rng.normal(size=S)
    return Dataset(X, y, ["neg", "pos"])


def stable(report):
    return report.accuracy, report.mean_features, report.n_correct


class TestRunEval:
    def test_separable_is_perfect(self):
        train, valid = separable(1), separable(2)
        r = run_eval(train, SplitPlan("provided"), TrainConfig(cost=0.01), valid)
        assert r.accuracy == 1.0
        assert r.mean_features <= 2

    def test_count_consistency(self):
        ds = noisy()
        r = run_eval(ds, SplitPlan(folds=4), TrainConfig(grid=20))
        assert r.n_valid == ds.n_instances
        assert r.accuracy == r.n_correct / r.n_valid
        assert 0 <= r.mean_features <= ds.n_features
        assert len(r.folds) == 4
        assert r.train_time_s >= 0 and r.online_time_s >= r.classify_time_s >= 0

    def test_deterministic(self):
        ds = noisy(3, N=3)
        cfg = TrainConfig(policy="fetana", schedule=SpsaSchedule(t_max=100), seed=4)
        assert stable(run_eval(ds, SplitPlan(folds=3, seed=2), cfg)) == stable(
            run_eval(ds, SplitPlan(folds=3, seed=2), cfg))

    def test_provided_split(self):
        ds = noisy(4)
        train, valid = ds.subset(np.arange(60)), ds.subset(np.arange(60, 80))
        r = run_eval(train, SplitPlan("provided"), TrainConfig(grid=20), valid)
        assert r.n_valid == 20 and len(r.folds) == 1
        model = fit_model(train.matrix, train.labels, TrainConfig(grid=20), n_classes=2)
        assert r.n_correct == int((classify_batch(valid.matrix, model).labels == valid.labels).sum())

    def test_provided_split_needs_validation(self):
        with pytest.raises(ConfigError):
            run_eval(noisy(), SplitPlan("provided"), TrainConfig())

    def test_unlabelled(self):
        with pytest.raises(ConfigError):
            run_eval(Dataset(np.zeros((5, 2)), None), SplitPlan(), TrainConfig())

    def test_report_formats(self, tmp_path):
        r = run_eval(noisy(), SplitPlan(folds=2), TrainConfig(grid=10))
        d = json.loads(r.to_json())
        assert d["config"]["cost"] == 0.01 and d["config"]["split"]["folds"] == 2
        assert "accuracy" in r.to_text()
        paths = write_reports(r, tmp_path / "out", "eval")
        assert [p.name for p in paths] == ["eval.json", "eval.txt"]


class TestCostSweep:
    def test_single_value_equals_eval(self):
        ds, plan = noisy(5), SplitPlan(folds=3)
        curve = cost_sweep(ds, plan, TrainConfig(grid=20), [0.02])
        assert len(curve.points) == 1
        assert stable(curve.points[0][1]) == stable(run_eval(ds, plan, TrainConfig(cost=0.02, grid=20)))

    def test_huge_cost_is_majority_vote(self):
        ds, plan = noisy(6, N=3), SplitPlan(folds=4)
        r = cost_sweep(ds, plan, TrainConfig(grid=10), [1e3]).points[0][1]
        assert r.mean_features == 0
        correct = 0
        for tr, va in make_folds(ds.n_instances, plan):
            majority = np.bincount(ds.labels[tr], minlength=3).argmax()
            correct += int((ds.labels[va] == majority).sum())
        assert r.n_correct == correct

    def test_features_non_increasing_in_cost(self):
        ds = noisy(7, S=100, K=10, shift=0.4)
        curve = cost_sweep(ds, SplitPlan(folds=3), TrainConfig(grid=50))
        feats = [r.mean_features for _, r in curve.points]
        assert all(a <= b + 1e-12 for a, b in zip(feats, feats[1:]))

    def test_csv(self):
        curve = cost_sweep(noisy(), SplitPlan(folds=2), TrainConfig(grid=10), [0.1, 0.0])
        rows = list(csv.reader(io.StringIO(curve.to_csv())))
        assert tuple(rows[0]) == CSV_HEADER == ("param", "accuracy", "mean_features", "train_time_s")
        assert [r[0] for r in rows[1:]] == ["0.1", "0.0"]
        assert float(rows[1][1]) == curve.points[0][1].accuracy

    def test_rejects_negative(self):
        with pytest.raises(ConfigError):
            cost_sweep(noisy(), SplitPlan(folds=2), TrainConfig(), [0.1, -0.1])


class TestBinSweep:
    def test_single_value(self):
        ds, plan = noisy(8), SplitPlan(folds=2)
        curve = bin_sweep(ds, plan, TrainConfig(grid=10), [4])
        assert curve.param == "V" and len(curve.points) == 1
        assert stable(curve.points[0][1]) == stable(run_eval(ds, plan, TrainConfig(grid=10, n_bins=4)))
        assert curve.to_csv().splitlines()[1].startswith("4,")

    def test_rejects_small(self):
        with pytest.raises(ConfigError):
            bin_sweep(noisy(), SplitPlan(folds=2), TrainConfig(), [1])

    def test_etana_train_time_linear_in_bins(self):
        ds = noisy(9, S=120, K=30, N=3, shift=0.3)
        Vs = [2, 10, 20, 40, 60, 80, 100]
        curve = bin_sweep(ds, SplitPlan(folds=2), TrainConfig(grid=40, cost=0.001), Vs)
        t = np.array([r.train_time_s for _, r in curve.points])
        r = np.corrcoef(Vs, t)[0, 1]
        assert r * r >= 0.8


class TestPolicyTiming:
    def test_fetana_trains_faster_for_three_classes(self):
        # wide and short, like gene-expression data; the DP cost grows with K times the grid
        rng = np.random.default_rng(10)
        y = rng.integers(0, 3, 60)
        X = rng.normal(size=(60, 2000))
        X[:, :50] += y[:, None]
        ds = Dataset(X, y, ["a", "b", "c"])
        plan = SplitPlan(folds=2)
        et = run_eval(ds, plan, TrainConfig(policy="etana"))
        ft = run_eval(ds, plan, TrainConfig(policy="fetana"))
        assert ft.train_time_s < et.train_time_s
