import csv
import json
import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from oracles import METRIC_FIXTURES
from trafficcil.dataio import FlowDataset, FlowRecord, SyntheticSpec, generate_synthetic
from trafficcil.evalrun import (
    ModelCache,
    ScenarioConfig,
    confusion_matrix,
    heatmap_stats,
    macro_f1,
    memory_sweep,
    per_class_f1,
    prepare_run,
    run_scenario,
    stratified_split,
)
from trafficcil.features import NormStats, dataset_arrays, fit_normalizer
from trafficcil.neural import TrainConfig

QUICK = TrainConfig(epochs=4, lr_halving_period=2, seed=0)


@pytest.mark.parametrize("labels,preds,k,cm,f1", METRIC_FIXTURES)
def test_metric_fixtures(labels, preds, k, cm, f1):
    got = confusion_matrix(preds, labels, k)
    assert got.tolist() == cm
    assert macro_f1(got) == float(Fraction(*f1))


def test_tp_fp_fn_one_each():
    cm = confusion_matrix([0, 1, 0], [0, 0, 1], 2)
    assert per_class_f1(cm)[0] == 0.5


def test_partition_weighted_mean():
    rng = np.random.default_rng(0)
    cm = confusion_matrix(rng.integers(0, 7, 300), rng.integers(0, 7, 300), 7)
    base, new = range(5), range(5, 7)
    assert macro_f1(cm) == pytest.approx((5 * macro_f1(cm, base) + 2 * macro_f1(cm, new)) / 7)


def test_metric_errors():
    with pytest.raises(ValueError):
        confusion_matrix([0, 3], [0, 1], 3)
    with pytest.raises(ValueError):
        confusion_matrix([0], [0, 1], 3)
    with pytest.raises(ValueError):
        macro_f1(np.eye(2), [])


# -- heatmap statistics --------------------------------------------------------

def _rec(app, n, ps=100):
    return FlowRecord(app, (ps,) * n, (10,) * n, ("up", "down") * (n // 2) + ("up",) * (n % 2))


def test_heatmap_identical_flows():
    ds = FlowDataset([_rec("a", 7)] * 3, ["a"])
    stats = NormStats(math.log(11))
    h = heatmap_stats(ds, stats)
    x, _ = dataset_arrays(ds, stats)
    assert np.allclose(h.ps_mean[0], x[0, 0])
    assert np.allclose(h.dir_mean[0], x[0, 2])
    assert h.pad_prob[0, :7].sum() == 0 and np.all(h.pad_prob[0, 7:] == 1)


def test_heatmap_short_flows_padding():
    ds = FlowDataset([_rec("a", 49), _rec("a", 10), _rec("b", 120)], ["a", "b"])
    h = heatmap_stats(ds, fit_normalizer(ds))
    assert np.all(h.pad_prob[0, 50:] == 1.0)
    assert h.row_order() == [1, 0]


def test_heatmap_matches_brute_force(tmp_path):
    ds = generate_synthetic(SyntheticSpec(3, 12, 2))
    stats = fit_normalizer(ds)
    h = heatmap_stats(ds, stats)
    x, y = dataset_arrays(ds, stats)
    for c in range(3):
        rows = [x[i] for i in range(len(y)) if y[i] == c]
        for p in (0, 13, 99):
            assert h.iat_mean[c, p] == pytest.approx(sum(float(r[1, p]) for r in rows) / len(rows))
            padded = sum(1 for r in rows if r[2, p] == 0)
            assert h.pad_prob[c, p] == pytest.approx(padded / len(rows))
    h.write_csv(tmp_path / "h.csv")
    with open(tmp_path / "h.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["class", "position", "ps_mean", "iat_mean", "dir_mean", "pad_prob"]
    assert len(rows) == 1 + 3 * 100


def test_heatmap_empty():
    with pytest.raises(ValueError):
        heatmap_stats(FlowDataset([], []), NormStats(1.0))


# -- scenarios -----------------------------------------------------------------

@pytest.fixture(scope="module")
def small_ds():
    return generate_synthetic(SyntheticSpec(8, 30, 5))


def cfg(strategy, **kw):
    base = dict(strategy=strategy, base_classes=4, episodes=(2,), runs=2, memory=40, seed=1, train=QUICK)
    base.update(kw)
    return ScenarioConfig(**base)


def test_config_validation_enumerates_all_errors():
    bad = ScenarioConfig("nope", 1, episodes=(0,), runs=0, memory=0, train_fraction=1.5)
    errors = bad.validate(n_available=3)
    assert len(errors) == 6
    with pytest.raises(ValueError, match="unknown strategy"):
        bad.check()


def test_default_runs_and_preallocation():
    c = ScenarioConfig("icarl", 10, episodes=(2, 2))
    assert c.runs == 10 and c.memory == 1000
    assert c.class_counts == [10, 12, 14] and c.head_units == 18


def test_stratified_split_covers_every_class():
    y = np.repeat(np.arange(5), [2, 3, 10, 11, 50])
    tr, te = stratified_split(y, 0.8, np.random.default_rng(0))
    assert sorted(np.concatenate([tr, te]).tolist()) == list(range(len(y)))
    assert set(y[tr]) == set(y[te]) == set(range(5))


def test_permutations_reproducible(small_ds):
    c = cfg("upperbound", runs=3)
    a = [prepare_run(c, small_ds, r).classes for r in range(3)]
    b = [prepare_run(c, small_ds, r).classes for r in range(3)]
    assert a == b
    assert len({tuple(p) for p in a}) == 3
    rd = prepare_run(c, small_ds, 0)
    assert np.array_equal(rd.x_train, prepare_run(c, small_ds, 0).x_train)


def test_upperbound_self_drop_zero(small_ds):
    rep = run_scenario(cfg("upperbound", episodes=()), small_ds)
    assert rep.drop("all", 0) == 0.0 and rep.drop("base", 0) == 0.0


def test_report_invariants_and_files(small_ds, tmp_path):
    cache = ModelCache()
    rep = run_scenario(cfg("icarlplus"), small_ds, cache)
    assert rep.episodes() == [0, 1]
    for r in rep.results:
        rd = prepare_run(rep.config, small_ds, r.run)
        test_counts = np.bincount(rd.y_test[rd.y_test < r.n_classes], minlength=r.n_classes)
        assert np.array_equal(r.confusion.sum(axis=1), test_counts)
        for v in (r.f1_all, r.f1_base, r.ub_f1_all):
            assert 0 <= v <= 1
        assert r.memory_total <= 40
    assert math.isnan(rep.results[0].f1_new)
    rep.write(tmp_path, prefix="x_")
    summary = json.loads((tmp_path / "x_summary.json").read_text())
    assert summary["class_permutations"] == rep.permutations
    assert summary["episodes"][0]["drop_new"] is None
    with open(tmp_path / "x_metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["run", "episode", "metric", "value"]
    assert len(rows) == 1 + 2 * 2 * 8
    assert (tmp_path / "x_confusion_run1_ep1.csv").exists()
    # a fresh cache gives the same numbers
    again = run_scenario(cfg("icarlplus"), small_ds, ModelCache())
    assert [r.f1_all for r in again.results] == [r.f1_all for r in rep.results]


@pytest.mark.parametrize("strategy", ["icarl", "fixed_repr", "upperbound_herded"])
def test_strategies_run(small_ds, strategy):
    rep = run_scenario(cfg(strategy, runs=1), small_ds, final_only=True)
    assert rep.episodes() == [1]
    assert rep.results[0].n_classes == 6


def test_full_memory_budget(small_ds):
    rep = run_scenario(cfg("icarlplus", runs=1, memory="full"), small_ds, final_only=True)
    rd = prepare_run(rep.config, small_ds, 0)
    assert rep.memory_budget == [len(rd.y_train)]


def test_insufficient_classes(small_ds):
    with pytest.raises(ValueError, match="dataset has 8"):
        run_scenario(cfg("icarlplus", base_classes=8), small_ds)


def test_memory_sweep_rows_and_errors(small_ds, tmp_path):
    template = cfg("icarlplus", runs=1)
    with pytest.raises(ValueError, match="smaller than"):
        memory_sweep(template, [3], small_ds)
    rep = memory_sweep(template, [12, "full"], small_ds)
    assert [r["memory"] for r in rep.rows] == [12, "full"]
    rep.write(tmp_path)
    assert json.loads((tmp_path / "memory_sweep.json").read_text())[1]["memory"] == "full"


def test_evaluate_selected_episodes(small_ds):
    rep = run_scenario(cfg("icarlplus", runs=1, episodes=(1, 1, 1)), small_ds, evaluate=[1, 3])
    assert rep.episodes() == [1, 3]
    with pytest.raises(ValueError, match="evaluate"):
        run_scenario(cfg("icarlplus", runs=1), small_ds, evaluate=[5])


def test_herded_reuses_reference_identically(small_ds):
    from trafficcil.cilcore import train_upperbound, train_upperbound_herded

    rd = prepare_run(cfg("upperbound"), small_ds, 0)
    x, y = rd.train_subset(0, 4)
    ref, _ = train_upperbound(x, y, 4, QUICK)
    a, mem_a = train_upperbound_herded(x, y, 4, 12, QUICK)
    b, mem_b = train_upperbound_herded(x, y, 4, 12, QUICK, reference=ref)
    assert mem_a.counts() == mem_b.counts()
    for k in a.net.params:
        assert np.array_equal(a.net.params[k], b.net.params[k])
