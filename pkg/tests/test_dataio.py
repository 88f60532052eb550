import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trafficcil.dataio import (
    ClassGenerator,
    DatasetError,
    FlowDataset,
    FlowRecord,
    SpecError,
    SyntheticSpec,
    generate_synthetic,
    parse_jsonl,
)


def line(app, ps, iat, dirs):
    return json.dumps({"app": app, "ps": ps, "iat_us": iat, "dir": dirs}) + "\n"


def test_zero_payload_packets_removed_in_lockstep():
    ds = parse_jsonl(line("a", [0, 512, 0, 256], [5, 6, 7, 8], ["up", "down", "up", "up"]))
    (rec,) = ds.records
    assert rec.ps == (512, 256)
    assert rec.iat_us == (6, 8)
    assert rec.dir == ("down", "up")


def test_single_record_single_class():
    ds = parse_jsonl(line("chat", [10], [1], ["up"]))
    assert len(ds) == 1
    assert ds.labels == ["chat"]
    assert ds.class_id("chat") == 0


def test_length_mismatch_reports_line():
    with pytest.raises(DatasetError) as err:
        parse_jsonl('{"app":"a","ps":[10],"iat_us":[1,2],"dir":["up"]}\n')
    assert err.value.line == 1
    assert "lengths differ" in str(err.value)


def test_malformed_json_reports_line():
    data = line("a", [1], [1], ["up"]) + "{not json\n"
    with pytest.raises(DatasetError) as err:
        parse_jsonl(data)
    assert err.value.line == 2


@pytest.mark.parametrize("data", [b"", b"\n\n"])
def test_empty_stream(data):
    with pytest.raises(DatasetError, match="empty"):
        parse_jsonl(data)


@pytest.mark.parametrize(
    "obj",
    [
        {"app": "a", "ps": [1], "iat_us": [1]},
        {"app": "a", "ps": [-1], "iat_us": [1], "dir": ["up"]},
        {"app": "a", "ps": [1], "iat_us": [1], "dir": ["left"]},
        {"app": "", "ps": [1], "iat_us": [1], "dir": ["up"]},
        [1, 2],
    ],
)
def test_structural_errors(obj):
    with pytest.raises(DatasetError):
        parse_jsonl(json.dumps(obj) + "\n")


def test_empty_after_filtering_dropped_and_counted():
    data = line("a", [0, 0], [1, 2], ["up", "up"]) + line("b", [3], [1], ["down"])
    ds = parse_jsonl(io.BytesIO(data.encode()))
    assert ds.labels == ["b"]
    assert ds.stats.records_read == 2
    assert ds.stats.records_dropped_empty == 1
    assert ds.stats.class_histogram == {"b": 1}


def test_labels_first_appearance_order():
    data = "".join(line(a, [1], [1], ["up"]) for a in ["z", "y", "z", "x"])
    assert parse_jsonl(data).labels == ["z", "y", "x"]


def test_short_share_before_and_after_filtering():
    long_with_zeros = line("a", [0] * 50 + [1] * 60, [1] * 110, ["up"] * 110)
    ds = parse_jsonl(long_with_zeros + line("b", [1], [1], ["up"]))
    assert ds.stats.short_share_raw == 0.5
    assert ds.stats.short_share_filtered == 1.0


records = st.builds(
    lambda app, pkts: (app, pkts),
    st.sampled_from(["a", "b", "c"]),
    st.lists(
        st.tuples(st.integers(0, 1500), st.integers(0, 10**6), st.sampled_from(["up", "down"])),
        min_size=1,
        max_size=30,
    ),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(records, min_size=1, max_size=15))
def test_ingestion_invariants_and_idempotence(recs):
    text = "".join(
        line(app, [p[0] for p in pk], [p[1] for p in pk], [p[2] for p in pk]) for app, pk in recs
    )
    if all(all(p[0] == 0 for p in pk) for _, pk in recs):
        ds = parse_jsonl(text)
        assert len(ds) == 0
        return
    ds = parse_jsonl(text)
    for r in ds.records:
        assert len(r.ps) == len(r.iat_us) == len(r.dir) >= 1
        assert min(r.ps) > 0
    assert sorted(set(ds.targets())) == list(range(ds.n_classes))
    assert parse_jsonl(ds.dumps()) == ds


def test_synthetic_deterministic():
    spec = SyntheticSpec(n_classes=3, flows_per_class=7, seed=42)
    assert generate_synthetic(spec).dumps() == generate_synthetic(spec).dumps()
    other = generate_synthetic(SyntheticSpec(3, 7, 43))
    assert other.dumps() != generate_synthetic(spec).dumps()


def test_synthetic_counts():
    ds = generate_synthetic(SyntheticSpec(n_classes=5, flows_per_class=100, seed=1))
    assert len(ds) == 500
    assert sorted(set(ds.targets())) == [0, 1, 2, 3, 4]
    assert np.bincount(ds.targets()).tolist() == [100] * 5


def test_synthetic_clamps():
    gen = ClassGenerator(burst_len=50, ps_mean=1400, ps_std=2000, iat_log_mean=0.0,
                         iat_log_std=3.0, p_upstream=1.0)
    ds = generate_synthetic(SyntheticSpec(2, 30, 5, (gen, gen)))
    ps = np.concatenate([r.ps for r in ds.records])
    iat = np.concatenate([r.iat_us for r in ds.records])
    assert ps.min() >= 1 and ps.max() <= 1460
    assert iat.min() >= 1
    assert all(d == "up" for r in ds.records for d in r.dir)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(n_classes=1, flows_per_class=5, seed=0),
        dict(n_classes=2, flows_per_class=0, seed=0),
        dict(n_classes=2, flows_per_class=1, seed=0,
             classes=(ClassGenerator(3, 100, 1, 1, 1, 1.5),) * 2),
        dict(n_classes=3, flows_per_class=1, seed=0,
             classes=(ClassGenerator(3, 100, 1, 1, 1, 0.5),) * 2),
    ],
)
def test_synthetic_spec_errors(kwargs):
    with pytest.raises(SpecError):
        generate_synthetic(SyntheticSpec(**kwargs))


def test_spec_from_dict_requires_seed():
    with pytest.raises(SpecError, match="seed"):
        SyntheticSpec.from_dict({"n_classes": 2, "flows_per_class": 3})
    with pytest.raises(SpecError, match="unknown"):
        SyntheticSpec.from_dict({"n_classes": 2, "flows_per_class": 3, "seed": 1, "colour": 2})


def brute_force_threshold_accuracy(values, labels):
    """Best accuracy of a one-feature threshold rule, either polarity."""
    best = 0.0
    for t in np.unique(values):
        pred = (values >= t).astype(int)
        acc = max((pred == labels).mean(), (pred != labels).mean())
        best = max(best, acc)
    return best


def test_two_class_mean_ps_threshold_separable():
    gens = (
        ClassGenerator(20, 100, 30, 6.0, 1.0, 0.5),
        ClassGenerator(20, 1200, 30, 6.0, 1.0, 0.5),
    )
    ds = generate_synthetic(SyntheticSpec(2, 200, 9, gens))
    mean_ps = np.array([np.mean(r.ps) for r in ds.records])
    assert brute_force_threshold_accuracy(mean_ps, ds.targets()) > 0.99


def test_subset_keeps_label_index():
    ds = FlowDataset([FlowRecord("a", (1,), (1,), ("up",)), FlowRecord("b", (1,), (1,), ("up",))], ["a", "b"])
    sub = ds.subset([1])
    assert sub.labels == ["a", "b"]
    assert sub.targets().tolist() == [1]
