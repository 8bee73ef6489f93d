import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcdnn import nn
from mcdnn.arch import parse_arch
from mcdnn.data_io import Dataset, Sample
from mcdnn.ensemble import (EnsembleSpec, average_scores, benchmark, evaluate,
                            latency_breakdown, predict_topk)
from mcdnn.imageprep import normalize_for_net

SMALL = "12x12-3C3-MP2-5N-12N"

# Published per-column speeds (ms/character) and ensemble membership, kept as
# data to check that ensemble cost is the sum of its members.
COLUMN_MS = [3.03, 3.03, 3.97, 2.15, 2.54, 2.54, 2.54, 2.14]
COLUMN_ERR = [5.528, 5.931, 5.792, 5.625, 5.951, 6.114, 6.339, 5.995]
ENSEMBLES = [
    ((0,), 3.03, 5.528),
    ((1,), 3.03, 5.931),
    ((0, 1, 2, 3), 12.18, 4.347),
    ((4,), 2.54, 5.951),
    ((5,), 2.54, 6.114),
    ((4, 5), 5.08, 5.113),
    ((4, 5, 6, 7), 9.76, 4.664),
    ((0, 1, 4, 5), 11.14, 4.449),
    (tuple(range(8)), 22.04, 4.215),
]


@pytest.mark.parametrize("members,ms,err", ENSEMBLES)
def test_published_speed_rows_are_additive(members, ms, err):
    assert sum(COLUMN_MS[i] for i in members) == pytest.approx(ms, rel=0.01)
    if len(members) == 1:
        assert err == COLUMN_ERR[members[0]]
    else:
        assert err < min(COLUMN_ERR[i] for i in members)


def test_average_scores():
    out = average_scores([[0.2, 0.8], [0.6, 0.4]])
    np.testing.assert_allclose(out, [0.4, 0.6])
    with pytest.raises(ValueError):
        average_scores([])
    with pytest.raises(ValueError):
        average_scores([[1.0], [0.5, 0.5]])


def test_predict_topk_ties_prefer_low_index():
    assert predict_topk([0.1, 0.5, 0.5, 0.2], 2).tolist() == [1, 2]
    assert predict_topk([0.25] * 4, 3).tolist() == [0, 1, 2]
    with pytest.raises(ValueError):
        predict_topk([0.1, 0.9], 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_topk_matches_sort_oracle(seed, k):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 50, 3755) / 50.0
    oracle = sorted(range(3755), key=lambda i: (-scores[i], i))[:k]
    assert predict_topk(scores, k).tolist() == oracle


def test_ensemble_spec_validation():
    with pytest.raises(ValueError):
        EnsembleSpec(())
    with pytest.raises(ValueError):
        EnsembleSpec((0, 0))
    assert EnsembleSpec.all_of({"a": 1, "b": 2}).member_ids == ("a", "b")


def make_columns(n, arch=SMALL):
    return [nn.init_column(parse_arch(arch), 100 + i) for i in range(n)]


def make_data(n, classes=12, side=12, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset([Sample(rng.integers(0, 256, (side, side), dtype=np.uint8), i % classes)
                    for i in range(n)], classes)


def test_single_member_matches_column():
    cols, data = make_columns(1), make_data(30)
    rep = evaluate(cols, EnsembleSpec((0,)), data, ks=(1, 5))
    wrong = sum(int(np.argmax(nn.forward_column(cols[0], normalize_for_net(s.image))) != s.label)
                for s in data)
    assert rep.topk_counts[1] == wrong


def test_identical_members_match_single():
    col = make_columns(1)[0]
    data = make_data(40)
    solo = evaluate([col], EnsembleSpec((0,)), data, ks=(1, 3, 10))
    many = evaluate([col, col.copy(), col.copy()], EnsembleSpec((0, 1, 2)), data, ks=(1, 3, 10))
    assert solo.topk_counts == many.topk_counts


def test_member_order_irrelevant():
    cols, data = make_columns(3), make_data(40)
    a = evaluate(cols, EnsembleSpec((0, 1, 2)), data)
    b = evaluate(cols, EnsembleSpec((2, 0, 1)), data)
    assert a.topk_counts == b.topk_counts


def test_end_to_end_recount():
    cols, data = make_columns(3), make_data(50)
    rep = evaluate(cols, EnsembleSpec((0, 1, 2)), data, ks=(1, 3, 10))
    counts = {1: 0, 3: 0, 10: 0}
    for s in data:
        x = normalize_for_net(s.image)
        avg = sum(nn.forward_column(c, x) for c in cols) / 3
        order = sorted(range(12), key=lambda i: (-avg[i], i))
        for k in counts:
            counts[k] += s.label not in order[:k]
    assert rep.topk_counts == counts
    assert rep.topk_counts[10] <= rep.topk_counts[3] <= rep.topk_counts[1]


def test_threads_do_not_change_counts():
    cols, data = make_columns(2), make_data(33)
    a = evaluate(cols, EnsembleSpec((0, 1)), data, threads=1)
    b = evaluate(cols, EnsembleSpec((0, 1)), data, threads=3)
    assert a.topk_counts == b.topk_counts


def test_evaluate_rejects_mismatch():
    cols = make_columns(1) + make_columns(1, "12x12-3C3-MP2-5N-7N")
    with pytest.raises(ValueError):
        evaluate(cols, EnsembleSpec((0, 1)), make_data(4))
    with pytest.raises(ValueError):
        evaluate(cols, EnsembleSpec((0,)), make_data(4, classes=7))
    with pytest.raises(ValueError):
        evaluate(cols, EnsembleSpec((0,)), make_data(4), ks=(13,))


def test_report_formats():
    cols, data = make_columns(2), make_data(10)
    rep = evaluate(cols, EnsembleSpec((0, 1)), data, ks=(1, 10))
    text = rep.to_text()
    assert text.startswith("n_samples=10\n")
    assert f"top10_errors={rep.topk_counts[10]}/10" in text
    assert rep.to_dict()["topk_counts"]["1"] == rep.topk_counts[1]


def test_latency_ratio_single_member():
    cols, data = make_columns(1, "24x24-8C3-MP2-10N-12N"), make_data(60, side=24)
    check = benchmark(cols, EnsembleSpec((0,)), data, warmup=5, repeats=3)
    assert check.ok(0.25)
    rep = evaluate(cols, EnsembleSpec((0,)), data)
    assert latency_breakdown(rep).ratio >= 1.0


def test_report_without_timing_is_stable():
    cols, data = make_columns(2), make_data(10)
    a = evaluate(cols, EnsembleSpec((0, 1)), data)
    b = evaluate(cols, EnsembleSpec((0, 1)), data)
    assert "latency" not in a.to_text(timing=False)
    assert a.to_text(timing=False) == b.to_text(timing=False)
    assert a.to_json(timing=False) == b.to_json(timing=False)
