import numpy as np
import pytest

from dlv.metrics import (
    ImageRecord,
    diff_class,
    l_distance,
    records_to_csv,
    render_text_table,
    robustness_report,
    summarize_records,
)
from dlv.network import LayerSpec, Network


def test_l_distance_zero_and_examples():
    x = np.array([0.3, 0.7])
    assert l_distance(x, x, 1) == 0.0
    assert l_distance(x, x, 2) == 0.0
    a = np.array([0.0, 0.0])
    b = np.array([1.0, 0.0])
    assert abs(l_distance(a, b, 1) - 0.5) <= 1e-15
    assert abs(l_distance(a, b, 2) - 1.0 / np.sqrt(2.0)) <= 1e-15


def test_l_distance_shape_mismatch_and_order():
    with pytest.raises(ValueError):
        l_distance(np.zeros(2), np.zeros(3), 1)
    with pytest.raises(ValueError):
        l_distance(np.zeros(2), np.zeros(2), 3)


def test_l_distance_triangle_inequality():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        x, y, z = rng.normal(size=(3, 5))
        for order in (1, 2):
            assert l_distance(x, z, order) <= l_distance(x, y, order) + l_distance(y, z, order) + 1e-12


def linear_net():
    w = np.array([[1.0, 0.0], [-1.0, 0.0]])
    return Network(layers=(LayerSpec("dense", w, np.array([0.0, 1.0])),), input_shape=(2,), class_count=2)


def test_diff_class_cases():
    net = linear_net()
    x = np.array([0.2, 0.5])
    assert diff_class(net, x, x) == 0
    y = np.array([0.8, 0.5])  # crosses the x0 = 0.5 boundary
    assert diff_class(net, x, y) == 1
    assert diff_class(net, x, y) == diff_class(net, y, x)


def rec(i, method, success, l1, l2):
    return ImageRecord(image_id=i, method=method, success=success, l1=l1, l2=l2, steps=1, seconds=0.01)


def test_summarize_hand_batch():
    records = [
        rec(0, "m", True, 0.02, 0.1),
        rec(1, "m", True, 0.04, 0.3),
        rec(2, "m", False, None, None),
        rec(3, "m", False, None, None),
    ]
    row = summarize_records("m", {}, records)
    assert abs(row.l1_avg - 0.03) <= 1e-12
    assert abs(row.l2_avg - 0.2) <= 1e-12
    assert row.success_rate == 0.5
    assert row.successes == 2 and row.count == 4
    assert row.excluded_from_distance == 0


def test_summarize_all_failures_reports_na():
    records = [rec(i, "m", False, None, None) for i in range(3)]
    row = summarize_records("m", {}, records)
    assert row.success_rate == 0.0
    assert row.l1_avg is None and row.l2_avg is None
    table = render_text_table([row])
    assert "n/a" in table


def test_summarize_single_success_average_is_distance():
    records = [rec(0, "m", True, 0.123, 0.456), rec(1, "m", False, None, None)]
    row = summarize_records("m", {}, records)
    assert row.l1_avg == 0.123 and row.l2_avg == 0.456


def test_success_without_distance_counts_for_rate_only():
    # a verifier success without input reconstruction has no distances
    records = [
        rec(0, "v", True, 0.1, 0.2),
        ImageRecord(image_id=1, method="v", success=True, l1=None, l2=None, steps=5, seconds=0.0),
        rec(2, "v", False, None, None),
    ]
    row = summarize_records("v", {}, records)
    assert row.success_rate == 2 / 3
    assert row.l1_avg == 0.1
    assert row.excluded_from_distance == 1


def test_rate_invariant_under_permutation():
    rng = np.random.default_rng(1)
    records = [rec(i, "m", bool(rng.integers(0, 2)), 0.1, 0.1) for i in range(20)]
    base = summarize_records("m", {}, records)
    for _ in range(5):
        rng.shuffle(records)
        again = summarize_records("m", {}, records)
        assert again.success_rate == base.success_rate
        assert again.l1_avg == base.l1_avg


def test_robustness_report_runs_and_recomputes(minidigits, digit_images):
    from dlv.attacks import fgsm

    methods = [
        ("fgsm(0.2)", {"epsilon": 0.2}, lambda net, img: fgsm(net, img, 0.2)),
        ("fgsm(0.05)", {"epsilon": 0.05}, lambda net, img: fgsm(net, img, 0.05)),
    ]
    rows, records = robustness_report(minidigits, digit_images[:12], methods)
    assert len(rows) == 2 and len(records) == 24
    # summary averages recomputed from the raw records match to 1e-12
    for row in rows:
        mine = [r for r in records if r.method == row.method and r.success and r.l1 is not None]
        if mine:
            assert abs(row.l1_avg - np.mean([r.l1 for r in mine])) <= 1e-12
            assert abs(row.l2_avg - np.mean([r.l2 for r in mine])) <= 1e-12
        assert row.success_rate == sum(r.success for r in records if r.method == row.method) / row.count


def test_robustness_report_records_failures_without_abort(minidigits, digit_images):
    def broken(net, img):
        raise RuntimeError("boom")

    rows, records = robustness_report(minidigits, digit_images[:3], [("broken", {}, broken)])
    assert rows[0].count == 3 and rows[0].successes == 0
    assert all("boom" in r.note for r in records)


def test_records_csv_header_and_shape():
    text = records_to_csv([rec(0, "m", True, 0.5, 0.25)])
    lines = text.strip().split("\n")
    assert lines[0] == "image_id,method,success,l1,l2,steps,seconds"
    assert lines[1].startswith("0,m,1,0.5,0.25,1,")
