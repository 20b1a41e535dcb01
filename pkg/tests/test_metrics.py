import itertools

import numpy as np
import pytest

from mecole.errors import DataError
from mecole.metrics import MetricsReport, clustering_accuracy, nmi


def brute_force_accuracy(pred, truth, K):
    best = 0.0
    for perm in itertools.permutations(range(K)):
        mapped = np.array([perm[p] for p in pred])
        best = max(best, float((mapped == truth).mean()))
    return best


def test_accuracy_perfect_after_relabeling():
    pred = np.array([1, 1, 0, 0])
    truth = np.array([0, 0, 1, 1])
    assert clustering_accuracy(pred, truth) == 1.0


def test_accuracy_matches_brute_force_permutations(rng):
    for K in (2, 3, 4):
        for _ in range(25):
            pred = rng.integers(0, K, size=30)
            truth = rng.integers(0, K, size=30)
            assert clustering_accuracy(pred, truth) == pytest.approx(
                brute_force_accuracy(pred, truth, K), abs=1e-12)


def test_accuracy_excludes_unlabeled():
    pred = np.array([0, 1, 0])
    truth = np.array([0, 1, -1])
    assert clustering_accuracy(pred, truth) == 1.0


def test_accuracy_shape_mismatch():
    with pytest.raises(DataError):
        clustering_accuracy(np.array([0, 1]), np.array([0]))


def test_nmi_identical_partitions_is_one():
    labels = np.array([0, 0, 1, 1, 2, 2])
    assert nmi(labels, labels) == pytest.approx(1.0)
    assert nmi(1 - np.array([0, 0, 1, 1]), np.array([0, 0, 1, 1])) == \
        pytest.approx(1.0)


def test_nmi_hand_computed_four_nodes():
    # pred = (0,0,1,1), truth = (0,1,0,1): joint is uniform over 4 cells,
    # MI = 0, so NMI = 0
    assert nmi(np.array([0, 0, 1, 1]), np.array([0, 1, 0, 1])) == \
        pytest.approx(0.0, abs=1e-12)


def test_nmi_hand_computed_partial_overlap():
    # pred = (0,0,0,1), truth = (0,0,1,1): compute by hand
    pred = np.array([0, 0, 0, 1])
    truth = np.array([0, 0, 1, 1])
    # joint: p(0,0)=1/2, p(0,1)=1/4, p(1,1)=1/4
    mi = (0.5 * np.log(0.5 / (0.75 * 0.5))
          + 0.25 * np.log(0.25 / (0.75 * 0.5))
          + 0.25 * np.log(0.25 / (0.25 * 0.5)))
    h_pred = -(0.75 * np.log(0.75) + 0.25 * np.log(0.25))
    h_truth = np.log(2)
    expected = mi / ((h_pred + h_truth) / 2)
    assert nmi(pred, truth) == pytest.approx(expected, abs=1e-12)


def test_nmi_degenerate_single_cluster_zero():
    assert nmi(np.zeros(5, dtype=int), np.array([0, 0, 1, 1, 1])) == 0.0


def test_metrics_report_json_roundtrip():
    import json
    r = MetricsReport(seed=3, config={"K": 2}, variant="baseline")
    r.accuracy = 0.5
    r.epoch_losses.append({"epoch": 0, "L1": 1.0, "L2": 0.1, "LCE": 0.2,
                           "L": 1.3})
    d = json.loads(r.to_json())
    assert d["seed"] == 3
    assert d["accuracy"] == 0.5
    assert d["epoch_losses"][0]["L"] == 1.3
