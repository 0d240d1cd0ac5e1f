import numpy as np

from rcv.boxops import (
    average_precision,
    evaluate_classwise,
    intersection_volume,
    iou3d,
    match_detections,
    nms3d,
)
from rcv.geometry import OrientedBox3D, RigidTransform, compose

from conftest import random_box, random_transform


def mc_iou(a: OrientedBox3D, b: OrientedBox3D, n=1_000_000, seed=0) -> float:
    """Monte-Carlo oracle: sample inside box a, count hits inside b."""
    rng = np.random.default_rng(seed)
    local = rng.uniform(-0.5, 0.5, (n, 3)) * a.extent
    world = local @ a.pose.rotation.T + a.center
    in_b_local = (world - b.center) @ b.pose.rotation
    hits = (np.abs(in_b_local) <= b.extent / 2).all(axis=1).sum()
    inter = a.volume() * hits / n
    union = a.volume() + b.volume() - inter
    return inter / union


def overlapping_pair(rng):
    a = random_box(rng, t_scale=0.5)
    shift = rng.uniform(-0.4, 0.4, 3) * a.extent
    b = random_box(rng, t_scale=0.0)
    b = b.replace(pose=RigidTransform(b.pose.rotation, a.center + shift))
    return a, b


class TestIou3d:
    def test_identical(self, rng):
        a = random_box(rng)
        assert iou3d(a, a) == 1.0

    def test_disjoint(self):
        a = OrientedBox3D(RigidTransform(np.eye(3), [0, 0, 0]), [1, 1, 1])
        b = OrientedBox3D(RigidTransform(np.eye(3), [10, 0, 0]), [1, 1, 1])
        assert iou3d(a, b) == 0.0

    def test_axis_aligned_half_overlap(self):
        a = OrientedBox3D(RigidTransform(np.eye(3), [0, 0, 0]), [2, 2, 2])
        b = OrientedBox3D(RigidTransform(np.eye(3), [1, 0, 0]), [2, 2, 2])
        # intersection 1x2x2 = 4, union 16 - 4 = 12
        assert abs(iou3d(a, b) - 4 / 12) < 1e-12

    def test_rotated_45_matches_analytic(self):
        c = np.cos(np.pi / 4)
        s = np.sin(np.pi / 4)
        rot = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        a = OrientedBox3D(RigidTransform(np.eye(3), [0, 0, 0]), [1, 1, 1])
        b = OrientedBox3D(RigidTransform(rot, [0, 0, 0]), [1, 1, 1])
        octagon = 2 * (np.sqrt(2) - 1)          # unit square vs 45-deg copy
        expected = octagon / (2 - octagon)
        assert abs(iou3d(a, b) - expected) < 1e-9
        assert abs(iou3d(a, b) - mc_iou(a, b)) < 0.005

    def test_contained_box(self):
        a = OrientedBox3D(RigidTransform(np.eye(3), [0, 0, 0]), [2, 2, 2])
        b = OrientedBox3D(RigidTransform(np.eye(3), [0.1, 0, 0]), [1, 1, 1])
        assert abs(iou3d(a, b) - 1 / 8) < 1e-12

    def test_touching_faces_zero_volume(self):
        a = OrientedBox3D(RigidTransform(np.eye(3), [0, 0, 0]), [1, 1, 1])
        b = OrientedBox3D(RigidTransform(np.eye(3), [1.0, 0, 0]), [1, 1, 1])
        assert iou3d(a, b) < 1e-9

    def test_monte_carlo_oracle(self, rng):
        for k in range(20):
            a, b = overlapping_pair(rng)
            exact = iou3d(a, b)
            approx = mc_iou(a, b, n=200_000, seed=k)
            assert abs(exact - approx) < 0.012

    def test_symmetric_exact(self, rng):
        for _ in range(30):
            a, b = overlapping_pair(rng)
            assert iou3d(a, b) == iou3d(b, a)

    def test_range(self, rng):
        for _ in range(50):
            a, b = overlapping_pair(rng)
            assert 0.0 <= iou3d(a, b) <= 1.0

    def test_rigid_invariance(self, rng):
        for _ in range(15):
            a, b = overlapping_pair(rng)
            t = random_transform(rng)
            a2 = a.replace(pose=compose(t, a.pose))
            b2 = b.replace(pose=compose(t, b.pose))
            assert abs(iou3d(a, b) - iou3d(a2, b2)) < 1e-6

    def test_intersection_volume_self(self, rng):
        a = random_box(rng)
        assert abs(intersection_volume(a, a) - a.volume()) < 1e-9 * a.volume()


class TestNms3d:
    def test_singleton(self, rng):
        a = random_box(rng, score=0.5)
        assert nms3d([a]) == [a]

    def test_duplicate_keeps_higher_score(self, rng):
        a = random_box(rng)
        hi = a.replace(score=0.9)
        lo = a.replace(score=0.8)
        kept = nms3d([lo, hi], tau=0.25)
        assert kept == [hi]

    def test_matches_bruteforce_reference(self, rng):
        def reference(boxes, tau):
            order = sorted(boxes, key=lambda b: (-b.score, *b.center, *b.extent,
                                                 b.class_label))
            kept = []
            for b in order:
                if all(b.class_label != k.class_label or iou3d(b, k) < tau
                       for k in kept):
                    kept.append(b)
            return kept

        for trial in range(10):
            # chain of shifted boxes with pairwise IoU straddling tau
            base = OrientedBox3D(RigidTransform(np.eye(3), [0, 0, 0]), [1, 1, 1])
            boxes = []
            for i in range(8):
                shift = np.array([0.3 * i, 0, 0])
                boxes.append(OrientedBox3D(
                    RigidTransform(np.eye(3), shift), [1, 1, 1],
                    class_label="c", score=float(rng.uniform(0.1, 1.0))))
            tau = 0.25
            got = nms3d(boxes, tau)
            ref = reference(boxes, tau)
            assert [b.score for b in got] == [b.score for b in ref]
            for x, y in zip(got, ref):
                assert np.array_equal(x.center, y.center)

    def test_pairwise_iou_below_tau(self, rng):
        boxes = [random_box(rng, t_scale=0.8, class_label="c",
                            score=float(rng.uniform(0, 1))) for _ in range(15)]
        kept = nms3d(boxes, tau=0.3)
        for i in range(len(kept)):
            for j in range(i + 1, len(kept)):
                assert iou3d(kept[i], kept[j]) < 0.3

    def test_classes_do_not_suppress(self, rng):
        a = random_box(rng, class_label="chair", score=0.9)
        b = a.replace(class_label="table", score=0.5)
        assert len(nms3d([a, b], tau=0.1)) == 2

    def test_highest_score_always_kept(self, rng):
        boxes = [random_box(rng, t_scale=0.5, class_label="c",
                            score=float(s)) for s in rng.uniform(0, 1, 12)]
        best = max(boxes, key=lambda b: b.score)
        assert any(k is best for k in nms3d(boxes, tau=0.2))


def staircase_scenario():
    """3 GTs, 4 predictions, the rank-2 prediction is a false positive."""
    def at(x, score, label="c"):
        return OrientedBox3D(RigidTransform(np.eye(3), [x, 0, 0]), [1, 1, 1],
                             class_label=label, score=score)
    gts = [at(0.0, 1.0), at(5.0, 1.0), at(10.0, 1.0)]
    preds = [
        at(0.0, 0.9),    # rank 1, TP
        at(20.0, 0.8),   # rank 2, FP (no GT nearby)
        at(5.0, 0.7),    # rank 3, TP
        at(10.0, 0.6),   # rank 4, TP
    ]
    return preds, gts


class TestAveragePrecision:
    def test_perfect(self, rng):
        gts = [random_box(rng, class_label="c") for _ in range(5)]
        preds = [g.replace(score=float(s))
                 for g, s in zip(gts, rng.uniform(0.5, 1.0, 5))]
        assert average_precision(preds, gts, 0.15, "allpoint") == 1.0
        assert average_precision(preds, gts, 0.15, "R40") == 1.0

    def test_zero_predictions(self, rng):
        gts = [random_box(rng, class_label="c")]
        assert average_precision([], gts, 0.15, "allpoint") == 0.0

    def test_no_ground_truth_absent(self, rng):
        preds = [random_box(rng, class_label="c", score=0.5)]
        assert average_precision(preds, [], 0.15, "allpoint") is None

    def test_hand_computed_staircase_allpoint(self):
        preds, gts = staircase_scenario()
        # precisions 1, 1/2, 2/3, 3/4 at recalls 1/3, 1/3, 2/3, 1
        # interpolated: 1, 3/4, 3/4, 3/4
        expected = (1 / 3) * 1.0 + (2 / 3 - 1 / 3) * 0.75 + (1 - 2 / 3) * 0.75
        got = average_precision(preds, gts, 0.15, "allpoint")
        assert abs(got - expected) < 1e-12

    def test_hand_computed_staircase_r40(self):
        preds, gts = staircase_scenario()
        # recalls 1/40..13/40 <= 1/3 see precision 1.0; the rest see 0.75
        expected = (13 * 1.0 + 27 * 0.75) / 40
        got = average_precision(preds, gts, 0.15, "R40")
        assert abs(got - expected) < 1e-12

    def test_ap_monotone_in_iou_quality(self):
        preds, gts = staircase_scenario()
        base = average_precision(preds, gts, 0.15, "allpoint")
        # degrade rank-1 prediction below threshold: shift it away
        worse = [preds[0].replace(pose=RigidTransform(np.eye(3), [3.0, 0, 0]))] \
            + preds[1:]
        degraded = average_precision(worse, gts, 0.15, "allpoint")
        assert degraded <= base

    def test_match_result_each_gt_once(self):
        preds, gts = staircase_scenario()
        m = match_detections(preds, gts, 0.15)
        matched = [j for j in m.matched_gt if j is not None]
        assert len(matched) == len(set(matched)) == 3
        assert m.num_gt == 3 and m.num_pred == 4

    def test_evaluate_classwise_report_schema(self, rng):
        gts = [random_box(rng, class_label="chair")]
        preds = [gts[0].replace(score=0.9)]
        reports = evaluate_classwise(preds, gts)
        assert reports == [{"class": "chair", "iou_thresh": 0.15,
                            "mode": "allpoint", "ap": 1.0,
                            "num_gt": 1, "num_pred": 1}]
