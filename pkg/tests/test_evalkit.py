import math

import numpy as np
import pytest

from helpers import random_transform
from softalign.evalkit import (
    KeypointSet,
    aggregate_pck,
    evaluate_keypoints,
    keypoints_from_transform,
    mask_iou,
    pck,
    pck_threshold,
    read_keypoints,
    transfer_errors,
    write_keypoints,
)
from softalign.features import GrayImage
from softalign.geometry import Transform, apply


def _kps(rows, sizes=None):
    return KeypointSet(np.asarray(rows, dtype=float), sizes=sizes)


class TestKeypointSet:
    def test_validation(self):
        with pytest.raises(ValueError, match="n, 4"):
            _kps([[0.1, 0.2, 0.3]])
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            _kps([[0.1, 0.2, 0.3, 1.2]])
        with pytest.raises(ValueError, match="at least one"):
            _kps(np.zeros((0, 4)))
        ok = _kps([[0.1, 0.2, 0.3, 0.4], [0.5, 0.5, 0.5, 0.5]])
        assert len(ok) == 2


class TestTransferErrors:
    def test_identity_offset(self):
        # target keypoints sit 0.3 right of their sources; identity transfer
        # leaves exactly that gap
        kps = _kps([[0.2, 0.5, 0.5, 0.5], [0.1, 0.3, 0.4, 0.3]])
        errs = transfer_errors(kps, Transform.identity("affine"), "pfpascal")
        np.testing.assert_allclose(errs, [0.3, 0.3], atol=1e-12)

    def test_ground_truth_gives_zero(self):
        rng = np.random.default_rng(80)
        T = random_transform(rng, "affine", magnitude=0.5)
        kps = keypoints_from_transform(T, 20, seed=81)
        errs = transfer_errors(kps, T, "pfpascal")
        assert errs.max() < 1e-9

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(82)
        T = random_transform(rng, "homography", magnitude=0.4)
        coords = rng.uniform(0.2, 0.8, size=(15, 4))
        kps = _kps(coords, sizes=(120, 90, 64, 64))
        for protocol in ("pfpascal", "tss"):
            errs = transfer_errors(kps, T, protocol)
            for n in range(15):
                xs, ys, xt, yt = coords[n]
                mapped = apply(T, np.array([[2 * xt - 1, 2 * yt - 1]]))[0]
                px, py = (mapped + 1) / 2
                dx, dy = px - xs, py - ys
                if protocol == "tss":
                    want = math.hypot(dx * 120, dy * 90)
                else:
                    want = math.hypot(dx, dy)
                np.testing.assert_allclose(errs[n], want, rtol=1e-12)

    def test_tss_requires_sizes(self):
        kps = _kps([[0.5, 0.5, 0.5, 0.5]])
        with pytest.raises(ValueError, match="sizes"):
            transfer_errors(kps, Transform.identity("affine"), "tss")
        with pytest.raises(ValueError, match="protocol"):
            transfer_errors(kps, Transform.identity("affine"), "pascal")


class TestPck:
    def test_half_correct_pfpascal(self):
        assert pck(np.array([0.05, 0.15]), "pfpascal", 0.1) == 0.5

    def test_half_correct_tss(self):
        got = pck(np.array([4.9, 5.1]), "tss", 0.05, sizes=(100, 100, 64, 64))
        assert got == 0.5

    def test_strict_inequality(self):
        assert pck(np.array([0.1]), "pfpascal", 0.1) == 0.0
        assert pck(np.array([0.1 - 1e-12]), "pfpascal", 0.1) == 1.0

    def test_threshold_rule(self):
        assert pck_threshold("pfpascal", 0.1) == pytest.approx(0.1)
        assert pck_threshold("tss", 0.05, sizes=(100, 80, 64, 64)) == pytest.approx(5.0)
        with pytest.raises(ValueError, match="alpha"):
            pck_threshold("pfpascal", 0.0)
        with pytest.raises(ValueError, match="sizes"):
            pck_threshold("tss", 0.05)

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(83)
        errs = rng.uniform(0, 0.4, size=50)
        vals = [pck(errs, "pfpascal", a) for a in (0.02, 0.05, 0.1, 0.2, 0.5)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_order_invariant(self):
        errs = np.array([0.3, 0.01, 0.11, 0.09])
        assert pck(errs, "pfpascal", 0.1) == pck(errs[::-1], "pfpascal", 0.1)

    def test_aggregate(self):
        lists = [np.array([0.05, 0.15]), np.array([0.01, 0.02, 0.03, 0.04])]
        per_pair, pooled = aggregate_pck(lists, "pfpascal", 0.1)
        np.testing.assert_allclose(per_pair, (0.5 + 1.0) / 2)
        np.testing.assert_allclose(pooled, 5 / 6)

    def test_evaluate_keypoints_report(self):
        kps = _kps([[0.2, 0.5, 0.5, 0.5], [0.45, 0.5, 0.5, 0.5]])
        rep = evaluate_keypoints(kps, Transform.identity("affine"), "pfpascal", 0.1)
        assert rep.pck == 0.5
        assert rep.protocol == "pfpascal"
        np.testing.assert_allclose(rep.errors, [0.3, 0.05])


class TestMaskIou:
    def _square(self, top, left, side=16, h=64, w=64, fill=1.0):
        m = np.zeros((h, w))
        m[top : top + side, left : left + side] = fill
        return GrayImage(m)

    def test_identical_masks_identity(self):
        m = self._square(10, 10)
        iou, empty = mask_iou(m, m, Transform.identity("affine"))
        assert iou == 1.0 and not empty

    def test_disjoint(self):
        a = self._square(4, 4, side=8)
        b = self._square(40, 40, side=8)
        iou, empty = mask_iou(a, b, Transform.identity("affine"))
        assert iou == 0.0 and not empty

    def test_half_width_translation_is_one_third(self):
        # 16-wide square shifted 8 px: inter 8*16, union 24*16
        a = self._square(10, 10)
        b = self._square(10, 18)
        iou, empty = mask_iou(a, b, Transform.identity("affine"))
        np.testing.assert_allclose(iou, 1 / 3)
        assert not empty

    def test_translation_transform_restores_overlap(self):
        # T maps target pixels to source pixels; the target mask sits 8 px
        # right of the source mask, so shifting x by -8 px in normalized
        # units realigns them exactly.
        a = self._square(10, 10)
        b = self._square(10, 18)
        dx = -8 * 2 / (64 - 1)
        T = Transform.affine(np.array([1, 0, dx, 0, 1, 0], dtype=float))
        iou, _ = mask_iou(a, b, T)
        np.testing.assert_allclose(iou, 1.0)

    def test_both_empty(self):
        z = GrayImage(np.zeros((32, 32)))
        iou, empty = mask_iou(z, z, Transform.identity("affine"))
        assert iou == 1.0 and empty

    def test_soft_masks_binarized(self):
        a = self._square(10, 10, fill=0.6)
        b = self._square(10, 10, fill=0.9)
        iou, empty = mask_iou(a, b, Transform.identity("affine"))
        assert iou == 1.0 and not empty
        # below the 0.5 cut the mask is empty
        low = self._square(10, 10, fill=0.3)
        iou, empty = mask_iou(low, b, Transform.identity("affine"))
        assert iou == 0.0 and not empty

    def test_declared_size_mismatch(self):
        m = self._square(10, 10)
        with pytest.raises(ValueError, match="declared"):
            mask_iou(m, m, Transform.identity("affine"), declared_sizes=(32, 32, 64, 64))


class TestKeypointIo:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(84)
        kps = _kps(rng.uniform(0, 1, size=(25, 4)))
        path = tmp_path / "kp.csv"
        write_keypoints(kps, path)
        back = read_keypoints(path)
        np.testing.assert_array_equal(back.coords, kps.coords)

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "kp.csv"
        path.write_text("a,b,c,d\n0.1,0.2,0.3,0.4\n")
        with pytest.raises(ValueError, match="header"):
            read_keypoints(path)

    def test_bad_value_names_location(self, tmp_path):
        path = tmp_path / "kp.csv"
        path.write_text("xs,ys,xt,yt\n0.1,0.2,0.3,0.4\n0.1,oops,0.3,0.4\n")
        with pytest.raises(ValueError, match=r"kp\.csv:3"):
            read_keypoints(path)

    def test_missing_file_oserror(self, tmp_path):
        with pytest.raises(OSError):
            read_keypoints(tmp_path / "nope.csv")


class TestKeypointsFromTransform:
    def test_points_valid_and_consistent(self):
        rng = np.random.default_rng(85)
        for seed in range(5):
            T = random_transform(rng, "affine", magnitude=0.6)
            kps = keypoints_from_transform(T, 30, seed=seed)
            assert len(kps) == 30
            assert kps.coords.min() >= 0 and kps.coords.max() <= 1
            errs = transfer_errors(kps, T, "pfpascal")
            assert errs.max() < 1e-9

    def test_determinism(self):
        T = Transform.identity("affine")
        a = keypoints_from_transform(T, 10, seed=7)
        b = keypoints_from_transform(T, 10, seed=7)
        np.testing.assert_array_equal(a.coords, b.coords)

    def test_impossible_transform_raises(self):
        # shove everything far outside the unit square
        T = Transform.affine(np.array([1, 0, 50, 0, 1, 50], dtype=float))
        with pytest.raises(ValueError, match="too few"):
            keypoints_from_transform(T, 10, seed=0)
