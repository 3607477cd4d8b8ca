import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flucmia.datasets import DataRecord
from flucmia.numerics import make_rng
from flucmia.perturb import (IMAGE_KINDS, PerturbationMechanism, neighbor_set, neighbor_stack, perturb_record,
                             perturb_values, strength_schedule)


def mech(kind, side=12):
    extra = {}
    if kind == "shrink-to-centroid":
        extra["centroid"] = (0.5,) * (side * side)
    if kind == "additive-direction":
        extra["direction"] = (1.0,) * (side * side)
    return PerturbationMechanism(kind, side=side, **extra)


ALL_KINDS = IMAGE_KINDS + ("shrink-to-centroid", "additive-direction")


class TestSchedule:
    def test_nns_grid(self):
        lams = strength_schedule(0.98, 0.7, 10)
        assert len(lams) == 10 and lams[0] == 0.98 and lams[-1] == pytest.approx(0.7)
        np.testing.assert_allclose(np.diff(lams), -0.28 / 9, atol=1e-15)
        assert -0.28 / 9 == pytest.approx(-0.031111, abs=1e-6)

    def test_single_point(self):
        assert strength_schedule(0.9, 0.9, 1).tolist() == [0.9]

    def test_bad_m(self):
        with pytest.raises(ValueError):
            strength_schedule(0.9, 0.8, 0)


class TestPerturbRecord:
    @settings(max_examples=40, deadline=None)
    @given(kind=st.sampled_from(ALL_KINDS), seed=st.integers(0, 2**32 - 1))
    def test_identity_at_one(self, kind, seed):
        x = make_rng(seed).uniform(0, 1, 144)
        np.testing.assert_allclose(perturb_values(x, mech(kind), 1.0), x, rtol=0, atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(kind=st.sampled_from(IMAGE_KINDS), lam=st.floats(0.05, 1.0), seed=st.integers(0, 2**32 - 1))
    def test_image_range_and_determinism(self, kind, lam, seed):
        x = make_rng(seed).uniform(0, 1, 144)
        a = perturb_values(x, mech(kind), lam)
        assert a.min() >= 0.0 and a.max() <= 1.0
        assert a.tobytes() == perturb_values(x, mech(kind), lam).tobytes()

    def test_brightness(self):
        x = DataRecord(np.full(144, 0.5), 3)
        out = perturb_record(x, mech("brightness"), 0.9)
        np.testing.assert_allclose(out.values, 0.45, atol=1e-15)
        assert out.id == 3

    def test_crop_on_delta_by_hand(self):
        img = np.zeros((12, 12))
        img[6, 6] = 1.0
        out = perturb_values(img.reshape(-1), mech("crop"), 0.5).reshape(12, 12)
        # output row r samples input row 5.5 + (r - 5.5) / 2; only rows 5..8 fall within one pixel of row 6
        w = np.zeros(12)
        w[5:9] = [0.25, 0.75, 0.75, 0.25]
        np.testing.assert_allclose(out, np.outer(w, w), atol=1e-12)
        assert out[0, 0] == 0.0 and out[11, 11] == 0.0

    def test_crop_keeps_centered_mass_centered(self):
        img = np.zeros((12, 12))
        img[5:7, 5:7] = 1.0
        out = perturb_values(img.reshape(-1), mech("crop"), 0.5).reshape(12, 12)
        r, c = np.mgrid[0:12, 0:12]
        assert (out * r).sum() / out.sum() == pytest.approx(5.5)
        assert (out * c).sum() / out.sum() == pytest.approx(5.5)

    def test_rotation_quarter_turn(self):
        # theta_max 90 and lambda 0 would be a quarter turn; lambda must stay positive, so use a tiny one
        m = PerturbationMechanism("rotation", side=12, theta_max=90.0)
        img = make_rng(0).uniform(0, 1, (12, 12))
        out = perturb_values(img.reshape(-1), m, 1e-12).reshape(12, 12)
        # out[r, c] = img[11 - c, r]; border pixels sample a hair outside the grid and read as zero
        np.testing.assert_allclose(out[1:-1, 1:-1], np.rot90(img, k=-1)[1:-1, 1:-1], atol=1e-9)

    def test_lambda_out_of_range(self):
        with pytest.raises(ValueError):
            perturb_values(np.zeros(144), mech("crop"), 1.5)

    def test_wrong_image_size(self):
        with pytest.raises(ValueError):
            perturb_values(np.zeros(100), mech("crop"), 0.9)


class TestNeighbors:
    def test_identity_schedule(self):
        x = DataRecord(make_rng(0).uniform(0, 1, 144), 0)
        (nb,) = neighbor_set(x, mech("crop"), [1.0])
        np.testing.assert_array_equal(nb.values, x.values)

    def test_default_nns_schedule_gives_distinct(self):
        x = DataRecord(make_rng(1).uniform(0, 1, 144), 0)
        nbs = np.stack([r.values for r in neighbor_set(x, mech("crop"), strength_schedule(0.98, 0.7, 10))])
        d = np.linalg.norm(nbs[:, None] - nbs[None], axis=-1)
        assert (d[~np.eye(10, dtype=bool)] > 1e-6).all()

    def test_shrink_distance_nondecreasing(self):
        x = DataRecord(make_rng(2).uniform(0, 1, 144), 0)
        nbs = neighbor_set(x, mech("shrink-to-centroid"), strength_schedule(0.98, 0.7, 10))
        dist = [np.linalg.norm(x.values - r.values) for r in nbs]
        assert all(b >= a for a, b in zip(dist, dist[1:]))

    def test_stack_layout(self):
        X = make_rng(3).uniform(0, 1, (4, 144))
        S = neighbor_stack(X, mech("brightness"), [0.9, 0.8])
        assert S.shape == (4, 3, 144)
        np.testing.assert_array_equal(S[:, 0], X)
        np.testing.assert_allclose(S[:, 2], 0.8 * X)


def test_geometric_kinds_need_side():
    with pytest.raises(ValueError):
        PerturbationMechanism("crop")
