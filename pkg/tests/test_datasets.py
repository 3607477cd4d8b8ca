import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flucmia.datasets import (ROLES, DatasetConfig, LabeledSplit, generate, generate_blob_images, generate_ring2d,
                              load_dataset, render_blobs, save_dataset, split_dataset, stack)
from flucmia.numerics import make_rng

from conftest import small_counts


def ring(noise, n=1000):
    return DatasetConfig(kind="ring2d", counts=small_counts(1), n_records=n, noise=noise)


class TestRing:
    def test_noiseless_on_circle(self):
        recs = generate_ring2d(ring(0.0), make_rng(0))
        radii = np.linalg.norm(stack(recs), axis=1)
        np.testing.assert_allclose(radii, 1.0, rtol=0, atol=1e-12)

    def test_mean_radius(self):
        recs = generate_ring2d(ring(0.05), make_rng(1))
        assert abs(np.linalg.norm(stack(recs), axis=1).mean() - 1.0) < 0.01

    def test_same_seed(self):
        a = stack(generate_ring2d(ring(0.1), make_rng(2)))
        b = stack(generate_ring2d(ring(0.1), make_rng(2)))
        assert a.tobytes() == b.tobytes()


class TestBlobs:
    def test_zero_amplitude(self):
        assert not render_blobs(12, [(4.0, 6.0)], [2.0], [0.0]).any()

    def test_pixel_range(self):
        cfg = DatasetConfig(counts=small_counts(20), noise=0.3)
        X = stack(generate_blob_images(cfg, make_rng(3)))
        assert X.min() >= 0.0 and X.max() <= 1.0
        assert X.shape == (120, 144)

    def test_narrow_blob_peaks_at_center(self):
        img = render_blobs(12, [(7.0, 7.0)], [0.05], [1.0])
        assert np.unravel_index(np.argmax(img), img.shape) == (7, 7)
        # a Gaussian this narrow is numerically zero one pixel away
        assert img[7, 8] == pytest.approx(np.exp(-1 / (2 * 0.05 ** 2)), abs=1e-300)

    def test_kind_mismatch(self):
        with pytest.raises(ValueError):
            generate_blob_images(ring(0.0), make_rng(0))


class TestSplit:
    def test_one_each_is_partition(self):
        cfg = DatasetConfig(counts=small_counts(1))
        recs = generate(cfg, make_rng(0))
        split = split_dataset(recs, cfg, make_rng(1))
        ids = [i for r in ROLES for i in split.ids(r)]
        assert sorted(ids) == list(range(6))

    def test_same_seed_same_split(self):
        cfg = DatasetConfig(counts=small_counts(5))
        recs = generate(cfg, make_rng(0))
        assert split_dataset(recs, cfg, make_rng(9)) == split_dataset(recs, cfg, make_rng(9))

    def test_desk_counts_on_3000(self):
        cfg = DatasetConfig(kind="ring2d", n_records=3000)
        recs = generate(cfg, make_rng(0))
        split = split_dataset(recs, cfg, make_rng(1))
        sets = [set(split.ids(r)) for r in ROLES]
        assert [len(s) for s in sets] == [256] * 6
        assert len(set().union(*sets)) == 256 * 6

    def test_too_few_records(self):
        cfg = DatasetConfig(kind="ring2d", counts=small_counts(10), n_records=20)
        with pytest.raises(ValueError):
            split_dataset(generate(cfg, make_rng(0)), cfg, make_rng(1))

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            LabeledSplit([1], [1], [2], [3], [4], [5])

    def test_eval_pair_balanced(self):
        cfg = DatasetConfig(counts=small_counts(4))
        split = split_dataset(generate(cfg, make_rng(0)), cfg, make_rng(1))
        ids, labels = split.eval_pair("target")
        assert ids[:4] == split.target_member and labels.tolist() == [1] * 4 + [0] * 4

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**63 - 1))
    def test_roles_disjoint_for_any_seed(self, seed):
        cfg = DatasetConfig(kind="ring2d", counts=small_counts(7), n_records=60)
        split = split_dataset(generate(cfg, make_rng(seed)), cfg, make_rng(seed, 1))
        ids = [i for r in ROLES for i in split.ids(r)]
        assert len(ids) == len(set(ids)) == 42


def test_save_load_roundtrip(tmp_path):
    cfg = DatasetConfig(counts=small_counts(3), side=8, noise=0.2, seed=4)
    recs = generate(cfg, make_rng(4))
    split = split_dataset(recs, cfg, make_rng(5))
    save_dataset(tmp_path, recs, split, cfg, extra={"config_digest": "abc"})
    recs2, split2, cfg2, manifest = load_dataset(tmp_path)
    assert stack(recs2).tobytes() == stack(recs).tobytes()
    assert split2 == split and cfg2 == cfg and manifest["config_digest"] == "abc"
