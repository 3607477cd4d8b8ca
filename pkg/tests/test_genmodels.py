import ast
import inspect
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import flucmia.attacks
import flucmia.proxies
from flucmia.datasets import DatasetConfig, generate, split_dataset, stack
from flucmia.genmodels import (DdpmHandle, ToyDDPM, ToyVAE, TrainConfig, VaeHandle, diffuse_forward, handle_for,
                               make_schedule, posterior_mean, posterior_mean_from_eps, train_ddpm, train_vae,
                               vae_decode, vae_encode)
from flucmia.genmodels.ckpt_io import checkpoint_bytes, checkpoint_from_bytes, load_series, save_series
from flucmia.genmodels.models import time_embedding
from flucmia.numerics import MlpParams, make_rng

from conftest import rel_err, small_counts

S3 = make_schedule(3, 0.1, 0.1)


class TestSchedule:
    def test_alpha_bar(self):
        np.testing.assert_allclose(S3.alpha_bar[1:], [0.9, 0.81, 0.729], rtol=0, atol=1e-15)

    def test_beta_tilde_2(self):
        assert S3.beta_tilde[2] == pytest.approx(0.1 / 0.19 * 0.1, abs=1e-15)
        assert S3.beta_tilde[2] == pytest.approx(0.052632, abs=1e-6)

    def test_beta_tilde_1_zero(self):
        for s in (S3, make_schedule(100, 1e-3, 0.2)):
            assert s.beta_tilde[1] == 0.0
            assert s.reverse_variance(1) == s.beta[1]

    def test_desk_schedule_endpoints(self):
        s = make_schedule(100, 1e-3, 0.2)
        assert s.beta[1] == 1e-3 and s.beta[100] == pytest.approx(0.2)

    def test_bad_t(self):
        with pytest.raises(ValueError):
            S3.check_t(4)


class TestForwardAndPosterior:
    def test_zero_noise(self):
        assert diffuse_forward(S3, np.array([1.0]), 2, np.array([0.0]))[0] == pytest.approx(0.9, abs=1e-15)

    def test_plugged_in(self):
        out = diffuse_forward(S3, np.array([2.0]), 2, np.array([1.0]))[0]
        assert out == pytest.approx(1.8 + math.sqrt(0.19), abs=1e-15)
        assert out == pytest.approx(2.23589, abs=1e-5)

    def test_marginal_moments(self):
        s = make_schedule(100, 1e-3, 0.2)
        rng = make_rng(7)
        for t in (1, 10, 50, 100):
            x = diffuse_forward(s, np.full(10_000, 0.7), t, rng.standard_normal(10_000))
            assert x.var() == pytest.approx(1 - s.alpha_bar[t], rel=0.05)
            assert abs(x.mean() - math.sqrt(s.alpha_bar[t]) * 0.7) < 4 * math.sqrt((1 - s.alpha_bar[t]) / 10_000)

    def test_posterior_by_hand(self):
        c = math.sqrt(0.9) * 0.1 / 0.19
        out = posterior_mean(S3, np.array([1.0]), np.array([1.0]), 2)[0]
        assert out == pytest.approx(2 * c, abs=1e-15)
        assert c == pytest.approx(0.49931, abs=1e-5)
        assert out == pytest.approx(0.99862, abs=1e-5)

    def test_posterior_zero(self):
        assert posterior_mean(S3, np.zeros(3), np.zeros(3), 3).tolist() == [0.0, 0.0, 0.0]

    def test_t1_point_mass(self):
        x0 = np.array([0.3, -0.2])
        np.testing.assert_array_equal(posterior_mean(S3, x0, np.array([5.0, 5.0]), 1), x0)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), t=st.integers(2, 100))
    def test_eps_form_matches_coefficient_form(self, seed, t):
        s = make_schedule(100, 1e-3, 0.2)
        rng = make_rng(seed)
        x0, eps = rng.standard_normal(5), rng.standard_normal(5)
        x_t = diffuse_forward(s, x0, t, eps)
        np.testing.assert_allclose(posterior_mean(s, x0, x_t, t), posterior_mean_from_eps(s, x_t, t, eps),
                                   rtol=0, atol=1e-10)


class TestTimeEmbedding:
    def test_shape_and_t0(self):
        e = time_embedding(np.array([0, 5]), 8)
        assert e.shape == (2, 8)
        np.testing.assert_allclose(e[0], [0, 0, 0, 0, 1, 1, 1, 1])


class TestDdpmModel:
    def test_skip_coefficients_by_formula(self):
        rng = make_rng(0)
        m = ToyDDPM.init(rng, 4, hidden=8, sigma_data=0.5)
        x_t, t = rng.standard_normal((3, 4)), np.array([1, 40, 100])
        f = m.denoiser
        from flucmia.numerics import mlp_apply
        out = mlp_apply(f, m._inputs(x_t, t))
        ab = m.schedule.alpha_bar[t][:, None]
        s, sig = np.sqrt(ab), np.sqrt(1 - ab)
        c_skip = 0.25 * s / (0.25 * ab + 1 - ab)
        c_out = sig * 0.5 / np.sqrt(0.25 * ab + 1 - ab)
        x0_hat = c_skip * x_t + c_out * out
        np.testing.assert_allclose(m.predict_eps(x_t, t), (x_t - s * x0_hat) / sig, rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("sigma_data", [0.5, None])
    def test_loss_gradient_fd(self, sigma_data):
        rng = make_rng(1)
        m = ToyDDPM.init(rng, 3, T=10, hidden=5, emb_dim=4, sigma_data=sigma_data)
        x0 = rng.standard_normal((4, 3))
        draws = m.draw(rng, 4)
        _, (grads,) = m.loss_and_grads(x0, draws)
        h = 1e-6
        for g, a in zip(grads.arrays(), m.denoiser.arrays()):
            fd = np.zeros_like(a)
            for idx in np.ndindex(a.shape):
                old = a[idx]
                a[idx] = old + h
                lp = m.loss_and_grads(x0, draws)[0]
                a[idx] = old - h
                lm = m.loss_and_grads(x0, draws)[0]
                a[idx] = old
                fd[idx] = (lp - lm) / (2 * h)
            assert rel_err(g, fd) < 1e-4

    def test_loss_matches_record_losses(self):
        rng = make_rng(2)
        m = ToyDDPM.init(rng, 3, T=10, hidden=5)
        x0 = rng.standard_normal((6, 3))
        draws = m.draw(rng, 6)
        assert m.loss_and_grads(x0, draws)[0] == pytest.approx(m.record_losses(x0, draws).mean(), rel=1e-12)

    def test_bad_sigma_data(self):
        with pytest.raises(ValueError):
            ToyDDPM.init(make_rng(0), 3, sigma_data=0.0)


class TestVaeModel:
    def test_loss_gradient_fd(self):
        rng = make_rng(3)
        m = ToyVAE.init(rng, 4, latent_dim=2, hidden=5)
        x = rng.uniform(0, 1, (3, 4))
        draws = m.draw(rng, 3)
        _, grads = m.loss_and_grads(x, draws)
        h = 1e-6
        for net, gnet in zip(m.nets(), grads):
            for g, a in zip(gnet.arrays(), net.arrays()):
                fd = np.zeros_like(a)
                for idx in np.ndindex(a.shape):
                    old = a[idx]
                    a[idx] = old + h
                    lp = m.loss_and_grads(x, draws)[0]
                    a[idx] = old - h
                    lm = m.loss_and_grads(x, draws)[0]
                    a[idx] = old
                    fd[idx] = (lp - lm) / (2 * h)
                assert rel_err(g, fd) < 1e-4

    def test_sigma_positive(self):
        rng = make_rng(4)
        h = VaeHandle(ToyVAE.init(rng, 6, latent_dim=3, hidden=4))
        _, sigma, _ = vae_encode(h, rng.standard_normal((50, 6)) * 10, rng=rng)
        assert (sigma > 0).all()

    def test_decode_deterministic(self):
        rng = make_rng(5)
        h = VaeHandle(ToyVAE.init(rng, 6, latent_dim=3, hidden=4))
        mu, _, _ = vae_encode(h, rng.uniform(0, 1, 6), rng=rng)
        assert vae_decode(h, mu).tobytes() == vae_decode(h, mu).tobytes()

    def test_zero_weights_give_biases(self):
        def zero_net(dims, bias):
            ws = [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])]
            bs = [np.zeros(b) for b in dims[1:-1]] + [bias]
            return MlpParams(ws, bs, ["tanh"] * (len(dims) - 2) + ["identity"])

        enc_b = np.array([0.3, -0.1, 0.0, 0.0])
        dec_b = np.array([0.1, 0.2, 0.3])
        m = ToyVAE(zero_net([3, 4, 4], enc_b), zero_net([2, 4, 3], dec_b))
        mu, sigma = m.encode(np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(mu, enc_b[:2])
        np.testing.assert_allclose(sigma, math.log(2) + 1e-6)
        np.testing.assert_array_equal(m.decode(mu), dec_b)


def tiny_split(n=24, seed=0):
    cfg = DatasetConfig(counts=small_counts(n), side=8, noise=0.2)
    recs = generate(cfg, make_rng(seed))
    split = split_dataset(recs, cfg, make_rng(seed, 1))
    return stack(recs, split.target_member), stack(recs, split.target_nonmember)


class TestTraining:
    @pytest.mark.parametrize("trainer", [train_ddpm, train_vae])
    def test_zero_epochs(self, trainer):
        X, E = tiny_split()
        series = trainer(X, E, TrainConfig(epochs=0), make_rng(0), hidden=8)
        assert series.epochs == [0] and series.early_stop_epoch == 0

    @pytest.mark.parametrize("trainer", [train_ddpm, train_vae])
    def test_same_seed_same_digests(self, trainer):
        X, E = tiny_split()
        cfg = TrainConfig(epochs=6, eval_every=2, snapshot_every=3)
        a = trainer(X, E, cfg, make_rng(9), hidden=8)
        b = trainer(X, E, cfg, make_rng(9), hidden=8)
        assert [c.digest for c in a.checkpoints] == [c.digest for c in b.checkpoints]
        assert a.digest() == b.digest()

    def test_ddpm_desk_loss_decreases(self, blob_data):
        records, split = blob_data
        cfg = DatasetConfig(counts=small_counts(256), side=12, noise=0.3)
        recs = generate(cfg, make_rng(1))
        sp = split_dataset(recs, cfg, make_rng(2))
        series = train_ddpm(stack(recs, sp.target_member), stack(recs, sp.target_nonmember),
                            TrainConfig(epochs=50, eval_every=5, snapshot_every=50), make_rng(3))
        assert series.train_curve[-1] < series.train_curve[0]

    def test_vae_desk_eval_loss_decreases(self):
        cfg = DatasetConfig(counts=small_counts(256), side=12, noise=0.3)
        recs = generate(cfg, make_rng(1))
        sp = split_dataset(recs, cfg, make_rng(2))
        series = train_vae(stack(recs, sp.target_member), stack(recs, sp.target_nonmember),
                           TrainConfig(epochs=50, eval_every=5, snapshot_every=50), make_rng(3))
        assert series.eval_curve[-1] < series.eval_curve[0]

    def test_marker_bound(self, overfit_ddpm):
        series, _ = overfit_ddpm
        cfg = TrainConfig(epochs=600, eval_every=25)
        best = series.curve_epochs[int(np.argmin(series.eval_curve))]
        assert series.early_stop_epoch <= best + cfg.patience * cfg.eval_every
        assert series.early_stop_epoch in series.epochs

    def test_overfit_gap_opens(self, overfit_ddpm):
        series, _ = overfit_ddpm
        gap = np.array(series.eval_curve) - np.array(series.train_curve)
        assert gap[-1] > gap[0]

    def test_bad_config(self):
        with pytest.raises(ValueError):
            TrainConfig(eval_every=0)


class TestGrayBox:
    def test_zero_variance_returns_mean(self):
        rng = make_rng(0)
        m = ToyDDPM.init(rng, 4, hidden=8)
        h = DdpmHandle(m, zero_variance=True)
        x_t = rng.standard_normal((2, 4))
        want = posterior_mean_from_eps(m.schedule, x_t, 7, m.predict_eps(x_t, 7))
        np.testing.assert_array_equal(h.reverse_step(x_t, 7, rng=rng), want)

    def test_oracle_denoiser_mean_is_posterior_mean(self):
        s = make_schedule(100, 1e-3, 0.2)
        rng = make_rng(1)
        x0, eps = rng.standard_normal(6), rng.standard_normal(6)
        for t in (2, 30, 100):
            x_t = diffuse_forward(s, x0, t, eps)
            h = DdpmHandle.from_predictor(s, 6, lambda x, tt: eps, zero_variance=True)
            np.testing.assert_allclose(h.reverse_step(x_t, t, noise=np.zeros(6)), posterior_mean(s, x0, x_t, t),
                                       rtol=0, atol=1e-10)

    def test_same_rng_state_same_draw(self):
        m = ToyDDPM.init(make_rng(2), 4, hidden=8)
        h = DdpmHandle(m)
        x = np.ones((3, 4))
        assert h.reverse_step(x, 5, rng=make_rng(8)).tobytes() == h.reverse_step(x, 5, rng=make_rng(8)).tobytes()

    def test_noise_is_used_with_reverse_variance(self):
        m = ToyDDPM.init(make_rng(2), 4, hidden=8)
        h0, h = DdpmHandle(m, zero_variance=True), DdpmHandle(m)
        x, z = np.ones(4), np.full(4, 2.0)
        diff = h.reverse_step(x, 5, noise=z) - h0.reverse_step(x, 5, noise=z)
        np.testing.assert_allclose(diff, 2.0 * math.sqrt(m.schedule.beta_tilde[5]), atol=1e-14)

    def test_rng_xor_noise(self):
        h = DdpmHandle(ToyDDPM.init(make_rng(2), 4, hidden=8))
        with pytest.raises(ValueError):
            h.reverse_step(np.ones(4), 5)

    def test_query_counter(self):
        h = DdpmHandle(ToyDDPM.init(make_rng(2), 4, hidden=8))
        h.reverse_step(np.ones((3, 2, 4)), 5, rng=make_rng(0))
        assert h.queries == 6

    @pytest.mark.parametrize("family", ["ddpm", "vae"])
    def test_no_parameter_accessor(self, family):
        rng = make_rng(3)
        model = ToyDDPM.init(rng, 4, hidden=8) if family == "ddpm" else ToyVAE.init(rng, 4, hidden=8)
        h = handle_for(model)
        assert not hasattr(h, "__dict__")
        for name in dir(h):
            if name.startswith("__"):
                continue
            val = getattr(h, name)
            assert not isinstance(val, (ToyDDPM, ToyVAE, MlpParams)), name
            assert name.lstrip("_") not in ("model", "params", "denoiser", "encoder", "decoder", "weights")
        with pytest.raises(AttributeError):
            h.model = model

    @pytest.mark.parametrize("module", [flucmia.attacks, flucmia.proxies])
    def test_attack_side_imports_only_handles(self, module):
        tree = ast.parse(inspect.getsource(module))
        names = {a.name for node in ast.walk(tree) if isinstance(node, ast.ImportFrom) for a in node.names}
        mods = {node.module for node in ast.walk(tree) if isinstance(node, ast.ImportFrom)}
        assert not names & {"ToyDDPM", "ToyVAE", "models", "training"}
        assert not any(m and m.endswith("models") for m in mods)


class TestCheckpoints:
    @pytest.mark.parametrize("family", ["ddpm", "vae"])
    def test_bytes_roundtrip(self, family):
        X, E = tiny_split()
        trainer = train_ddpm if family == "ddpm" else train_vae
        series = trainer(X, E, TrainConfig(epochs=2), make_rng(0), hidden=8)
        c = series.last()
        back = checkpoint_from_bytes(checkpoint_bytes(c))
        assert back.model.digest() == c.model.digest() and back.epoch == c.epoch
        assert checkpoint_bytes(back) == checkpoint_bytes(c)

    def test_series_roundtrip_and_tamper(self, tmp_path):
        X, E = tiny_split()
        series = train_ddpm(X, E, TrainConfig(epochs=4, eval_every=2, snapshot_every=2), make_rng(0), hidden=8)
        save_series(tmp_path, series)
        back = load_series(tmp_path)
        assert back.digest() == series.digest() and back.curve_epochs == series.curve_epochs
        only = load_series(tmp_path, epochs=[2])
        assert set(only.epochs) == {2, series.early_stop_epoch}
        f = tmp_path / "epoch_00002.ckpt"
        data = bytearray(f.read_bytes())
        data[-1] ^= 1
        f.write_bytes(bytes(data))
        with pytest.raises(ValueError):
            load_series(tmp_path)

    def test_missing_series(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_series(tmp_path / "nope")
