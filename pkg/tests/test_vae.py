import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from vaelf import gradcheck, vae


def random_params(rng, d=6, hidden=5, latent=3, scale=1.0, strict=False):
    shapes = vae.param_shapes(d, hidden, latent)
    return vae.VaeParams(**{n: scale * rng.standard_normal(s) for n, s in shapes.items()}, strict_mu_relu=strict)


# --- pure-Python reference forward pass -----------------------------------------


def _matvec(w, x):
    return [sum(w[i][j] * x[j] for j in range(len(x))) for i in range(len(w))]


def ref_encoder(p, x):
    w = {n: a.tolist() for n, a in p.arrays().items()}
    h = [max(0.0, a + b) for a, b in zip(_matvec(w["w1"], x), w["b1"])]
    mu = [a + b for a, b in zip(_matvec(w["w2"], h), w["b2"])]
    lv = [min(10.0, max(-10.0, a + b)) for a, b in zip(_matvec(w["w3"], h), w["b3"])]
    return h, mu, lv


def ref_decoder(p, z):
    w = {n: a.tolist() for n, a in p.arrays().items()}
    r = [max(0.0, a + b) for a, b in zip(_matvec(w["w4"], z), w["b4"])]
    return [1.0 / (1.0 + math.exp(-(a + b))) for a, b in zip(_matvec(w["w5"], r), w["b5"])]


class TestInit:
    def test_biases_zero_weights_bounded(self):
        p = vae.init_params(12, 7, 4, seed=1)
        for name, a in p.arrays().items():
            if name.startswith("b"):
                assert np.all(a == 0.0)
        bound = math.sqrt(6.0 / (12 + 7))
        assert np.all(np.abs(p.w1) <= bound)
        assert p.w1.shape == (7, 12)

    def test_deterministic(self):
        a, b = vae.init_params(10, 6, 3, seed=9), vae.init_params(10, 6, 3, seed=9)
        for n in vae.PARAM_NAMES:
            assert np.array_equal(getattr(a, n), getattr(b, n))

    def test_latent_must_be_smaller(self):
        with pytest.raises(ValueError):
            vae.init_params(4, 8, 4)

    def test_shape_validation(self):
        p = vae.init_params(5, 4, 2)
        arrays = p.arrays()
        arrays["b4"] = np.zeros(3)
        with pytest.raises(ValueError, match="b4"):
            vae.VaeParams(**arrays)

    def test_non_finite_rejected(self):
        arrays = vae.init_params(5, 4, 2).arrays()
        arrays["w2"] = arrays["w2"].copy()
        arrays["w2"][0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            vae.VaeParams(**arrays)


class TestEncoder:
    def test_zero_params(self, rng):
        e = vae.encoder_forward(vae.zero_params(5, 4, 2), rng.random(5))
        assert np.all(e.h == 0) and np.all(e.mu == 0) and np.all(e.logvar == 0)
        assert np.all(e.sigma == 1.0)

    def test_identity_first_layer(self, rng):
        arrays = vae.zero_params(4, 4, 2).arrays()
        arrays["w1"] = np.eye(4)
        x = rng.random(4)
        assert np.array_equal(vae.encoder_forward(vae.VaeParams(**arrays), x).h, x)

    def test_matches_reference(self, rng):
        for _ in range(20):
            p = random_params(rng, scale=2.0)
            x = rng.random(p.input_dim)
            e = vae.encoder_forward(p, x)
            h, mu, lv = ref_encoder(p, x.tolist())
            np.testing.assert_allclose(e.h, h, rtol=0, atol=1e-12)
            np.testing.assert_allclose(e.mu, mu, rtol=0, atol=1e-12)
            np.testing.assert_allclose(e.logvar, lv, rtol=0, atol=1e-12)

    def test_batch_equals_rows(self, rng):
        p = random_params(rng)
        x = rng.random((4, p.input_dim))
        batch = vae.encoder_forward(p, x)
        for i in range(4):
            row = vae.encoder_forward(p, x[i])
            np.testing.assert_allclose(batch.mu[i], row.mu, rtol=1e-14, atol=1e-15)

    def test_strict_mu_relu(self, rng):
        p = random_params(rng, strict=True)
        e = vae.encoder_forward(p, rng.random(p.input_dim))
        assert np.all(e.mu >= 0)
        assert np.array_equal(e.mu, np.maximum(e.mu_pre, 0))

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            vae.encoder_forward(vae.zero_params(5, 4, 2), np.zeros(6))

    @given(hnp.arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)), st.integers(0, 1000))
    def test_invariants(self, x, seed):
        p = random_params(np.random.default_rng(seed), scale=3.0)
        e = vae.encoder_forward(p, x)
        assert np.all(e.h >= 0)
        assert np.all((e.logvar >= -10) & (e.logvar <= 10))


class TestReparameterize:
    def _enc(self, mu, logvar):
        mu, logvar = np.asarray(mu, float), np.asarray(logvar, float)
        zeros = np.zeros_like(mu)
        return vae.EncoderOutput(zeros, mu, logvar, zeros, mu, logvar)

    def test_standard_normal_pass_through(self, rng):
        eps = rng.standard_normal(4)
        s = vae.reparameterize(self._enc(np.zeros(4), np.zeros(4)), eps=eps)
        assert np.array_equal(s.z, eps)

    def test_tiny_variance(self):
        s = vae.reparameterize(self._enc([2.5], [-10.0]), eps=[3.0])
        assert abs(s.z[0] - 2.5) < 0.03
        assert s.z[0] - 2.5 == pytest.approx(math.exp(-5.0) * 3.0, rel=1e-12)

    def test_construction_identity(self, rng):
        e = self._enc(rng.standard_normal(5), rng.uniform(-10, 10, 5))
        s = vae.reparameterize(e, rng)
        assert np.array_equal(s.z, e.mu + np.exp(e.logvar / 2) * s.eps)

    def test_seeded_draw(self):
        e = self._enc(np.zeros(3), np.zeros(3))
        a = vae.reparameterize(e, np.random.default_rng(4)).z
        b = vae.reparameterize(e, np.random.default_rng(4)).z
        assert np.array_equal(a, b)

    def test_eps_shape_checked(self):
        with pytest.raises(ValueError):
            vae.reparameterize(self._enc(np.zeros(3), np.zeros(3)), eps=np.zeros(2))


class TestDecoder:
    def test_zero_params(self, rng):
        assert np.all(vae.decoder_forward(vae.zero_params(5, 4, 2), rng.standard_normal(2)) == 0.5)

    def test_saturation(self, rng):
        arrays = vae.zero_params(5, 4, 2).arrays()
        arrays["b5"] = np.full(5, 50.0)
        x_hat = vae.decoder_forward(vae.VaeParams(**arrays), rng.standard_normal(2))
        assert np.all(x_hat > 1 - 1e-9)

    def test_extreme_preactivation_is_finite(self):
        arrays = vae.zero_params(3, 2, 1).arrays()
        arrays["b5"] = np.array([-1e4, 0.0, 1e4])
        x_hat = vae.decoder_forward(vae.VaeParams(**arrays), [0.0])
        assert x_hat.tolist() == [0.0, 0.5, 1.0]

    def test_matches_reference(self, rng):
        for _ in range(20):
            p = random_params(rng, scale=2.0)
            z = rng.standard_normal(p.latent_dim)
            np.testing.assert_allclose(vae.decoder_forward(p, z), ref_decoder(p, z.tolist()), rtol=0, atol=1e-12)


def mc_kl(mu, logvar, rng, n=1_000_000):
    """E_q[log q(z) - log p(z)] from reparameterized draws."""
    eps = rng.standard_normal((n, len(mu)))
    z = mu + np.exp(logvar / 2) * eps
    # the 0.5*log(2*pi) terms cancel
    log_q = -0.5 * eps ** 2 - 0.5 * logvar
    log_p = -0.5 * z ** 2
    return float(np.mean(np.sum(log_q - log_p, axis=1)))


class TestKl:
    def _enc(self, mu, logvar):
        mu, logvar = np.asarray(mu, float), np.asarray(logvar, float)
        return vae.EncoderOutput(mu, mu, logvar, mu, mu, logvar)

    def test_zero(self):
        assert vae.kl_divergence(self._enc([0.0, 0.0], [0.0, 0.0])) == 0.0

    def test_unit_mean(self):
        assert vae.kl_divergence(self._enc([1.0], [0.0])) == 0.5

    def test_matches_closed_form_elementwise(self, rng):
        mu, lv = rng.standard_normal(5), rng.uniform(-3, 3, 5)
        ref = sum(0.5 * (m * m + math.exp(v) - v - 1) for m, v in zip(mu, lv))
        assert vae.kl_divergence(self._enc(mu, lv)) == pytest.approx(ref, rel=1e-13)

    def test_monte_carlo_small(self):
        rng = np.random.default_rng(0)
        mu, lv = np.array([0.8, -0.3]), np.array([0.5, -1.0])
        est = mc_kl(mu, lv, rng, n=200_000)
        assert abs(vae.kl_divergence(self._enc(mu, lv)) - est) < 0.02

    @given(hnp.arrays(np.float64, 4, elements=st.floats(-50, 50)),
           hnp.arrays(np.float64, 4, elements=st.floats(-10, 10)))
    def test_non_negative(self, mu, lv):
        assert vae.kl_divergence(self._enc(mu, lv)) >= 0.0


class TestRecon:
    def test_perfect(self, rng):
        x = rng.random(5)
        assert vae.recon_loss(x, x, np.ones(5, bool)) == (0.0, 5)

    def test_single_entry(self):
        assert vae.recon_loss([0.0, 0.3], [1.0, 0.0], [True, False]) == (0.5, 1)

    def test_empty_mask(self, rng):
        assert vae.recon_loss(rng.random(4), rng.random(4), np.zeros(4, bool)) == (0.0, 0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            vae.recon_loss(np.zeros(3), np.zeros(4), np.zeros(4, bool))


class TestTotalLoss:
    def test_zero_case(self):
        p = vae.zero_params(4, 3, 2)
        loss = vae.total_loss(p, np.zeros(4), np.zeros(4, bool), eps=np.ones(2))[0]
        assert loss.total == 0.0 and loss.observed_count == 0

    def test_definitional(self, rng):
        for _ in range(10):
            p = random_params(rng)
            x = rng.random(p.input_dim)
            mask = rng.random(p.input_dim) < 0.5
            loss, sample, enc, x_hat = vae.total_loss(p, x, mask, rng=rng)
            recon, _ = vae.recon_loss(x_hat, x, mask)
            assert loss.total == recon + vae.kl_divergence(enc)
            assert loss.recon >= 0 and loss.kl >= 0

    def test_kl_weight(self, rng):
        p = random_params(rng)
        x, mask = rng.random(p.input_dim), np.ones(p.input_dim, bool)
        eps = rng.standard_normal(p.latent_dim)
        loss = vae.total_loss(p, x, mask, eps=eps, kl_weight=0.25)[0]
        assert loss.total == loss.recon + 0.25 * loss.kl

    def test_batch_is_mean_of_rows(self, rng):
        p = random_params(rng)
        x = rng.random((3, p.input_dim))
        mask = rng.random(x.shape) < 0.7
        eps = rng.standard_normal((3, p.latent_dim))
        batch = vae.total_loss(p, x, mask, eps=eps)[0].total
        rows = [vae.total_loss(p, x[i], mask[i], eps=eps[i])[0].total for i in range(3)]
        assert batch == pytest.approx(np.mean(rows), rel=1e-13)

    @given(st.integers(0, 2**32), st.floats(1.0, 1e3))
    def test_finite_for_huge_params(self, seed, scale):
        rng = np.random.default_rng(seed)
        p = random_params(rng, scale=scale)
        x = rng.random(p.input_dim)
        loss = vae.total_loss(p, x, np.ones(p.input_dim, bool), rng=rng)[0]
        assert np.isfinite(loss.total)


class TestBackward:
    def test_zero_case(self):
        p = vae.zero_params(4, 3, 2)
        x, mask = np.zeros(4), np.zeros(4, bool)
        inter = vae.total_loss(p, x, mask, eps=np.array([0.3, -1.2]))
        for g in vae.backward(p, x, mask, inter).arrays().values():
            assert np.all(g == 0.0)

    def test_b5_single_entry(self, rng):
        p = random_params(rng, d=4, hidden=3, latent=2)
        x = np.array([0.0, 0.7, 0.0, 0.0])
        mask = np.array([False, True, False, False])
        inter = vae.total_loss(p, x, mask, eps=rng.standard_normal(2))
        x_hat = inter[3]
        g = vae.backward(p, x, mask, inter).b5
        want = np.zeros(4)
        want[1] = x_hat[1] * (1 - x_hat[1]) * (x_hat[1] - x[1])
        np.testing.assert_allclose(g, want, rtol=1e-14, atol=0)

    @pytest.mark.parametrize("strict", [False, True])
    @pytest.mark.parametrize("kl_weight", [1.0, 0.01])
    def test_finite_differences(self, strict, kl_weight):
        report = gradcheck.run(n_configs=15, seed=3, strict_mu_relu=strict, kl_weight=kl_weight)
        assert report.passed, report.lines()

    def test_clamped_logvar_has_zero_gradient(self, rng):
        p = random_params(rng, d=5, hidden=4, latent=2)
        arrays = p.arrays()
        arrays["b3"] = np.array([40.0, -40.0])
        p = p.with_arrays(arrays)
        x = rng.random(5)
        mask = np.ones(5, bool)
        inter = vae.total_loss(p, x, mask, eps=rng.standard_normal(2))
        assert inter[2].logvar.tolist() == [10.0, -10.0]
        g = vae.backward(p, x, mask, inter)
        assert np.all(g.b3 == 0.0) and np.all(g.w3 == 0.0)
        num = gradcheck.numeric_gradient(p, x, mask, inter[1].eps)
        np.testing.assert_allclose(num["b3"], 0.0, atol=1e-7)

    def test_batched_gradient_is_row_mean(self, rng):
        p = random_params(rng)
        x = rng.random((3, p.input_dim))
        mask = rng.random(x.shape) < 0.7
        eps = rng.standard_normal((3, p.latent_dim))
        batch = vae.backward(p, x, mask, vae.total_loss(p, x, mask, eps=eps)).arrays()
        rows = [vae.backward(p, x[i], mask[i], vae.total_loss(p, x[i], mask[i], eps=eps[i])).arrays()
                for i in range(3)]
        for n in vae.PARAM_NAMES:
            np.testing.assert_allclose(batch[n], np.mean([r[n] for r in rows], axis=0), rtol=1e-12, atol=1e-15)

    def test_mismatched_intermediates(self, rng):
        p = random_params(rng)
        x = rng.random(p.input_dim)
        mask = np.ones(p.input_dim, bool)
        inter = vae.total_loss(p, x, mask, rng=rng)
        with pytest.raises(ValueError):
            vae.backward(p, rng.random((2, p.input_dim)), np.ones((2, p.input_dim), bool), inter)


class TestGradCheckHarness:
    def test_corruption_detected(self):
        assert not gradcheck.run(n_configs=3, seed=0, corrupt="w5").passed

    def test_rel_error_floor(self):
        assert gradcheck.rel_error(np.array([5e-8]), np.array([0.0]))[0] <= gradcheck.REL_TOL
        assert gradcheck.rel_error(np.array([1.0]), np.array([1.001]))[0] > gradcheck.REL_TOL

    def test_lines_name_every_block(self):
        lines = gradcheck.run(n_configs=2, seed=1).lines()
        for n in vae.PARAM_NAMES:
            assert any(line.strip().startswith(n + " ") for line in lines)


def ref_adam(values, grads_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar-at-a-time Adam recurrence."""
    out = list(values)
    m = [0.0] * len(out)
    v = [0.0] * len(out)
    for t, grads in enumerate(grads_seq, start=1):
        for i, g in enumerate(grads):
            m[i] = b1 * m[i] + (1.0 - b1) * g
            v[i] = b2 * v[i] + (1.0 - b2) * (g * g)
            m_hat = m[i] / (1.0 - b1 ** t)
            v_hat = v[i] / (1.0 - b2 ** t)
            out[i] = out[i] - lr * m_hat / (math.sqrt(v_hat) + eps)
    return out


class TestAdam:
    def _grads(self, p, fill):
        return vae.VaeGradients(**{n: fill(a) for n, a in p.arrays().items()})

    def test_zero_gradient_fixed_point(self, rng):
        p = random_params(rng)
        state = vae.AdamState.zeros_like(p)
        new_p, new_state = vae.adam_step(p, self._grads(p, np.zeros_like), state, 1)
        for n in vae.PARAM_NAMES:
            assert np.array_equal(getattr(new_p, n), getattr(p, n))
            assert np.all(new_state.m[n] == 0) and np.all(new_state.v[n] == 0)

    def test_first_step_magnitude(self, rng):
        p = random_params(rng)
        g = self._grads(p, lambda a: rng.uniform(0.01, 5, a.shape) * rng.choice([-1, 1], a.shape))
        new_p, _ = vae.adam_step(p, g, vae.AdamState.zeros_like(p), 1, lr=1e-3)
        for n in vae.PARAM_NAMES:
            delta = getattr(new_p, n) - getattr(p, n)
            np.testing.assert_allclose(np.abs(delta), 1e-3, rtol=1e-5)
            assert np.all(np.sign(delta) == -np.sign(getattr(g, n)))

    def test_dual_implementation_bit_exact(self, rng):
        p = random_params(rng, d=4, hidden=3, latent=2)
        state = vae.AdamState.zeros_like(p)
        flat0 = np.concatenate([a.ravel() for a in p.arrays().values()])
        seq = [rng.standard_normal(flat0.size) * 10 ** rng.uniform(-4, 2) for _ in range(100)]
        cur = p
        for t, flat_g in enumerate(seq, start=1):
            arrays, off = {}, 0
            for n, a in p.arrays().items():
                arrays[n] = flat_g[off:off + a.size].reshape(a.shape)
                off += a.size
            cur, state = vae.adam_step(cur, vae.VaeGradients(**arrays), state, t, lr=0.01)
        got = np.concatenate([a.ravel() for a in cur.arrays().values()])
        want = ref_adam(flat0.tolist(), [g.tolist() for g in seq], lr=0.01)
        assert got.tolist() == want
        assert state.step == 100

    def test_step_index_starts_at_one(self, rng):
        p = random_params(rng)
        with pytest.raises(ValueError):
            vae.adam_step(p, self._grads(p, np.zeros_like), vae.AdamState.zeros_like(p), 0)


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        p = random_params(rng, strict=True)
        state = vae.AdamState({n: rng.random(a.shape) for n, a in p.arrays().items()},
                              {n: rng.random(a.shape) for n, a in p.arrays().items()}, 17)
        path = tmp_path / "m.ckpt"
        vae.save_checkpoint(path, p, seed=5, adam=state)
        q, s2, header = vae.load_checkpoint(path, input_dim=p.input_dim)
        assert q.strict_mu_relu and header["seed"] == 5 and s2.step == 17
        for n in vae.PARAM_NAMES:
            assert np.array_equal(getattr(q, n), getattr(p, n))
            assert np.array_equal(s2.m[n], state.m[n]) and np.array_equal(s2.v[n], state.v[n])

    def test_header_is_one_json_line(self, tmp_path):
        path = tmp_path / "m.ckpt"
        vae.save_checkpoint(path, vae.init_params(6, 4, 2))
        raw = path.read_bytes()
        header, blob = raw.split(b"\n", 1)
        assert header.startswith(b"{") and len(blob) % 8 == 0

    def test_rejects_wrong_input_dim(self, tmp_path):
        path = tmp_path / "m.ckpt"
        vae.save_checkpoint(path, vae.init_params(6, 4, 2))
        with pytest.raises(ValueError, match="input_dim"):
            vae.load_checkpoint(path, input_dim=7)

    def test_rejects_truncated_and_trailing(self, tmp_path):
        path = tmp_path / "m.ckpt"
        vae.save_checkpoint(path, vae.init_params(6, 4, 2))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValueError, match="truncated"):
            vae.load_checkpoint(path)
        path.write_bytes(raw + b"\0" * 8)
        with pytest.raises(ValueError, match="trailing"):
            vae.load_checkpoint(path)

    def test_rejects_other_format(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b'{"format": "other", "version": 1, "arrays": []}\n')
        with pytest.raises(ValueError, match="not a"):
            vae.load_checkpoint(path)

    def test_byte_identical_rewrite(self, tmp_path):
        p = vae.init_params(6, 4, 2, seed=3)
        vae.save_checkpoint(tmp_path / "a", p)
        vae.save_checkpoint(tmp_path / "b", p)
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
