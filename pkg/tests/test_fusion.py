import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopsense.estimation import LocalEstimate, crlb_alpha, crlb_tau
from coopsense.exceptions import UnlocalizableError
from coopsense.fusion import (baseline_sdcs, baseline_toa_idcs, baseline_toa_rss_idcs,
                              build_fim_context, crlb_theta, delay_gradient, epsilon_star, fc_log_likelihood,
                              fc_log_likelihood_grad, fc_ml_localize, fim, fim_direct, fim_limit, info_weight,
                              info_weight_grad, local_region, model_power, model_signal, observation_from_window,
                              sdcs_observations, signal_jacobian, uniform_quantize)
from coopsense.klt import stack_real, window_covariance, window_samples
from coopsense.scene import SPEED_OF_LIGHT, EchoRecord, Waveform, echo_samples, pathloss_amplitude

from conftest import make_trial
from oracles import random_bits, random_ctx


def noiseless(trial, sigma2=1e-30):
    """Exact local estimates and windows for the trial's scene with negligible noise."""
    scene, w = trial.scene, trial.w
    recs, ests, codecs = [], [], []
    for rec in trial.records:
        n = rec.receiver_id
        clean = echo_samples(rec.true_tau, rec.true_alpha, w, scene.tx_energy)
        recs.append(EchoRecord(clean, n, rec.true_tau, rec.true_alpha))
        est = LocalEstimate(rec.true_tau, rec.true_alpha, crlb_tau(rec.true_alpha, rec.true_tau, sigma2, scene.tx_energy, w),
                            crlb_alpha(rec.true_tau, sigma2, scene.tx_energy, w), n)
        ests.append(est)
        codecs.append(window_covariance(est, w, scene.tx_energy, sigma2))
    return recs, ests, codecs


# -- Jacobian ----------------------------------------------------------------

def test_jacobian_matches_finite_difference(default_trial):
    t = default_trial
    theta = t.scene.target_pos
    for e, c in zip(t.estimates, t.codecs):
        jac = signal_jacobian(theta, t.scene, e.receiver_id, e.alpha_hat, c.window, t.w)
        fd = np.stack([(model_signal(theta + h, t.scene, e.receiver_id, e.alpha_hat, c.window, t.w)[0]
                        - model_signal(theta - h, t.scene, e.receiver_id, e.alpha_hat, c.window, t.w)[0]) / 2e-4
                       for h in (np.array([1e-4, 0]), np.array([0, 1e-4]))])
        assert np.linalg.norm(jac - fd) <= 1e-4 * np.linalg.norm(jac)


def test_jacobian_linear_in_alpha(default_trial):
    t = default_trial
    e, c = t.estimates[0], t.codecs[0]
    j1 = signal_jacobian(t.scene.target_pos, t.scene, 0, e.alpha_hat, c.window, t.w)
    j2 = signal_jacobian(t.scene.target_pos, t.scene, 0, 2 * e.alpha_hat, c.window, t.w)
    np.testing.assert_allclose(j2, 2 * j1, rtol=1e-12)


def test_delay_gradient_midline_symmetry():
    g = delay_gradient([50.0, 80.0], np.array([0.0, 0.0]), np.array([100.0, 0.0]))
    assert abs(g[0]) <= 1e-15 * np.abs(g).max()
    with pytest.raises(ValueError):
        delay_gradient([0.0, 0.0], np.array([0.0, 0.0]), np.array([100.0, 0.0]))


# -- information weights ---------------------------------------------------

def test_info_weight_values():
    assert info_weight(1.0, 1.0, 1) == pytest.approx(1.0)
    assert info_weight(3.0, 2.0, 0) == pytest.approx(0.5 / (3.0 + 0.5))
    assert info_weight(3.0, 2.0, 60) == pytest.approx(1.0)


@settings(max_examples=100)
@given(st.floats(0.01, 100), st.floats(0.01, 10), st.floats(0.0, 20), st.sampled_from(["standard", "exact"]))
def test_info_weight_gradient(gamma, s2, X, model):
    if model == "exact" and X < 0.05:
        return
    h = 1e-3
    y = lambda x: info_weight(gamma, s2, x, model)
    fd = (-y(X + 2 * h) + 8 * y(X + h) - 8 * y(X - h) + y(X - 2 * h)) / (12 * h)
    g = info_weight_grad(gamma, s2, X, model)
    assert g == pytest.approx(fd, rel=1e-6, abs=1e-12 * info_weight(gamma, s2, X, model))
    assert g >= 0


# -- FIM and CRLB ----------------------------------------------------------

def test_fim_identity_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(100):
        ctx = random_ctx(rng, int(rng.integers(1, 5)), int(rng.integers(2, 12)))
        for model in ("standard", "exact"):
            bits = [b + (model == "exact") for b in random_bits(rng, ctx)]
            a, b = fim(ctx, bits, model=model), fim_direct(ctx, bits, model=model)
            assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(b)


def test_fim_unlimited_bits_limit():
    ctx = random_ctx(np.random.default_rng(1))
    bits = [np.full(r.size, 40.0) for r in ctx.receivers]
    np.testing.assert_allclose(fim(ctx, bits), fim_limit(ctx), rtol=1e-6)


def test_fim_empty_set():
    ctx = random_ctx(np.random.default_rng(2))
    np.testing.assert_array_equal(fim(ctx, random_bits(np.random.default_rng(0), ctx), omega=[]), 0)


def test_fim_on_trial_matches_direct(default_trial):
    ctx = default_trial.ctx
    bits = random_bits(np.random.default_rng(3), ctx)
    assert np.linalg.norm(fim(ctx, bits) - fim_direct(ctx, bits)) <= 1e-8 * np.linalg.norm(fim_direct(ctx, bits))


def test_crlb_theta_diag_and_singular():
    assert crlb_theta(np.diag([2.0, 4.0])) == pytest.approx(0.75)
    with pytest.raises(UnlocalizableError):
        crlb_theta(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(UnlocalizableError):
        crlb_theta(np.zeros((2, 2)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_crlb_monotone_in_bits_and_set(seed):
    rng = np.random.default_rng(seed)
    ctx = random_ctx(rng)
    bits = random_bits(rng, ctx)
    base = crlb_theta(fim(ctx, bits))
    i, j = int(rng.integers(len(bits))), int(rng.integers(bits[0].size))
    more = [b.copy() for b in bits]
    more[i][j] += rng.uniform(0.1, 3)
    assert crlb_theta(fim(ctx, more)) <= base * (1 + 1e-12)
    sub = crlb_theta(fim(ctx, bits, omega=[0, 1]))
    assert base <= sub * (1 + 1e-12)


def test_epsilon_star_is_lower_bound(default_trial):
    ctx = default_trial.ctx
    bits = random_bits(np.random.default_rng(4), ctx, 12)
    assert epsilon_star(ctx) <= crlb_theta(fim(ctx, bits))


# -- FC maximum likelihood -------------------------------------------------

def test_log_likelihood_gradient(default_trial):
    t = default_trial
    obs = [observation_from_window(r.samples, c, e, float(t.scene.noise_var[e.receiver_id]))
           for r, c, e in zip(t.records, t.codecs, t.estimates)]
    rng = np.random.default_rng(8)
    x0, x1, y0, y1 = t.region
    for _ in range(100):
        th = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])
        g = fc_log_likelihood_grad(th, obs, t.scene, t.w)
        h = 1e-4
        fd = np.array([(fc_log_likelihood(th + d, obs, t.scene, t.w)[0] - fc_log_likelihood(th - d, obs, t.scene, t.w)[0])
                       / (2 * h) for d in (np.array([h, 0]), np.array([0, h]))])
        assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(g) + 1e-9


def test_localize_noiseless_exact():
    t = make_trial(1)
    recs, ests, codecs = noiseless(t)
    obs = [observation_from_window(r.samples, c, e, 1e-6) for r, c, e in zip(recs, codecs, ests)]
    est = fc_ml_localize(obs, t.scene, t.w, t.region)
    np.testing.assert_allclose(est.theta, t.scene.target_pos, atol=1e-4)


def test_localize_argmax_contract(default_trial):
    from coopsense.fusion import _grid, default_cell
    t = default_trial
    obs = [observation_from_window(r.samples, c, e, float(t.scene.noise_var[e.receiver_id]))
           for r, c, e in zip(t.records, t.codecs, t.estimates)]
    est = fc_ml_localize(obs, t.scene, t.w, t.region)
    grid = fc_log_likelihood(_grid(t.region, default_cell(t.region)), obs, t.scene, t.w)
    assert est.objective >= grid.max()
    x0, x1, y0, y1 = t.region
    assert x0 <= est.theta[0] <= x1 and y0 <= est.theta[1] <= y1


def test_localize_requires_receivers(default_trial):
    with pytest.raises(ValueError):
        fc_ml_localize([], default_trial.scene, default_trial.w, default_trial.region)


def test_localize_efficiency_at_high_snr():
    t = make_trial(2)
    scene = t.scene.with_noise(t.scene.noise_var[0] / 10 ** 2.5)
    w = t.w
    target = scene.target_pos
    region = (target[0] - 5, target[0] + 5, target[1] - 5, target[1] + 5)
    rng = np.random.default_rng(9)
    from coopsense.scene import synthesize_echo
    recs = [synthesize_echo(scene, w, n, rng) for n in range(scene.n_receivers)]
    # window and alpha fixed at the truth so the only randomness is the sample noise
    codecs, ests = [], []
    for r in recs:
        s2 = float(scene.noise_var[r.receiver_id])
        e = LocalEstimate(r.true_tau, r.true_alpha, crlb_tau(r.true_alpha, r.true_tau, s2, scene.tx_energy, w),
                          crlb_alpha(r.true_tau, s2, scene.tx_energy, w), r.receiver_id)
        ests.append(e)
        codecs.append(window_covariance(e, w, scene.tx_energy, s2))
    ctx = build_fim_context(target, scene, ests, codecs, w, at_estimates=False)
    bound = epsilon_star(ctx)
    err = []
    for _ in range(300):
        obs = []
        for e, c in zip(ests, codecs):
            s2 = float(scene.noise_var[e.receiver_id])
            clean = echo_samples(e.tau_hat, e.alpha_hat, w, scene.tx_energy, s2, rng)
            obs.append(observation_from_window(clean, c, e, s2))
        err.append(np.sum((fc_ml_localize(obs, scene, w, region, cell=0.5).theta - target) ** 2))
    assert 0.5 <= np.mean(err) / bound <= 2.0


# -- baselines -------------------------------------------------------------

def test_toa_noiseless_exact():
    t = make_trial(1)
    _, ests, _ = noiseless(t)
    est = baseline_toa_idcs(ests, t.scene, t.region)
    np.testing.assert_allclose(est.theta, t.scene.target_pos, atol=1e-4)


def test_toa_needs_two_receivers(default_trial):
    with pytest.raises(ValueError):
        baseline_toa_idcs(default_trial.estimates[:1], default_trial.scene, default_trial.region)


def test_toa_weight_limit(default_trial):
    t = default_trial
    ests = list(t.estimates)
    without = baseline_toa_idcs(ests[1:], t.scene, t.region).theta
    prev = None
    for k in (1e2, 1e4, 1e8):
        e0 = ests[0]
        inflated = [LocalEstimate(e0.tau_hat, e0.alpha_hat, e0.crlb_tau * k, e0.crlb_alpha, 0)] + ests[1:]
        gap = np.linalg.norm(baseline_toa_idcs(inflated, t.scene, t.region).theta - without)
        if prev is not None:
            assert gap <= prev + 1e-6
        prev = gap
    assert prev <= 1e-3


def test_toa_rss_noiseless_exact():
    t = make_trial(1)
    _, ests, _ = noiseless(t)
    est = baseline_toa_rss_idcs(ests, t.scene, t.w, t.region)
    np.testing.assert_allclose(est.theta, t.scene.target_pos, atol=1e-4)


def test_model_power_matches_pathloss(default_trial):
    s = default_trial.scene
    for n in range(s.n_receivers):
        amp = pathloss_amplitude(s, n, carrier=default_trial.w.carrier) * s.reflect_amp
        assert model_power(s.target_pos, s, n, default_trial.w.carrier)[0] == pytest.approx(amp ** 2, rel=1e-12)


def test_sdcs_ideal_equals_unquantized_fc(default_trial):
    t = default_trial
    a = baseline_sdcs(t.records, t.estimates, t.codecs, "ideal", t.scene, t.w, t.region)
    obs = [observation_from_window(r.samples, c, e, float(t.scene.noise_var[e.receiver_id]))
           for r, c, e in zip(t.records, t.codecs, t.estimates)]
    b = fc_ml_localize(obs, t.scene, t.w, t.region)
    np.testing.assert_array_equal(a.theta, b.theta)


def test_sdcs_uniform8_observations(default_trial):
    t = default_trial
    obs = sdcs_observations(t.records, t.estimates, t.codecs, "uniform8", t.scene)
    for o, r, c in zip(obs, t.records, t.codecs):
        raw = stack_real(window_samples(r.samples, c.window))
        step = 8 * np.sqrt(c.eigvals.max()) / 256
        assert np.unique(np.round(o.samples / step - 0.5, 6)).size <= 256
        inside = np.abs(raw) < 4 * np.sqrt(c.eigvals.max())
        assert np.all(np.abs(o.samples - raw)[inside] <= step / 2 + 1e-12)
    with pytest.raises(ValueError):
        sdcs_observations(t.records, t.estimates, t.codecs, "other", t.scene)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=50), st.integers(1, 10))
def test_uniform_quantize_properties(x, bits):
    q, step = uniform_quantize(np.array(x), bits, 10.0)
    assert step == pytest.approx(20.0 / 2 ** bits)
    assert np.all(np.abs(q) <= 10.0)
    assert np.all(np.abs(q - np.array(x)) <= step / 2 + 1e-9)


def test_sdcs_uniform8_worse_than_ideal_on_average():
    err = {"ideal": [], "uniform8": []}
    for k in range(20):
        t = make_trial(k)
        for mode in err:
            est = baseline_sdcs(t.records, t.estimates, t.codecs, mode, t.scene, t.w, t.region)
            err[mode].append(np.sum((est.theta - t.scene.target_pos) ** 2))
    assert np.mean(err["ideal"]) <= np.mean(err["uniform8"])


def test_local_region_box_and_clipping():
    w = Waveform()
    r = SPEED_OF_LIGHT * w.window_length
    assert local_region([100.0, 75.0], (0, 200, 0, 150), w) == pytest.approx((100 - r, 100 + r, 75 - r, 75 + r))
    assert local_region([5.0, 140.0], (0, 200, 0, 150), w) == pytest.approx((0, 5 + r, 140 - r, 150))
    with pytest.raises(ValueError):
        local_region([500.0, 75.0], (0, 200, 0, 150), w)
