import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopsense.estimation import (crlb_alpha, crlb_tau, delay_objective, estimate_alpha_given_tau,
                                  estimate_delay)
from coopsense.exceptions import DegenerateWindowError
from coopsense.scene import EchoRecord, Waveform, echo_samples, pulse_value

W = Waveform().with_samples(200)
TS = W.sample_period
TAU = 100 * TS


def record(alpha, tau=TAU, sigma2=0.0, rng=None, energy=1.0):
    return EchoRecord(samples=echo_samples(tau, alpha, W, energy, sigma2, rng), receiver_id=0,
                      true_tau=tau, true_alpha=complex(alpha))


def peak_noise(db, alpha=1.0, energy=1.0):
    return energy * abs(alpha) ** 2 * pulse_value(0.0, W) ** 2 / 10 ** (db / 10)


@pytest.mark.parametrize("alpha", [1 + 0j, 0.5 * np.exp(1j * np.pi / 3)])
def test_alpha_noiseless_exact(alpha):
    assert abs(estimate_alpha_given_tau(record(alpha), TAU, W, 1.0) - alpha) <= 1e-10


def test_alpha_rejects_tau_outside_record():
    with pytest.raises(DegenerateWindowError):
        estimate_alpha_given_tau(record(1.0), 1.0, W, 1.0)


def test_alpha_variance_matches_crlb():
    rng = np.random.default_rng(3)
    s2 = peak_noise(10.0)
    est = np.array([estimate_alpha_given_tau(record(1.0, sigma2=s2, rng=rng), TAU, W, 1.0) for _ in range(10_000)])
    bound = crlb_alpha(TAU, s2, 1.0, W)
    # the bound is the variance of each real component
    assert np.var(est.real) == pytest.approx(bound, rel=0.1)
    assert np.var(est.imag) == pytest.approx(bound, rel=0.1)


def test_delay_noiseless_on_grid():
    est = estimate_delay(record(0.7 - 0.2j), W, 1.0, 1.0, (TAU - 5e-8, TAU + 5e-8))
    assert abs(est.tau_hat - TAU) <= 1e-12
    assert abs(est.alpha_hat - (0.7 - 0.2j)) < 1e-6


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.49, 0.49), st.floats(0, 2 * np.pi))
def test_delay_noiseless_off_grid(frac, phase):
    tau = TAU + frac * TS
    est = estimate_delay(record(np.exp(1j * phase), tau), W, 1.0, 1.0, (tau - 6e-8, tau + 4e-8))
    assert abs(est.tau_hat - tau) <= 2e-12


def test_delay_mse_near_crlb_at_high_snr():
    rng = np.random.default_rng(11)
    s2 = peak_noise(15.0)
    err, bound = [], []
    for _ in range(10_000):
        est = estimate_delay(record(1.0, sigma2=s2, rng=rng), W, 1.0, s2, (TAU - 6e-8, TAU + 6e-8))
        err.append(est.tau_hat - TAU)
        bound.append(est.crlb_tau)
    ratio = np.mean(np.square(err)) / np.mean(bound)
    assert 0.5 <= ratio <= 2.0


def test_delay_argmax_contract():
    rng = np.random.default_rng(5)
    rec = record(1.0, sigma2=peak_noise(5.0), rng=rng)
    lo, hi = TAU - 6e-8, TAU + 6e-8
    est = estimate_delay(rec, W, 1.0, 1.0, (lo, hi))
    grid = lo + TS / 4 * np.arange(int(np.floor((hi - lo) / (TS / 4) + 1e-9)) + 1)
    assert delay_objective(rec.samples, est.tau_hat, W)[0] >= delay_objective(rec.samples, grid, W).max()


def test_delay_argmax_scale_invariant():
    rng = np.random.default_rng(6)
    rec = record(1.0, sigma2=peak_noise(5.0), rng=rng)
    scaled = EchoRecord(rec.samples * 3.7, 0, rec.true_tau, rec.true_alpha)
    a = estimate_delay(rec, W, 1.0, 1.0, (TAU - 6e-8, TAU + 6e-8))
    b = estimate_delay(scaled, W, 1.0, 1.0, (TAU - 6e-8, TAU + 6e-8))
    assert a.tau_hat == pytest.approx(b.tau_hat, abs=1e-12)


def test_delay_zero_record_has_no_bound():
    rec = EchoRecord(np.zeros(W.total_samples, dtype=complex), 0, TAU, 0j)
    with pytest.raises(ValueError):
        estimate_delay(rec, W, 1.0, 1.0, (TAU - 5e-8, TAU + 5e-8))


def test_delay_rejects_empty_interval():
    with pytest.raises(ValueError):
        estimate_delay(record(1.0), W, 1.0, 1.0, (TAU, TAU - 1e-9))


def test_crlb_tau_scalings():
    base = crlb_tau(1.0, TAU, 1.0, 1.0, W)
    assert crlb_tau(1.0, TAU, 2.0, 1.0, W) == pytest.approx(2 * base, rel=1e-12)
    assert crlb_tau(2.0, TAU, 1.0, 1.0, W) == pytest.approx(base / 4, rel=1e-12)
    with pytest.raises(ValueError):
        crlb_tau(0.0, TAU, 1.0, 1.0, W)


def test_crlb_tau_matches_numerical_fisher():
    # real-valued (tau, |alpha|) model with known phase: FIM from finite-difference Jacobian
    s2, a, h = 0.3, 0.8, 1e-13
    def mean(tau, amp):
        r = echo_samples(tau, amp, W, 1.0)
        return np.concatenate([r.real, r.imag])
    d_tau = (mean(TAU + h, a) - mean(TAU - h, a)) / (2 * h)
    d_amp = (mean(TAU, a + 1e-6) - mean(TAU, a - 1e-6)) / 2e-6
    Jac = np.stack([d_tau, d_amp])
    F = Jac @ Jac.T / (s2 / 2)
    assert np.linalg.inv(F)[0, 0] == pytest.approx(crlb_tau(a, TAU, s2, 1.0, W), rel=0.05)


def test_crlb_alpha_riemann_sum():
    assert crlb_alpha(TAU, 0.4, 2.0, W) == pytest.approx(0.4 * TS / (2 * 2.0), rel=0.02)


def test_crlb_alpha_scaling_and_errors():
    assert crlb_alpha(TAU, 2.0, 1.0, W) == pytest.approx(2 * crlb_alpha(TAU, 1.0, 1.0, W), rel=1e-12)
    with pytest.raises(DegenerateWindowError):
        crlb_alpha(10.0, 1.0, 1.0, W)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(1.01, 5.0))
def test_crlbs_positive_and_decreasing_in_energy(E, k):
    assert 0 < crlb_tau(1.0, TAU, 1.0, k * E, W) < crlb_tau(1.0, TAU, 1.0, E, W)
    assert 0 < crlb_alpha(TAU, 1.0, k * E, W) < crlb_alpha(TAU, 1.0, E, W)


def test_estimate_fields():
    est = estimate_delay(record(1.0, sigma2=1e-3, rng=np.random.default_rng(0)), W, 1.0, 1e-3,
                         (TAU - 5e-8, TAU + 5e-8))
    assert est.crlb_tau > 0 and est.crlb_alpha > 0
    assert TAU - 5e-8 <= est.tau_hat <= TAU + 5e-8
