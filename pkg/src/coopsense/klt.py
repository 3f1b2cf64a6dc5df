"""KLT transform coding of the sample window around the estimated delay.

The window statistics come from the first-order model of the samples around
(tau_hat, alpha_hat); each decorrelated component is quantised with a Lloyd-Max
codebook matched to its Gaussian marginal.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr, ndtri

from .estimation import LocalEstimate
from .exceptions import ConvergenceError
from .scene import Waveform, pulse_derivative, pulse_value

_PHI0 = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class SampleWindow:
    indices: np.ndarray
    window_length: float

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def times(self, w: Waveform) -> np.ndarray:
        return self.indices * w.sample_period


@dataclass(frozen=True)
class KltCodec:
    window: SampleWindow
    mean: np.ndarray
    basis: np.ndarray
    eigvals: np.ndarray
    covariance: np.ndarray

    def transform(self, r: np.ndarray) -> np.ndarray:
        """KLT coefficients U^T r of a stacked window."""
        return self.basis.T @ r

    @property
    def component_means(self) -> np.ndarray:
        return self.basis.T @ self.mean


@dataclass(frozen=True)
class QuantizedWindow:
    codes: np.ndarray
    dequantized: np.ndarray
    bits: np.ndarray


@dataclass(frozen=True)
class Codebook:
    levels: np.ndarray
    thresholds: np.ndarray
    mse: float

    def encode(self, x) -> np.ndarray:
        return np.searchsorted(self.thresholds, x, side="right")

    def decode(self, codes) -> np.ndarray:
        return self.levels[codes]


def build_window(tau_hat: float, w: Waveform) -> SampleWindow:
    """Sample indices whose span covers [tau_hat - T_d/2, tau_hat + T_d/2].

    The interval end points are rounded outward onto the sampling grid, so a
    window that does not start on a sample gains the bracketing sample on each
    side (T_d/T_s + 2 samples in general, T_d/T_s + 1 when aligned).
    """
    if w.window_length <= 0:
        raise ValueError("window length must be positive")
    lo = (tau_hat - w.window_length / 2.0) / w.sample_period
    hi = (tau_hat + w.window_length / 2.0) / w.sample_period
    k0 = int(np.floor(lo + 1e-9))
    k1 = int(np.ceil(hi - 1e-9))
    if w.total_samples is not None:
        k0, k1 = max(k0, 1), min(k1, w.total_samples)
    else:
        k0 = max(k0, 1)
    if k1 < k0:
        raise ValueError("sample window is empty")
    return SampleWindow(indices=np.arange(k0, k1 + 1), window_length=w.window_length)


def stack_real(samples) -> np.ndarray:
    samples = np.asarray(samples)
    return np.concatenate([samples.real, samples.imag]).astype(float)


def unstack(r: np.ndarray) -> np.ndarray:
    k = r.size // 2
    return r[:k] + 1j * r[k:]


def window_samples(record_samples: np.ndarray, window: SampleWindow) -> np.ndarray:
    return record_samples[window.indices - 1]


def _sorted_eigh(Q: np.ndarray, tie_tol: float = 1e-12):
    gam, U = np.linalg.eigh(Q)
    order = np.argsort(-gam, kind="stable")
    gam, U = gam[order], U[:, order]
    # near-equal eigenvalues: order by the position of the dominant entry
    scale = max(1.0, float(np.max(np.abs(gam))))
    start = 0
    for i in range(1, gam.size + 1):
        if i == gam.size or gam[start] - gam[i] > tie_tol * scale:
            if i - start > 1:
                block = np.argsort(np.argmax(np.abs(U[:, start:i]), axis=0), kind="stable")
                U[:, start:i] = U[:, start:i][:, block]
                gam[start:i] = gam[start:i][block]
            start = i
    for j in range(U.shape[1]):
        col = U[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            U[:, j] = -col
    return gam, U


def window_vectors(est: LocalEstimate, window: SampleWindow, w: Waveform):
    """The vectors p, q1, q2, h of the first-order window model."""
    t = window.times(w) - est.tau_hat
    s = pulse_value(t, w)
    ds = pulse_derivative(t, w)
    a = est.alpha_hat
    zeros = np.zeros_like(s)
    p = stack_real(a * ds)
    q1 = np.concatenate([s, zeros])
    q2 = np.concatenate([zeros, s])
    h = stack_real(a * s)
    return p, q1, q2, h


def window_covariance(est: LocalEstimate, w: Waveform, energy: float, noise_var: float,
                      window: SampleWindow | None = None) -> KltCodec:
    """Mean sqrt(E) h and covariance of the stacked window, with its KLT basis."""
    window = build_window(est.tau_hat, w) if window is None else window
    p, q1, q2, h = window_vectors(est, window, w)
    Q = (energy * est.crlb_tau * np.outer(p, p)
         + energy * 0.5 * est.crlb_alpha * (np.outer(q1, q1) + np.outer(q2, q2))
         + 0.5 * noise_var * np.eye(p.size))
    if not np.all(np.isfinite(Q)):
        raise ValueError("non-finite window covariance")
    Q = 0.5 * (Q + Q.T)
    gam, U = _sorted_eigh(Q)
    return KltCodec(window=window, mean=np.sqrt(energy) * h, basis=U, eigvals=gam, covariance=Q)


def quantization_noise_variance(gamma, bits, model: str = "standard"):
    """Variance of the Gaussian quantisation error of a component.

    ``standard``: gamma / 2^{2X-1}.  ``exact``: gamma / (2^{2X} - 1), the
    rate-distortion value (infinite at zero bits).
    """
    gamma = np.asarray(gamma, dtype=float)
    bits = np.asarray(bits, dtype=float)
    if model == "standard":
        out = gamma * 2.0 ** (1.0 - 2.0 * bits)
    elif model == "exact":
        with np.errstate(divide="ignore"):
            out = np.where(bits > 0, gamma / np.expm1(2.0 * np.log(2.0) * bits), np.inf)
    else:
        raise ValueError(f"unknown quantisation noise model {model!r}")
    return float(out) if out.ndim == 0 else out


# -- Lloyd-Max ---------------------------------------------------------------

_CACHE: dict[int, Codebook] = {}
_CACHE_LOCK = threading.Lock()


def _cells(levels):
    t = 0.5 * (levels[1:] + levels[:-1])
    a = np.concatenate([[-np.inf], t])
    b = np.concatenate([t, [np.inf]])
    return t, a, b


def _pdf(x):
    with np.errstate(over="ignore"):
        return np.where(np.isfinite(x), _PHI0 * np.exp(-0.5 * np.where(np.isfinite(x), x, 0.0) ** 2), 0.0)


def _mass(a, b):
    # upper-tail cells via the reflected form to keep relative precision
    upper = a > 0
    return np.where(upper, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))


def _centroids(levels):
    t, a, b = _cells(levels)
    pa, pb = _pdf(a), _pdf(b)
    mass = _mass(a, b)
    c = (pa - pb) / mass
    return c, t, a, b, pa, pb, mass


def _newton_step(levels, c, a, b, pa, pb, mass):
    # F(l) = l - C(l) with C_i depending on l_{i-1}, l_i, l_{i+1}
    fa = np.where(np.isfinite(a), pa * (c - np.where(np.isfinite(a), a, 0.0)) / mass, 0.0)
    fb = np.where(np.isfinite(b), pb * (np.where(np.isfinite(b), b, 0.0) - c) / mass, 0.0)
    L = levels.size
    ab = np.zeros((3, L))
    ab[1] = 1.0 - 0.5 * (fa + fb)
    ab[0, 1:] = -0.5 * fb[:-1]
    ab[2, :-1] = -0.5 * fa[1:]
    return levels - solve_banded((1, 1), ab, levels - c)


def _std_codebook(bits: int, max_iter: int = 10_000, tol: float = 1e-10) -> Codebook:
    L = 2 ** bits
    levels = ndtri((np.arange(L) + 0.5) / L)
    for _ in range(max_iter):
        c, t, a, b, pa, pb, mass = _centroids(levels)
        move = np.max(np.abs(c - levels))
        if move < tol:
            levels = c
            break
        trial = _newton_step(levels, c, a, b, pa, pb, mass)
        if np.all(np.isfinite(trial)) and np.all(np.diff(trial) > 0):
            ct = _centroids(trial)[0]
            if np.max(np.abs(ct - trial)) < move:
                levels = trial
                continue
        levels = c
    else:
        raise ConvergenceError(f"Lloyd iteration did not converge for {bits} bits")
    t, a, b = _cells(levels)
    mass = _mass(a, b)
    pa, pb = _pdf(a), _pdf(b)
    # E[z^2; cell] = mass + a phi(a) - b phi(b)
    a0, b0 = np.where(np.isfinite(a), a, 0.0), np.where(np.isfinite(b), b, 0.0)
    m2 = mass + a0 * pa - b0 * pb
    m1 = pa - pb
    mse = float(np.sum(m2 - 2.0 * levels * m1 + levels ** 2 * mass))
    return Codebook(levels=levels, thresholds=t, mse=mse)


def standard_codebook(bits: int) -> Codebook:
    """Cached Lloyd-Max codebook for N(0, 1)."""
    bits = int(bits)
    cb = _CACHE.get(bits)
    if cb is None:
        with _CACHE_LOCK:
            cb = _CACHE.get(bits)
            if cb is None:
                cb = _std_codebook(bits)
                _CACHE[bits] = cb
    return cb


def lloyd_codebook(bits: int, mean: float = 0.0, var: float = 1.0) -> Codebook:
    """Lloyd-Max quantiser with 2^bits levels for a N(mean, var) source."""
    if bits < 1:
        raise ValueError("a codebook needs at least one bit")
    if var <= 0:
        raise ValueError("variance must be positive")
    std = standard_codebook(bits)
    sd = np.sqrt(var)
    return Codebook(levels=mean + sd * std.levels, thresholds=mean + sd * std.thresholds,
                    mse=var * std.mse)


def quantize_window(r_c: np.ndarray, codec: KltCodec, bits) -> QuantizedWindow:
    """Quantise KLT coefficients component-wise; zero bits emits the prior mean."""
    bits = np.asarray(bits, dtype=int)
    if np.any(bits < 0):
        raise ValueError("bit counts must be nonnegative")
    means = codec.component_means
    codes = np.zeros(r_c.size, dtype=np.int64)
    deq = means.copy()
    for j in np.flatnonzero(bits > 0):
        cb = lloyd_codebook(int(bits[j]), means[j], max(codec.eigvals[j], 1e-300))
        codes[j] = cb.encode(r_c[j])
        deq[j] = cb.levels[codes[j]]
    return QuantizedWindow(codes=codes, dequantized=deq, bits=bits)


def reconstruct(codec: KltCodec, quantized: QuantizedWindow, model: str = "standard"):
    """Inverse KLT of the dequantised coefficients and the error covariance U diag(eta) U^T."""
    r_tilde = codec.basis @ quantized.dequantized
    eta = quantization_noise_variance(codec.eigvals, quantized.bits, model)
    Q = (codec.basis * eta) @ codec.basis.T
    return r_tilde, 0.5 * (Q + Q.T)
