"""Per-receiver ML estimation of delay and reflecting coefficient with their CRLBs."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateWindowError
from .scene import EchoRecord, Waveform, pulse_derivative, pulse_value

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LocalEstimate:
    tau_hat: float
    alpha_hat: complex
    crlb_tau: float
    crlb_alpha: float
    receiver_id: int


def _pulse_energy(tau, w: Waveform) -> float:
    s = pulse_value(w.sample_times() - tau, w)
    return float(s @ s)


def _check_energy(energy: float, w: Waveform):
    # a unit-energy pulse fully inside the record sums to ~1/T_s
    if not energy > 1e-12 / w.sample_period:
        raise DegenerateWindowError("pulse energy vanishes inside the observation window")


def estimate_alpha_given_tau(rec: EchoRecord, tau: float, w: Waveform, energy: float) -> complex:
    """Closed-form ML reflecting coefficient for a fixed delay."""
    s = pulse_value(w.sample_times() - tau, w)
    denom = float(s @ s)
    _check_energy(denom, w)
    return complex((rec.samples @ s) / (np.sqrt(energy) * denom))


def delay_objective(samples: np.ndarray, taus, w: Waveform) -> np.ndarray:
    """Concentrated log-likelihood |sum r s|^2 / sum s^2 (constants dropped)."""
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    S = pulse_value(w.sample_times()[None, :] - taus[:, None], w)
    num = np.abs(S @ samples) ** 2
    den = np.einsum("ij,ij->i", S, S)
    out = np.full(taus.shape, -np.inf)
    ok = den > 1e-12 / w.sample_period
    out[ok] = num[ok] / den[ok]
    return out


def golden_section_max(f, a: float, b: float, tol: float) -> float:
    """Maximise a scalar function on [a, b] down to bracket width tol."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def estimate_delay(rec: EchoRecord, w: Waveform, energy: float, noise_var: float,
                   search: tuple[float, float], step: float | None = None,
                   resolution: float = 1e-12) -> LocalEstimate:
    """Grid search of the concentrated likelihood followed by golden-section refinement.

    :param search: (tau_min, tau_max) in seconds
    :param step: coarse grid step, default T_s / 4
    :param resolution: final bracket width in seconds
    """
    lo, hi = search
    if not hi >= lo:
        raise ValueError("empty delay search interval")
    step = w.sample_period / 4.0 if step is None else step
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    grid = lo + step * np.arange(n)
    vals = delay_objective(rec.samples, grid, w)
    i = int(np.argmax(vals))  # first maximum, i.e. smallest tau on ties
    best_tau, best_val = grid[i], vals[i]
    a, b = max(lo, best_tau - step), min(hi, best_tau + step)
    if b > a:
        obj = lambda t: float(delay_objective(rec.samples, t, w)[0])
        cand = golden_section_max(obj, a, b, resolution)
        cand_val = obj(cand)
        if cand_val > best_val:
            best_tau = cand
    tau_hat = float(best_tau)
    alpha_hat = estimate_alpha_given_tau(rec, tau_hat, w, energy)
    return LocalEstimate(
        tau_hat=tau_hat,
        alpha_hat=alpha_hat,
        crlb_tau=crlb_tau(alpha_hat, tau_hat, noise_var, energy, w),
        crlb_alpha=crlb_alpha(tau_hat, noise_var, energy, w),
        receiver_id=rec.receiver_id,
    )


def crlb_tau(alpha_hat: complex, tau_hat: float, noise_var: float, energy: float, w: Waveform) -> float:
    """1 / ((2E/sigma^2) |alpha|^2 sum_k s'(kT_s - tau)^2)."""
    if abs(alpha_hat) == 0:
        raise ValueError("zero reflecting coefficient: delay CRLB is infinite")
    ds = pulse_derivative(w.sample_times() - tau_hat, w)
    info = 2.0 * energy / noise_var * abs(alpha_hat) ** 2 * float(ds @ ds)
    if not info > 0:
        raise DegenerateWindowError("pulse slope vanishes inside the observation window")
    return 1.0 / info


def crlb_alpha(tau_hat: float, noise_var: float, energy: float, w: Waveform) -> float:
    """1 / ((2E/sigma^2) sum_k s(kT_s - tau)^2)."""
    e = _pulse_energy(tau_hat, w)
    _check_energy(e, w)
    return 1.0 / (2.0 * energy / noise_var * e)
