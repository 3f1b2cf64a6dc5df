"""Geometry, waveform, pathloss and echo synthesis for one sensing instance."""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8


@dataclass(frozen=True)
class Waveform:
    """Gaussian pulse and sampling parameters.

    :param pulse_width: T in seconds
    :param carrier: f_c in Hz (only enters the pathloss)
    :param bandwidth: B in Hz
    :param sample_period: T_s in seconds
    :param window_length: T_d in seconds, length of the per-receiver sample window
    :param total_samples: K, samples k = 1..K per pulse; None until fixed by the scene
    """

    pulse_width: float = 2e-8
    carrier: float = 3.55e9
    bandwidth: float = 50e6
    sample_period: float = 1e-8
    window_length: float = 8e-8
    total_samples: int | None = None

    def __post_init__(self):
        if self.pulse_width <= 0 or self.sample_period <= 0:
            raise ValueError("pulse width and sample period must be positive")
        if self.window_length < self.pulse_width:
            raise ValueError("window length must cover at least one pulse width")

    def with_samples(self, total_samples: int) -> Waveform:
        return replace(self, total_samples=int(total_samples))

    def sample_times(self) -> np.ndarray:
        if self.total_samples is None:
            raise ValueError("total_samples not set; call with_samples() first")
        return np.arange(1, self.total_samples + 1) * self.sample_period


@dataclass(frozen=True)
class Scene:
    """Positions (m), powers and noise levels of one cooperative sensing instance."""

    tx_pos: np.ndarray
    rx_pos: np.ndarray
    target_pos: np.ndarray
    tx_energy: float
    noise_var: np.ndarray
    backhaul_power: np.ndarray
    backhaul_gain: np.ndarray
    backhaul_noise: float
    reflect_amp: float = 1.0
    seed: int = 0
    target_region: tuple[float, float, float, float] | None = None

    def __post_init__(self):
        rx = np.atleast_2d(np.asarray(self.rx_pos, dtype=float))
        n = rx.shape[0]
        object.__setattr__(self, "rx_pos", rx)
        object.__setattr__(self, "tx_pos", np.asarray(self.tx_pos, dtype=float))
        object.__setattr__(self, "target_pos", np.asarray(self.target_pos, dtype=float))
        for name in ("noise_var", "backhaul_power", "backhaul_gain"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (n,)).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if n < 1:
            raise ValueError("need at least one receiver")
        positive = [self.tx_energy, self.backhaul_noise, *self.noise_var,
                    *self.backhaul_power, *self.backhaul_gain]
        if min(positive) <= 0:
            raise ValueError("energies, noise levels, powers and gains must be positive")
        pts = np.concatenate([rx.ravel(), self.tx_pos, self.target_pos])
        if not np.all(np.isfinite(pts)):
            raise ValueError("positions must be finite")

    @property
    def n_receivers(self) -> int:
        return self.rx_pos.shape[0]

    def with_target(self, target_pos) -> Scene:
        return replace(self, target_pos=np.asarray(target_pos, dtype=float))

    def with_noise(self, noise_var) -> Scene:
        return replace(self, noise_var=np.broadcast_to(noise_var, (self.n_receivers,)))


@dataclass(frozen=True)
class EchoRecord:
    samples: np.ndarray
    receiver_id: int
    true_tau: float
    true_alpha: complex


def pulse_value(t, w: Waveform):
    """Unit-energy Gaussian pulse s(t) = 2^{1/4} T^{-1/2} exp(-pi t^2 / T^2)."""
    T = w.pulse_width
    t = np.asarray(t, dtype=float)
    return 2.0 ** 0.25 / np.sqrt(T) * np.exp(-np.pi * t * t / (T * T))


def pulse_derivative(t, w: Waveform):
    """ds/dt = -2 pi t / T^2 * s(t)."""
    T = w.pulse_width
    t = np.asarray(t, dtype=float)
    return -2.0 * np.pi * t / (T * T) * pulse_value(t, w)


def bistatic_range(tx, rx, target) -> float:
    tx, rx, target = (np.asarray(v, dtype=float) for v in (tx, rx, target))
    return float(np.linalg.norm(tx - target) + np.linalg.norm(rx - target))


def propagation_delay(scene: Scene, n: int, target=None) -> float:
    """Delay tx -> target -> receiver n in seconds."""
    target = scene.target_pos if target is None else target
    return bistatic_range(scene.tx_pos, scene.rx_pos[n], target) / SPEED_OF_LIGHT


def pathloss_db(d_km, f_ghz):
    """LOS pathloss 32.4 + 20 log10(d[km]) + 20 log10(f[GHz]) in dB."""
    d_km = np.asarray(d_km, dtype=float)
    f_ghz = np.asarray(f_ghz, dtype=float)
    if np.any(d_km <= 0) or np.any(f_ghz <= 0):
        raise ValueError("distance and frequency must be positive")
    out = 32.4 + 20.0 * np.log10(d_km) + 20.0 * np.log10(f_ghz)
    return float(out) if out.ndim == 0 else out


def pathloss_amplitude(scene: Scene, n: int, target=None, carrier: float = 3.55e9) -> float:
    """Two-hop amplitude |rho_n| = 10^{-(L_tx->target + L_target->rx)/20}."""
    target = scene.target_pos if target is None else np.asarray(target, dtype=float)
    d1 = np.linalg.norm(scene.tx_pos - target) / 1e3
    d2 = np.linalg.norm(scene.rx_pos[n] - target) / 1e3
    f = carrier / 1e9
    return 10.0 ** (-(pathloss_db(d1, f) + pathloss_db(d2, f)) / 20.0)


def echo_samples(tau: float, alpha: complex, w: Waveform, energy: float,
                 noise_var: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """r(kT_s) = sqrt(E) alpha s(kT_s - tau) + noise for k = 1..K."""
    t = w.sample_times()
    clean = np.sqrt(energy) * alpha * pulse_value(t - tau, w)
    clean = clean.astype(complex)
    if noise_var > 0:
        if rng is None:
            raise ValueError("a generator is required for noisy samples")
        scale = np.sqrt(noise_var / 2.0)
        clean = clean + scale * (rng.standard_normal(t.size) + 1j * rng.standard_normal(t.size))
    return clean


def synthesize_echo(scene: Scene, w: Waveform, n: int, rng: np.random.Generator) -> EchoRecord:
    """Noisy baseband samples at receiver n; the reflection phase is drawn from rng."""
    tau = propagation_delay(scene, n)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    alpha = pathloss_amplitude(scene, n, carrier=w.carrier) * scene.reflect_amp * np.exp(1j * phase)
    samples = echo_samples(tau, alpha, w, scene.tx_energy, scene.noise_var[n], rng)
    return EchoRecord(samples=samples, receiver_id=n, true_tau=tau, true_alpha=complex(alpha))


def peak_snr(scene: Scene, w: Waveform, target=None) -> np.ndarray:
    """Per-receiver peak-sample SNR E |alpha_n|^2 s(0)^2 / sigma_n^2 (linear)."""
    amps = _echo_amplitudes(scene, w, target)
    return scene.tx_energy * amps ** 2 * pulse_value(0.0, w) ** 2 / scene.noise_var


def window_snr(scene: Scene, w: Waveform, target=None) -> np.ndarray:
    """Per-receiver SNR averaged over the sample window centred on the echo.

    Signal power E |alpha_n|^2 s(kT_s - tau_n)^2 is averaged over the
    K_n = T_d/T_s + 2 window samples and divided by sigma_n^2.
    """
    amps = _echo_amplitudes(scene, w, target)
    k_n = int(round(w.window_length / w.sample_period)) + 2
    # window-average of s^2 for a window spanning T_d around the pulse centre
    offsets = (np.arange(k_n) - (k_n - 1) / 2.0) * w.sample_period
    mean_s2 = float(np.mean(pulse_value(offsets, w) ** 2))
    return scene.tx_energy * amps ** 2 * mean_s2 / scene.noise_var


def _echo_amplitudes(scene: Scene, w: Waveform, target) -> np.ndarray:
    return np.array([pathloss_amplitude(scene, n, target, w.carrier) * scene.reflect_amp
                     for n in range(scene.n_receivers)])


def noise_for_snr(scene: Scene, w: Waveform, snr_db: float, target=None,
                  definition: str = "window") -> float:
    """Common noise variance giving the requested receiver-averaged SNR.

    :param definition: ``window`` (see window_snr) or ``peak`` (see peak_snr)
    """
    unit = scene.with_noise(1.0)
    if definition == "window":
        snr = window_snr(unit, w, target)
    elif definition == "peak":
        snr = peak_snr(unit, w, target)
    else:
        raise ValueError(f"unknown SNR definition {definition!r}")
    return float(np.mean(snr) / 10.0 ** (snr_db / 10.0))


def delay_bounds(scene: Scene, n: int, region, step: float = 1.0) -> tuple[float, float]:
    """Min and max delay to receiver n over a rectangular region (x0, x1, y0, y1)."""
    x0, x1, y0, y1 = region
    xs = np.linspace(x0, x1, max(2, int(np.ceil((x1 - x0) / step)) + 1))
    ys = np.linspace(y0, y1, max(2, int(np.ceil((y1 - y0) / step)) + 1))
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    d = np.linalg.norm(pts - scene.tx_pos, axis=1) + np.linalg.norm(pts - scene.rx_pos[n], axis=1)
    return float(d.min() / SPEED_OF_LIGHT), float(d.max() / SPEED_OF_LIGHT)


def default_total_samples(scene: Scene, w: Waveform, region=None) -> int:
    """K such that k T_s covers [0, tau_max + 5T]."""
    if region is None:
        tau_max = max(propagation_delay(scene, n) for n in range(scene.n_receivers))
    else:
        tau_max = max(delay_bounds(scene, n, region)[1] for n in range(scene.n_receivers))
    return int(np.ceil((tau_max + 5.0 * w.pulse_width) / w.sample_period))


def load_scenario(path) -> tuple[Scene, Waveform]:
    """Read a JSON scenario (SI units) into a Scene and Waveform.

    Keys: tx_pos, rx_pos, target_region, E, sigma2, P, g, N0, T, fc, B, Ts, Td, seed;
    optional target_pos and reflect_amp. Without target_pos the target is drawn
    uniformly in target_region using seed.
    """
    cfg = json.loads(Path(path).read_text())
    return scenario_from_dict(cfg)


def scenario_from_dict(cfg: dict) -> tuple[Scene, Waveform]:
    region = tuple(float(v) for v in cfg["target_region"]) if "target_region" in cfg else None
    seed = int(cfg.get("seed", 0))
    if "target_pos" in cfg:
        target = np.asarray(cfg["target_pos"], dtype=float)
    elif region is not None:
        rng = np.random.default_rng(seed)
        target = np.array([rng.uniform(region[0], region[1]), rng.uniform(region[2], region[3])])
    else:
        raise ValueError("scenario needs target_pos or target_region")
    scene = Scene(
        tx_pos=cfg["tx_pos"], rx_pos=cfg["rx_pos"], target_pos=target,
        tx_energy=float(cfg.get("E", 1.0)), noise_var=cfg["sigma2"],
        backhaul_power=cfg.get("P", 1.0), backhaul_gain=cfg["g"],
        backhaul_noise=float(cfg.get("N0", 1.0)), reflect_amp=float(cfg.get("reflect_amp", 1.0)),
        seed=seed, target_region=region,
    )
    w = Waveform(pulse_width=float(cfg.get("T", 2e-8)), carrier=float(cfg.get("fc", 3.55e9)),
                 bandwidth=float(cfg.get("B", 50e6)), sample_period=float(cfg.get("Ts", 1e-8)),
                 window_length=float(cfg.get("Td", 8e-8)))
    if "K" in cfg:
        w = w.with_samples(int(cfg["K"]))
    else:
        w = w.with_samples(default_total_samples(scene, w, region))
    return scene, w
