"""Scenario generation and Monte Carlo sweeps of the fusion pipeline and its baselines."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .backhaul.mac import build_mac_region, min_channel_uses
from .backhaul.mcsca import AllocationResult, McscaConfig, mcsca_run
from .backhaul.selection import bit_realloc, greedy_select
from .estimation import estimate_delay
from .exceptions import CoopSenseError, InfeasibleEpsilonError
from .fusion import (baseline_sdcs, baseline_toa_idcs, baseline_toa_rss_idcs, build_fim_context,
                     epsilon_star, fc_ml_localize, local_region, observation_from_window,
                     preliminary_position, search_region)
from .klt import quantize_window, reconstruct, stack_real, window_covariance, window_samples
from .scene import Scene, Waveform, default_total_samples, delay_bounds, noise_for_snr, synthesize_echo

TOPOLOGIES = ("linear", "circular", "random")
SWEEPS = ("snr", "n", "eps", "k", "fs")
ALLOCATING = ("hisdcs_full", "hisdcs_noselect", "bit_realloc")
BASELINES = ("toa_idcs", "toa_rss_idcs", "sdcs_uniform8", "sdcs_ideal")
SIGNAL_BASELINES = ("sdcs_uniform8", "sdcs_ideal")
ALGORITHMS = ALLOCATING + BASELINES
CSV_COLUMNS = ("sweep_name", "sweep_value", "algorithm", "mse", "mean_w", "mean_nodes", "trials", "failures")
ALLOCATION_COLUMNS = ("sweep_value", "trial", "algorithm", "W", "omega", "node_bits", "crlb", "eps",
                      "iterations")


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment: a base scenario, a sweep axis and the algorithms to compare.

    :param topology: ``linear``, ``circular`` or ``random`` receiver placement
    :param spacing: receiver spacing of the linear layout (m)
    :param radius: circle radius of the circular layout (m)
    :param tx_distance: transmitter offset from the receiver line (m)
    :param target_region: (x0, x1, y0, y1); None derives it from the topology
    :param snr_db: receiver-averaged window SNR when the sweep is not over SNR
    :param eps_rule: ``relative`` (eps = eps_value * eps*) or ``absolute``
    :param backhaul_snr_db: P_n g_n / N0 of every receiver's backhaul link
    :param workers: process count for the trial pool (1 runs inline)
    """

    topology: str = "linear"
    n_receivers: int = 5
    spacing: float = 50.0
    radius: float = 500.0
    tx_distance: float = 1000.0
    target_region: tuple[float, float, float, float] | None = None
    snr_db: float = 0.0
    sweep_name: str = "snr"
    sweep_values: tuple[float, ...] = (0.0,)
    trials: int = 500
    eps_rule: str = "relative"
    eps_value: float = 1.01
    algorithms: tuple[str, ...] = ("hisdcs_noselect", "toa_idcs", "sdcs_ideal")
    seed: int = 0
    backhaul_snr_db: float = 16.85
    pulse_width: float = 2e-8
    carrier: float = 3.55e9
    bandwidth: float = 50e6
    sample_period: float = 1e-8
    window_length: float = 8e-8
    tx_energy: float = 1.0
    reflect_amp: float = 1.0
    beta0: float = 4.0
    mu: float = 1e-3
    workers: int = 1

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.sweep_name not in SWEEPS:
            raise ValueError(f"unknown sweep axis {self.sweep_name!r}")
        if len(self.sweep_values) == 0:
            raise ValueError("sweep needs at least one value")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.eps_rule not in ("relative", "absolute"):
            raise ValueError(f"unknown eps rule {self.eps_rule!r}")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}")
        if self.n_receivers < 1:
            raise ValueError("need at least one receiver")

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        names = set(cls.__dataclass_fields__)
        extra = set(d) - names
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        d = dict(d)
        for key in ("sweep_values", "algorithms"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("target_region") is not None:
            d["target_region"] = tuple(float(v) for v in d["target_region"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def mcsca(self) -> McscaConfig:
        return McscaConfig(beta0=self.beta0, mu=self.mu)

    def at(self, value: float) -> ExperimentConfig:
        """The configuration with the sweep axis set to ``value``."""
        if self.sweep_name == "snr":
            return replace(self, snr_db=float(value))
        if self.sweep_name == "n":
            return replace(self, n_receivers=int(value))
        if self.sweep_name == "eps":
            return replace(self, eps_value=float(value))
        if self.sweep_name == "k":
            # K_n = T_d / T_s + 2 window samples
            return replace(self, window_length=(float(value) - 2.0) * self.sample_period)
        return replace(self, sample_period=1.0 / float(value))


@dataclass(frozen=True)
class ResultRow:
    sweep_name: str
    sweep_value: float
    algorithm: str
    mse: float
    mean_w: float
    mean_nodes: float
    mean_iterations: float
    trials: int
    failures: int


@dataclass(frozen=True)
class TrialOutcome:
    """What one algorithm produced on one trial; ``error`` is set instead of theta on failure."""

    algorithm: str
    theta: np.ndarray | None
    W: float
    omega: tuple[int, ...]
    allocation: AllocationResult | None = None
    error: str = ""


@dataclass(frozen=True)
class Geometry:
    tx_pos: np.ndarray
    rx_pos: np.ndarray
    region: tuple[float, float, float, float]
    snr_reference: np.ndarray
    disc: tuple[float, float, float] | None = None


def _geometry(cfg: ExperimentConfig) -> Geometry:
    n = cfg.n_receivers
    if cfg.topology == "linear":
        xs = cfg.spacing * np.arange(n)
        rx = np.stack([xs, np.zeros(n)], axis=1)
        cx = float(xs.mean())
        tx = np.array([cx, cfg.tx_distance])
        region = cfg.target_region or (cx - 50.0, cx + 50.0, 50.0, 100.0)
    elif cfg.topology == "circular":
        ang = 2.0 * np.pi * np.arange(n) / n
        rx = cfg.radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        tx = np.zeros(2)
        region = cfg.target_region or (-cfg.radius, cfg.radius, -cfg.radius, cfg.radius)
    else:
        # receiver layout drawn once per seed, independent of the trial streams
        layout = np.random.default_rng([cfg.seed, n, 7])
        span = cfg.spacing * max(n - 1, 1)
        rx = np.stack([layout.uniform(0.0, span, n), layout.uniform(-cfg.spacing / 2, cfg.spacing / 2, n)], axis=1)
        cx = span / 2.0
        tx = np.array([cx, cfg.tx_distance])
        region = cfg.target_region or (cx - 50.0, cx + 50.0, 50.0, 100.0)
    x0, x1, y0, y1 = region
    disc = None
    if cfg.topology == "circular" and cfg.target_region is None:
        disc = (0.0, 0.0, cfg.radius)
        ref = np.array([cfg.radius / 2.0, 0.0]) @ np.array([[np.cos(np.pi / n), np.sin(np.pi / n)],
                                                            [-np.sin(np.pi / n), np.cos(np.pi / n)]])
    else:
        ref = np.array([(x0 + x1) / 2.0, (y0 + y1) / 2.0])
    return Geometry(tx_pos=tx, rx_pos=rx, region=tuple(float(v) for v in region), snr_reference=ref, disc=disc)


def draw_target(geom: Geometry, rng: np.random.Generator) -> np.ndarray:
    """Uniform target in the region (or in the disc for the circular layout)."""
    if geom.disc is not None:
        cx, cy, r = geom.disc
        rad = r * math.sqrt(rng.uniform())
        ang = rng.uniform(0.0, 2.0 * np.pi)
        return np.array([cx + rad * math.cos(ang), cy + rad * math.sin(ang)])
    x0, x1, y0, y1 = geom.region
    return np.array([rng.uniform(x0, x1), rng.uniform(y0, y1)])


def generate_scenario(cfg: ExperimentConfig, rng: np.random.Generator | None = None) -> tuple[Scene, Waveform]:
    """Geometry of the configured topology with a target drawn from rng and noise set by snr_db.

    Without rng the target sits at the SNR reference point.
    """
    geom = _geometry(cfg)
    target = geom.snr_reference if rng is None else draw_target(geom, rng)
    scene = Scene(
        tx_pos=geom.tx_pos, rx_pos=geom.rx_pos, target_pos=target, tx_energy=cfg.tx_energy,
        noise_var=1.0, backhaul_power=1.0, backhaul_gain=10.0 ** (cfg.backhaul_snr_db / 10.0),
        backhaul_noise=1.0, reflect_amp=cfg.reflect_amp, seed=cfg.seed, target_region=geom.region,
    )
    w = Waveform(pulse_width=cfg.pulse_width, carrier=cfg.carrier, bandwidth=cfg.bandwidth,
                 sample_period=cfg.sample_period, window_length=cfg.window_length)
    w = w.with_samples(default_total_samples(scene, w, search_region(geom.region)))
    sigma2 = noise_for_snr(scene, w, cfg.snr_db, target=geom.snr_reference)
    return scene.with_noise(sigma2), w


# -- one trial ---------------------------------------------------------------

def _hisdcs_observations(alloc: AllocationResult, records, estimates, codecs, scene: Scene):
    obs = []
    for n in alloc.omega:
        rec, est, codec = records[n], estimates[n], codecs[n]
        r = stack_real(window_samples(rec.samples, codec.window))
        q = quantize_window(codec.transform(r), codec, alloc.bits_for(n))
        r_tilde, Qn = reconstruct(codec, q)
        obs.append(observation_from_window(rec.samples, codec, est, float(scene.noise_var[n]),
                                           extra_cov=Qn, samples=r_tilde))
    return obs


def _uniform8_channel_uses(scene: Scene, codecs, bits: int = 8) -> int:
    totals = np.array([bits * c.window.size * 2 for c in codecs], dtype=float)
    return min_channel_uses(totals, build_mac_region(scene))


def run_pipeline_once(scene: Scene, w: Waveform, cfg: ExperimentConfig, rng: np.random.Generator,
                      algorithms=None) -> dict[str, TrialOutcome]:
    """Echoes, local estimates and window statistics shared by every algorithm of one trial.

    Errors of individual algorithms become failure outcomes; errors before the
    fork (estimation, preliminary fix) fail every algorithm of the trial.
    Signal-domain fusers search the neighbourhood of the preliminary fix given
    by ``local_region``.
    """
    algorithms = cfg.algorithms if algorithms is None else tuple(algorithms)
    region = search_region(scene.target_region)
    out: dict[str, TrialOutcome] = {}
    try:
        records = [synthesize_echo(scene, w, n, rng) for n in range(scene.n_receivers)]
        estimates = []
        for n, rec in enumerate(records):
            lo, hi = delay_bounds(scene, n, region)
            pad = 3.0 * w.pulse_width
            estimates.append(estimate_delay(rec, w, scene.tx_energy, float(scene.noise_var[n]), (lo - pad, hi + pad)))
        codecs = [window_covariance(e, w, scene.tx_energy, float(scene.noise_var[e.receiver_id])) for e in estimates]
        ctx, fc_region = None, region
        if any(a in ALLOCATING or a in SIGNAL_BASELINES for a in algorithms):
            theta0 = preliminary_position(estimates, scene, region).theta
            fc_region = local_region(theta0, region, w)
        if any(a in ALLOCATING for a in algorithms):
            ctx = build_fim_context(theta0, scene, estimates, codecs, w)
            eps_star = epsilon_star(ctx)
            eps = cfg.eps_value * eps_star if cfg.eps_rule == "relative" else cfg.eps_value
    except (CoopSenseError, ValueError, np.linalg.LinAlgError) as exc:
        return {a: TrialOutcome(a, None, math.nan, (), error=type(exc).__name__) for a in algorithms}
    every = tuple(range(scene.n_receivers))
    for a in algorithms:
        try:
            if a in ALLOCATING:
                if a == "hisdcs_full":
                    alloc = greedy_select(ctx, scene, eps, cfg.mcsca())
                elif a == "hisdcs_noselect":
                    alloc = mcsca_run(ctx, build_mac_region(scene), eps, cfg.mcsca())
                else:
                    alloc = bit_realloc(ctx, scene, eps, cfg.mcsca())
                obs = _hisdcs_observations(alloc, records, estimates, codecs, scene)
                theta = fc_ml_localize(obs, scene, w, fc_region).theta
                out[a] = TrialOutcome(a, theta, float(alloc.W), alloc.omega, alloc)
            elif a == "toa_idcs":
                out[a] = TrialOutcome(a, baseline_toa_idcs(estimates, scene, region).theta, math.nan, every)
            elif a == "toa_rss_idcs":
                out[a] = TrialOutcome(a, baseline_toa_rss_idcs(estimates, scene, w, region).theta, math.nan, every)
            elif a == "sdcs_uniform8":
                theta = baseline_sdcs(records, estimates, codecs, "uniform8", scene, w, fc_region).theta
                out[a] = TrialOutcome(a, theta, float(_uniform8_channel_uses(scene, codecs)), every)
            else:
                theta = baseline_sdcs(records, estimates, codecs, "ideal", scene, w, fc_region).theta
                out[a] = TrialOutcome(a, theta, math.nan, every)
        except InfeasibleEpsilonError:
            out[a] = TrialOutcome(a, None, math.nan, (), error="infeasible-epsilon")
        except (CoopSenseError, ValueError, np.linalg.LinAlgError) as exc:
            out[a] = TrialOutcome(a, None, math.nan, (), error=type(exc).__name__)
    return out


# -- sweeps ------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    """Per-trial, per-algorithm result kept for aggregation and the allocation log."""

    sweep_value: float
    trial: int
    algorithm: str
    sq_error: float
    W: float
    nodes: int
    iterations: float
    node_bits: tuple[int, ...] = ()
    omega: tuple[int, ...] = ()
    crlb: float = math.nan
    eps: float = math.nan
    error: str = ""


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, trial])


def _run_trial(args) -> list[TrialRecord]:
    cfg, value, trial = args
    point = cfg.at(value)
    rng = trial_rng(cfg.seed, trial)
    scene, w = generate_scenario(point, rng)
    res = run_pipeline_once(scene, w, point, rng)
    recs = []
    for a in point.algorithms:
        o = res[a]
        if o.error:
            recs.append(TrialRecord(value, trial, a, math.nan, math.nan, 0, math.nan, error=o.error))
            continue
        err = float(np.sum((o.theta - scene.target_pos) ** 2))
        al = o.allocation
        if al is not None:
            recs.append(TrialRecord(value, trial, a, err, o.W, len(o.omega), float(al.iterations),
                                    tuple(int(b.sum()) for b in al.bits), al.omega, al.crlb, al.eps))
        else:
            recs.append(TrialRecord(value, trial, a, err, o.W, len(o.omega), math.nan))
    return recs


def run_trials(cfg: ExperimentConfig) -> list[TrialRecord]:
    """All (sweep value, trial) work units, sorted so aggregation is order independent."""
    jobs = [(cfg, v, t) for v in cfg.sweep_values for t in range(cfg.trials)]
    if len(cfg.algorithms) == 0:
        return []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            chunks = list(pool.map(_run_trial, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        chunks = [_run_trial(j) for j in jobs]
    order = {a: i for i, a in enumerate(cfg.algorithms)}
    recs = [r for c in chunks for r in c]
    recs.sort(key=lambda r: (cfg.sweep_values.index(r.sweep_value), order[r.algorithm], r.trial))
    return recs


def _nanmean(v) -> float:
    v = np.asarray(v, dtype=float)
    v = v[np.isfinite(v)]
    return float(v.mean()) if v.size else math.nan


def aggregate(cfg: ExperimentConfig, records: list[TrialRecord]) -> list[ResultRow]:
    rows = []
    for value in cfg.sweep_values:
        for a in cfg.algorithms:
            sel = [r for r in records if r.sweep_value == value and r.algorithm == a]
            ok = [r for r in sel if not r.error]
            rows.append(ResultRow(
                sweep_name=cfg.sweep_name, sweep_value=float(value), algorithm=a,
                mse=_nanmean([r.sq_error for r in ok]), mean_w=_nanmean([r.W for r in ok]),
                mean_nodes=_nanmean([r.nodes for r in ok]), mean_iterations=_nanmean([r.iterations for r in ok]),
                trials=len(sel), failures=len(sel) - len(ok)))
    return rows


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def write_results_csv(rows: list[ResultRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CSV_COLUMNS)
        for r in rows:
            wr.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def write_allocations_csv(records: list[TrialRecord], path) -> None:
    """Integer allocations of the bit-allocating algorithms, one line per trial."""
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(ALLOCATION_COLUMNS)
        for r in records:
            if r.algorithm not in ALLOCATING or r.error:
                continue
            wr.writerow([_fmt(r.sweep_value), r.trial, r.algorithm, _fmt(int(r.W)),
                         ";".join(map(str, r.omega)), ";".join(map(str, r.node_bits)),
                         _fmt(r.crlb), _fmt(r.eps), _fmt(int(r.iterations))])


def run_sweep(cfg: ExperimentConfig, out_dir=None) -> list[ResultRow]:
    """Monte Carlo over every sweep value; writes results.csv and allocations.csv to out_dir."""
    records = run_trials(cfg)
    rows = aggregate(cfg, records)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results_csv(rows, out / "results.csv")
        write_allocations_csv(records, out / "allocations.csv")
    return rows
