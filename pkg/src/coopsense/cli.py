"""Command line entry point: ``coopsense run | epsilon-star | trace-mcsca``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .backhaul.mac import build_mac_region
from .backhaul.mcsca import mcsca_run, write_trace_csv
from .estimation import estimate_delay
from .exceptions import InfeasibleEpsilonError
from .fusion import build_fim_context, epsilon_star, preliminary_position, search_region
from .harness import ExperimentConfig, generate_scenario, run_sweep, trial_rng
from .klt import window_covariance
from .scene import delay_bounds, synthesize_echo

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2


def _context(cfg: ExperimentConfig, trial: int):
    """FIM context of one seeded trial at the first sweep value."""
    point = cfg.at(cfg.sweep_values[0])
    rng = trial_rng(cfg.seed, trial)
    scene, w = generate_scenario(point, rng)
    region = search_region(scene.target_region)
    ests = []
    for n in range(scene.n_receivers):
        rec = synthesize_echo(scene, w, n, rng)
        lo, hi = delay_bounds(scene, n, region)
        pad = 3.0 * w.pulse_width
        ests.append(estimate_delay(rec, w, scene.tx_energy, float(scene.noise_var[n]), (lo - pad, hi + pad)))
    codecs = [window_covariance(e, w, scene.tx_energy, float(scene.noise_var[e.receiver_id])) for e in ests]
    theta0 = preliminary_position(ests, scene, region).theta
    return point, scene, build_fim_context(theta0, scene, ests, codecs, w)


def _eps(cfg: ExperimentConfig, eps_star: float) -> float:
    return cfg.eps_value * eps_star if cfg.eps_rule == "relative" else cfg.eps_value


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.workers is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "workers": args.workers})
    rows = run_sweep(cfg, args.out)
    print(f"wrote {len(rows)} rows to {Path(args.out) / 'results.csv'}")
    return EXIT_OK


def cmd_epsilon_star(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    point, scene, ctx = _context(cfg, args.trial)
    es = epsilon_star(ctx)
    eps = _eps(point, es)
    print(json.dumps({"trial": args.trial, "target": scene.target_pos.tolist(),
                      "theta0": ctx.theta.tolist(), "eps_star": es, "eps": eps}))
    if not eps > es:
        print(f"infeasible-epsilon: eps={eps:.6g} <= eps*={es:.6g}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_trace(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    point, scene, ctx = _context(cfg, args.trial)
    res = mcsca_run(ctx, build_mac_region(scene), _eps(point, epsilon_star(ctx)), point.mcsca())
    write_trace_csv(res, sys.stdout if args.out is None else args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopsense", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="Monte Carlo sweep to CSV")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--workers", type=int, default=None)
    r.set_defaults(func=cmd_run)
    e = sub.add_parser("epsilon-star", help="minimum achievable CRLB of one seeded trial")
    e.add_argument("--config", required=True)
    e.add_argument("--trial", type=int, default=0)
    e.set_defaults(func=cmd_epsilon_star)
    t = sub.add_parser("trace-mcsca", help="per-iteration MCSCA convergence CSV")
    t.add_argument("--config", required=True)
    t.add_argument("--trial", type=int, default=0)
    t.add_argument("--out", default=None, help="CSV path (default stdout)")
    t.set_defaults(func=cmd_trace)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleEpsilonError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INFEASIBLE
    except ValueError as exc:
        # bad configuration values are reported as infeasible configurations
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # noqa: BLE001 - top-level error boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
