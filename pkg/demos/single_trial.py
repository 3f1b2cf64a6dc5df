"""Run every algorithm on one seeded scenario and print position error and channel uses."""
import argparse

import numpy as np

from coopsense.harness import ALGORITHMS, ExperimentConfig, generate_scenario, run_pipeline_once, trial_rng


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--trial", type=int, default=0)
    ap.add_argument("--snr-db", type=float, default=0.0)
    ap.add_argument("--eps", type=float, default=1.05, help="CRLB budget as a multiple of eps*")
    args = ap.parse_args()

    cfg = ExperimentConfig(seed=args.seed, snr_db=args.snr_db, eps_value=args.eps, algorithms=tuple(ALGORITHMS))
    rng = trial_rng(cfg.seed, args.trial)
    scene, w = generate_scenario(cfg, rng)
    print(f"target at {np.round(scene.target_pos, 2)}, {scene.n_receivers} receivers")
    for name, out in run_pipeline_once(scene, w, cfg, rng).items():
        if out.error:
            print(f"{name:16s} failed: {out.error}")
            continue
        err = float(np.linalg.norm(out.theta - scene.target_pos))
        print(f"{name:16s} error {err:8.3f} m  W {out.W:6.1f}  nodes {list(out.omega)}")


if __name__ == "__main__":
    main()
