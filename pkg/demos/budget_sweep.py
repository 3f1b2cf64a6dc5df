"""Small CRLB-budget sweep: localization MSE and channel uses as the budget loosens."""
import argparse

from coopsense.harness import ExperimentConfig, run_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--out", default=None, help="directory for results.csv and allocations.csv")
    args = ap.parse_args()

    cfg = ExperimentConfig(trials=args.trials, sweep_name="eps", sweep_values=(1.01, 1.1, 1.5, 2.0),
                           algorithms=("hisdcs_noselect",))
    print(f"{'eps/eps*':>8s} {'MSE (m^2)':>10s} {'mean W':>7s} {'failures':>8s}")
    for row in run_sweep(cfg, args.out):
        print(f"{row.sweep_value:8.2f} {row.mse:10.3f} {row.mean_w:7.2f} {row.failures:8d}")


if __name__ == "__main__":
    main()
