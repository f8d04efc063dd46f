"""Train the toy forecaster on a synthetic fleet and print its ADE next to the baselines."""
import argparse

from vesselcast.smoke import LearningSmokeConfig, run_learning_smoke


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=None)
    ap.add_argument("--vessels", type=int, default=None, help="training fleet size")
    args = ap.parse_args()
    cfg = LearningSmokeConfig()
    if args.epochs is not None:
        cfg.train.max_epochs = args.epochs
    if args.vessels is not None:
        cfg.train_fleet.vessels = args.vessels
    r = run_learning_smoke(cfg)
    print(f"trajectories {r.trajectories}, test windows {r.test_windows}, epochs {r.epochs}, {r.seconds:.0f}s")
    print(f"ADE model {r.ade_model:.0f} m | constant-position {r.ade_constant_position:.0f} m "
          f"| constant-velocity {r.ade_constant_velocity:.0f} m")
    print("PASS" if r.passed else "FAIL")
    raise SystemExit(0 if r.passed else 1)


if __name__ == "__main__":
    main()
