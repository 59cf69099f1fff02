"""Predator-prey with unknown interaction terms: offline basis on the full
model, then UPINN inference in distribution ([0.5, 1.5]) and out of
distribution ([1.5, 2.5]).

    python scripts/lv_upinn.py --root runs/lv [--readouts 30] [--epochs 10000] [--queries 10]
"""
import argparse

from _common import out_dir, overrides, step


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="runs/lv")
    ap.add_argument("--readouts", type=int, default=30)
    ap.add_argument("--epochs", type=int, default=10000)
    ap.add_argument("--online-epochs", type=int, default=10000)
    ap.add_argument("--queries", type=int, default=10)
    args = ap.parse_args()

    off = out_dir(args.root, f"offline_r{args.readouts}")
    step("train-offline", "--spec", "lv", "--readouts", args.readouts, "--epochs", args.epochs,
         "--override", "offline.n_validation=0", "--out", off)
    summaries = []
    for tag, (lo, hi) in (("in_dist", (0.5, 1.5)), ("ood", (1.5, 2.5))):
        on = out_dir(args.root, f"online_{tag}")
        step("infer-online", "--spec", "lv_upinn", "--checkpoint", off / f"lv_r{args.readouts}.ipbn",
             "--readouts", args.queries, "--epochs", args.online_epochs, "--out", on,
             *overrides({"data.param_ranges": f"[[{lo}, {hi}], [{lo}, {hi}], [{lo}, {hi}], [{lo}, {hi}]]",
                         "online.param_ranges": f"[[{lo}, {hi}], [{lo}, {hi}]]"}))
        summaries.append(on / "summary.csv")
    step("report", *summaries, "--out", out_dir(args.root, "report"))


if __name__ == "__main__":
    main()
