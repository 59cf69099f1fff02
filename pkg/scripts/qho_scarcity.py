"""Quantum oscillator: scaled offline basis (readouts k = 0, 2, 4 on a 50x50
grid, schedule compressed to the shortened run), then inference of k for
unseen values with 10000 / 1000 / 100 / 10 observations.

    python scripts/qho_scarcity.py --root runs/qho [--epochs 1500] [--k 1 3] [--points 1000 10]
"""
import argparse

from _common import out_dir, overrides, step


def train_scaled(root, epochs):
    off = out_dir(root, "offline")
    step("train-offline", "--spec", "qho", "--readouts", 3, "--epochs", epochs, "--out", off,
         *overrides({"offline.param_values": "[[0.0], [2.0], [4.0]]",
                     "offline.n_collocation": "[50, 50]",
                     "offline.schedule_reference_epochs": 3200}))
    return off / "qho_r3.ipbn"


def infer(root, checkpoint, ks, points, tag, extra=None, epochs=6000):
    on = out_dir(root, tag)
    values = "[" + ", ".join(f"[{k}]" for k in ks) + "]"
    step("infer-online", "--spec", "qho", "--checkpoint", checkpoint, "--readouts", len(ks),
         "--points", points, "--epochs", epochs, "--out", on,
         *overrides({"data.param_values": values, "online.param_ranges": "[[0.0, 4.0]]", **(extra or {})}))
    return on / "summary.csv"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="runs/qho")
    ap.add_argument("--epochs", type=int, default=1500)
    ap.add_argument("--online-epochs", type=int, default=6000)
    ap.add_argument("--k", type=float, nargs="+", default=[1.0, 3.0])
    ap.add_argument("--points", type=int, nargs="+", default=[10000, 1000, 100, 10])
    args = ap.parse_args()

    ck = train_scaled(args.root, args.epochs)
    summaries = [infer(args.root, ck, args.k, n, f"online_p{n}", epochs=args.online_epochs) for n in args.points]
    step("report", *summaries, "--out", out_dir(args.root, "report"))


if __name__ == "__main__":
    main()
