"""Quantum oscillator noise sweep: k inference with 1000 observations at
noise amplitudes 0, 0.1, ..., 1.0 and several noise seeds, reusing the
scaled checkpoint from ``qho_scarcity.py`` when it exists.

    python scripts/qho_noise.py --root runs/qho [--seeds 5] [--levels 0 0.25 0.5 0.75 1]
"""
import argparse
import csv
import statistics

from _common import out_dir, step
from qho_scarcity import infer, train_scaled


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="runs/qho")
    ap.add_argument("--epochs", type=int, default=1500)
    ap.add_argument("--online-epochs", type=int, default=6000)
    ap.add_argument("--k", type=float, nargs="+", default=[1.0, 3.0])
    ap.add_argument("--points", type=int, default=1000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--levels", type=float, nargs="+", default=[round(0.1 * i, 1) for i in range(11)])
    args = ap.parse_args()

    ck = out_dir(args.root, "offline", "qho_r3.ipbn")
    if not ck.exists():
        ck = train_scaled(args.root, args.epochs)
    rows, summaries = [], []
    for level in args.levels:
        maes = []
        for s in range(args.seeds if level > 0 else 1):
            path = infer(args.root, ck, args.k, args.points, f"noise_{level:g}_s{s}",
                         {"data.noise": level, "data.noise_seed": s}, epochs=args.online_epochs)
            summaries.append(path)
            with open(path, newline="") as fh:
                maes.append(float(next(csv.DictReader(fh))["k_mae"]))
        rows.append([level, len(maes), statistics.median(maes), min(maes), max(maes)])
    step("report", *summaries, "--out", out_dir(args.root, "report_noise"))
    curve = out_dir(args.root, "report_noise", "noise_curve.csv")
    with open(curve, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["noise", "runs", "median_k_mae", "min_k_mae", "max_k_mae"])
        w.writerows(rows)
    print(f"wrote {curve}")


if __name__ == "__main__":
    main()
