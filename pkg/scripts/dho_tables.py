"""Damped oscillator: offline models with 10/30/50 readouts, then online
inference for initial conditions drawn from [-c, c] with c in {5, 10, 20, 40}.

    python scripts/dho_tables.py --root runs/dho [--epochs 30000] [--readouts 10 30 50]
"""
import argparse

from _common import out_dir, overrides, step


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="runs/dho")
    ap.add_argument("--epochs", type=int, default=30000)
    ap.add_argument("--online-epochs", type=int, default=15000)
    ap.add_argument("--readouts", type=int, nargs="+", default=[10, 30, 50])
    ap.add_argument("--ic", type=float, nargs="+", default=[5, 10, 20, 40])
    args = ap.parse_args()

    offline, online = [], []
    for n in args.readouts:
        off = out_dir(args.root, f"offline_r{n}")
        step("train-offline", "--spec", "dho", "--readouts", n, "--epochs", args.epochs, "--out", off)
        offline.append(off / "summary.csv")
        for c in args.ic:
            on = out_dir(args.root, f"online_r{n}_ic{c:g}")
            step("infer-online", "--spec", "dho", "--checkpoint", off / f"dho_r{n}.ipbn",
                 "--epochs", args.online_epochs, "--out", on,
                 *overrides({"data.ic_ranges": f"[[{-c}, {c}], [{-c}, {c}]]"}))
            online.append(on / "summary.csv")
    step("report", *offline, "--out", out_dir(args.root, "report_offline"))
    step("report", *online, "--out", out_dir(args.root, "report_online"))


if __name__ == "__main__":
    main()
