"""Command-line front end.

Subcommands: ``gen-data``, ``train-offline``, ``infer-online``,
``bench-autodiff`` and ``report``.  Every run writes ``run-manifest.json``
into its output directory with the resolved config and the sha256 of each
artifact; passing that manifest back as ``--config`` repeats the run.

Exit codes: 0 ok, 2 config error, 3 numeric divergence, 4 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .bench import BenchValidationError, run_benchmark, write_reports
from .config import ConfigError
from .network import (
    CheckpointCorruptError, CheckpointShapeError, CheckpointVersionError, DivergedTrainingError,
    NetworkArch, load_checkpoint,
)
from .offline import OfflineConfig, data_observations, offline_train
from .online import InverseQuery, online_infer
from .oracle import SolverDivergenceError, inject_noise, read_dataset, write_dataset
from .problems import UnknownSpecError, WeightSchedule, get_spec, sample_parameters

log = logging.getLogger("ipbasis")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4
TIMING_COLUMNS = ("training_time_s", "ms")
MANIFEST = "run-manifest.json"


# --------------------------------------------------------------------------
# helpers

def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
    return Path(path)


def _g(v):
    """Stable text form for floats in result tables."""
    if v is None or v == "":
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_manifest(out_dir, command, cfg, artifacts):
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "seeds": dict(cfg["seeds"]),
        "artifacts": {Path(p).name: sha256_of(p) for p in artifacts},
    }
    path = out_dir / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _ranges(v):
    return [tuple(r) for r in v] if v else None


def _generation_spec(name):
    # unknown-term specs are generated from the full predator-prey model
    spec = get_spec(name)
    return get_spec("lv") if spec.unknown_terms else spec


# --------------------------------------------------------------------------
# subcommands

def cmd_gen_data(cfg, out_dir=None):
    """Synthetic observations plus answer-key sidecar; returns the CSV path."""
    data, seeds = cfg["data"], cfg["seeds"]
    spec = _generation_spec(cfg["spec"])
    n = data["n_queries"]
    if data["param_values"]:
        params = np.asarray(data["param_values"], dtype=np.float64).reshape(-1, spec.param_dim)
        if len(params) != n:
            raise ConfigError(f"{len(params)} parameter vectors for {n} queries", "data.param_values")
        _, ics = sample_parameters(spec, n, (seeds["params"], 2), ic_ranges=_ranges(data["ic_ranges"]))
    else:
        params, ics = sample_parameters(spec, n, (seeds["params"], 2), param_ranges=_ranges(data["param_ranges"]),
                                        ic_ranges=_ranges(data["ic_ranges"]))
    obs = data_observations(spec, params, ics, data["points"], (seeds["data"], 2),
                            ode_steps=data["ode_steps"] or None, truth_grid=tuple(data["truth_grid"]),
                            layout=data["layout"])
    if data["noise"] > 0:
        obs = [inject_noise(o, data["noise"], seed=(seeds["data"], 3, data["noise_seed"], q))
               for q, o in enumerate(obs)]
    out_dir = Path(out_dir or cfg["paths"]["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    sidecar = {
        "spec": spec.name,
        "param_names": list(spec.param_names),
        "params": params.tolist(),
        "ics": ics.tolist() if ics is not None else None,
        "noise_scale": float(data["noise"]),
        "noise_seed": data["noise_seed"],
        "complex_valued": bool(obs[0].complex_valued),
        "layout": data["layout"],
        "points": data["points"],
        "seeds": dict(seeds),
    }
    path, side = write_dataset(out_dir / "dataset.csv", obs, sidecar)
    return [path, side]


def offline_config_from(cfg) -> OfflineConfig:
    off, seeds = cfg["offline"], cfg["seeds"]
    lr = WeightSchedule.parse(off["lr"])
    weights = {t: WeightSchedule.parse(w) for t, w in off["weights"].items()}
    ref = off["schedule_reference_epochs"]
    if ref:
        factor = off["epochs"] / ref
        lr = lr.scaled(factor)
        weights = {t: s.scaled(factor) for t, s in weights.items()}
    return OfflineConfig(
        spec=cfg["spec"], n_readouts=off["n_readouts"], n_validation=off["n_validation"],
        epochs=off["epochs"], lr=lr, val_lr=off["val_lr"], weights=weights, patience=off["patience"],
        seed_params=seeds["params"], seed_init=seeds["init"], seed_data=seeds["data"],
        data_loss=off["data_loss"], n_data=off["n_data"] or None,
        n_collocation=tuple(off["n_collocation"]) or None,
        param_values=off["param_values"] or None, param_ranges=off["param_ranges"] or None,
        ic_ranges=off["ic_ranges"] or None, checkpoint_on=off["checkpoint_on"],
        ode_steps=cfg["data"]["ode_steps"] or None, truth_grid=tuple(cfg["data"]["truth_grid"]),
    )


def cmd_train_offline(cfg, out_dir=None, echo=print):
    oc = offline_config_from(cfg)
    try:
        oc.validate()
    except ValueError as err:
        raise ConfigError(str(err), "offline") from None
    out_dir = Path(out_dir or cfg["paths"]["out"])
    res = offline_train(oc, out_dir=out_dir, log=log.info)
    elapsed = sum(res.history.ms) / 1e3  # training loop only, no I/O
    hist_path = out_dir / "history.csv"
    summary = _write_csv(out_dir / "summary.csv",
                         ["model", "n_readouts", "final_loss", "final_val_loss", "best_epoch", "training_time_s"],
                         [[f"R{oc.n_readouts}", oc.n_readouts, _g(res.meta["train_loss"]),
                           _g(res.meta["val_loss"]), res.meta["epoch"], f"{elapsed:.3f}"]])
    val = res.meta["val_loss"]
    echo(f"final loss {res.meta['train_loss']:.4e}"
         + (f"  val loss {val:.4e}" if val is not None else "")
         + f"  best epoch {res.meta['epoch']}  time {elapsed:.1f}s")
    return [res.checkpoint, hist_path, summary]


def _online_spec(cfg, meta):
    spec = get_spec(cfg["spec"])
    arch = NetworkArch.from_dict(meta["arch"])
    if arch != spec.arch:
        raise ConfigError(f"checkpoint architecture {arch} does not match spec '{spec.name}' {spec.arch}",
                          "paths.checkpoint")
    base = "lv" if spec.unknown_terms else spec.name
    if meta.get("spec") not in (None, spec.name, base):
        raise ConfigError(f"checkpoint was trained for '{meta.get('spec')}', not '{spec.name}'", "paths.checkpoint")
    colloc = cfg["online"]["n_collocation"] or meta.get("n_collocation")
    if colloc:
        spec = spec.with_overrides(n_collocation=tuple(colloc))
    return spec


def cmd_infer_online(cfg, out_dir=None, echo=print):
    paths, on = cfg["paths"], cfg["online"]
    out_dir = Path(out_dir or paths["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    if not paths["checkpoint"]:
        raise ConfigError("infer-online needs a checkpoint", "paths.checkpoint")
    R, _, meta = load_checkpoint(paths["checkpoint"])
    spec = _online_spec(cfg, meta)
    artifacts = []
    dataset = paths["dataset"]
    if not dataset:
        artifacts = cmd_gen_data(cfg, out_dir)
        dataset = artifacts[0]
    observations, sidecar = read_dataset(dataset)
    key = None
    known = None
    names = list(spec.param_names)
    truth_names = names
    if sidecar is not None and sidecar.get("params") is not None:
        key = np.asarray(sidecar["params"], dtype=np.float64)
        truth_names = sidecar.get("param_names", names)
        if key.shape[1] == spec.param_dim:
            known = key
        elif spec.truth_params is not None and list(truth_names) == list(spec.truth_params[0]):
            known = key[:, [truth_names.index(nm) for nm in names]]
    if known is None and not all(spec.trainable):
        raise ConfigError("non-trainable parameters need an answer-key sidecar with their values", "paths.dataset")
    query = InverseQuery(
        observations, epochs=on["epochs"], lr=WeightSchedule.parse(on["lr"]),
        weights={t: WeightSchedule.parse(w) for t, w in on["weights"].items()},
        seed=cfg["seeds"]["init"], mode=on["mode"], known_params=known,
        param_ranges=_ranges(on["param_ranges"]), unknown_widths=tuple(on["unknown_widths"]),
    )
    try:
        res = online_infer(R, query, spec, answer_key=key)
    except ValueError as err:
        raise ConfigError(str(err), "online") from None

    trainable = [nm for nm, tr in zip(names, spec.trainable) if tr]
    header = ["query_id"] + [f"est_{nm}" for nm in trainable]
    if key is not None:
        header += [f"true_{nm}" for nm in truth_names]
    header += ["data_loss", "residual_loss"]
    rows = []
    for q in range(len(observations)):
        row = [q] + [_g(res.estimates[q, names.index(nm)]) for nm in trainable]
        if key is not None:
            row += [_g(v) for v in key[q]]
        row += [_g(res.per_query["data"][q]), _g(res.per_query.get("pde", np.zeros(len(observations)))[q])]
        rows.append(row)
    results = _write_csv(out_dir / "results.csv", header, rows)

    metrics = res.metrics or {}
    s_header = ["spec", "n_queries", "num_data_points", "noise", "final_loss"]
    s_row = [spec.name, len(observations), len(observations[0].values), _g(float(observations[0].noise_scale)),
             _g(res.final_loss)]
    for nm in trainable:
        if f"{nm}_mse" in metrics:
            s_header += [f"{nm}_mse", f"{nm}_mae"]
            s_row += [_g(metrics[f"{nm}_mse"]), _g(metrics[f"{nm}_mae"])]
    if "unknown_mmse" in metrics:
        s_header += ["unknown_mmse", "unknown_mmae"]
        s_row += [_g(metrics["unknown_mmse"]), _g(metrics["unknown_mmae"])]
    s_header.append("training_time_s")
    s_row.append(f"{res.ms / 1e3:.3f}")
    summary = _write_csv(out_dir / "summary.csv", s_header, [s_row])
    shown = ", ".join(f"{k} {v:.3e}" for k, v in metrics.items() if not k.endswith("per_query"))
    echo(f"final loss {res.final_loss:.4e}  {shown}  time {res.ms / 1e3:.1f}s")
    return artifacts + [results, summary]


def cmd_bench_autodiff(cfg, out_dir=None, echo=print):
    b = cfg["bench"]
    out_dir = Path(out_dir or cfg["paths"]["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = run_benchmark(b["input_dim"], tuple(b["hidden_widths"]), b["n_basis"], b["points"],
                            b["reps"], b["seed"])
    path = out_dir / "bench.csv"
    write_reports(path, reports)
    echo(f"forward-hd median {reports[0].median_s * 1e3:.3f} ms, reverse-per-output median "
         f"{reports[1].median_s * 1e3:.3f} ms, speedup {reports[0].speedup:.2f}x")
    return [path], reports


DISPLAY = {
    "num_data_points": "Num. Data Points", "final_loss": "Final Loss", "final_val_loss": "Final Val. Loss",
    "training_time_s": "TT (Seconds)", "unknown_mmse": "MMSE", "unknown_mmae": "MMAE",
    "n_readouts": "Readouts", "n_queries": "Queries",
}


def _display_names(header):
    params = [h[:-4] for h in header if h.endswith("_mse") and h != "unknown_mmse"]
    out = []
    for h in header:
        if h in DISPLAY:
            out.append(DISPLAY[h])
        elif h.endswith(("_mse", "_mae")) and h[:-4] in params:
            kind = h[-3:].upper()
            out.append(f"Param. {kind}" if len(params) == 1 else f"P{params.index(h[:-4]) + 1} {kind}")
        else:
            out.append(h)
    return out


def cmd_report(paths, out_dir, echo=print):
    if not paths:
        raise ConfigError("report needs at least one summary.csv", "report.inputs")
    header, rows = None, []
    for p in paths:
        with open(p, encoding="utf-8", newline="") as fh:
            table = list(csv.reader(fh))
        if not table:
            raise ConfigError(f"{p} is empty", "report.inputs")
        if header is None:
            header = table[0]
        elif table[0] != header:
            raise ConfigError(f"{p} has columns {table[0]} but expected {header}", "report.inputs")
        for r in table[1:]:
            rows.append([str(Path(p).parent.name or p)] + r)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    full = ["source"] + header
    csv_path = _write_csv(out_dir / "report.csv", full, rows)
    shown = ["Source"] + _display_names(header)
    lines = ["| " + " | ".join(shown) + " |", "|" + "---|" * len(shown)]
    for r in rows:
        cells = []
        for h, v in zip(full, r):
            try:
                f = float(v)
                cells.append(f"{f:.3f}" if h == "training_time_s" else (v if f.is_integer() and "." not in v
                                                                         else f"{f:.3e}"))
            except ValueError:
                cells.append(v)
        lines.append("| " + " | ".join(cells) + " |")
    md_path = out_dir / "report.md"
    md_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    echo("\n".join(lines))
    return [csv_path, md_path]


# --------------------------------------------------------------------------
# argument handling

def build_parser():
    p = argparse.ArgumentParser(prog="ipbasis", description="Basis-network inverse problems")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("gen-data", "generate synthetic observations"),
                           ("train-offline", "train a basis network"),
                           ("infer-online", "infer parameters on a frozen basis network"),
                           ("bench-autodiff", "time hyper-dual versus per-output reverse derivatives"),
                           ("report", "merge summary tables")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("--config", help="TOML config or a run-manifest.json")
        sp.add_argument("--spec", help="dho | lv | lv_upinn | qho")
        sp.add_argument("--seed-params", type=int)
        sp.add_argument("--seed-init", type=int)
        sp.add_argument("--seed-data", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--noise", type=float, help="noise amplitude as a fraction of the max modulus")
        sp.add_argument("--points", type=int, help="observations per query")
        sp.add_argument("--readouts", type=int, help="offline readouts (train-offline) or queries")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--checkpoint", help="checkpoint for infer-online")
        sp.add_argument("--dataset", help="dataset CSV for infer-online")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set any config key, e.g. online.lr=0.01 (repeatable)")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "report":
            sp.add_argument("inputs", nargs="*", help="summary.csv files")
    return p


def _flag_overrides(args):
    ov = []

    def put(path, value):
        if value is not None:
            node = out = {}
            keys = path.split(".")
            for k in keys[:-1]:
                node[k] = {}
                node = node[k]
            node[keys[-1]] = value
            ov.append(out)

    put("seeds.params", args.seed_params)
    put("seeds.init", args.seed_init)
    put("seeds.data", args.seed_data)
    put("paths.out", args.out)
    put("paths.checkpoint", args.checkpoint)
    put("paths.dataset", args.dataset)
    put("data.noise", args.noise)
    put("data.points", args.points)
    if args.command == "train-offline":
        put("offline.n_readouts", args.readouts)
        put("offline.epochs", args.epochs)
    else:
        put("data.n_queries", args.readouts)
        put("online.epochs", args.epochs)
    if args.command == "report" and args.inputs:
        put("report.inputs", list(args.inputs))
    return ov


def load_config_file(path):
    if path is None:
        return {}
    if str(path).endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if "config" not in doc:
            raise ConfigError(f"{path} is not a run manifest (no 'config' entry)")
        return doc["config"]
    return cfgmod.load_toml(path)


def resolve_args(args):
    file_cfg = load_config_file(args.config)
    layers = [cfgmod.parse_override(o) for o in args.override] + _flag_overrides(args)
    return cfgmod.resolve(file_cfg, spec_name=args.spec, overrides=layers)


def run(argv=None, echo=print) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = resolve_args(args)
        out_dir = Path(cfg["paths"]["out"])
        if args.command == "gen-data":
            artifacts = cmd_gen_data(cfg)
            echo(f"wrote {artifacts[0]}")
        elif args.command == "train-offline":
            artifacts = cmd_train_offline(cfg, echo=echo)
        elif args.command == "infer-online":
            artifacts = cmd_infer_online(cfg, echo=echo)
        elif args.command == "bench-autodiff":
            artifacts, _ = cmd_bench_autodiff(cfg, echo=echo)
        else:
            artifacts = cmd_report(cfg["report"]["inputs"], out_dir, echo=echo)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_manifest(out_dir, args.command, cfg, artifacts)
    except (ConfigError, UnknownSpecError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergedTrainingError, SolverDivergenceError, FloatingPointError) as err:
        print(f"numeric divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except BenchValidationError as err:
        print(f"benchmark aborted: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, CheckpointCorruptError, CheckpointVersionError, CheckpointShapeError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main():  # console entry point
    sys.exit(run())


if __name__ == "__main__":
    main()
