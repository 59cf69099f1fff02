"""Run configuration: TOML schema with per-problem defaults and strict keys.

A config file is a nested table.  Every key has a default, so an empty file
resolves to the reference experiment for the chosen problem.  Unknown keys
anywhere in the tree are rejected with their dotted path.

Layout::

    spec = "dho"
    [seeds]    params, init, data
    [paths]    out, checkpoint, dataset
    [data]     n_queries, points, layout, noise, noise_seed, param_ranges,
               ic_ranges, param_values, ode_steps, truth_grid
    [offline]  n_readouts, n_validation, epochs, lr, val_lr, patience,
               data_loss, n_data, n_collocation, param_values, param_ranges,
               ic_ranges, checkpoint_on, schedule_reference_epochs,
               weights.{pde,ic,bc,data}
    [online]   epochs, lr, mode, param_ranges, unknown_widths, n_collocation,
               weights.{pde,ic,bc,data}
    [bench]    input_dim, hidden_widths, n_basis, points, reps, seed
    [report]   inputs

Schedules (``lr`` and the loss weights) are either a number or a table
``{value = .., steps = [[epoch, factor], ..], ramp = [e0, e1, v1]}``.
Optional entries whose default is empty (``""``, ``[]`` or ``0``) mean "use
the problem's built-in value".  A non-zero ``offline.schedule_reference_epochs``
compresses every offline schedule breakpoint by ``epochs / reference`` so a
shortened run keeps the same schedule shape.
"""
from __future__ import annotations

import copy
import json

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .problems import get_spec


class ConfigError(ValueError):
    """Invalid configuration; carries the offending dotted key path."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


SCHEDULE_KEYS = {"value", "steps", "ramp"}
# keys whose default may legitimately be a number or a schedule table
_SCHEDULE_PATHS = {"offline.lr", "online.lr"} | {
    f"{ph}.weights.{t}" for ph in ("offline", "online") for t in ("pde", "ic", "bc", "data")}

QHO_TEST_K = [[1 / 3], [2 / 3], [4 / 3], [5 / 3], [7 / 3], [8 / 3], [10 / 3], [11 / 3], [13 / 3], [14 / 3]]


def _common(spec_name):
    spec = get_spec(spec_name)
    return {
        "spec": spec_name,
        "seeds": {"params": 0, "init": 0, "data": 0},
        "paths": {"out": f"runs/{spec_name}", "checkpoint": "", "dataset": ""},
        "data": {
            "n_queries": 10, "points": 100, "layout": "even", "noise": 0.0, "noise_seed": 0,
            "param_ranges": [list(r) for r in spec.param_ranges] if not spec.unknown_terms
            else [list(r) for r in spec.truth_params[1]],
            "ic_ranges": [list(r) for r in spec.ic_ranges],
            "param_values": [], "ode_steps": 0, "truth_grid": [400, 1500],
        },
        "offline": {
            "n_readouts": 10, "n_validation": 0, "epochs": 1000, "lr": 1e-3, "val_lr": 3e-2,
            "patience": 0, "data_loss": False, "n_data": 0, "n_collocation": [],
            "param_values": [], "param_ranges": [], "ic_ranges": [], "checkpoint_on": "auto",
            "schedule_reference_epochs": 0,
            "weights": {"pde": 1.0, "ic": 1.0, "bc": 0.0, "data": 0.0},
        },
        "online": {
            "epochs": 1000, "lr": 1e-3, "mode": "parametric", "param_ranges": [],
            "unknown_widths": [32, 32], "n_collocation": [],
            "weights": {"pde": 0.0, "ic": 0.0, "bc": 0.0, "data": 1.0},
        },
        "bench": {"input_dim": 1, "hidden_widths": [40, 40, 40, 40], "n_basis": 50,
                  "points": 30, "reps": 7, "seed": 0},
        "report": {"inputs": []},
    }


def defaults(spec_name: str) -> dict:
    """Fully expanded default config reproducing the reference experiment."""
    cfg = _common(spec_name)
    off, on, data = cfg["offline"], cfg["online"], cfg["data"]
    if spec_name == "dho":
        off.update(n_readouts=10, n_validation=100, epochs=30000, lr=5e-5, val_lr=3e-2,
                   patience=2000, data_loss=False)
        off["weights"] = {"pde": 1.0, "ic": 1.0, "bc": 0.0, "data": 0.0}
        on.update(epochs=15000, lr={"value": 5e-2, "steps": [[5000, 0.1]]})
        on["weights"] = {"pde": 1e-3, "ic": 0.0, "bc": 0.0, "data": 1.0}
        data.update(n_queries=10, points=100, layout="even")
    elif spec_name in ("lv", "lv_upinn"):
        off.update(n_readouts=100, n_validation=0, epochs=40000, lr=3e-4, patience=0,
                   data_loss=True)
        off["weights"] = {"pde": 1.0, "ic": 1.0, "bc": 0.0, "data": 1.0}
        on.update(epochs=10000, lr=3e-3, mode="upinn" if spec_name == "lv_upinn" else "parametric")
        on["weights"] = {"pde": 0.1, "ic": 0.0, "bc": 0.0, "data": 1.0}
        data.update(n_queries=100, points=1000, layout="even", ic_ranges=[[0.1, 2.1], [0.1, 2.1]])
    elif spec_name == "qho":
        off.update(n_readouts=6, n_validation=0, epochs=3200, patience=0, data_loss=True,
                   lr={"value": 2e-3, "steps": [[3000, 0.1]]}, n_data=10000,
                   param_values=[[float(k)] for k in range(6)])
        off["weights"] = {
            "pde": {"value": 5e-4, "ramp": [1000, 3000, 5e-2]}, "ic": 1.0, "bc": 1e-3,
            "data": {"value": 1.0, "steps": [[e, 0.5] for e in (1000, 1500, 2000, 2500, 3000)]},
        }
        on.update(epochs=6000, lr={"value": 5e-3, "steps": [[5000, 0.5]]})
        on["weights"] = {"pde": 1.5e-2, "ic": 1e-2, "bc": 1e-2, "data": 1.0}
        data.update(n_queries=len(QHO_TEST_K), points=10000, layout="random",
                    param_values=copy.deepcopy(QHO_TEST_K))
        cfg["bench"].update(input_dim=2, hidden_widths=[100] * 5, n_basis=100, points=100)
    return cfg


# --------------------------------------------------------------------------
# merging and validation

def _is_schedule_table(v):
    return isinstance(v, dict) and set(v) <= SCHEDULE_KEYS and "value" in v


def _check_value(path, default, value):
    if path in _SCHEDULE_PATHS:
        if isinstance(value, bool) or not (isinstance(value, (int, float)) or _is_schedule_table(value)):
            if isinstance(value, dict):
                bad = sorted(set(value) - SCHEDULE_KEYS)
                raise ConfigError(f"unknown schedule key '{bad[0]}'" if bad else "schedule needs 'value'",
                                  f"{path}.{bad[0]}" if bad else path)
            raise ConfigError(f"expected a number or schedule table, got {value!r}", path)
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", path)
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path)
        if isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            if not value.is_integer():
                raise ConfigError(f"expected an integer, got {value!r}", path)
            value = int(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path)
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", path)
    return value


def merge(base: dict, override: dict, prefix="") -> dict:
    """Deep-merge ``override`` into a copy of ``base``; unknown keys raise."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError("unknown key", path)
        default = base[key]
        if isinstance(default, dict) and path not in _SCHEDULE_PATHS:
            if not isinstance(value, dict):
                raise ConfigError(f"expected a table, got {value!r}", path)
            out[key] = merge(default, value, prefix=path + ".")
        else:
            out[key] = _check_value(path, default, value)
    return out


def parse_override(text: str):
    """``a.b.c=value`` -> nested dict; the value is parsed as a TOML value."""
    if "=" not in text:
        raise ConfigError(f"override '{text}' must look like key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override '{text}' has an empty key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()  # bare strings need no quotes on the command line
    out = node = {}
    parts = key.split(".")
    for p in parts[:-1]:
        node[p] = {}
        node = node[p]
    node[parts[-1]] = value
    return out


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"malformed TOML in {path}: {err}") from None


def resolve(file_cfg: dict | None = None, spec_name: str | None = None, overrides=()) -> dict:
    """Expand defaults for the chosen problem, then apply file values and overrides.

    Problem choice precedence: ``spec_name`` argument, then overrides, then
    the file's ``spec`` key, then ``"dho"``.
    """
    file_cfg = dict(file_cfg or {})
    layers = [parse_override(o) if isinstance(o, str) else o for o in overrides]
    name = spec_name
    for layer in reversed(layers):
        if name is None and "spec" in layer:
            name = layer["spec"]
    name = name or file_cfg.get("spec") or "dho"
    if not isinstance(name, str):
        raise ConfigError("expected a string", "spec")
    try:
        cfg = defaults(name)
    except KeyError as err:
        raise ConfigError(str(err).strip("'\""), "spec") from None
    file_cfg.pop("spec", None)
    cfg = merge(cfg, file_cfg)
    for layer in layers:
        layer = {k: v for k, v in layer.items() if k != "spec"}
        cfg = merge(cfg, layer)
    cfg["spec"] = name
    validate(cfg)
    return cfg


def _schedule_base(v):
    return v["value"] if isinstance(v, dict) else v


def validate(cfg: dict):
    """Semantic checks that do not depend on the sub-command."""
    off, on, data = cfg["offline"], cfg["online"], cfg["data"]
    for path, v in (("offline.lr", off["lr"]), ("online.lr", on["lr"]), ("offline.val_lr", off["val_lr"])):
        if _schedule_base(v) < 0:
            raise ConfigError("learning rate must be non-negative", path)
    for ph in ("offline", "online"):
        for t, v in cfg[ph]["weights"].items():
            if _schedule_base(v) < 0:
                raise ConfigError("loss weight must be non-negative", f"{ph}.weights.{t}")
    for path, v in (("offline.epochs", off["epochs"]), ("offline.n_readouts", off["n_readouts"]),
                    ("data.n_queries", data["n_queries"]), ("data.points", data["points"])):
        if v < 1:
            raise ConfigError("must be >= 1", path)
    if on["epochs"] < 0:
        raise ConfigError("must be >= 0", "online.epochs")
    if data["noise"] < 0:
        raise ConfigError("noise scale must be non-negative", "data.noise")
    if data["layout"] not in ("even", "random"):
        raise ConfigError("expected 'even' or 'random'", "data.layout")
    if on["mode"] not in ("parametric", "upinn"):
        raise ConfigError("expected 'parametric' or 'upinn'", "online.mode")
    if cfg["bench"]["reps"] < 5:
        raise ConfigError("benchmark needs at least 5 repetitions", "bench.reps")
    return cfg


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
