"""Shared helpers for the experiment runners: thin wrappers over the CLI."""
import sys
from pathlib import Path

from ipbasis import cli


def step(*argv):
    """Run one CLI command; abort the experiment on a non-zero exit."""
    args = [str(a) for a in argv]
    print("$ ipbasis " + " ".join(args), flush=True)
    code = cli.run(args)
    if code != 0:
        sys.exit(code)


def overrides(pairs):
    out = []
    for key, value in pairs.items():
        out += ["--override", f"{key}={value}"]
    return out


def out_dir(root, *parts):
    return Path(root).joinpath(*map(str, parts))
