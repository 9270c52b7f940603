"""Command line entry point: prepare, train, evaluate, diagnose, sweep (and synth).

Configuration precedence is defaults < ``--config`` file < flags. The file is
flat ``key = value`` text; ``#`` starts a comment. Every command echoes its
resolved configuration into ``config.resolved.json`` in its output directory.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields

from . import dataset as dsmod
from . import desk
from .diagnostics import corr_metric, double_standardize, layer_diagnostics, norm_identity_residual
from .errors import AFDError, ConfigError, DataError, DidNotConverge, NumericalError, ShapeError
from .graph import build_adjacency, normalize_symmetric
from .metrics import evaluate
from .model import check_compatible, pool, propagate, read_checkpoint
from .rng import substream
from .train import TrainConfig, train

log = logging.getLogger("afdgcf")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}


# -- config -------------------------------------------------------------------

def _coerce(key: str, value, kind: str):
    if value is None or not isinstance(value, str):
        return value
    try:
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
        if kind in ("bool", bool):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value


def read_config_file(path) -> dict:
    out = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(args: argparse.Namespace, command_keys: dict) -> dict:
    """Merge defaults, config file and flags. ``command_keys`` maps key -> (type, default)."""
    known = dict(command_keys)
    if getattr(args, "_train_fields", False):
        known.update({k: (t, getattr(TrainConfig(), k)) for k, t in _TRAIN_TYPES.items()})
    resolved = {k: default for k, (_, default) in known.items()}
    if args.config:
        for k, v in read_config_file(args.config).items():
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            resolved[k] = v
    for k in known:
        v = getattr(args, k, None)
        if v is not None:
            resolved[k] = v
    for k, (kind, _) in known.items():
        resolved[k] = _coerce(k, resolved[k], kind)
    return resolved


def train_config(resolved: dict) -> TrainConfig:
    return TrainConfig(**{k: resolved[k] for k in _TRAIN_TYPES}).validate()


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _echo_config(out_dir, resolved: dict, command: str) -> None:
    _write_json(os.path.join(out_dir, "config.resolved.json"), {"command": command, **resolved})


def _load_dataset(path):
    if not path or not os.path.isdir(path):
        raise DataError(f"dataset directory not found: {path}")
    return dsmod.read_dataset(path)


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _ints(text) -> list:
    if isinstance(text, (list, tuple)):
        return [int(x) for x in text]
    return [int(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


# -- commands -----------------------------------------------------------------

PREPARE_KEYS = {
    "input": ("str", None),
    "out": ("str", None),
    "format": ("str", "auto"),
    "min_user_inter": ("int", 15),
    "min_item_inter": ("int", 15),
    "ratios": ("str", "0.8,0.1,0.1"),
    "seed": ("int", 2020),
}


def cmd_prepare(r: dict) -> dict:
    if not r["input"] or not r["out"]:
        raise ConfigError("prepare needs --input and --out")
    if not os.path.isfile(r["input"]):
        raise DataError(f"input file not found: {r['input']}")
    fmt = dsmod.sniff_format(r["input"]) if r["format"] == "auto" else r["format"]
    raw = dsmod.load_interactions(r["input"], fmt)
    raw = dsmod.filter_k_core(raw, r["min_user_inter"], r["min_item_inter"])
    ds = dsmod.build_dataset(raw, _floats(r["ratios"]), r["seed"])
    dsmod.write_dataset(ds, r["out"])
    _echo_config(r["out"], r, "prepare")
    return ds.stats()


SYNTH_KEYS = {
    "out": ("str", None),
    "seed": ("int", 0),
    "users": ("int", desk.DESK_USERS),
    "items": ("int", desk.DESK_ITEMS),
    "interactions": ("int", desk.DESK_INTERACTIONS),
}


def cmd_synth(r: dict) -> dict:
    if not r["out"]:
        raise ConfigError("synth needs --out (a .tsv path)")
    raw = desk.generate(r["seed"], r["users"], r["items"], r["interactions"])
    parent = os.path.dirname(os.path.abspath(r["out"]))
    os.makedirs(parent, exist_ok=True)
    desk.write_tsv(raw, r["out"])
    return {"records": len(raw)}


TRAIN_KEYS = {
    "data": ("str", None),
    "out": ("str", None),
    "label": ("str", ""),
}


def cmd_train(r: dict) -> dict:
    cfg = train_config(r)
    ds = _load_dataset(r["data"])
    if not r["out"]:
        raise ConfigError("train needs --out")
    adj = normalize_symmetric(build_adjacency(ds))
    os.makedirs(r["out"], exist_ok=True)
    _echo_config(r["out"], r, "train")
    result = train(ds, adj, cfg, out_dir=r["out"])
    valid = evaluate(pool(propagate(adj, result.state.table, cfg.L, cfg.variant)), ds, "valid", cfg.eval_k)
    with open(os.path.join(r["out"], "valid_metrics.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(valid.to_json())
    summary = {
        "label": r["label"],
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "valid_ndcg": valid.ndcg,
    }
    if result.final_report is not None:
        summary.update(result.final_report.to_log())
    _write_json(os.path.join(r["out"], "train_summary.json"), summary)
    return summary


EVAL_KEYS = {
    "checkpoint": ("str", None),
    "data": ("str", None),
    "k": ("str", "10"),
    "split": ("str", "test"),
    "d": ("int", None),
    "out": ("str", None),
}


def _load_model(r):
    ds = _load_dataset(r["data"])
    if not r["checkpoint"] or not os.path.isfile(r["checkpoint"]):
        raise DataError(f"checkpoint not found: {r['checkpoint']}")
    table, L, variant = read_checkpoint(r["checkpoint"])
    check_compatible(table, ds, r.get("d"))
    return ds, table, L, variant


def cmd_evaluate(r: dict) -> dict:
    ds, table, L, variant = _load_model(r)
    out = r["out"] or os.path.dirname(os.path.abspath(r["checkpoint"]))
    adj = normalize_symmetric(build_adjacency(ds))
    pooled = pool(propagate(adj, table, L, variant))
    os.makedirs(out, exist_ok=True)
    _echo_config(out, r, "evaluate")
    reports = {}
    for k in _ints(r["k"]):
        rep = evaluate(pooled, ds, r["split"], k)
        stem = os.path.join(out, f"metrics_{r['split']}_k{k}")
        with open(stem + ".json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(rep.to_json())
        with open(stem + ".csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(rep.to_csv())
        reports[k] = rep
    return {k: {"recall": v.recall, "ndcg": v.ndcg, "map": v.map} for k, v in reports.items()}


DIAG_KEYS = {
    "checkpoint": ("str", None),
    "data": ("str", None),
    "layers": ("int", None),
    "corr_sample": ("int", 0),
    "smv_sample": ("int", 0),
    "seed": ("int", 2020),
    "d": ("int", None),
    "out": ("str", None),
}

DIAG_COLUMNS = ["layer", "corr_user", "corr_item", "corr_all", "smv_user", "smv_item", "smv_all"]


def cmd_diagnose(r: dict) -> dict:
    ds, table, L, variant = _load_model(r)
    layers = L if r["layers"] is None else r["layers"]
    out = r["out"] or os.path.dirname(os.path.abspath(r["checkpoint"]))
    adj = normalize_symmetric(build_adjacency(ds))
    stack = propagate(adj, table, layers, variant)
    rows = layer_diagnostics(stack, ds.num_users, r["smv_sample"], r["corr_sample"], substream(r["seed"], "smv"))
    os.makedirs(out, exist_ok=True)
    _echo_config(out, r, "diagnose")
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=DIAG_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    with open(os.path.join(out, "diagnostics.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
    pooled = pool(stack).E
    try:
        std, res = double_standardize(pooled)
        converged = True
    except DidNotConverge as exc:
        std, res, converged = exc.result, exc.residual, False
    t1 = {
        "standardization_residual": res,
        "standardization_converged": converged,
        "norm_identity_residual": norm_identity_residual(std, check=False),
    }
    _write_json(os.path.join(out, "norm_identity.json"), t1)
    return {"rows": len(rows), **t1}


SWEEP_KEYS = {
    "data": ("str", None),
    "out": ("str", None),
    "alphas": ("str", None),
    "layer_grid": ("str", None),
    "workers": ("int", 1),
}

SWEEP_COLUMNS = ["alpha", "L", "recall", "ndcg", "map", "epochs_to_best", "final_corr", "status"]


def _sweep_point(args):
    base, alpha, L, run_dir = args
    r = dict(base)
    r.update(alpha=alpha, L=L, out=run_dir, label=f"alpha={alpha!r},L={L}")
    row = {"alpha": repr(alpha), "L": L}
    try:
        summary = cmd_train(r)
        ckpt = os.path.join(run_dir, "checkpoint.afde")
        metrics = cmd_evaluate({"checkpoint": ckpt, "data": r["data"], "k": str(r["eval_k"]),
                                "split": "test", "out": run_dir})
        m = metrics[r["eval_k"]]
        ds = _load_dataset(r["data"])
        table, LL, variant = read_checkpoint(ckpt)
        pooled = pool(propagate(normalize_symmetric(build_adjacency(ds)), table, LL, variant)).E
        row.update(recall=repr(m["recall"]), ndcg=repr(m["ndcg"]), map=repr(m["map"]),
                   epochs_to_best=summary["best_epoch"], final_corr=repr(corr_metric(pooled)), status="ok")
    except AFDError as exc:
        row.update(status=f"{type(exc).__name__}: {exc}")
    return row


def cmd_sweep(r: dict) -> dict:
    cfg = train_config(r)
    _load_dataset(r["data"])
    if not r["out"]:
        raise ConfigError("sweep needs --out")
    alphas = _floats(r["alphas"]) if r["alphas"] else [cfg.alpha]
    layer_grid = _ints(r["layer_grid"]) if r["layer_grid"] else [cfg.L]
    if not alphas or not layer_grid:
        raise ConfigError("sweep grid is empty")
    os.makedirs(r["out"], exist_ok=True)
    _echo_config(r["out"], r, "sweep")
    jobs = [
        (r, a, L, os.path.join(r["out"], f"alpha={a!r}_L={L}"))
        for a in alphas for L in layer_grid
    ]
    if r["workers"] > 1:
        with ProcessPoolExecutor(max_workers=r["workers"]) as pool_:
            rows = list(pool_.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    with open(os.path.join(r["out"], "summary.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in SWEEP_COLUMNS})
    return {"runs": len(rows), "failed": sum(row["status"] != "ok" for row in rows)}


COMMANDS = {
    "prepare": (cmd_prepare, PREPARE_KEYS, False),
    "synth": (cmd_synth, SYNTH_KEYS, False),
    "train": (cmd_train, TRAIN_KEYS, True),
    "evaluate": (cmd_evaluate, EVAL_KEYS, False),
    "diagnose": (cmd_diagnose, DIAG_KEYS, False),
    "sweep": (cmd_sweep, SWEEP_KEYS, True),
}


# -- argument parsing ---------------------------------------------------------

def _add_key(p: argparse.ArgumentParser, key: str, kind) -> None:
    flag = "--" + key.replace("_", "-")
    if key == "out":
        p.add_argument(flag, dest=key, default=None)
        return
    if kind in ("bool", bool):
        p.add_argument(flag, dest=key, default=None, type=lambda s, k=key: _coerce(k, s, "bool"))
    else:
        p.add_argument(flag, dest=key, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afdgcf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, keys, with_train) in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value config file")
        added = set()
        for key, (kind, _) in keys.items():
            _add_key(p, key, kind)
            added.add(key)
        if with_train:
            for key, kind in _TRAIN_TYPES.items():
                if key not in added:
                    _add_key(p, key, kind)
        p.set_defaults(_train_fields=with_train)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    fn, keys, _ = COMMANDS[args.command]
    try:
        resolved = resolve(args, keys)
        result = fn(resolved)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
