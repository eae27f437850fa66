"""Command line entry point: ``tnet <command> [--config FILE] ...``.

Configuration is an INI file whose sections mirror the library types
(``dgp``, ``graph``, ``train``, ``model``, ``estimate``, ``split``,
``experiment``). Unknown sections or keys are rejected. Every command
writes ``config.json`` (the resolved configuration and its hash) into its
output directory, and every result record carries that hash.

Exit codes: 0 success, 2 config error, 3 IO error, 4 numeric divergence,
5 overlap failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data import NetworkDataset, load_dataset, save_dataset
from .dgp import GRAPH_KINDS, ConfigError, DgpSpec, generate, load_truth, save_truth, true_effects
from .estimation import EstimandSpec, bootstrap_ci, default_estimands, estimate_effect
from .evaluation import (CORRUPTION_MODES, compute_metrics, convergence_sweep, dr_stress,
                         within_out_split, write_series)
from .graph import EdgeListParseError
from .models import ModelConfig, config_hash, load_checkpoint, nuisances, save_checkpoint
from .training import DivergenceError, OverlapWarning, TrainConfig, train

log = logging.getLogger("tnet")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGENCE, EXIT_OVERLAP = 0, 2, 3, 4, 5
CHECKPOINT_FILE = "checkpoint.npz"
SPLIT_FILE = "split.json"


class OverlapFailure(RuntimeError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _int_list(s: str) -> list[int]:
    return [int(v) for v in s.replace(",", " ").split()]


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _field_types(cls, overrides=None) -> dict:
    conv = {"int": int, "float": float, "bool": _bool, "str": str}
    out = {}
    for f in fields(cls):
        name = f.type if isinstance(f.type, str) else f.type.__name__
        if name in conv:
            out[f.name] = conv[name]
    out.update(overrides or {})
    return out


SCHEMA = {
    "dgp": {"variant": str, "noise_sd": float, "covariate_dim": int, "seed": int},
    "graph": {"kind": str, "n": int, "param": str, "seed": int},
    "train": _field_types(TrainConfig, {"beta": _opt_float}),
    "model": _field_types(ModelConfig),
    "estimate": {"estimands": str, "method": str, "individual": _bool, "replicates": int, "level": float,
                 "workers": int},
    "split": {"train_fraction": float, "heldout_fraction": float, "seed": int},
    "experiment": {"n_list": _int_list, "repeats": int, "mode": str},
}
DEFAULTS = {
    "graph": {"kind": "preferential_attachment", "n": 1000, "param": "5"},
    "estimate": {"estimands": "AME;ASE;ATE", "method": "tnet", "individual": False, "replicates": 0,
                 "level": 0.95, "workers": 1},
    "experiment": {"n_list": [500, 2000, 8000], "repeats": 5, "mode": "freeze_random_init"},
}


def load_config(path=None) -> dict[str, dict]:
    """Parse and type-check an INI config; missing sections get defaults."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config file {path} not found")
        parser.read(path)
    out = {s: dict(DEFAULTS.get(s, {})) for s in SCHEMA}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser[section].items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            try:
                out[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key}: {exc}") from None
    return out


def dgp_spec(cfg) -> DgpSpec:
    return DgpSpec(**cfg["dgp"])


def train_config(cfg, seed: int | None = None) -> TrainConfig:
    try:
        model = ModelConfig(**cfg["model"])
        kw = dict(cfg["train"])
        if seed is not None:
            kw["seed"] = seed
        return TrainConfig(model=model, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train/model: {exc}") from None


def graph_param(cfg):
    g = cfg["graph"]
    kind = g["kind"]
    if kind not in GRAPH_KINDS:
        raise ConfigError(f"graph.kind: expected one of {GRAPH_KINDS}, got {kind!r}")
    p = g["param"]
    try:
        if kind == "erdos_renyi":
            return float(p)
        if kind == "preferential_attachment":
            return int(p)
    except ValueError:
        raise ConfigError(f"graph.param: invalid value {p!r} for {kind}") from None
    return p


def parse_estimands(text: str, data: NetworkDataset, individual: bool = False) -> list[EstimandSpec]:
    """``AME;ASE;ATE`` use the defaults; ``KIND:t,z:t',z'`` gives an explicit pair."""
    defaults = {s.kind: s for s in default_estimands(data.exposures.mean(), individual)}
    defaults.update({s.kind: s for s in default_estimands(data.exposures.mean(), not individual)})
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        parts = item.split(":")
        try:
            if len(parts) == 1:
                out.append(defaults[parts[0]])
            elif len(parts) == 3:
                a = [float(v) for v in parts[1].split(",")]
                b = [float(v) for v in parts[2].split(",")]
                out.append(EstimandSpec(parts[0], (int(a[0]), a[1]), (int(b[0]), b[1])))
            else:
                raise ValueError("expected KIND or KIND:t,z:t',z'")
        except (KeyError, ValueError, IndexError) as exc:
            raise ConfigError(f"estimate.estimands: bad entry {item!r} ({exc})") from None
    if not out:
        raise ConfigError("estimate.estimands: nothing to estimate")
    return out


# -- output helpers ----------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=1, sort_keys=True) + "\n")


def write_rows(path, rows: list[dict]) -> None:
    keys = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def digest(path) -> str | None:
    """Content digest of a file or of every file in a directory (sorted by name)."""
    if path is None:
        return None
    path = Path(path)
    h = hashlib.sha256()
    for p in sorted(path.iterdir()) if path.is_dir() else [path]:
        if p.is_file():
            h.update(p.name.encode())
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


def echo_config(out: Path, command: str, cfg: dict, extra: dict | None = None) -> str:
    """Write the resolved configuration and return its hash."""
    payload = {"command": command, "config": _jsonable(cfg), "inputs": _jsonable(extra or {})}
    h = config_hash(payload)
    write_json(out / "config.json", {**payload, "hash": h})
    return h


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _split_rows(cfg, data: NetworkDataset):
    s = cfg["split"]
    if not s:
        return None, None
    fr = (s.get("train_fraction", 0.8), s.get("heldout_fraction", 0.2))
    return within_out_split(data.n, fr, s.get("seed", 0))


# -- commands ----------------------------------------------------------------------


def cmd_generate(args, cfg) -> None:
    spec = dgp_spec(cfg)
    g = cfg["graph"]
    gen = generate(spec, g["n"], g["kind"], graph_param(cfg), g.get("seed"))
    out = _out_dir(args.out)
    save_dataset(gen.dataset, out)
    save_truth(gen, out)
    echo_config(out, "generate", cfg)


def cmd_train(args, cfg) -> None:
    data = load_dataset(args.data)
    tcfg = train_config(cfg)
    out = _out_dir(args.out)
    h = echo_config(out, "train", cfg, {"data": digest(args.data)})
    train_rows, held = _split_rows(cfg, data)
    result = train(data, tcfg, train_rows)
    save_checkpoint(result.model, out / CHECKPOINT_FILE, tcfg.hash())
    write_rows(out / "history.csv", [{**r.row(), "config_hash": h} for r in result.history])
    summary = {"best_iteration": result.best_iteration, "iterations_run": len(result.history),
               "stopped_early": result.stopped_early, "lr_halvings": result.lr_halvings,
               "train_config_hash": tcfg.hash(), "config_hash": h}
    write_json(out / "train_summary.json", summary)
    if train_rows is not None:
        write_json(out / SPLIT_FILE, {"train": train_rows, "heldout": held})


def _check_overlap(model, data, specs) -> None:
    for spec in specs:
        for t, z in (spec.first, spec.second):
            if nuisances(model, data, t, z).floored.all():
                raise OverlapFailure(f"g1*g2 below the floor for every unit at (t={t}, z={z})")


def cmd_estimate(args, cfg, bootstrap: bool = False) -> None:
    data = load_dataset(args.data)
    est = cfg["estimate"]
    method = args.method or est["method"]
    if method not in ("tnet", "plugin"):
        raise ConfigError(f"estimate.method: expected tnet or plugin, got {method!r}")
    specs = parse_estimands(est["estimands"], data, est["individual"])
    replicates = args.replicates if args.replicates is not None else est["replicates"]
    workers = args.workers if args.workers is not None else est["workers"]
    out = _out_dir(args.out)
    args.strict_overlap = getattr(args, "strict_overlap", False)
    inputs = {"data": digest(args.data), "checkpoint": digest(getattr(args, "checkpoint", None)), "method": method,
              "replicates": replicates}
    h = echo_config(out, "bootstrap" if bootstrap else "estimate", cfg, inputs)
    if bootstrap or replicates:
        if replicates < 20:
            raise ConfigError(f"bootstrap needs at least 20 replicates, got {replicates}")
        try:
            results = bootstrap_ci(data, specs, train_config(cfg), replicates, est["level"],
                                   method=method, workers=workers)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        model, _ = load_checkpoint(args.checkpoint)
        if args.strict_overlap:
            _check_overlap(model, data, specs)
        results = [estimate_effect(model, data, s, method) for s in specs]
    records = []
    for r in results:
        rec = {**r.record(), "n": data.n, "seed": cfg["train"].get("seed", 0), "config_hash": h}
        if r.per_unit is not None:
            rec["per_unit"] = r.per_unit
        records.append(rec)
    write_json(out / "results.json", records)


def cmd_evaluate(args, cfg) -> None:
    data = load_dataset(args.data)
    gen = load_truth(args.data, data)
    model, _ = load_checkpoint(args.checkpoint)
    est = cfg["estimate"]
    method = args.method or est["method"]
    specs = parse_estimands(est["estimands"], data, est["individual"])
    out = _out_dir(args.out)
    h = echo_config(out, "evaluate", cfg, {"data": digest(args.data), "checkpoint": digest(args.checkpoint),
                                          "method": method})
    split_path = Path(args.checkpoint).parent / SPLIT_FILE
    splits = {"within_sample": None}
    if split_path.is_file():
        sp = json.loads(split_path.read_text())
        splits = {"within_sample": np.array(sp["train"], dtype=np.int64)}
        if sp["heldout"]:
            splits["out_of_sample"] = np.array(sp["heldout"], dtype=np.int64)
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OverlapWarning)
        for split, idx in splits.items():
            estimates = [estimate_effect(model, data, s, method, idx) for s in specs]
            truths = [true_effects(gen, s, idx) for s in specs]
            report = compute_metrics(estimates, truths, split)
            rows += [{**r, "method": method, "config_hash": h} for r in report.rows()]
    write_json(out / "metrics.json", rows)


def cmd_dr_check(args, cfg) -> None:
    mode = cfg["experiment"]["mode"]
    if mode not in CORRUPTION_MODES:
        raise ConfigError(f"experiment.mode: expected one of {CORRUPTION_MODES}, got {mode!r}")
    out = _out_dir(args.out)
    h = echo_config(out, "dr-check", cfg)
    g = cfg["graph"]
    rows = dr_stress(dgp_spec(cfg), g["n"], train_config(cfg), mode, g["kind"], graph_param(cfg))
    write_rows(out / "dr_stress.csv", [{**r, "config_hash": h} for r in rows])


def cmd_sweep(args, cfg) -> None:
    ex = cfg["experiment"]
    out = _out_dir(args.out)
    h = echo_config(out, "sweep", cfg)
    g = cfg["graph"]
    res = convergence_sweep(dgp_spec(cfg), ex["n_list"], train_config(cfg), ex["repeats"], g["kind"],
                            graph_param(cfg))
    write_rows(out / "sweep.csv", [{"n": r["n"], "mean_error": r["mean_error"], "sd_error": r["sd_error"],
                                    "config_hash": h} for r in res.rows])
    write_series(out / "sweep_plot.csv", [r["n"] for r in res.rows], [r["mean_error"] for r in res.rows],
                 [r["sd_error"] for r in res.rows])
    write_json(out / "sweep_summary.json", {"decreasing": res.decreasing, "slope": res.slope,
                                            "errors": {str(r["n"]): r["errors"] for r in res.rows},
                                            "config_hash": h})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tnet", description="Targeted estimation of effects under network interference.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, data=True, ckpt=False, method=False, boot=False):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--out", required=True, help="output directory")
        if data:
            sp.add_argument("--data", required=True, help="dataset directory")
        if ckpt:
            sp.add_argument("--checkpoint", required=True)
        if method:
            sp.add_argument("--method", choices=("tnet", "plugin"))
        if ckpt and method:
            sp.add_argument("--strict-overlap", action="store_true",
                            help="fail (exit 5) when the overlap floor binds for every unit")
        if boot:
            sp.add_argument("--replicates", type=int)
            sp.add_argument("--workers", type=int)
        return sp

    add("generate", "simulate a dataset with known potential outcomes", data=False)
    add("train", "fit TNet to a dataset")
    add("estimate", "estimate effects from a checkpoint", ckpt=True, method=True, boot=True)
    add("evaluate", "compare estimates with the stored truth", ckpt=True, method=True)
    add("dr-check", "double-robustness stress arms", data=False)
    add("sweep", "error-vs-n convergence sweep", data=False)
    add("bootstrap", "seed-bootstrap confidence intervals", method=True, boot=True)
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "estimate": cmd_estimate, "evaluate": cmd_evaluate,
            "dr-check": cmd_dr_check, "sweep": cmd_sweep,
            "bootstrap": lambda a, c: cmd_estimate(a, c, bootstrap=True)}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, EdgeListParseError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OverlapFailure as exc:
        print(f"overlap failure: {exc}", file=sys.stderr)
        return EXIT_OVERLAP
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
