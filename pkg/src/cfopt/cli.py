"""Command-line entry point.

Every subcommand reads its settings from built-in defaults, then an optional
JSON config file (``--config``), then explicit flags, in increasing priority.
Outputs go to ``--out`` (default: ``$CFOPT_OUTPUT_DIR`` or ``./cfopt-out``)
together with a ``run.json`` holding the fully resolved settings.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as datamod
from .errors import CfoptError, InputError
from .explain import ExplanationTask, MdmmConfig, cf_opt_feature, cf_opt_latent, verify_explanation
from .metrics import ROW_FIELDS, batch_explain, reports_to_rows, rows_to_csv, sample_tasks, summarize
from .nn import DenseNet
from .pipeline import Pipeline, load_pipeline, save_pipeline, train_spo
from .plausibility import TABLE1_KAPPAS, RegularizerSpec, chi_mean, mass_table, verify_optimal_region
from .vae import Vae, load_vae, save_vae, train_vae

log = logging.getLogger("cfopt")

SOLVER_DEFAULTS = {
    "gamma": 0.1,
    "rho": 1.0,
    "K": 6000,
    "c_max": 10,
    "u": 0.9,
    "reg": "none",
    "beta": 0.0,
    "proximity": "feature_sq_euclid",
    "feas_tol": 1e-9,
}

DEFAULTS = {
    "gen": {
        "n_x": 10, "layer": "grid", "N": 5, "m": 16, "d": 2,
        "n_samples": 2000, "noise_low": 0.5, "noise_high": 1.5, "seed": 0,
    },
    "train": {
        "data": None, "depth": 1, "hidden": None, "epochs": 70, "lr": 3e-4,
        "batch_size": 32, "n_test": 1000, "early_stopping": None, "patience": 5, "seed": 0,
    },
    "train-vae": {
        "data": None, "pipeline": None, "alpha": 0.0, "n_z": 8, "hidden": 32,
        "epochs": 100, "lr": 1e-3, "batch_size": 64, "n_test": 1000,
        "early_stopping": True, "patience": 10, "seed": 0,
    },
    "explain": {
        "pipeline": None, "vae": None, "data": None, "index": 0, "context": None,
        "kind": "relative", "eps": 1.0, "alt_index": None, "alt": None,
        "trace": False, "seed": 0, **SOLVER_DEFAULTS,
    },
    "bench": {
        "sweep": "eps", "values": [0.2, 0.5, 1.0, 2.0], "kinds": ["epsilon"],
        "n_tasks": 100, "eps": 1.0, "n_x": 10, "layer": "grid", "N": 5, "m": 16, "d": 2,
        "depth": 1, "n_samples": 2000, "n_test": 1000, "epochs": 70, "lr": 3e-4,
        "batch_size": 32, "pipeline": None, "data": None, "seed": 0, "jobs": 1,
        **SOLVER_DEFAULTS,
    },
    "verify-region": {"n_z": 64, "eta": 1e-16, "grid_points": 1000, "radius_max": 10.0},
    "table1": {
        "n_z": 64, "kappas": list(TABLE1_KAPPAS), "vae": None, "data": None,
        "train_vae": False, "n_x": 10, "n_samples": 2000, "epochs": 100,
        "latents": "sampled", "seed": 0,
    },
}

SWEEPS = ("eps", "n_x", "N", "m", "depth")


def _bool(s):
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _floats(s):
    return [float(v) for v in s.split(",") if v]


def _strs(s):
    return [v for v in s.split(",") if v]


FLAG_TYPES = {
    "n_x": int, "N": int, "m": int, "d": int, "n_samples": int, "seed": int,
    "noise_low": float, "noise_high": float, "layer": str, "data": str,
    "depth": int, "hidden": int, "epochs": int, "lr": float, "batch_size": int,
    "n_test": int, "early_stopping": _bool, "patience": int, "pipeline": str,
    "alpha": float, "n_z": int, "vae": str, "index": int, "context": str,
    "kind": str, "eps": float, "alt_index": int, "alt": str, "trace": _bool,
    "gamma": float, "rho": float, "K": int, "c_max": int, "u": float,
    "reg": str, "beta": float, "proximity": str, "feas_tol": float,
    "sweep": str, "values": _floats, "kinds": _strs, "n_tasks": int, "jobs": int,
    "eta": float, "grid_points": int, "radius_max": float, "kappas": _floats,
    "train_vae": _bool, "latents": str,
}


def resolve_config(command, args):
    """Merge defaults, the optional config file, and explicit flags."""
    cfg = dict(DEFAULTS[command])
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise InputError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS[command]:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _out_dir(args):
    out = Path(args.out or os.environ.get("CFOPT_OUTPUT_DIR", "cfopt-out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(out, command, cfg):
    (out / "run.json").write_text(
        json.dumps({"command": command, "config": cfg}, indent=2, sort_keys=True) + "\n"
    )


def _mdmm_config(cfg, n_z=None):
    if cfg["reg"] == "hypersphere":
        if n_z is None:
            raise InputError("the hypersphere regularizer needs a VAE")
        reg = RegularizerSpec.hypersphere(cfg["beta"], n_z)
    else:
        reg = RegularizerSpec(cfg["reg"], cfg["beta"])
    return MdmmConfig(
        gamma=cfg["gamma"], rho=cfg["rho"], K=cfg["K"], c_max=cfg["c_max"], u=cfg["u"],
        reg=reg, proximity=cfg["proximity"], feas_tol=cfg["feas_tol"],
        record_trace=bool(cfg.get("trace", False)),
    )


def _layer_spec(cfg):
    if cfg["layer"] == "grid":
        return {"kind": "grid", "N": cfg["N"]}
    if cfg["layer"] == "knapsack":
        return {"kind": "knapsack", "m": cfg["m"], "d": cfg["d"]}
    raise InputError(f"unknown layer {cfg['layer']!r}; use grid or knapsack")


def _make_predictor(n_x, n_y, depth, hidden, rng):
    if depth < 1:
        raise InputError("depth must be at least 1")
    sizes = [n_x] + [hidden or n_x] * (depth - 1) + [n_y]
    return DenseNet.create(sizes, rng)


def _require(cfg, key, command):
    if cfg[key] is None:
        raise InputError(f"{command} needs --{key.replace('_', '-')}")
    return cfg[key]


def cmd_gen(cfg, out):
    spec = datamod.GenSpec(
        n_x=cfg["n_x"], layer=_layer_spec(cfg), n_samples=cfg["n_samples"],
        seed=cfg["seed"], noise_low=cfg["noise_low"], noise_high=cfg["noise_high"],
    )
    layer, data, B = datamod.generate(spec)
    datamod.save_dataset(out, spec, layer, data, B)
    print(f"wrote {len(data)} samples (n_x={spec.n_x}, n_y={layer.n_y}) to {out}")
    return 0


def _train_split(data, n_test):
    if n_test and n_test < len(data):
        return datamod.split(data, n_test)
    return data, None


def _fit_pipeline(layer, data, cfg, seed):
    rng = np.random.default_rng(seed)
    predictor = _make_predictor(data.contexts.shape[1], layer.n_y, cfg["depth"], cfg.get("hidden"), rng)
    return train_spo(
        Pipeline(predictor, layer), data, epochs=cfg["epochs"], lr=cfg["lr"],
        seed=seed, batch_size=cfg["batch_size"],
        early_stopping=cfg.get("early_stopping"), patience=cfg.get("patience", 5),
    )


def cmd_train(cfg, out):
    _, layer, data, _ = datamod.load_dataset(_require(cfg, "data", "train"))
    train, _ = _train_split(data, cfg["n_test"])
    pipe, trace = _fit_pipeline(layer, train, cfg, cfg["seed"])
    save_pipeline(pipe, out)
    (out / "loss_trace.csv").write_text(rows_to_csv(trace, ["epoch", "train_loss", "val_loss"]))
    print(f"trained {len(trace)} epochs, final loss {trace[-1]['train_loss']:.6g}" if trace
          else "trained 0 epochs")
    return 0


def cmd_train_vae(cfg, out):
    _, layer, data, _ = datamod.load_dataset(_require(cfg, "data", "train-vae"))
    train, _ = _train_split(data, cfg["n_test"])
    predictor = None
    if cfg["alpha"] > 0:
        predictor = load_pipeline(_require(cfg, "pipeline", "train-vae")).predictor
    rng = np.random.default_rng(cfg["seed"])
    vae = Vae.create(train.contexts.shape[1], cfg["n_z"], rng, hidden=cfg["hidden"])
    vae, trace = train_vae(
        vae, train.contexts, predictor, cfg["alpha"], epochs=cfg["epochs"], lr=cfg["lr"],
        seed=cfg["seed"], batch_size=cfg["batch_size"],
        early_stopping=cfg["early_stopping"], patience=cfg["patience"],
    )
    save_vae(vae, out)
    (out / "trace.csv").write_text(
        rows_to_csv(trace, ["epoch", "recon", "kl", "cost_recon", "total", "val_total"])
    )
    print(f"trained VAE (n_z={vae.n_z}, alpha={cfg['alpha']}) for {len(trace)} epochs")
    return 0


def _read_vector(path):
    text = Path(path).read_text().strip()
    if text.startswith("["):
        return np.asarray(json.loads(text), dtype=np.float64)
    rows = [r for r in text.splitlines() if r.strip()]
    try:
        return np.array([float(v) for v in rows[-1].split(",")])
    except ValueError as exc:
        raise InputError(f"cannot read a numeric vector from {path}") from exc


def cmd_explain(cfg, out):
    pipe = load_pipeline(_require(cfg, "pipeline", "explain"))
    vae = load_vae(cfg["vae"]) if cfg["vae"] else None
    data = None
    if cfg["data"]:
        data = datamod.load_dataset(cfg["data"])[2]
    if cfg["context"]:
        x0 = _read_vector(cfg["context"])
    elif data is not None:
        x0 = data.contexts[cfg["index"]]
    else:
        raise InputError("explain needs --context or --data")

    y_alt = None
    if cfg["kind"] != "epsilon":
        if cfg["alt"]:
            y_alt = _read_vector(cfg["alt"])
        elif data is not None and cfg["alt_index"] is not None:
            y_alt = data.solutions[cfg["alt_index"]]
        else:
            raise InputError(f"{cfg['kind']} explanations need --alt or --data with --alt-index")
        if not pipe.layer.is_feasible(y_alt):
            raise InputError("the alternative decision is infeasible for the pipeline's layer")

    task = ExplanationTask.create(
        cfg["kind"], pipe, x0, y_alt=y_alt, eps=cfg["eps"] if cfg["kind"] == "epsilon" else None
    )
    mdmm = _mdmm_config(cfg, vae.n_z if vae else None)
    res = cf_opt_latent(task, pipe, vae, mdmm) if vae else cf_opt_feature(task, pipe, mdmm)
    record = res.to_dict()
    record["kind"] = task.kind
    record["mode"] = "latent" if vae else "feature"
    record["verified"] = bool(res.feasible and verify_explanation(task, pipe, res.x_best))
    (out / "result.json").write_text(json.dumps(record, indent=2) + "\n")
    if res.trace is not None:
        (out / "trace.csv").write_text(rows_to_csv(res.trace, ["k", "h", "loss", "lam", "energy"]))
    print(json.dumps({k: record[k] for k in ("feasible", "verified", "loss_best", "iterations_run", "status")}))
    return 0


def _bench_setting(cfg, name, value):
    """Dataset, pipeline and generator settings for one sweep point."""
    local = dict(cfg)
    if name != "eps":
        local[name] = value
    spec = datamod.GenSpec(
        n_x=local["n_x"], layer=_layer_spec(local), n_samples=local["n_samples"], seed=cfg["seed"]
    )
    layer, data, _ = datamod.generate(spec)
    train, test = datamod.split(data, local["n_test"])
    pipe, _ = _fit_pipeline(layer, train, local, cfg["seed"])
    return pipe, test


def cmd_bench(cfg, out):
    if cfg["sweep"] not in SWEEPS:
        raise InputError(f"unknown sweep {cfg['sweep']!r}; choose from {', '.join(SWEEPS)}")
    if cfg["sweep"] != "eps":
        cfg = {**cfg, "values": [int(v) for v in cfg["values"]]}
    mdmm = _mdmm_config(cfg)
    rows = []
    shared = None
    if cfg["sweep"] == "eps" or cfg["pipeline"]:
        if cfg["pipeline"]:
            pipe = load_pipeline(cfg["pipeline"])
            test = datamod.load_dataset(_require(cfg, "data", "bench"))[2]
            test = datamod.split(test, cfg["n_test"])[1] if cfg["n_test"] < len(test) else test
        else:
            pipe, test = _bench_setting(cfg, "eps", None)
        shared = (pipe, test)
    for value in cfg["values"]:
        pipe, test = shared if shared else _bench_setting(cfg, cfg["sweep"], value)
        # same task draws at every sweep point
        rng = np.random.default_rng(cfg["seed"])
        for kind in cfg["kinds"]:
            if cfg["sweep"] == "eps":
                eps = value
            else:
                eps = cfg["eps"] if kind == "epsilon" else None
            tasks = sample_tasks(pipe, test.contexts, test.solutions, kind, cfg["n_tasks"], rng, eps=eps)
            setting = f"{cfg['sweep']}={value}"
            sub = batch_explain(tasks, pipe, {setting: mdmm}, jobs=cfg["jobs"])
            for r in sub:
                r["value"] = value
            rows.extend(sub)
            log.info("%s %s done", setting, kind)

    fields = ["value"] + list(ROW_FIELDS)
    (out / "results.csv").write_text(rows_to_csv(rows, fields))
    summary = []
    for value in cfg["values"]:
        for kind in cfg["kinds"]:
            sub = [r for r in rows if r["value"] == value and r["kind"] == kind]
            rep = summarize(sub)
            for rrow in reports_to_rows(rep):
                summary.append({"value": value, "kind": kind, **rrow})
    (out / "summary.csv").write_text(rows_to_csv(summary))
    n_err = sum(1 for r in rows if r["error"])
    for value in cfg["values"]:
        for kind in cfg["kinds"]:
            sub = [r for r in rows if r["value"] == value and r["kind"] == kind]
            ok = [r for r in sub if r["verified"]]
            dist = np.mean([r["sq_distance"] for r in ok]) if ok else float("nan")
            print(f"{cfg['sweep']}={value} {kind}: feasible {len(ok)}/{len(sub)}, mean sq distance {dist:.4g}")
    return 1 if n_err else 0


def cmd_verify_region(cfg, out):
    a, b, obj = verify_optimal_region(cfg["n_z"], cfg["eta"], cfg["grid_points"], cfg["radius_max"])
    c = chi_mean(cfg["n_z"])
    rows = [{"n_z": cfg["n_z"], "eta": cfg["eta"], "a_best": a, "b_best": b,
             "objective": obj, "chi_mean": c}]
    (out / "region.csv").write_text(rows_to_csv(rows))
    table = mass_table(cfg["n_z"])
    (out / "table1.csv").write_text(rows_to_csv(table, ["kappa", "prior_pct"]))
    print(f"a*={a:.6g} b*={b:.6g} objective={obj:.6g} (chi mean {c:.6g})")
    return 0


def cmd_table1(cfg, out):
    latents = None
    rng = np.random.default_rng(cfg["seed"])
    vae = X = None
    if cfg["vae"]:
        vae = load_vae(cfg["vae"])
        X = datamod.load_dataset(_require(cfg, "data", "table1"))[2].contexts
    elif cfg["train_vae"]:
        spec = datamod.GenSpec(n_x=cfg["n_x"], n_samples=cfg["n_samples"], seed=cfg["seed"])
        X = datamod.generate(spec)[1].contexts
        vae, _ = train_vae(Vae.create(cfg["n_x"], cfg["n_z"], rng), X,
                           epochs=cfg["epochs"], seed=cfg["seed"])
    if vae is not None:
        if vae.n_z != cfg["n_z"]:
            raise InputError(f"VAE latent size {vae.n_z} differs from n_z={cfg['n_z']}")
        if cfg["latents"] == "sampled":
            latents = vae.sample_latent(X, rng)
        elif cfg["latents"] == "mean":
            latents = vae.encode_mean(X)
        else:
            raise InputError("latents must be 'sampled' or 'mean'")
    table = mass_table(cfg["n_z"], cfg["kappas"], latents)
    fields = ["kappa", "prior_pct"] + (["empirical_pct"] if latents is not None else [])
    (out / "table1.csv").write_text(rows_to_csv(table, fields))
    for row in table:
        print("  ".join(f"{k}={row[k]:.4g}" for k in fields))
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "train-vae": cmd_train_vae,
    "explain": cmd_explain,
    "bench": cmd_bench,
    "verify-region": cmd_verify_region,
    "table1": cmd_table1,
}

HELP = {
    "gen": "generate a synthetic dataset",
    "train": "train a predictor with the SPO+ loss",
    "train-vae": "train a (cost-aware) VAE",
    "explain": "compute one counterfactual explanation",
    "bench": "run an explanation sweep and write CSV tables",
    "verify-region": "grid-search the optimal latent annulus",
    "table1": "compare prior and encoded masses of latent bands",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="cfopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys in DEFAULTS.items():
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", help="JSON file with settings")
        p.add_argument("--out", help="output directory")
        p.add_argument("--log-level", default="WARNING")
        for key in keys:
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=FLAG_TYPES[key], default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        out = _out_dir(args)
        _write_run(out, args.command, cfg)
        return COMMANDS[args.command](cfg, out)
    except (CfoptError, OSError, ValueError, KeyError) as exc:
        print(f"cfopt {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
