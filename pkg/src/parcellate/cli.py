"""``parcellate`` command line.

Each subcommand writes its outputs plus a ``manifest.json`` in the output
directory. The manifest records the resolved parameters of every subcommand
run there; passing it back through ``--config`` replays the run.

Exit status: 0 on success, 1 on a pipeline error, 2 on a usage error.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, atlas as atlas_mod, bundler, connectome, preprocess, regress, synth
from ._backend import BACKEND
from .errors import InvalidConfig, ParcellateError
from .seeds import derive_seed
from .tracts_io import load_cohort, write_cohort

DEFAULT_K_GRID = (10, 50, 100, 200, 300, 400, 500)
MANIFEST = "manifest.json"

# defaults applied after --config; None-valued flags mean "not given"
DEFAULTS = {
    "simulate": {"config_file": None, "out": None, "seed": None, "atlas": False},
    "preprocess": {"in_dir": None, "out": None, "qb_threshold": preprocess.DEFAULT_QB_THRESHOLD,
                   "qb_min_frac": preprocess.DEFAULT_QB_MIN_FRACTION,
                   "resample": preprocess.DEFAULT_RESAMPLE, "format": None},
    "bundle": {"in_dir": None, "k": 400, "batch": bundler.DEFAULT_BATCH, "iters": "auto",
               "seed": 0, "model": None, "format": None},
    "compose": {"in_dir": None, "model": None, "out": None, "format": None},
    "fit": {"omega": None, "traits": None, "sizes": None, "alpha": 1.0,
            "folds": regress.DEFAULT_FOLDS, "seed": 0, "n_lambda": regress.DEFAULT_N_LAMBDA,
            "eps": regress.DEFAULT_EPS, "out": None},
    "cv-scan": {"in_dir": None, "traits": None, "ks": list(DEFAULT_K_GRID),
                "batch": bundler.DEFAULT_BATCH, "iters": "auto", "alpha": 1.0,
                "folds": regress.DEFAULT_FOLDS, "seed": 0, "n_lambda": regress.DEFAULT_N_LAMBDA,
                "eps": regress.DEFAULT_EPS, "out": None, "format": None},
    "apa": {"in_dir": None, "atlas": None, "kind": "count", "out": None, "traits": None,
            "alpha": 1.0, "folds": regress.DEFAULT_FOLDS, "seed": 0,
            "n_lambda": regress.DEFAULT_N_LAMBDA, "eps": regress.DEFAULT_EPS,
            "membership": "endpoints", "format": None},
    "atlas-align": {"in_dir": None, "atlas": None, "model": None, "report": None,
                    "trait": None, "ratio": 0.5, "out": None, "membership": "endpoints",
                    "format": None},
}
REQUIRED = {
    "simulate": ("config_file", "out"),
    "preprocess": ("in_dir", "out"),
    "bundle": ("in_dir", "model"),
    "compose": ("in_dir", "model", "out"),
    "fit": ("omega", "traits", "out"),
    "cv-scan": ("in_dir", "traits", "out"),
    "apa": ("in_dir", "atlas", "out"),
    "atlas-align": ("in_dir", "atlas", "model", "report", "out"),
}
PATH_KEYS = {"config_file", "in_dir", "out", "model", "omega", "traits", "sizes", "atlas",
             "report"}


# -- small helpers ----------------------------------------------------------------

def _g(v) -> str:
    return format(float(v), ".17g")


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _digest(path: Path) -> dict:
    if path.is_dir():
        out = {}
        for p in sorted(path.rglob("*")):
            if p.is_file() and p.name != MANIFEST:
                out[str(p.relative_to(path))] = hashlib.sha256(p.read_bytes()).hexdigest()
        return out
    return {"": hashlib.sha256(path.read_bytes()).hexdigest()}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir: Path, command: str, params: dict, inputs: list, started: str) -> Path:
    """Record (or update) this subcommand's run in ``out_dir/manifest.json``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST
    manifest = {"tool": "parcellate", "version": __version__, "runs": {}}
    if path.exists():
        try:
            with open(path) as fh:
                old = json.load(fh)
            if isinstance(old.get("runs"), dict):
                manifest["runs"] = old["runs"]
        except (OSError, ValueError):
            pass
    digests = {}
    for p in inputs:
        if p is not None and Path(p).exists():
            digests[str(p)] = _digest(Path(p))
    manifest["runs"][command] = {
        "parameters": params,
        "input_digests": digests,
        "seed": params.get("seed"),
        "backend": BACKEND,
        "started": started,
        "finished": _now(),
    }
    _dump_json(manifest, path)
    return path


def _threads(value) -> int:
    if value is None:
        env = os.environ.get("PARCELLATE_THREADS")
        value = int(env) if env else (os.cpu_count() or 1)
    if int(value) < 1:
        raise InvalidConfig("--threads must be at least 1")
    return int(value)


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _iters(value, m: int, batch: int) -> int:
    if value in (None, "auto"):
        return bundler.default_iterations(m, batch)
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"--iters must be an integer or 'auto', got {value!r}") from exc


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise InvalidConfig(f"{path}: config must be a JSON object")
    return cfg


def resolve(args: argparse.Namespace, command: str) -> dict:
    """Merge explicit flags over ``--config`` values over built-in defaults."""
    cfg = _load_config(getattr(args, "config", None))
    if "runs" in cfg:
        cfg = cfg["runs"].get(command, {}).get("parameters", {})
    params = {}
    for key, default in DEFAULTS[command].items():
        explicit = getattr(args, key, None)
        if explicit is not None and explicit is not False:
            params[key] = explicit
        elif key in cfg or key.replace("_", "-") in cfg:
            params[key] = cfg.get(key, cfg.get(key.replace("_", "-")))
        else:
            params[key] = default
    missing = [k for k in REQUIRED[command] if params.get(k) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_dir", "").replace("_", "-") for k in missing)
        raise _UsageError(f"{command}: missing required option(s) {flags}")
    for key in PATH_KEYS & params.keys():
        if params[key] is not None:
            params[key] = str(params[key])
    return params


class _UsageError(Exception):
    pass


# -- subcommands ------------------------------------------------------------------

def cmd_simulate(p: dict, threads: int) -> list:
    config = synth.SynthConfig.load(p["config_file"])
    if p["seed"] is not None:
        config.seed = int(p["seed"])
    out = Path(p["out"])
    cohort, traits, truth = synth.generate(config, threads=threads)
    write_cohort(cohort, out / "tracts")
    regress.write_traits_csv(traits, out / "traits.csv")
    truth.save(out / "truth.json")
    _dump_json(config.to_dict(), out / "synth_config.json")
    if p["atlas"]:
        atlas_mod.save_atlas(synth.block_atlas(), out / "atlas.atl")
    return [p["config_file"]]


def cmd_preprocess(p: dict, threads: int) -> list:
    cohort = load_cohort(p["in_dir"], p["format"], threads)
    filtered = preprocess.filter_cohort(cohort, float(p["qb_threshold"]),
                                        float(p["qb_min_frac"]), int(p["resample"]), threads)
    out = Path(p["out"])
    write_cohort(filtered, out)
    report = {
        "filter_scope": "per-subject",
        "qb_threshold": float(p["qb_threshold"]),
        "qb_min_frac": float(p["qb_min_frac"]),
        "resample": int(p["resample"]),
        "subjects": [
            {"subject_id": before.subject_id, "kept": after.n_fibers,
             "removed": before.n_fibers - after.n_fibers}
            for before, after in zip(cohort.subjects, filtered.subjects)
        ],
    }
    _dump_json(report, out / "preprocess_report.json")
    return [p["in_dir"]]


def _endpoints(p, threads):
    return preprocess.extract_endpoints(load_cohort(p["in_dir"], p["format"], threads))


def cmd_bundle(p: dict, threads: int) -> list:
    data = _endpoints(p, threads)
    batch = int(p["batch"])
    iters = _iters(p["iters"], data.n_fibers, batch)
    model = bundler.fit(data, int(p["k"]), batch, iters, derive_seed(int(p["seed"]), "bundle"))
    Path(p["model"]).parent.mkdir(parents=True, exist_ok=True)
    model.save(p["model"])
    return [p["in_dir"]]


def cmd_compose(p: dict, threads: int) -> list:
    data = _endpoints(p, threads)
    model = bundler.BundleModel.load(p["model"])
    assignment = bundler.assign(model, data)
    conn = connectome.compose(assignment, data, model.k)
    out = Path(p["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    connectome.write_omega_csv(conn, out)
    connectome.write_sizes_csv(connectome.bundle_sizes(assignment, model.k),
                               out.parent / "bundle_sizes.csv")
    return [p["in_dir"], p["model"]]


def _fit_trait(x, y, name, p, cv_seed, sizes, threads):
    cv = regress.cross_validate(x, y, float(p["alpha"]), int(p["folds"]), cv_seed,
                                n_lambda=int(p["n_lambda"]), eps=float(p["eps"]),
                                threads=threads, name=name)
    null = regress.null_model_mse(y, int(p["folds"]), cv_seed)
    model = cv.model
    entry = {
        "chosen_lambda": cv.chosen_lambda,
        "cv_mse": cv.mean_mse,
        "fold_mse": cv.fold_mse.tolist(),
        "null_mse": null.mean_mse,
        "null_fold_mse": null.fold_mse.tolist(),
        "intercept": model.intercept,
        "coefficients": model.coefficients.tolist(),
        "n_active": int(model.active_indices.size),
        "active_indices": [int(j) for j in model.active_indices],
    }
    if sizes is not None:
        rep = regress.active_report(model, sizes)
        entry["active_fiber_count"] = rep.active_fiber_count
    return entry


def _fit_traits(x, traits, p, threads, sizes=None) -> dict:
    cv_seed = derive_seed(int(p["seed"]), "cv")
    out = {}
    for name in traits.names:
        out[name] = _fit_trait(x, traits.column(name), name, p, cv_seed, sizes, threads)
    return out


def cmd_fit(p: dict, threads: int) -> list:
    conn = connectome.read_omega_csv(p["omega"])
    traits = regress.read_traits_csv(p["traits"]).aligned(conn.subject_ids)
    sizes_path = p["sizes"] or str(Path(p["omega"]).parent / "bundle_sizes.csv")
    sizes = connectome.read_sizes_csv(sizes_path) if Path(sizes_path).exists() else None
    x = regress.design_matrix(conn)
    report = {
        "k": conn.k,
        "alpha": float(p["alpha"]),
        "folds": int(p["folds"]),
        "cv_seed": derive_seed(int(p["seed"]), "cv"),
        "traits": _fit_traits(x, traits, p, threads, sizes),
    }
    Path(p["out"]).parent.mkdir(parents=True, exist_ok=True)
    _dump_json(report, p["out"])
    return [p["omega"], p["traits"], sizes_path if sizes is not None else None]


def cmd_cv_scan(p: dict, threads: int) -> list:
    data = _endpoints(p, threads)
    traits = regress.read_traits_csv(p["traits"]).aligned(data.subject_ids)
    ks = p["ks"] if isinstance(p["ks"], list) else _int_list(str(p["ks"]))
    batch = int(p["batch"])
    iters = _iters(p["iters"], data.n_fibers, batch)
    rows = []
    for k in ks:
        model = bundler.fit(data, int(k), batch, iters, derive_seed(int(p["seed"]), "bundle"))
        assignment = bundler.assign(model, data)
        conn = connectome.compose(assignment, data, model.k)
        sizes = connectome.bundle_sizes(assignment, model.k)
        fits = _fit_traits(regress.design_matrix(conn), traits, p, threads, sizes)
        objective = float(assignment.distance2.sum())
        for name, entry in fits.items():
            rows.append([k, name, _g(entry["cv_mse"]), _g(entry["null_mse"]),
                         entry["n_active"], entry["active_fiber_count"],
                         _g(entry["chosen_lambda"]), _g(objective)])
    out = Path(p["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "trait", "cv_mse", "null_mse", "n_active", "active_fiber_count",
                    "chosen_lambda", "objective"])
        w.writerows(rows)
    return [p["in_dir"], p["traits"]]


def cmd_apa(p: dict, threads: int) -> list:
    cohort = load_cohort(p["in_dir"], p["format"], threads)
    atl = atlas_mod.load_atlas(p["atlas"])
    out = Path(p["out"])
    (out / "matrices").mkdir(parents=True, exist_ok=True)
    mats = [atlas_mod.build_apa(t, atl, p["kind"]) for t in cohort.subjects]
    for tract, mat in zip(cohort.subjects, mats):
        atlas_mod.write_matrix_csv(mat, out / "matrices" / f"{tract.subject_id}_{p['kind']}.csv")
    vectors = np.vstack([regress.vectorize_apa(m) for m in mats])
    with open(out / "apa_vectors.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        iu = np.triu_indices(atl.num_rois, k=1)
        w.writerow(["subject_id"] + [f"w_{r}_{c}" for r, c in zip(*iu)])
        for sid, row in zip(cohort.subject_ids, vectors):
            w.writerow([sid] + [_g(v) for v in row.tolist()])
    if p["traits"]:
        traits = regress.read_traits_csv(p["traits"]).aligned(cohort.subject_ids)
        report = {
            "kind": p["kind"],
            "alpha": float(p["alpha"]),
            "folds": int(p["folds"]),
            "cv_seed": derive_seed(int(p["seed"]), "cv"),
            "n_predictors": int(vectors.shape[1]),
            "traits": _fit_traits(vectors, traits, p, threads),
        }
        _dump_json(report, out / "apa_report.json")
    return [p["in_dir"], p["atlas"], p["traits"]]


def cmd_atlas_align(p: dict, threads: int) -> list:
    data = _endpoints(p, threads)
    atl = atlas_mod.load_atlas(p["atlas"])
    model = bundler.BundleModel.load(p["model"])
    assignment = bundler.assign(model, data)
    with open(p["report"]) as fh:
        report = json.load(fh)
    traits = report.get("traits", {})
    names = [p["trait"]] if p["trait"] else sorted(traits)
    out = Path(p["out"])
    out.mkdir(parents=True, exist_ok=True)
    for name in names:
        if name not in traits:
            raise InvalidConfig(f"trait {name!r} not in {p['report']}")
        active = traits[name]["active_indices"]
        mat = atlas_mod.build_active_matrix(data, atl, assignment, active)
        kept = atlas_mod.threshold_matrix(mat, float(p["ratio"]))
        atlas_mod.write_matrix_csv(mat, out / f"{name}_active_matrix.csv")
        atlas_mod.write_matrix_csv(kept, out / f"{name}_active_matrix_thresholded.csv")
        atlas_mod.write_edge_list(kept, out / f"{name}_edges.csv")
    return [p["in_dir"], p["atlas"], p["model"], p["report"]]


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "bundle": cmd_bundle,
    "compose": cmd_compose,
    "fit": cmd_fit,
    "cv-scan": cmd_cv_scan,
    "apa": cmd_apa,
    "atlas-align": cmd_atlas_align,
}


def _output_dir(command: str, p: dict) -> Path:
    if command in ("simulate", "preprocess", "apa", "atlas-align"):
        return Path(p["out"])
    if command == "bundle":
        return Path(p["model"]).parent
    return Path(p["out"]).parent


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parcellate",
        description="Principal parcellation analysis of tractography connectomes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    threaded = argparse.ArgumentParser(add_help=False)
    threaded.add_argument("--threads", type=int,
                          help="worker threads (default: $PARCELLATE_THREADS or all cores)")
    common = argparse.ArgumentParser(add_help=False, parents=[threaded])
    common.add_argument("--config", help="JSON file (or manifest) supplying option values")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def tracts_in(sp):
        sp.add_argument("--in", dest="in_dir", help="directory of .ppaf/.csv tract files")
        sp.add_argument("--format", choices=["ppaf", "csv"], help="override extension sniffing")

    def cv_opts(sp):
        sp.add_argument("--alpha", type=float, help="elastic-net mixing, 1 = LASSO")
        sp.add_argument("--folds", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--n-lambda", dest="n_lambda", type=int)
        sp.add_argument("--eps", type=float)

    sp = sub.add_parser("simulate", parents=[threaded], help="generate a synthetic cohort")
    sp.add_argument("--config", dest="config_file", help="synthetic cohort config (JSON)")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, help="override the config seed")
    sp.add_argument("--atlas", action="store_true", help="also write a block atlas (atlas.atl)")

    sp = sub.add_parser("preprocess", parents=[common], help="QuickBundles outlier removal")
    tracts_in(sp)
    sp.add_argument("--out")
    sp.add_argument("--qb-threshold", dest="qb_threshold", type=float)
    sp.add_argument("--qb-min-frac", dest="qb_min_frac", type=float)
    sp.add_argument("--resample", type=int)

    sp = sub.add_parser("bundle", parents=[common], help="fit the fiber-bundle basis")
    tracts_in(sp)
    sp.add_argument("--k", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--iters", help="iteration count or 'auto' (100 epochs)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--model")

    sp = sub.add_parser("compose", parents=[common], help="per-subject bundle proportions")
    tracts_in(sp)
    sp.add_argument("--model")
    sp.add_argument("--out")

    sp = sub.add_parser("fit", parents=[common], help="sparse trait regression with CV")
    sp.add_argument("--omega")
    sp.add_argument("--traits")
    sp.add_argument("--sizes", help="bundle_sizes.csv (default: next to --omega)")
    cv_opts(sp)
    sp.add_argument("--out")

    sp = sub.add_parser("cv-scan", parents=[common], help="CV error over a grid of K")
    tracts_in(sp)
    sp.add_argument("--traits")
    sp.add_argument("--ks", type=_int_list, help="comma-separated K grid")
    sp.add_argument("--batch", type=int)
    sp.add_argument("--iters")
    cv_opts(sp)
    sp.add_argument("--out")

    sp = sub.add_parser("apa", parents=[common], help="atlas connectivity matrices and baseline")
    tracts_in(sp)
    sp.add_argument("--atlas")
    sp.add_argument("--kind", choices=list(atlas_mod.SUMMARY_KINDS))
    sp.add_argument("--membership", choices=["endpoints"])
    sp.add_argument("--traits", help="fit the vectorized-matrix LASSO baseline")
    cv_opts(sp)
    sp.add_argument("--out")

    sp = sub.add_parser("atlas-align", parents=[common], help="active-bundle connectivity")
    tracts_in(sp)
    sp.add_argument("--atlas")
    sp.add_argument("--model")
    sp.add_argument("--report", help="report.json written by `fit`")
    sp.add_argument("--trait", help="trait name (default: every trait in the report)")
    sp.add_argument("--ratio", type=float)
    sp.add_argument("--membership", choices=["endpoints"])
    sp.add_argument("--out")
    return parser


def run_pipeline(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args.command
    started = _now()
    try:
        params = resolve(args, command)
        threads = _threads(args.threads)
        inputs = COMMANDS[command](params, threads)
        write_manifest(_output_dir(command, params), command, params, inputs, started)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"parcellate: error: {exc}", file=sys.stderr)
        return 2
    except (ParcellateError, OSError, json.JSONDecodeError) as exc:
        print(f"parcellate {command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> None:
    sys.exit(run_pipeline(argv))


if __name__ == "__main__":
    main()
