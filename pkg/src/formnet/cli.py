"""Command-line pipeline: net -> gen -> train -> eval / identify -> plot.

Every command writes into the run directory given by ``--out`` and reads the
upstream artifacts from there unless paths are given explicitly::

    formnet net   --grid 5x5 --seed 7 --out run
    formnet gen   --out run --n-samples 450 --bounds-mm 5 --seed 1
    formnet train --out run --split 400/50 --seed 1
    formnet eval  --out run
    formnet plot  --out run --fig errors

Primary outputs are byte-identical for identical inputs; timestamps and the
command line go to ``<file>.meta.json`` sidecars. On failure a JSON error
record is printed to stderr and the exit code is nonzero (2 usage/config,
3 provenance, 1 anything else).
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__, _io
from .dataset import (
    generate,
    load_dataset,
    make_scenario,
    save_dataset,
    split,
)
from .equilibrium import DEFAULT_TOLERANCE
from .errors import FormnetError, ProvenanceError
from .gp import FitConfig
from .identify import evaluate_cv, identifier_from_dict, identifier_to_dict, identify, prior_reversion, train
from .net import FrameSpec, SagSpec, load_net, net_to_dict, save_net, synth_net
from . import plots

log = logging.getLogger("formnet")

NET_FILE = "net.json"
DATASET_FILE = "dataset.jsonl"
MODEL_FILE = "model.json"
REPORT_FILE = "report.json"


class UsageError(FormnetError, ValueError):
    pass


@dataclass
class RunConfig:
    out: str = "run"
    net: str | None = None
    grid: str = "5x5"
    seed: int = 0
    n_samples: int = 1000
    bounds_mm: float = 5.0
    split: str = "950/50"
    sequential_split: bool = False
    tolerance: float = DEFAULT_TOLERANCE
    n_starts: int = 5
    optimize_noise: bool = False
    tie_hypers: bool = False
    EA: float = 1000.0
    spacing: float = 0.25
    workers: int | None = None

    def grid_size(self):
        try:
            nx, ny = (int(v) for v in self.grid.lower().split("x"))
        except ValueError:
            raise UsageError(f"--grid must look like 5x5, got {self.grid!r}") from None
        return nx, ny

    def split_sizes(self):
        try:
            a, b = (int(v) for v in str(self.split).split("/"))
        except ValueError:
            raise UsageError(f"--split must look like 950/50, got {self.split!r}") from None
        return a, b

    def validate(self, command):
        if command == "net":
            nx, ny = self.grid_size()
            if nx < 3 or ny < 3:
                raise UsageError(f"grid must be at least 3x3, got {self.grid}")
            if not self.spacing > 0 or not self.EA > 0:
                raise UsageError("--spacing and --EA must be positive")
        if command == "gen":
            if self.n_samples < 1:
                raise UsageError("--n-samples must be >= 1")
            if not self.bounds_mm > 0:
                raise UsageError("--bounds-mm must be positive")
        if command in ("gen", "train", "eval"):
            if not self.tolerance > 0:
                raise UsageError("--tolerance must be positive")
        if command == "train":
            n_train, n_val = self.split_sizes()
            if n_train < 2 or n_val < 0:
                raise UsageError("--split needs at least 2 training samples")
            if self.n_starts < 1:
                raise UsageError("--n-starts must be >= 1")

    @property
    def out_dir(self):
        return Path(self.out)

    @property
    def net_path(self):
        return Path(self.net) if self.net else self.out_dir / NET_FILE

    def fit_config(self):
        return FitConfig(n_starts=self.n_starts, optimize_noise=self.optimize_noise, seed=self.seed)


def _write_meta(path, args_list):
    meta = {
        "written": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "argv": list(args_list),
        "formnet_version": __version__,
        "sha256": _io.file_hash(path),
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1) + "\n")


def _scenario(cfg, header=None):
    topo, geom, params = load_net(cfg.net_path)
    if header is not None:
        return make_scenario(topo, geom, params, tuple(header["bounds"]), header["seed"], header["tolerance"])
    b = cfg.bounds_mm * 1e-3
    return make_scenario(topo, geom, params, (-b, b), cfg.seed, cfg.tolerance)


def _check_chain(cfg, dataset_path, header, model_doc=None):
    topo, geom, params = load_net(cfg.net_path)
    net_hash = _io.content_hash(net_to_dict(topo, geom, params))
    if header["scenario_hash"] != net_hash:
        raise ProvenanceError(f"{dataset_path} was generated from a different net")
    if model_doc is not None:
        if model_doc["scenario_hash"] != net_hash:
            raise ProvenanceError("model was trained on a different net")
        if model_doc["provenance"]["dataset_sha256"] != _io.file_hash(dataset_path):
            raise ProvenanceError("model was trained on a different dataset file")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_net(cfg, argv):
    nx, ny = cfg.grid_size()
    topo, geom, params = synth_net(nx, ny, FrameSpec(spacing=cfg.spacing), SagSpec(), cfg.seed, cfg.EA)
    path = cfg.out_dir / NET_FILE
    save_net(path, topo, geom, params)
    _write_meta(path, argv)
    return {"net": str(path), "n_I": topo.n_I, "n_B": topo.n_B, "m_I": topo.m_I, "m_B": topo.m_B}


def cmd_gen(cfg, argv):
    scenario = _scenario(cfg)
    samples = generate(scenario, cfg.n_samples, workers=cfg.workers)
    path = cfg.out_dir / DATASET_FILE
    save_dataset(path, scenario, samples, cfg.n_samples)
    _write_meta(path, argv)
    return {"dataset": str(path), "n_samples": len(samples), "scenario_hash": scenario.net_hash}


def cmd_train(cfg, argv):
    data_path = cfg.out_dir / DATASET_FILE
    header, samples = load_dataset(data_path)
    _check_chain(cfg, data_path, header)
    n_train, n_val = cfg.split_sizes()
    train_set, val_set = split(samples, n_train, n_val, cfg.seed, shuffle=not cfg.sequential_split)
    ident = train(
        train_set,
        cfg.fit_config(),
        tied=cfg.tie_hypers,
        workers=cfg.workers,
        scenario_hash=header["scenario_hash"],
    )
    doc = identifier_to_dict(ident)
    doc["provenance"] = {
        "dataset_sha256": _io.file_hash(data_path),
        "seed": cfg.seed,
        "split": [n_train, n_val],
        "sequential_split": cfg.sequential_split,
        "validation_indices": [s.index for s in val_set],
    }
    path = cfg.out_dir / MODEL_FILE
    _io.write_json(path, doc)
    _write_meta(path, argv)
    return {"model": str(path), "n_train": len(train_set), "m_I": ident.m_I, "tied": ident.tied}


def _load_model(cfg):
    path = cfg.out_dir / MODEL_FILE
    doc = _io.read_json(path)
    return doc, identifier_from_dict(doc)


def cmd_eval(cfg, argv):
    data_path = cfg.out_dir / DATASET_FILE
    header, samples = load_dataset(data_path)
    doc, ident = _load_model(cfg)
    _check_chain(cfg, data_path, header, doc)
    by_index = {s.index: s for s in samples}
    val = [by_index[k] for k in doc["provenance"]["validation_indices"]]
    scenario = _scenario(cfg, header)
    report = evaluate_cv(ident, val, scenario=scenario)
    out = report.to_dict()
    out["provenance"] = {
        "scenario_hash": header["scenario_hash"],
        "dataset_sha256": doc["provenance"]["dataset_sha256"],
        "model_sha256": _io.file_hash(cfg.out_dir / MODEL_FILE),
        "seed": doc["provenance"]["seed"],
    }
    path = cfg.out_dir / REPORT_FILE
    _io.write_json(path, out)
    _write_meta(path, argv)
    csv_path = cfg.out_dir / "errors.csv"
    plots._write_csv(csv_path, ["edge", "delta_l0_true", "delta_l0_hat", "error"], report.edge_rows(0))
    summary = {"report": str(path), "mse": report.mse, "mrse": report.mrse}
    if report.form:
        summary["median_rmse_ratio"] = out["form_errors"]["rmse_ratio"]["median"]
        summary["table"] = out["form_errors"]["table"]
    return summary


def cmd_identify(cfg, argv, measurement):
    doc, ident = _load_model(cfg)
    topo, geom, params = load_net(cfg.net_path)
    if doc["scenario_hash"] != _io.content_hash(net_to_dict(topo, geom, params)):
        raise ProvenanceError("model was trained on a different net")
    meas = _io.read_json(measurement)
    if "delta_r_I" in meas:
        delta = np.asarray(meas["delta_r_I"], dtype=float)
    elif "r_I" in meas:
        header, _ = load_dataset(cfg.out_dir / DATASET_FILE)
        delta = np.asarray(meas["r_I"], dtype=float).ravel() - np.asarray(header["nominal_r_I"])
    else:
        raise UsageError("measurement file needs a 'delta_r_I' or 'r_I' array")
    mean, sigma = identify(ident, delta)
    out = {
        "scenario_hash": doc["scenario_hash"],
        "delta_l0_hat": mean.tolist(),
        "sigma": sigma.tolist(),
        "l0_hat": (params.l0_I + mean).tolist(),
        "prior_reversion": prior_reversion(ident, sigma).tolist(),
    }
    path = cfg.out_dir / "identification.json"
    _io.write_json(path, out)
    _write_meta(path, argv)
    return {"identification": str(path), "max_abs_delta": float(np.max(np.abs(mean)))}


def cmd_plot(cfg, argv, fig, kappa):
    report = _io.read_json(cfg.out_dir / REPORT_FILE)
    nodes = None
    if fig == "deviations":
        if "form_errors" in report:
            kappa = report["form_errors"]["kappa"]
        header, samples = load_dataset(cfg.out_dir / DATASET_FILE)
        nodes = np.asarray(header["nominal_r_I"])
    csv_path, svg_path = plots.emit(fig, report, cfg.out_dir, nodes, kappa)
    return {"csv": str(csv_path), "svg": str(svg_path)}


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _parser():
    p = argparse.ArgumentParser(prog="formnet", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with RunConfig fields")
        sp.add_argument("--out", help="run directory (default: run)")
        sp.add_argument("--net", help="net description file (default: <out>/net.json)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int, help="worker processes (default: $FORMNET_THREADS or 1)")
        return sp

    sp = common(sub.add_parser("net", help="write a synthetic grid net"))
    sp.add_argument("--grid", help="NXxNY grid size, e.g. 5x5")
    sp.add_argument("--spacing", type=float, help="grid spacing in m")
    sp.add_argument("--EA", type=float, help="axial stiffness in N")

    sp = common(sub.add_parser("gen", help="generate the simulated dataset"))
    sp.add_argument("--n-samples", type=int)
    sp.add_argument("--bounds-mm", type=float, help="half-width of the uniform deviation in mm")
    sp.add_argument("--tolerance", type=float, help="equilibrium residual tolerance in N")

    sp = common(sub.add_parser("train", help="fit the per-edge GPs"))
    sp.add_argument("--split", help="train/validation sizes, e.g. 950/50")
    sp.add_argument("--sequential-split", action="store_true", default=None)
    sp.add_argument("--n-starts", type=int)
    sp.add_argument("--optimize-noise", action="store_true", default=None)
    sp.add_argument("--tie-hypers", action="store_true", default=None)

    sp = common(sub.add_parser("eval", help="cross-validation and form errors"))
    sp.add_argument("--tolerance", type=float)

    sp = common(sub.add_parser("identify", help="identify lengths from one measured form"))
    sp.add_argument("--measurement", required=True, help="JSON with 'delta_r_I' or 'r_I'")

    sp = common(sub.add_parser("plot", help="emit figure data (CSV) and SVG"))
    sp.add_argument("--fig", choices=plots.FIGURES, required=True)
    sp.add_argument("--kappa", type=int, default=0, help="validation sample for --fig errors")
    return p


def _config(args):
    values = {}
    if args.config:
        doc = _io.read_json(args.config)
        known = {f.name for f in fields(RunConfig)}
        unknown = set(doc) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


def run(argv=None):
    """Run one command; returns ``(exit_code, result_dict)``."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0), None
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s")
    try:
        cfg = _config(args)
        cfg.validate(args.command)
        if args.command == "net":
            result = cmd_net(cfg, argv)
        elif args.command == "gen":
            result = cmd_gen(cfg, argv)
        elif args.command == "train":
            result = cmd_train(cfg, argv)
        elif args.command == "eval":
            result = cmd_eval(cfg, argv)
        elif args.command == "identify":
            result = cmd_identify(cfg, argv, args.measurement)
        else:
            result = cmd_plot(cfg, argv, args.fig, args.kappa)
    except (UsageError, FileNotFoundError) as exc:
        return _fail(2, args.command, exc)
    except ProvenanceError as exc:
        return _fail(3, args.command, exc)
    except (FormnetError, ValueError) as exc:
        return _fail(1, args.command, exc)
    print(json.dumps(result, sort_keys=True))
    return 0, result


def _fail(code, command, exc):
    record = {"command": command, "error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code, record


def main(argv=None):
    code, _ = run(argv)
    sys.exit(code)


if __name__ == "__main__":
    main()
