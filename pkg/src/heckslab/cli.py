"""Command-line front end: ``heckslab {fit, simulate, stepwise, summarize}``.

Every command writes into a fresh run directory. Files are staged in a
temporary sibling directory and renamed into place once complete, so a
failed run leaves no partial output behind.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import forward_stepwise
from .gibbs import run_chain
from .io import (
    ConfigError,
    DataFileError,
    RunConfig,
    format_config,
    load_run_config,
    read_dataset,
    read_draws,
    standardize,
    write_draws,
)
from .model import DataError
from .posterior import (
    format_model_table,
    format_summary_table,
    median_model,
    summarize,
    summary_items,
)
from .simharness import run_experiment

log = logging.getLogger("heckslab")


class UsageError(Exception):
    pass


@contextmanager
def staged_output(out_dir):
    """Yield a temporary directory that becomes ``out_dir`` on success."""
    out = Path(out_dir)
    if out.exists():
        raise UsageError(f"output directory {out} already exists; choose a fresh one")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    os.rename(tmp, out)


def _write_manifest(tmp: Path, command: str, args, cfg: RunConfig, t0: float, extra=None):
    manifest = {
        "command": command,
        "config_file": str(args.config) if args.config else None,
        "seed": cfg.seed,
        "inputs": [str(p) for p in getattr(args, "inputs", [])],
        "output_dir": str(Path(args.out).resolve()),
        "outputs": sorted(p.name for p in tmp.iterdir()) + ["manifest.json"],
        "version": __version__,
        "wall_time": time.perf_counter() - t0,
    }
    if extra:
        manifest.update(extra)
    (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _resolve_config(args) -> RunConfig:
    base = RunConfig(context="simulation" if args.command == "simulate" else "application")
    cfg = load_run_config(args.config, base)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "family", None):
        cfg.family = args.family
    if getattr(args, "prior_class", None):
        cfg.prior_class = args.prior_class
    if getattr(args, "no_standardize", False):
        cfg.standardize = False
    for name in ("iterations", "burn_in", "thin"):
        val = getattr(args, name, None)
        if val is not None:
            cfg.gibbs[name] = val
    return cfg


def _load_data(path, cfg: RunConfig):
    data = read_dataset(path, cfg.x_cols, cfg.w_cols, cfg.delimiter)
    data.check_fittable()
    if cfg.standardize:
        data, _ = standardize(data)
    return data


def cmd_fit(args) -> Path:
    t0 = time.perf_counter()
    cfg = _resolve_config(args)
    gcfg = cfg.gibbs_config()
    data = _load_data(args.data, cfg)
    prior = cfg.prior_spec(data.n, data.p, data.q)
    with staged_output(args.out) as tmp:
        chain = run_chain(data, prior, gcfg)
        write_draws(tmp / "draws.tsv", chain)
        summ = summarize(chain)
        (tmp / "summary.txt").write_text(format_summary_table(summ))
        (tmp / "models.txt").write_text(format_model_table(summ.model_table, summ.n_draws))
        (tmp / "summary.json").write_text(json.dumps(
            {k: float(v) for k, v in summary_items(summ).items()}, indent=2) + "\n")
        (tmp / "config.txt").write_text(format_config(cfg, prior))
        _write_manifest(tmp, "fit", args, cfg, t0, {
            "median_model": median_model(summ).label(),
            "chain_wall_time": chain.wall_time,
            "standardized": cfg.standardize,
            "x_names": list(data.x_names), "w_names": list(data.w_names)})
    return Path(args.out)


def cmd_simulate(args) -> Path:
    t0 = time.perf_counter()
    cfg = _resolve_config(args)
    scen = cfg.scenario_config()
    with staged_output(args.out) as tmp:
        res = run_experiment(scen, master_seed=cfg.seed)
        (tmp / "metrics.tsv").write_text(res.format_table())
        errors = {f"{r.index}:{m}": msg for r in res.replicates for m, msg in r.errors.items()}
        extra = {"alpha0": res.alpha0, "missing_fraction": res.missing_fraction,
                 "rho_posterior_mean": res.rho_posterior_mean, "replicate_errors": errors}
        (tmp / "config.txt").write_text(format_config(cfg))
        _write_manifest(tmp, "simulate", args, cfg, t0, extra)
    return Path(args.out)


def cmd_stepwise(args) -> Path:
    t0 = time.perf_counter()
    cfg = _resolve_config(args)
    data = _load_data(args.data, cfg)
    with staged_output(args.out) as tmp:
        trace = forward_stepwise(data)
        (tmp / "trace.txt").write_text(trace.format(data.w_names, data.x_names))
        fit = trace.final_fit
        sel = trace.final_model
        w_names = [n for n, b in zip(data.w_names, sel.included_S) if b]
        x_names = [n for n, b in zip(data.x_names, sel.included_O) if b]
        names = (["alpha0"] + [f"alpha.{n}" for n in w_names] + ["beta0"]
                 + [f"beta.{n}" for n in x_names] + ["sigma", "rho"])
        est = fit.params.to_vector()
        se = fit.stderr if fit.stderr is not None else np.full(est.size, np.nan)
        lines = ["parameter\testimate\tstd_error"]
        lines += [f"{n}\t{float(e)!r}\t{float(s)!r}" for n, e, s in zip(names, est, se)]
        lines.append(f"loglik\t{float(fit.loglik)!r}\t")
        (tmp / "final_fit.tsv").write_text("\n".join(lines) + "\n")
        _write_manifest(tmp, "stepwise", args, cfg, t0, {
            "final_model": sel.label(), "skipped_fits": trace.skipped_fits,
            "aic_path": trace.aic_path()})
    return Path(args.out)


def cmd_summarize(args) -> Path:
    t0 = time.perf_counter()
    cfg = _resolve_config(args)
    # column names live in the manifest written next to the draw file
    names = {}
    manifest = Path(args.draws).parent / "manifest.json"
    if manifest.is_file():
        meta = json.loads(manifest.read_text())
        names = {"x_names": meta.get("x_names", ()), "w_names": meta.get("w_names", ())}
    chain = read_draws(args.draws, **names)
    if chain.n_draws == 0:
        raise DataFileError(f"{args.draws}: no draws")
    with staged_output(args.out) as tmp:
        summ = summarize(chain)
        (tmp / "summary.txt").write_text(format_summary_table(summ))
        (tmp / "models.txt").write_text(format_model_table(summ.model_table, summ.n_draws))
        (tmp / "summary.json").write_text(json.dumps(
            {k: float(v) for k, v in summary_items(summ).items()}, indent=2) + "\n")
        _write_manifest(tmp, "summarize", args, cfg, t0,
                        {"median_model": median_model(summ).label()})
    return Path(args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heckslab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, sampler=False):
        p.add_argument("--config", help="flat 'section.key = value' config file")
        p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
        p.add_argument("--out", required=True, help="fresh output directory")
        if sampler:
            p.add_argument("--iterations", type=int)
            p.add_argument("--burn-in", dest="burn_in", type=int)
            p.add_argument("--thin", type=int)
            p.add_argument("--prior-class", dest="prior_class", type=int, choices=(1, 2))
            p.add_argument("--family", choices=("normal", "laplace", "student-t"))

    p = sub.add_parser("fit", help="run the Gibbs sampler on a data file")
    p.add_argument("data")
    common(p, sampler=True)
    p.add_argument("--no-standardize", action="store_true",
                   help="use covariates as given instead of centering and scaling")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run a simulation scenario")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("stepwise", help="forward stepwise AIC selection")
    p.add_argument("data")
    common(p)
    p.add_argument("--no-standardize", action="store_true")
    p.set_defaults(func=cmd_stepwise)

    p = sub.add_parser("summarize", help="summarize an existing draw file")
    p.add_argument("draws")
    common(p)
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    args.inputs = [getattr(args, k) for k in ("data", "draws") if getattr(args, k, None)]
    try:
        out = args.func(args)
    except (ConfigError, DataFileError, DataError, UsageError, FileNotFoundError) as exc:
        print(f"heckslab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
