"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration, 3 data error, 4 model-fit
failure, 5 simulation failure.

Settings are resolved as defaults < ``--config`` file < ``SESAA_*``
environment variables < flags.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import report as rp

log = logging.getLogger("sesaa")

COMMANDS = ("generate", "score", "fit", "simulate", "selfcheck", "report", "all")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="student CSV; omit to generate a synthetic population")
    common.add_argument("--config", help="flat key = value settings file")
    common.add_argument("--mode", choices=("quota", "bernoulli", "unconstrained"))
    common.add_argument("--ses-score", dest="ses_score", choices=rp.SES_SCORES)
    common.add_argument("--m", type=int, help="number of replications")
    common.add_argument("--seed", type=int, help="master seed for replications")
    common.add_argument("--generator-seed", dest="generator_seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--prior-df", dest="prior_df", type=float)
    common.add_argument("--prior-scale", dest="prior_scale", type=float)
    common.add_argument("--prior-scale-intercept", dest="prior_scale_intercept", type=float)
    common.add_argument("--n-jobs", dest="n_jobs", type=int)
    common.add_argument("--export-assignments", dest="export_assignments", action="store_const",
                        const=True, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="sesaa", description="Race- versus class-based admissions simulation.")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write a calibrated synthetic population and its manifest",
        "score": "compute SES scores and low-SES membership",
        "fit": "fit enrollment and outcome models, write coefficient tables",
        "simulate": "run the replications and write pooled composition and outcome tables",
        "selfcheck": "re-impute outcomes under observed tiers and compare with observed rates",
        "report": "full pipeline, all tables",
        "all": "generate (unless --input) then report",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return ap


_FLAG_KEYS = ("input", "mode", "ses_score", "m", "seed", "generator_seed", "out", "prior_df",
              "prior_scale", "prior_scale_intercept", "n_jobs", "export_assignments")


def config_from_args(args, environ=None) -> rp.RunConfig:
    environ = os.environ if environ is None else environ
    config_path = args.config or environ.get(rp.ENV_PREFIX + "CONFIG")
    file_settings = rp.read_config_file(config_path) if config_path else {}
    flags = {k: getattr(args, k) for k in _FLAG_KEYS}
    return rp.resolve_config(file_settings, rp.env_settings(environ), flags)


def _report_paths(paths) -> None:
    for p in paths:
        print(p)


def _cmd_generate(cfg: rp.RunConfig) -> int:
    path, manifest = rp.write_generated(cfg, cfg.out)
    print(path)
    for row in manifest.failures:
        log.error("calibration target missed: %s achieved %r (target %r)",
                  row["target_name"], row["achieved"], row["target"])
    return rp.EXIT_OK if manifest.ok else rp.EXIT_DATA


def _cmd_score(cfg: rp.RunConfig) -> int:
    print(rp.write_scores(cfg, rp.load_data(cfg), cfg.out))
    return rp.EXIT_OK


def _cmd_fit(cfg: rp.RunConfig) -> int:
    data = rp.load_data(cfg)
    fitted = rp.fitted_pipeline(cfg, data)
    _report_paths(rp.ReportBundle(rp.fit_tables(cfg, data, fitted)).write(cfg.out))
    return rp.EXIT_OK


def _cmd_simulate(cfg: rp.RunConfig) -> int:
    fitted = rp.fitted_pipeline(cfg, rp.load_data(cfg))
    _report_paths(rp.simulate(cfg, fitted).write(cfg.out))
    return rp.EXIT_OK


def _cmd_selfcheck(cfg: rp.RunConfig) -> int:
    fitted = rp.fitted_pipeline(cfg, rp.load_data(cfg))
    rows = rp.selfcheck_table(cfg, fitted)
    _report_paths(rp.ReportBundle({"selfcheck": rows}).write(cfg.out))
    flagged = [r for r in rows if not r["within_95"]]
    print(f"{len(rows) - len(flagged)}/{len(rows)} cells within 1.96 se")
    return rp.EXIT_OK


def _cmd_report(cfg: rp.RunConfig) -> int:
    _report_paths(rp.build_report(cfg).write(cfg.out))
    return rp.EXIT_OK


def _cmd_all(cfg: rp.RunConfig) -> int:
    if cfg.input is None:
        path, manifest = rp.write_generated(cfg, cfg.out)
        if not manifest.ok:
            log.warning("%d calibration targets missed", len(manifest.failures))
        cfg = replace(cfg, input=str(path), generator_seed=None)
    return _cmd_report(cfg)


HANDLERS = {"generate": _cmd_generate, "score": _cmd_score, "fit": _cmd_fit, "simulate": _cmd_simulate,
            "selfcheck": _cmd_selfcheck, "report": _cmd_report, "all": _cmd_all}


def main(argv=None, environ=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args, environ)
        Path(cfg.out).mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg)
    except OSError as exc:
        log.error("%s", exc)
        return rp.EXIT_DATA
    except Exception as exc:
        code = rp.exit_code_for(exc)  # re-raises anything outside the taxonomy
        log.error("%s", exc)
        return code


if __name__ == "__main__":
    sys.exit(main())
