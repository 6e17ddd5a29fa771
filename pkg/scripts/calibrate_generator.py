#!/usr/bin/env python3
"""Average the generator's calibration statistics over several seeds.

Used to tune the latent-normal parameters in ``GeneratorConfig``.  Example:

    python scripts/calibrate_generator.py --seeds 5 --set black.lsat_mean=29.3 --set ses_lsat_corr=0.35
"""
import argparse
from dataclasses import replace

import numpy as np

from sesaa.synthgen import GeneratorConfig, generate_population


def apply_overrides(cfg, overrides):
    for item in overrides:
        key, value = item.split("=", 1)
        if "." in key:
            race, attr = key.split(".", 1)
            cfg = replace(cfg, **{race: replace(getattr(cfg, race), **{attr: float(value)})})
        elif key == "ses_loadings":
            cfg = replace(cfg, ses_loadings=tuple(float(v) for v in value.split(",")))
        else:
            cfg = replace(cfg, **{key: type(getattr(cfg, key))(value)})
    return cfg


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args(argv)
    cfg = apply_overrides(GeneratorConfig(), args.set)
    runs = []
    for seed in range(args.seeds):
        _, manifest = generate_population(replace(cfg, seed=seed))
        runs.append(manifest)
    print(f"{'statistic':28s} {'target':>9s} {'mean':>9s} {'min':>9s} {'max':>9s}  fails")
    for i, row in enumerate(runs[0].rows):
        vals = np.array([m.rows[i]["achieved"] for m in runs])
        fails = sum(not m.rows[i]["passed"] for m in runs)
        print(f"{row['target_name']:28s} {row['target']:9.4g} {vals.mean():9.4g} "
              f"{vals.min():9.4g} {vals.max():9.4g}  {fails}")


if __name__ == "__main__":
    main()
