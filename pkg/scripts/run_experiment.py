#!/usr/bin/env python3
"""Run the full pipeline for one problem: generate, train, evaluate, plotdata.

Examples:
    python scripts/run_experiment.py --problem antiderivative --preset desk
    python scripts/run_experiment.py --problem advection_diffusion --preset paper \
        --workdir runs/ad --workers 4
"""

import argparse
import sys
from dataclasses import replace

from avido.cli import cmd_evaluate, cmd_generate, cmd_plotdata, cmd_train
from avido.config import preset_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--problem", required=True,
                        choices=("antiderivative", "pendulum", "diffusion_reaction",
                                 "advection_diffusion"))
    parser.add_argument("--preset", default="desk", choices=("paper", "desk"))
    parser.add_argument("--workdir", default="runs")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--skip-deterministic", action="store_true",
                        help="skip the MSE-trained baseline sweep")
    args = parser.parse_args()

    config = preset_config(args.problem, preset=args.preset, master_seed=args.seed,
                           workdir=args.workdir)
    cmd_generate(config, force=True)
    code = cmd_train(config, workers=args.workers)
    if code:
        return code
    if not args.skip_deterministic:
        code = cmd_train(replace(config, deterministic=True), workers=args.workers)
        if code:
            return code
    cmd_evaluate(config)
    cmd_plotdata(config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
