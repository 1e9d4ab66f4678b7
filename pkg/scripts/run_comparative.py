"""Mode comparison on the default 100-service scenario.

Prints per-seed coordination efficiency for every mode, the mode means, and
the ratios the acceptance suite checks (full over each baseline).
"""

import time

import numpy as np

from swarm_gov.scenarios import run_comparative, summarize

from _common import config_path, parser, setup


def main():
    args = parser(__doc__.splitlines()[0], config_path("comparative.json")).parse_args()
    cfg = setup(args)
    t0 = time.time()
    table = run_comparative(cfg, args.seed, jobs=args.jobs)
    summary = summarize(table)
    print(f"{'mode':16s} {'CE per seed':40s} {'mean CE':>8s} {'GO':>7s} {'conv':>5s}")
    for mode, by_seed in table.items():
        ces = " ".join(f"{r.report.coordination_efficiency:.3f}" for r in by_seed.values())
        row = summary[mode]
        print(f"{mode:16s} {ces:40s} {row['coordination_efficiency']:8.4f} "
              f"{row['global_optimality']:7.4f} {row['converged_seeds']:>3d}/{len(by_seed)}")
    full = summary.get("full", {}).get("coordination_efficiency")
    if full is not None:
        for mode, row in summary.items():
            if mode != "full" and row["coordination_efficiency"]:
                print(f"full / {mode}: {full / row['coordination_efficiency']:.3f}")
    print(f"elapsed {time.time() - t0:.1f} s")


if __name__ == "__main__":
    main()
