"""Global optimality as a function of the number of governing agents."""

import time

from swarm_gov.scenarios import run_agent_sweep, sweep_curve

from _common import config_path, parser, setup


def main():
    p = parser(__doc__.splitlines()[0], config_path("agent_sweep.json"))
    p.add_argument("--counts", type=lambda s: [int(x) for x in s.split(",")], default=None,
                   help="comma-separated agent counts (default: from the config)")
    args = p.parse_args()
    cfg = setup(args)
    t0 = time.time()
    table = run_agent_sweep(cfg, args.counts, args.seed, jobs=args.jobs)
    print("agents  mean_GO   std     per seed")
    for count, mean, std in sweep_curve(table):
        per = " ".join(f"{r.report.global_optimality:.4f}" for r in table[count].values())
        print(f"{count:6d}  {mean:.4f}  {std:.4f}  {per}")
    print(f"elapsed {time.time() - t0:.1f} s")


if __name__ == "__main__":
    main()
