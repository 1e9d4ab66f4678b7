"""Latency response to a x5 burst, learning versus frozen evolution."""

import time

from swarm_gov.scenarios import burst_summary, run_burst

from _common import config_path, parser, setup


def _fmt(v):
    return "  -   " if v is None else f"{v:.3f}"


def main():
    args = parser(__doc__.splitlines()[0], config_path("burst.json")).parse_args()
    cfg = setup(args)
    t0 = time.time()
    table = run_burst(cfg, args.seed, jobs=args.jobs)
    for mode, by_seed in table.items():
        s = burst_summary(by_seed, cfg)
        print(f"[{mode}] burst windows {s.burst_windows} peak {s.peak_window} "
              f"pre {s.pre_latency:.3f} s post {' '.join(_fmt(v) for v in s.post_latency)} "
              f"adaptation {_fmt(s.adaptation_score)}")
        print("  " + " ".join(_fmt(m) for _, m, _ in s.series))
    print(f"elapsed {time.time() - t0:.1f} s")


if __name__ == "__main__":
    main()
