"""Compare the compiled and pure-Python relaxation kernels.

    python3 benchmarks/bench_relax.py [--repeat 5] [--blocks 8] [--json out.json]

Each backend evaluates h_add and h_max on the same states of a few grounded
problems; results must agree exactly before any timing is reported.
"""

from __future__ import annotations

import argparse
import json
import random
import statistics
import sys
import time

from htnlearn import relax
from htnlearn.generators import domain_by_name, gen_blocks, gen_logistics
from htnlearn.ground import Grounding


def sample_states(g: Grounding, n: int, rng: random.Random) -> list[int]:
    """States met on short random walks from the initial state."""
    states = []
    s = g.init_bits
    for _ in range(n):
        states.append(s)
        succ = g.applicable(s)
        s = g.successor(s, rng.choice(succ)) if succ else g.init_bits
    return states


def workloads(blocks: int) -> list[tuple[str, Grounding]]:
    probs = [
        (f"blocks-{blocks}", gen_blocks(blocks, "bench", goal_mode="uniform")),
        (f"blocks-{blocks + 4}", gen_blocks(blocks + 4, "bench", goal_mode="uniform")),
        ("logistics-4x3", gen_logistics(4, 3, 3, 1, 2, "bench")),
    ]
    return [(name, Grounding(domain_by_name(p.domain_name), p)) for name, p in probs]


def time_backend(impl, g: Grounding, states, goal, use_max: bool, repeat: int) -> tuple[float, list[float]]:
    values = [relax.h_value(g.relaxed, s, goal, use_max, impl=impl) for s in states]
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        for s in states:
            relax.h_value(g.relaxed, s, goal, use_max, impl=impl)
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs), values


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--states", type=int, default=200)
    ap.add_argument("--blocks", type=int, default=8)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="write the results here")
    args = ap.parse_args(argv)

    found = relax.backends()
    if "cython" not in found:
        print("compiled backend not built; only the Python kernel is timed", file=sys.stderr)
    rng = random.Random(args.seed)
    rows = []
    print(f"{'workload':<16}{'atoms':>7}{'actions':>9}{'kernel':>7}" + "".join(f"{b:>12}" for b in found) + f"{'speedup':>10}")
    for name, g in workloads(args.blocks):
        states = sample_states(g, args.states, rng)
        goal = g.ids(g.prob.goal)
        for use_max in (False, True):
            timings, reference = {}, None
            for bname, impl in found.items():
                t, values = time_backend(impl, g, states, goal, use_max, args.repeat)
                if reference is None:
                    reference = values
                elif values != reference:
                    print(f"backends disagree on {name}", file=sys.stderr)
                    return 1
                timings[bname] = t
            speedup = timings["python"] / timings["cython"] if "cython" in timings else float("nan")
            kernel = "hmax" if use_max else "hadd"
            rows.append({"workload": name, "atoms": len(g.atoms), "actions": len(g.actions), "kernel": kernel,
                         "states": len(states), "seconds": timings, "speedup": speedup})
            print(f"{name:<16}{len(g.atoms):>7}{len(g.actions):>9}{kernel:>7}"
                  + "".join(f"{timings[b]:>12.4f}" for b in found) + f"{speedup:>10.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
