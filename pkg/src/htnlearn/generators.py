"""Random Blocks World and Logistics problems, plus the bundled fixtures."""

from __future__ import annotations

import math
import random
from functools import lru_cache
from importlib.resources import files

from htnlearn.pddl import DomainModel, ProblemModel, parse_domain, parse_problem

_DATA = files("htnlearn") / "data"


def data_text(name: str) -> str:
    return (_DATA / name).read_text()


@lru_cache(maxsize=None)
def blocks_domain() -> DomainModel:
    return parse_domain(data_text("blocks.pddl"))


@lru_cache(maxsize=None)
def logistics_domain() -> DomainModel:
    return parse_domain(data_text("logistics.pddl"))


def domain_by_name(name: str) -> DomainModel:
    table = {"blocks": blocks_domain, "logistics": logistics_domain}
    if name not in table:
        raise ValueError(f"unknown built-in domain {name!r}; expected one of {sorted(table)}")
    return table[name]()


def tower4_problem() -> ProblemModel:
    """Four blocks D on C on B on A, goal (clear A)."""
    return parse_problem(data_text("blocks-4.pddl"), blocks_domain())


def detour_problem() -> ProblemModel:
    """One package from l2-0 to l0-0 with the only airplane at l1-0."""
    return parse_problem(data_text("logistics-detour.pddl"), logistics_domain())


# --------------------------------------------------------------------------
# blocks


@lru_cache(maxsize=None)
def count_arrangements(n: int) -> int:
    """Ways to stack n labelled blocks into towers (1, 1, 3, 13, 73, 501, ...)."""
    if n == 0:
        return 1
    return sum(math.comb(n - 1, k - 1) * math.factorial(k) * count_arrangements(n - k) for k in range(1, n + 1))


def random_arrangement(blocks: list[str], rng: random.Random) -> list[list[str]]:
    """Towers listed bottom to top, uniform over all arrangements."""
    remaining = list(blocks)
    towers = []
    while remaining:
        n = len(remaining)
        r = rng.randrange(count_arrangements(n))
        for k in range(1, n + 1):
            w = math.comb(n - 1, k - 1) * math.factorial(k) * count_arrangements(n - k)
            if r < w:
                break
            r -= w
        first, rest = remaining[0], remaining[1:]
        tower = [first] + rng.sample(rest, k - 1)
        rng.shuffle(tower)
        towers.append(tower)
        remaining = [b for b in rest if b not in tower]
    return towers


def block_names(n: int) -> list[str]:
    if n <= 26:
        return [chr(ord("A") + i) for i in range(n)]
    return [f"B{i}" for i in range(n)]


def _arrangement_atoms(towers: list[list[str]]) -> list[str]:
    atoms = []
    for tower in towers:
        atoms.append(f"(on-table {tower[0]})")
        for below, above in zip(tower, tower[1:]):
            atoms.append(f"(on {above} {below})")
        atoms.append(f"(clear {tower[-1]})")
    return atoms


def blocks_problem_text(name: str, init: list[list[str]], goal: list[list[str]]) -> str:
    blocks = sorted(b for t in init for b in t)
    init_atoms = _arrangement_atoms(init) + ["(hand-empty)"]
    goal_atoms = [a for a in _arrangement_atoms(goal) if not a.startswith("(clear")]
    return (
        f"(define (problem {name})\n"
        f"  (:domain blocks)\n"
        f"  (:objects {' '.join(blocks)} - block)\n"
        f"  (:init {' '.join(init_atoms)})\n"
        f"  (:goal (and {' '.join(sorted(goal_atoms))})))\n"
    )


def _towers_of(state: set[tuple[str, ...]]) -> list[list[str]]:
    above = {a[2]: a[1] for a in state if a[0] == "on"}
    towers = []
    for base in sorted(a[1] for a in state if a[0] == "on-table"):
        tower = [base]
        while tower[-1] in above:
            tower.append(above[tower[-1]])
        towers.append(tower)
    return towers


def scramble(towers: list[list[str]], steps: int, rng: random.Random) -> list[list[str]]:
    """Random walk of at least ``steps`` valid moves.

    A held block is never put straight back where it came from, and the walk
    goes on until the arrangement differs from the start (when it can).
    """
    state = {("on-table", t[0]) for t in towers}
    state |= {("on", b, a) for t in towers for a, b in zip(t, t[1:])}
    start = frozenset(state)
    clear = {t[-1] for t in towers}
    held, origin = None, None
    moves = 0
    can_change = len(towers) > 1 or len(towers[0]) > 1
    while moves < steps or held is not None or (can_change and frozenset(state) == start):
        if held is None:
            x = rng.choice(sorted(clear))
            origin = next((a[2] for a in state if a[0] == "on" and a[1] == x), "table")
            state.discard(("on-table", x) if origin == "table" else ("on", x, origin))
            clear.discard(x)
            if origin != "table":
                clear.add(origin)
            held = x
        else:
            options = [y for y in ["table"] + sorted(clear) if y != origin] or [origin]
            y = rng.choice(options)
            state.add(("on-table", held) if y == "table" else ("on", held, y))
            clear.discard(y)
            clear.add(held)
            held = None
        moves += 1
    return _towers_of(state)


def gen_blocks(n_blocks: int, seed, name: str | None = None, scramble_steps: int | None = None,
               goal_mode: str = "scramble") -> ProblemModel:
    """Random Blocks World problem.

    The initial arrangement is uniform over all arrangements.  With
    ``goal_mode="scramble"`` the goal arrangement is reached from it by a random
    walk of ``scramble_steps`` moves (``2 * n_blocks`` by default); with
    ``"uniform"`` it is drawn independently.  The goal lists the goal
    arrangement's ``on`` and ``on-table`` atoms.
    """
    if n_blocks < 1:
        raise ValueError("n_blocks must be at least 1")
    if goal_mode not in ("scramble", "uniform"):
        raise ValueError(f"unknown goal_mode {goal_mode!r}")
    rng = random.Random(f"blocks:{n_blocks}:{seed}")
    blocks = block_names(n_blocks)
    init = random_arrangement(blocks, rng)
    if goal_mode == "uniform":
        goal = random_arrangement(blocks, rng)
    else:
        steps = 2 * n_blocks if scramble_steps is None else scramble_steps
        goal = scramble(init, steps, rng)
    text = blocks_problem_text(name or f"blocks-{n_blocks}-{seed}", init, goal)
    return parse_problem(text, blocks_domain())


# --------------------------------------------------------------------------
# logistics


def logistics_problem_text(name: str, cities: int, locs_per_city: int, trucks: dict[str, str],
                           airplanes: dict[str, str], packages: dict[str, tuple[str, str]]) -> str:
    airports = [f"l{c}-0" for c in range(cities)]
    others = [f"l{c}-{j}" for c in range(cities) for j in range(1, locs_per_city)]
    objects = [
        " ".join(f"c{c}" for c in range(cities)) + " - city",
        " ".join(airports) + " - airport",
    ]
    if others:
        objects.append(" ".join(others) + " - location")
    objects.append(" ".join(sorted(trucks)) + " - truck")
    if airplanes:
        objects.append(" ".join(sorted(airplanes)) + " - airplane")
    objects.append(" ".join(sorted(packages)) + " - package")
    init = [f"(in-city l{c}-{j} c{c})" for c in range(cities) for j in range(locs_per_city)]
    init += [f"(truck-at {t} {loc})" for t, loc in sorted(trucks.items())]
    init += [f"(airplane-at {a} {loc})" for a, loc in sorted(airplanes.items())]
    init += [f"(obj-at {p} {src})" for p, (src, _) in sorted(packages.items())]
    goal = [f"(obj-at {p} {dst})" for p, (_, dst) in sorted(packages.items())]
    return (
        f"(define (problem {name})\n"
        f"  (:domain logistics)\n"
        f"  (:objects {' '.join(objects)})\n"
        f"  (:init {' '.join(init)})\n"
        f"  (:goal (and {' '.join(goal)})))\n"
    )


def gen_logistics(cities: int, locs_per_city: int, packages: int, trucks: int, airplanes: int,
                  seed, name: str | None = None) -> ProblemModel:
    """Random placements; ``trucks`` is per city and location ``lC-0`` is city C's airport."""
    if min(cities, locs_per_city, packages, trucks, airplanes) < 1:
        raise ValueError("all logistics counts must be at least 1")
    rng = random.Random(f"logistics:{cities}:{locs_per_city}:{packages}:{trucks}:{airplanes}:{seed}")
    locations = [f"l{c}-{j}" for c in range(cities) for j in range(locs_per_city)]
    airports = [f"l{c}-0" for c in range(cities)]
    truck_at = {}
    for c in range(cities):
        for k in range(trucks):
            tname = f"t{c}" if trucks == 1 else f"t{c}-{k}"
            truck_at[tname] = f"l{c}-{rng.randrange(locs_per_city)}"
    plane_at = {f"a{k}": rng.choice(airports) for k in range(airplanes)}
    pkgs = {f"p{k}": (rng.choice(locations), rng.choice(locations)) for k in range(packages)}
    text = logistics_problem_text(name or f"logistics-{cities}-{locs_per_city}-{packages}-{seed}",
                                  cities, locs_per_city, truck_at, plane_at, pkgs)
    return parse_problem(text, logistics_domain())


def generate(domain: str, seed, **params) -> ProblemModel:
    """Dispatch to a generator; sizes default to the desk-scale settings."""
    rng = random.Random(f"size:{domain}:{seed}")
    if domain == "blocks":
        lo, hi = params.get("min_blocks", 3), params.get("max_blocks", 5)
        n = params.get("n_blocks") or rng.randint(lo, hi)
        return gen_blocks(n, seed, scramble_steps=params.get("scramble_steps"),
                          goal_mode=params.get("goal_mode", "scramble"))
    if domain == "logistics":
        return gen_logistics(params.get("cities", 3), params.get("locs_per_city", 2),
                             params.get("packages", 1), params.get("trucks", 1),
                             params.get("airplanes", 1), seed)
    raise ValueError(f"unknown domain {domain!r}")
