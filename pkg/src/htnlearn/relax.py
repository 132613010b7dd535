"""Delete-relaxation kernels with a compiled backend when available.

The compiled extension ``_relax`` is used unless it failed to build or the
environment variable ``HTNLEARN_PURE_PYTHON`` is set to a non-empty value.
"""

from __future__ import annotations

import os
from array import array
from dataclasses import dataclass, field

from htnlearn import _relax_py

INF = float("inf")

_impl = _relax_py
BACKEND = "python"
if not os.environ.get("HTNLEARN_PURE_PYTHON"):
    try:
        from htnlearn import _relax as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"


@dataclass(eq=False)
class RelaxedTask:
    """Ground actions flattened into index lists for the kernels."""

    n_atoms: int
    pre: list
    add: list
    n_actions: int = field(init=False)
    pre_count: list = field(init=False)
    watch: list = field(init=False)
    free_actions: list = field(init=False)

    def __post_init__(self):
        self.n_actions = len(self.pre)
        self.pre_count = [len(p) for p in self.pre]
        watch = [[] for _ in range(self.n_atoms)]
        for a, pre in enumerate(self.pre):
            for p in pre:
                watch[p].append(a)
        self.watch = [tuple(w) for w in watch]
        self.free_actions = [a for a, pre in enumerate(self.pre) if not pre]
        self.nbytes = max(1, (self.n_atoms + 7) // 8)
        # flat int buffers for the compiled kernel
        self.pre_count_arr = array("i", self.pre_count)
        self.add_off, self.add_flat = _csr(self.add)
        self.watch_off, self.watch_flat = _csr(self.watch)
        self.free_arr = array("i", self.free_actions)


def _csr(rows) -> tuple[array, array]:
    off = array("i", [0])
    flat = array("i")
    for row in rows:
        flat.extend(row)
        off.append(len(flat))
    return off, flat


def disabled_mask(n_actions: int, actions) -> bytes:
    mask = bytearray(n_actions)
    for a in actions:
        mask[a] = 1
    return bytes(mask)


def h_value(task: RelaxedTask, state_bits: int, goal_ids, use_max: bool = False,
            disabled: bytes | None = None, impl=None) -> float:
    """h_add (or h_max) of reaching every atom in ``goal_ids`` from the state."""
    return (impl or _impl).h_value(task, state_bits, list(goal_ids), use_max, disabled)


def atom_costs(task: RelaxedTask, state_bits: int, use_max: bool = False,
               disabled: bytes | None = None, impl=None) -> list:
    """Relaxed cost of every atom; ``inf`` marks relaxed-unreachable atoms."""
    return (impl or _impl).atom_costs(task, state_bits, use_max, disabled)


def backends() -> dict:
    """Every importable backend, keyed by name."""
    found = {"python": _relax_py}
    try:
        from htnlearn import _relax as compiled
        found["cython"] = compiled
    except ImportError:
        pass
    return found
