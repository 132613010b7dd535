"""Train/test experiment loop, metrics and artifacts."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from htnlearn.curricula import (
    CurricugenConfig,
    CurriculumError,
    TaskRegistry,
    curricugen,
    curriculum_from_json,
)
from htnlearn.generators import detour_problem, domain_by_name, generate
from htnlearn.ground import Grounding, PlanValidationError
from htnlearn.htn import HtnConfig, HtnError, equivalent_hierarchical_problem, htn_solve, validate_htn_result
from htnlearn.landmark import LandmarkError
from htnlearn.learn import LearnError, MethodLibrary
from htnlearn.pipeline import learn_problem
from htnlearn.search import PlanningError, SearchConfig

log = logging.getLogger(__name__)

TIME_FIELDS = ("avg_planning_time_s", "learn_time_landmarks_s", "learn_time_plan_s",
               "learn_time_methods_s", "learn_time_total_s")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    domain_name: str = "blocks"
    n_train: int = 30
    n_test: int = 20
    n_trials: int = 3
    seed: int = 0
    generator_params: dict = field(default_factory=dict)
    search: SearchConfig = field(default_factory=SearchConfig)
    curricugen: CurricugenConfig = field(default_factory=lambda: CurricugenConfig(tie_break="goal-directed"))
    htn: HtnConfig = field(default_factory=HtnConfig)
    output_dir: str | None = None
    write_dot: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 1 or self.n_trials < 1 or self.workers < 1:
            raise ConfigError("need n_train >= 0, n_test >= 1, n_trials >= 1 and workers >= 1")
        try:
            domain_by_name(self.domain_name)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.curricugen.search != self.search:
            self.curricugen = dataclasses.replace(self.curricugen, search=self.search)

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        """Build from a flat document; ``search_*``, ``curricugen_*`` and ``htn_*``
        keys (or nested tables of those names) set the planner configs."""
        data = dict(data)
        nested = {"search": dict(data.pop("search", {}) or {}),
                  "curricugen": dict(data.pop("curricugen", {}) or {}),
                  "htn": dict(data.pop("htn", {}) or {})}
        for key in list(data):
            for prefix in nested:
                if key.startswith(prefix + "_"):
                    nested[prefix][key[len(prefix) + 1:]] = data.pop(key)
                    break
        known = {f.name for f in dataclasses.fields(cls)} - set(nested)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown experiment keys: {', '.join(unknown)}")
        try:
            search = SearchConfig(**nested["search"])
            cg = {"tie_break": "goal-directed", **nested["curricugen"]}
            curr = CurricugenConfig(search=search, **cg)
            htn = HtnConfig(**nested["htn"])
            return cls(search=search, curricugen=curr, htn=htn, **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["curricugen"].pop("search", None)
        return out


@dataclass
class MetricsRow:
    trial: int
    train_count: int
    fraction_solved: float
    avg_plan_length: float
    avg_planning_time_s: float
    method_count: int
    learn_time_landmarks_s: float
    learn_time_plan_s: float
    learn_time_methods_s: float
    learn_time_total_s: float

    def as_csv(self) -> dict:
        out = dataclasses.asdict(self)
        for k in ("fraction_solved", "avg_plan_length"):
            out[k] = f"{out[k]:.6f}"
        for k in TIME_FIELDS:
            out[k] = f"{out[k]:.3f}"
        return out


CSV_FIELDS = [f.name for f in dataclasses.fields(MetricsRow)]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[MetricsRow]
    libraries: list[MethodLibrary]
    summary: dict

    def csv_text(self, with_times: bool = True) -> str:
        return rows_to_csv(self.rows, with_times)


def rows_to_csv(rows: list[MetricsRow], with_times: bool = True) -> str:
    fields = CSV_FIELDS if with_times else [f for f in CSV_FIELDS if f not in TIME_FIELDS]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


def problem_seed(seed, trial: int, stage: str, idx: int) -> str:
    return f"{seed}:{trial}:{stage}:{idx}"


def evaluate(dom, tests, library: MethodLibrary, cfg: HtnConfig) -> tuple[int, list[int], list[float]]:
    """Try every test problem; only validated plans count as solved."""
    solved, lengths, times = 0, [], []
    for tp in tests:
        t0 = time.perf_counter()
        try:
            hp = equivalent_hierarchical_problem(dom, tp, library)
            res = htn_solve(hp, cfg)
            validate_htn_result(hp, res)
        except (HtnError, PlanValidationError) as exc:
            log.debug("test %s unsolved: %s", tp.name, exc)
            times.append(time.perf_counter() - t0)
            continue
        times.append(time.perf_counter() - t0)
        solved += 1
        lengths.append(len(res.plan))
    return solved, lengths, times


def _run_trial(cfg: ExperimentConfig, trial: int) -> tuple[list[MetricsRow], MethodLibrary, dict]:
    dom = domain_by_name(cfg.domain_name)
    out = Path(cfg.output_dir) if cfg.output_dir else None
    rows: list[MetricsRow] = []
    library = MethodLibrary()
    tests = [generate(cfg.domain_name, problem_seed(cfg.seed, trial, "test", j), **cfg.generator_params)
             for j in range(cfg.n_test)]
    skipped = []
    if cfg.n_train == 0:
        solved, lengths, times = evaluate(dom, tests, library, cfg.htn)
        rows.append(_row(trial, 0, solved, lengths, times, library, {}, cfg.n_test))
    for k in range(cfg.n_train):
        prob = generate(cfg.domain_name, problem_seed(cfg.seed, trial, "train", k), **cfg.generator_params)
        timings = {"landmarks_s": 0.0, "plan_s": 0.0, "methods_s": 0.0}
        try:
            res = learn_problem(dom, prob, library, cfg.curricugen, source=prob.name, ordinal=k)
            timings.update(res.timings)
            if out is not None and cfg.write_dot and res.gen is not None:
                dot_dir = out / "landmarks"
                dot_dir.mkdir(parents=True, exist_ok=True)
                (dot_dir / f"trial{trial}-train{k}.dot").write_text(res.gen.graph.to_dot())
        except (CurriculumError, LearnError, LandmarkError, PlanningError) as exc:
            log.warning("trial %d: learning from %s skipped: %s", trial, prob.name, exc)
            skipped.append({"problem": prob.name, "error": f"{type(exc).__name__}: {exc}"})
        solved, lengths, times = evaluate(dom, tests, library, cfg.htn)
        rows.append(_row(trial, k + 1, solved, lengths, times, library, timings, cfg.n_test))
        log.info("trial %d train %d: %d methods, solved %d/%d", trial, k + 1, len(library), solved, cfg.n_test)
    summary = {
        "trial": trial,
        "final_fraction_solved": rows[-1].fraction_solved,
        "max_fraction_solved": max(r.fraction_solved for r in rows),
        "method_count": len(library),
        "learn_skipped": skipped,
    }
    return rows, library, summary


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every trial; with ``workers > 1`` trials run in separate processes."""
    out = Path(cfg.output_dir) if cfg.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    trials = range(cfg.n_trials)
    if cfg.workers > 1 and cfg.n_trials > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, cfg.n_trials)) as pool:
            results = list(pool.map(_run_trial, [cfg] * cfg.n_trials, trials))
    else:
        results = [_run_trial(cfg, t) for t in trials]
    rows = sorted((r for res in results for r in res[0]), key=lambda r: (r.trial, r.train_count))
    libraries = [res[1] for res in results]
    summary = {"config": cfg.to_json(), "trials": [res[2] for res in results]}
    if out is not None:
        for t, lib in zip(trials, libraries):
            (out / f"library-trial{t}.json").write_text(lib.dumps())
        (out / "metrics.csv").write_text(rows_to_csv(rows))
        (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return ExperimentResult(cfg, rows, libraries, summary)


def _row(trial, train_count, solved, lengths, times, library, timings, n_test) -> MetricsRow:
    lm, pl, me = timings.get("landmarks_s", 0.0), timings.get("plan_s", 0.0), timings.get("methods_s", 0.0)
    return MetricsRow(
        trial=trial,
        train_count=train_count,
        fraction_solved=solved / n_test,
        avg_plan_length=sum(lengths) / len(lengths) if lengths else 0.0,
        avg_planning_time_s=sum(times) / len(times) if times else 0.0,
        method_count=len(library),
        learn_time_landmarks_s=lm,
        learn_time_plan_s=pl,
        learn_time_methods_s=me,
        learn_time_total_s=lm + pl + me,
    )


def load_config(path: str | Path, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Read a TOML or JSON experiment config; ``overrides`` replace top-level keys."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        data = tomllib.loads(text)
    else:
        data = json.loads(text)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_mapping(data)


# --------------------------------------------------------------------------
# the airplane detour in Logistics


def _with_edge_curriculum(dom, prob, cfg: CurricugenConfig, edge: tuple[str, str]):
    """Curriculum generated after adding one reasonable edge by hand, round-tripped through JSON."""
    from htnlearn.landmark import OrderingKind, add_reasonable_orders, extract_landmarks

    g = Grounding(dom, prob)
    graph = add_reasonable_orders(extract_landmarks(g, cfg.landmark_method), g, cfg.reasonable)
    by_label = {graph.label(n): n for n in graph.nodes}
    src, dst = by_label[edge[0]], by_label[edge[1]]
    graph.add_edge(src, dst, OrderingKind.REASONABLE)
    gen = curricugen(dom, prob, cfg, grounding=g, graph=graph)
    return curriculum_from_json(json.loads(gen.curriculum.dumps()), g, TaskRegistry(dom)), gen


def detour_demo(reasonable: str = "none",
                edge: tuple[str, str] = ("(in-airplane p0 a0)", "(airplane-at a0 l0-0)")) -> dict:
    """Trace lengths and method counts with and without the prioritizing edge.

    Without the edge the airplane visits the destination airport before
    fetching the package, so the trace is longer than the optimal delivery and
    the learned library larger.
    """
    dom, prob = domain_by_name("logistics"), detour_problem()
    cfg = CurricugenConfig(reasonable=reasonable)
    lib_plain = MethodLibrary()
    plain = learn_problem(dom, prob, lib_plain, cfg, source="plain")
    cur, gen = _with_edge_curriculum(dom, prob, cfg, edge)
    lib_edge = MethodLibrary()
    learn_problem(dom, prob, lib_edge, curriculum=cur, source="edge")
    return {
        "plain_trace": [str(a) for a in plain.curriculum.trace.actions],
        "edge_trace": [str(a) for a in cur.trace.actions],
        "plain_sequence": [plain.gen.graph.label(v) for v in plain.gen.sequence],
        "edge_sequence": [gen.graph.label(v) for v in gen.sequence],
        "plain_methods": len(lib_plain),
        "edge_methods": len(lib_edge),
    }
