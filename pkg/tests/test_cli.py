import json
import subprocess
import sys

import pytest

from htnlearn.cli import main
from htnlearn.generators import data_text, gen_blocks
from htnlearn.learn import MethodLibrary
from htnlearn.pddl import problem_to_pddl


@pytest.fixture
def files(tmp_path):
    out = {}
    for name in ("blocks.pddl", "blocks-4.pddl", "logistics.pddl", "logistics-detour.pddl"):
        p = tmp_path / name
        p.write_text(data_text(name))
        out[name] = str(p)
    for k in range(3):
        p = tmp_path / f"p{k}.pddl"
        p.write_text(problem_to_pddl(gen_blocks(4, k)))
        out[f"p{k}"] = str(p)
    out["dir"] = tmp_path
    return out


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_parse_summary(files, capsys):
    code, out, _ = run(capsys, "parse", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"])
    assert code == 0
    assert out.splitlines() == ["domain blocks: 5 predicates, 4 actions",
                                "problem blocks-4-clear-a: 4 objects, 6 init atoms, 1 goal atoms"]


def test_parse_error_exit_code(files, capsys):
    bad = files["dir"] / "bad.pddl"
    bad.write_text("(define (domain x) (:requirements :fluents))")
    code, _, err = run(capsys, "parse", "-d", str(bad))
    assert code == 2 and ":fluents" in err


def test_missing_file_exit_code(files, capsys):
    code, _, err = run(capsys, "parse", "-d", str(files["dir"] / "nope.pddl"))
    assert code == 2 and "nope.pddl" in err


def test_plan_and_validate(files, capsys):
    plan_file = files["dir"] / "plan.txt"
    code, out, _ = run(capsys, "plan-classical", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"],
                       "--out", str(plan_file))
    assert code == 0
    assert out.splitlines()[0] == "(!Unstack D C)" and len(out.splitlines()) == 5
    code, out, _ = run(capsys, "validate", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"],
                       "--plan", str(plan_file))
    assert (code, out.strip()) == (0, "valid plan of length 5")


def test_invalid_plan_exit_code(files, capsys):
    plan_file = files["dir"] / "plan.txt"
    plan_file.write_text("(!Putdown D)\n")
    code, _, err = run(capsys, "validate", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"],
                       "--plan", str(plan_file))
    assert code == 3 and "step 1" in err.lower()


def test_unsolvable_exit_code(files, capsys):
    p = files["dir"] / "stuck.pddl"
    p.write_text("(define (problem s) (:domain blocks) (:objects a b - block)"
                 " (:init (on-table a) (on-table b) (clear a) (clear b)) (:goal (on a b)))")
    code, _, _ = run(capsys, "plan-classical", "-d", files["blocks.pddl"], "-p", str(p))
    assert code == 3


def test_landmarks_json(files, capsys):
    code, out, _ = run(capsys, "landmarks", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"],
                       "--format", "json", "--dot", str(files["dir"] / "g.dot"))
    assert code == 0
    data = json.loads(out)
    assert "(clear C)" in [n["atom"] for n in data["nodes"]]
    assert (files["dir"] / "g.dot").read_text().startswith("digraph")


def test_curriculum_text(files, capsys):
    code, out, _ = run(capsys, "curriculum", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"])
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "trace (5 actions):"
    assert lines[7] == "  (1,1) achieve-clear(C)"
    assert lines[-1] == "  (1,5) achieve-clear(A)"


def test_learn_tower4(files, capsys):
    lib_file = files["dir"] / "m.json"
    code, out, _ = run(capsys, "learn", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"],
                       "-o", str(lib_file))
    assert code == 0
    assert out.splitlines()[0].startswith("blocks-4-clear-a: landmarks=")
    lib = MethodLibrary.loads(lib_file.read_text())
    assert [len(m.subtasks) for m in lib][:3] == [1, 2, 2]
    assert lib["m1"].subtasks[0].name == "unstack"


def test_learn_without_problems_keeps_library(files, capsys):
    seed_lib = files["dir"] / "in.json"
    run(capsys, "learn", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"], "-o", str(seed_lib))
    out_lib = files["dir"] / "out.json"
    code, _, _ = run(capsys, "learn", "-d", files["blocks.pddl"], "-m", str(seed_lib), "-o", str(out_lib))
    assert code == 0
    assert out_lib.read_text() == seed_lib.read_text()


def test_pipeline_composition_matches_one_shot(files, capsys):
    d = files["dir"]
    problems = [files["blocks-4.pddl"], files["p0"], files["p1"]]
    args = ["learn", "-d", files["blocks.pddl"]]
    for p in problems:
        args += ["-p", p]
    run(capsys, *args, "-o", str(d / "one.json"))

    chained = args[:]
    for k, p in enumerate(problems):
        run(capsys, "landmarks", "-d", files["blocks.pddl"], "-p", p, "--out", str(d / f"lm{k}.json"))
        run(capsys, "curriculum", "-d", files["blocks.pddl"], "-p", p, "--landmarks", str(d / f"lm{k}.json"),
            "--out", str(d / f"cur{k}.json"))
        chained += ["--curriculum", str(d / f"cur{k}.json")]
    code, _, _ = run(capsys, *chained, "-o", str(d / "chained.json"))
    assert code == 0

    def methods(path):
        data = json.loads(path.read_text())
        for m in data["methods"]:
            m["provenance"].pop("source", None)
        return data

    assert methods(d / "one.json") == methods(d / "chained.json")


def test_learn_keep_going(files, capsys):
    bad = files["dir"] / "bad.pddl"
    bad.write_text("(define (problem")
    out_lib = files["dir"] / "out.json"
    code, out, _ = run(capsys, "learn", "-d", files["blocks.pddl"], "-p", str(bad), "-p", files["blocks-4.pddl"],
                       "--keep-going", "-o", str(out_lib))
    assert code == 2
    assert "skipped" in out.splitlines()[0]
    assert len(MethodLibrary.loads(out_lib.read_text())) > 0
    code, _, _ = run(capsys, "learn", "-d", files["blocks.pddl"], "-p", str(bad), "-o", str(out_lib))
    assert code == 2


def test_plan_htn_with_task_and_trace(files, capsys):
    lib_file = files["dir"] / "m.json"
    run(capsys, "learn", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"], "-o", str(lib_file))
    trace_file = files["dir"] / "trace.json"
    code, out, _ = run(capsys, "plan-htn", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"],
                       "--methods", str(lib_file), "--task", "achieve-clear(A)", "--emit-trace", str(trace_file))
    assert code == 0 and out.splitlines()[-1] == "(!Unstack B A)"
    assert json.loads(trace_file.read_text())["roots"][0]["task"] == "achieve-clear(A)"
    code, _, _ = run(capsys, "plan-htn", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"],
                     "--methods", str(lib_file), "--task", "achieve-on(A, B)")
    assert code == 3  # the library has no method for this task
    code, _, _ = run(capsys, "plan-htn", "-d", files["blocks.pddl"], "-p", files["blocks-4.pddl"],
                     "--methods", str(lib_file), "--task", "not a task")
    assert code == 2


def test_gen_is_seeded(files, capsys):
    a, b = files["dir"] / "a", files["dir"] / "b"
    for d in (a, b):
        code, _, _ = run(capsys, "gen", "--domain", "blocks", "-n", "3", "--seed", "4", "--out-dir", str(d))
        assert code == 0
    assert sorted(p.name for p in a.iterdir()) == ["blocks-000.pddl", "blocks-001.pddl", "blocks-002.pddl"]
    assert all((a / p.name).read_text() == p.read_text() for p in b.iterdir())
    code, out, _ = run(capsys, "parse", "-d", files["blocks.pddl"], "-p", str(a / "blocks-000.pddl"))
    assert code == 0


def test_experiment_subcommand(files, capsys):
    cfg = files["dir"] / "exp.toml"
    cfg.write_text("n_train = 2\nn_test = 2\nn_trials = 1\n[generator_params]\nmax_blocks = 4\n")
    out_dir = files["dir"] / "exp"
    code, out, _ = run(capsys, "experiment", "--config", str(cfg), "--output-dir", str(out_dir), "--seed", "1")
    assert code == 0
    assert out.splitlines()[0].startswith("trial,train_count,fraction_solved")
    assert (out_dir / "metrics.csv").read_text() == out
    bad = files["dir"] / "bad.toml"
    bad.write_text("n_trian = 2\n")
    code, _, err = run(capsys, "experiment", "--config", str(bad))
    assert code == 2 and "n_trian" in err


def test_module_entry_point(files):
    proc = subprocess.run([sys.executable, "-m", "htnlearn", "parse", "-d", files["blocks.pddl"]],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.startswith("domain blocks")
