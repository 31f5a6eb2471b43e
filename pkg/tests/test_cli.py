import csv
import json
import subprocess
import sys

import jsonschema
import pytest

from exflow.cli import RunManifest, main
from exflow.placement import PLACEMENT_SCHEMA, Placement
from exflow.trace_model import read_trace


def gen(path, experts=8, layers=4, tokens=600, alpha=0.8, groups=4, seed=1, shuffle=None):
    argv = ["gen", "--experts", str(experts), "--layers", str(layers), "--tokens", str(tokens),
            "--alpha", str(alpha), "--groups", str(groups), "--seed", str(seed), "--out", str(path)]
    if shuffle is not None:
        argv += ["--shuffle-seed", str(shuffle)]
    assert main(argv) == 0
    return path


def load(path):
    return json.loads(path.read_text())


class TestGen:
    def test_byte_identical(self, tmp_path):
        a = gen(tmp_path / "a.trace", seed=5, shuffle=2)
        b = gen(tmp_path / "b.trace", seed=5, shuffle=2)
        assert a.read_bytes() == b.read_bytes()
        assert read_trace(a).num_tokens == 600

    def test_manifest(self, tmp_path):
        out = gen(tmp_path / "t.trace")
        m = RunManifest.from_dict(load(tmp_path / "t.trace.manifest.json"))
        assert m.command == "gen"
        assert m.params["experts"] == 8 and m.outputs == [str(out)]
        assert RunManifest.from_dict(json.loads(json.dumps(m.to_dict()))) == m

    def test_bad_config_exits_2(self, tmp_path, capsys):
        argv = ["gen", "--experts", "8", "--layers", "3", "--tokens", "10", "--alpha", "0.5",
                "--groups", "3", "--out", str(tmp_path / "x.trace")]
        assert main(argv) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["gen", "--experts", "8"])
        assert exc.value.code == 2


class TestAffinity:
    def test_sticky_singletons(self, tmp_path):
        tr = gen(tmp_path / "t.trace", alpha=1.0, groups=8)
        assert main(["affinity", "--trace", str(tr), "--out-dir", str(tmp_path / "aff")]) == 0
        summary = load(tmp_path / "aff" / "summary.json")
        assert len(summary["pairs"]) == 3
        for pair in summary["pairs"]:
            assert all(v == 1.0 for v, s in zip(pair["row_max"], pair["seen"]) if s)
        assert (tmp_path / "aff" / "affinity_gap1_layer02.csv").exists()
        assert (tmp_path / "aff" / "manifest.json").exists()

    def test_uniform_rows(self, tmp_path):
        tr = gen(tmp_path / "t.trace", tokens=20_000, alpha=0.0)
        assert main(["affinity", "--trace", str(tr), "--gap", "2", "--out-dir", str(tmp_path / "aff")]) == 0
        with open(tmp_path / "aff" / "affinity_gap2_layer00.csv") as fh:
            rows = [[float(v) for v in r] for r in csv.reader(fh)]
        assert all(abs(v - 1 / 8) <= 0.02 for r in rows for v in r)

    def test_gap_too_large(self, tmp_path):
        tr = gen(tmp_path / "t.trace")
        assert main(["affinity", "--trace", str(tr), "--gap", "4", "--out-dir", str(tmp_path / "aff")]) == 2

    def test_missing_trace_exits_1(self, tmp_path):
        assert main(["affinity", "--trace", str(tmp_path / "none"), "--out-dir", str(tmp_path / "aff")]) == 1

    def test_malformed_trace_exits_1(self, tmp_path):
        bad = tmp_path / "bad.trace"
        bad.write_text("EXFLOW-TRACE v1\nE 2 L 2\n0 5\n")
        assert main(["affinity", "--trace", str(bad), "--out-dir", str(tmp_path / "aff")]) == 1


class TestSolve:
    def test_outputs(self, tmp_path):
        tr = gen(tmp_path / "t.trace", shuffle=3)
        out = tmp_path / "pl.json"
        assert main(["solve", "--trace", str(tr), "--nodes", "2", "--gpus-per-node", "2", "--out", str(out)]) == 0
        doc = load(out)
        jsonschema.validate(doc, PLACEMENT_SCHEMA)
        report = load(tmp_path / "pl.json.report.json")["solve_report"]
        assert report["solver"] == "staged"
        assert report["optimality_gap"] is not None and report["optimality_gap"] >= 0
        assert Placement.from_dict(doc).num_gpus == 4

    def test_deterministic(self, tmp_path):
        tr = gen(tmp_path / "t.trace", experts=16, shuffle=3)
        outs = []
        for name in ("a.json", "b.json"):
            argv = ["solve", "--trace", str(tr), "--nodes", "2", "--gpus-per-node", "2", "--solver", "anneal",
                    "--restarts", "2", "--seed", "4", "--out", str(tmp_path / name)]
            assert main(argv) == 0
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]

    def test_planted_sticky_objective_zero(self, tmp_path):
        tr = gen(tmp_path / "t.trace", experts=16, alpha=1.0, groups=4, shuffle=9)
        out = tmp_path / "pl.json"
        assert main(["solve", "--trace", str(tr), "--nodes", "2", "--gpus-per-node", "2", "--out", str(out)]) == 0
        assert load(tmp_path / "pl.json.report.json")["solve_report"]["objective"] == 0

    def test_state_cap(self, tmp_path, capsys):
        tr = gen(tmp_path / "t.trace", experts=16)
        argv = ["solve", "--trace", str(tr), "--nodes", "1", "--gpus-per-node", "2", "--solver", "exact",
                "--out", str(tmp_path / "pl.json")]
        assert main(argv) == 2
        assert "anneal" in capsys.readouterr().err

    def test_indivisible_topology(self, tmp_path):
        tr = gen(tmp_path / "t.trace")
        argv = ["solve", "--trace", str(tr), "--nodes", "3", "--gpus-per-node", "1", "--out", str(tmp_path / "p.json")]
        assert main(argv) == 2


class TestSimulate:
    def test_fixture(self, tmp_path, capsys):
        out = tmp_path / "sim.json"
        assert main(["simulate", "--fixture", "two-token", "--out", str(out)]) == 0
        rows = {r["mode"]: r["report"]["crossings"] for r in load(out)["rows"]}
        assert rows == {"vanilla": 10, "coherent": 4}
        assert "latency_ratio" in capsys.readouterr().out

    def test_single_mode(self, tmp_path):
        out = tmp_path / "sim.json"
        assert main(["simulate", "--fixture", "two-token", "--mode", "coherent", "--out", str(out)]) == 0
        assert load(out)["reports"]["contiguous"]["crossings"] == 4

    def test_both_modes_dominance_and_single_node(self, tmp_path):
        tr = gen(tmp_path / "t.trace", shuffle=1)
        pl = tmp_path / "pl.json"
        assert main(["solve", "--trace", str(tr), "--nodes", "1", "--gpus-per-node", "4", "--out", str(pl)]) == 0
        out = tmp_path / "sim.json"
        argv = ["simulate", "--trace", str(tr), "--nodes", "1", "--gpus-per-node", "4", "--placement",
                f"solved={pl}", "--placement", "contiguous", "--placement", "random", "--out", str(out)]
        assert main(argv) == 0
        rows = load(out)["rows"]
        assert {r["placement"] for r in rows} == {"solved", "contiguous", "random"}
        for van, coh in zip(rows[::2], rows[1::2]):
            assert coh["report"]["crossings"] <= van["report"]["crossings"]
        assert all(r["report"]["hops_inter_node"] == 0 for r in rows)

    def test_shape_mismatch_exits_1(self, tmp_path):
        tr = gen(tmp_path / "t.trace")
        argv = ["simulate", "--trace", str(tr), "--nodes", "1", "--gpus-per-node", "4",
                "--placement", f"other={tmp_path / 'missing.json'}", "--out", str(tmp_path / "s.json")]
        assert main(argv) == 1
        other = gen(tmp_path / "o.trace", experts=16)
        pl = tmp_path / "pl.json"
        assert main(["solve", "--trace", str(other), "--nodes", "1", "--gpus-per-node", "4",
                     "--solver", "anneal", "--out", str(pl)]) == 0
        argv[-3] = f"other={pl}"
        assert main(argv) == 1


class TestSweepAndHoldout:
    def test_sweep_full_size_matches_full_solve(self, tmp_path):
        tr = gen(tmp_path / "t.trace", tokens=300, shuffle=2)
        out = tmp_path / "sweep.csv"
        argv = ["sweep", "--trace", str(tr), "--sizes", "100,300", "--repeats", "2", "--nodes", "2",
                "--gpus-per-node", "2", "--out", str(out)]
        assert main(argv) == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert [r["sample_size"] for r in rows] == ["100", "300"]
        assert rows[1]["locality_gpu_mean"] == rows[1]["full_locality_gpu"]
        assert float(rows[1]["locality_gpu_std"]) == 0.0

    def test_holdout_self(self, tmp_path):
        tr = gen(tmp_path / "t.trace", shuffle=2)
        out = tmp_path / "h.json"
        assert main(["holdout", "--profile-trace", str(tr), "--eval-trace", str(tr), "--nodes", "2",
                     "--gpus-per-node", "2", "--out", str(out)]) == 0
        assert load(out)["ratio"] == {"intra_gpu": 1.0, "intra_node": 1.0}

    def test_holdout_mismatched_experts(self, tmp_path):
        a = gen(tmp_path / "a.trace")
        b = gen(tmp_path / "b.trace", experts=16)
        rc = main(["holdout", "--profile-trace", str(a), "--eval-trace", str(b), "--nodes", "2",
                   "--gpus-per-node", "2", "--out", str(tmp_path / "h.json")])
        assert rc == 1


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "exflow", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.startswith("exflow ")
