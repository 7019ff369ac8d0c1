"""Command-line workflows: artifacts, exit codes, determinism, and the
trace-replay audit of the evaluation breakdown."""

import csv
import json
from pathlib import Path

import pytest

import activekg.cli as cli
from activekg.cli import (
    EXIT_OK,
    EXIT_SUITE,
    EXIT_USAGE,
    evaluate,
    load_benchmark,
    main,
    rebuild_model,
    reclassify_rows,
    replay_candidates,
)
from activekg.config import load_config

INI = """[activekg]
n_entities = 60
n_relations = 6
n_items = 12
d = 8
steps = 4
batch_size = 2
rollouts = 8
n_inner = 4
max_depth = 3
hop_distribution = 1:0.5,2:0.3,3:0.2
human_queries = 2
oracle_noise = 0.0
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    ini = root / "small.ini"
    ini.write_text(INI)
    bench = root / "bench"
    run = root / "run"
    assert main(["generate", "--config", str(ini), "--seed", "3", "--out", str(bench)]) == EXIT_OK
    assert main(
        ["train", "--config", str(ini), "--seed", "3", "--benchmark", str(bench), "--out", str(run)]
    ) == EXIT_OK
    return {"root": root, "ini": str(ini), "bench": str(bench), "run": str(run),
            "ckpt": str(run / "checkpoint.npz")}


class TestGenerate:
    def test_artifacts(self, work):
        bench = Path(work["bench"])
        assert (bench / "graph.tsv").exists()
        assert (bench / "items.jsonl").exists()
        assert (bench / "config.ini").exists()

    def test_deterministic_per_seed(self, work, tmp_path):
        out1, out2 = tmp_path / "g1", tmp_path / "g2"
        for out in (out1, out2):
            assert main(["generate", "--config", work["ini"], "--seed", "5", "--out", str(out)]) == EXIT_OK
        assert (out1 / "graph.tsv").read_text() == (out2 / "graph.tsv").read_text()
        assert (out1 / "items.jsonl").read_text() == (out2 / "items.jsonl").read_text()

    def test_zero_items(self, work, tmp_path):
        out = tmp_path / "empty"
        assert main(
            ["generate", "--config", work["ini"], "--items", "0", "--out", str(out)]
        ) == EXIT_OK
        assert (out / "items.jsonl").read_text() == ""

    def test_bad_config_exit_1(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[activekg]\nwhatever = 1\n")
        assert main(["generate", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_USAGE


class TestTrain:
    def test_metrics_rows_equal_steps(self, work):
        rows = Path(work["run"], "metrics.jsonl").read_text().splitlines()
        assert len(rows) == 4

    def test_checkpoint_exists(self, work):
        assert Path(work["ckpt"]).exists()

    def test_zero_steps(self, work, tmp_path):
        out = tmp_path / "t0"
        assert main(
            ["train", "--config", work["ini"], "--seed", "3", "--steps", "0",
             "--benchmark", work["bench"], "--out", str(out)]
        ) == EXIT_OK
        assert (out / "checkpoint.npz").exists()
        assert (out / "metrics.jsonl").read_text() == ""

    def test_missing_benchmark_exit_1(self, work, tmp_path):
        assert main(
            ["train", "--config", work["ini"], "--benchmark", str(tmp_path / "none"),
             "--out", str(tmp_path / "x")]
        ) == EXIT_USAGE


class TestEval:
    def test_report_and_partition(self, work, tmp_path):
        out = tmp_path / "ev"
        code = main(
            ["eval", "--config", work["ini"], "--seed", "3", "--benchmark", work["bench"],
             "--checkpoint", work["ckpt"], "--audit", "--out", str(out)]
        )
        assert code == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["audit"] == "ok"
        assert report["n_items"] == 12
        assert 0.0 <= report["hits_at_1"] <= 1.0
        counts = sum(report["error_modes"][m]["count"] for m in cli.ERROR_MODES)
        assert counts == report["wrong"]
        if report["wrong"]:
            pcts = sum(report["error_modes"][m]["pct"] for m in cli.ERROR_MODES)
            assert pcts == pytest.approx(100.0)

    def test_deterministic(self, work, tmp_path):
        outs = []
        for name in ("e1", "e2"):
            out = tmp_path / name
            main(["eval", "--config", work["ini"], "--seed", "3", "--benchmark", work["bench"],
                  "--checkpoint", work["ckpt"], "--out", str(out)])
            outs.append((out / "report.json").read_text() + (out / "episodes.jsonl").read_text())
        assert outs[0] == outs[1]

    def test_checkpoint_shape_mismatch_exit_1(self, work, tmp_path):
        out = tmp_path / "bad"
        bad_ini = tmp_path / "bad.ini"
        bad_ini.write_text(INI.replace("d = 8", "d = 12"))
        assert main(
            ["eval", "--config", str(bad_ini), "--seed", "3", "--benchmark", work["bench"],
             "--checkpoint", work["ckpt"], "--out", str(out)]
        ) == EXIT_USAGE

    def test_reclassification_matches_recorded(self, work):
        graph, items = load_benchmark(work["bench"])
        cfg = load_config(work["ini"], {"seed": 3})
        model = rebuild_model(cfg, graph, work["ckpt"])
        report, rows = evaluate(model, graph, items, cfg, 3)
        counts = reclassify_rows(graph, rows)  # raises on any disagreement
        assert counts == {m: report["error_modes"][m]["count"] for m in cli.ERROR_MODES}

    def test_replay_candidates_reconstruction(self, work):
        graph, items = load_benchmark(work["bench"])
        cfg = load_config(work["ini"], {"seed": 3})
        model = rebuild_model(cfg, graph, work["ckpt"])
        _, rows = evaluate(model, graph, items, cfg, 3)
        for row in rows:
            assert replay_candidates(graph, row["anchors"], row["committed"]) == row["candidates"]


class TestVerifyCmd:
    def test_fast_suites_exit_0(self, capsys):
        assert main(["verify", "--fast", "--seed", "0"]) == EXIT_OK
        lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("[")]
        assert len(lines) == 6
        assert all(l.startswith("[PASS]") for l in lines)

    def test_perturb_exit_2(self, capsys):
        assert main(["verify", "--fast", "--perturb", "lemma5"]) == EXIT_SUITE
        out = capsys.readouterr().out
        assert "[FAIL] soft_policy_bound" in out


class TestSweep:
    def test_single_point_one_row(self, work, tmp_path):
        out = tmp_path / "sw"
        assert main(
            ["sweep", "--config", work["ini"], "--seed", "3", "--benchmark", work["bench"],
             "--checkpoint", work["ckpt"], "--param", "beta", "--grid", "0.5", "--out", str(out)]
        ) == EXIT_OK
        with (out / "sweep_beta.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["beta"] == "0.5"

    def test_widening_columns(self, work, tmp_path):
        out = tmp_path / "sww"
        assert main(
            ["sweep", "--config", work["ini"], "--seed", "3", "--benchmark", work["bench"],
             "--checkpoint", work["ckpt"], "--param", "widening", "--grid", "1.5:0.3;3:0.6",
             "--out", str(out)]
        ) == EXIT_OK
        with (out / "sweep_widening.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        for row in rows:
            assert set(row) == {"k", "alpha", "avg_nodes", "avg_depth", "avg_branching",
                                "rollout_ms", "hits_at_1"}
            assert float(row["avg_nodes"]) > 0

    def test_lambda_retrain_rows(self, work, tmp_path):
        out = tmp_path / "swl"
        assert main(
            ["sweep", "--config", work["ini"], "--seed", "3", "--benchmark", work["bench"],
             "--checkpoint", work["ckpt"], "--param", "lambdas", "--grid", "0.3:0.5:0.2",
             "--sweep-steps", "2", "--out", str(out)]
        ) == EXIT_OK
        with (out / "sweep_lambda.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1

    def test_bad_grid_exit_1(self, work, tmp_path):
        assert main(
            ["sweep", "--config", work["ini"], "--benchmark", work["bench"],
             "--checkpoint", work["ckpt"], "--param", "widening", "--grid", "1.5",
             "--out", str(tmp_path / "x")]
        ) == EXIT_USAGE


class TestServe:
    def test_fallback_episodes_and_replay(self, work, tmp_path):
        out = tmp_path / "srv"
        code = main(
            ["serve", "--config", work["ini"], "--seed", "3", "--benchmark", work["bench"],
             "--checkpoint", work["ckpt"], "--episodes", "2", "--timeout", "0.2",
             "--port", "0", "--out", str(out)]
        )
        assert code == EXIT_OK
        summary = json.loads((out / "serve_summary.json").read_text())
        assert len(summary) == 2
        assert all(ep["replay_match"] for ep in summary)
        assert all(q["source"] == "interactive-timeout" for ep in summary for q in ep["queries"])
        traces = [json.loads(l) for l in (out / "serve_traces.jsonl").read_text().splitlines()]
        assert {t["episode_id"] for t in traces} == {"ep0", "ep1"}


class TestParser:
    def test_unknown_command_exit_1(self):
        assert main(["frobnicate"]) == EXIT_USAGE

    def test_missing_required_flag_exit_1(self):
        assert main(["train", "--out", "x"]) == EXIT_USAGE
