"""Command-line orchestration: benchmark generation, training, evaluation,
theorem suites, sensitivity sweeps, and the interactive oracle service.

Exit codes: 0 success, 1 validation/usage error, 2 theorem-suite failure.
Every command is deterministic under --seed."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import verify as verify_mod
from .bridge import BridgeError, OracleBridge
from .config import Config, ConfigError, load_config, save_config
from .diffnum import CheckpointError, load_into
from .kg import (
    BenchmarkItem,
    GeneratorError,
    GraphError,
    KnowledgeGraph,
    generate_benchmark,
    load_graph,
    load_items_jsonl,
    save_items_jsonl,
    save_tsv,
)
from .answer import AnswerError
from .logic import RuleError
from .oracle import OracleAnswer, OracleError, objective_value, simulated_answer
from .search import Budgets, ReplayBuffer, SearchConfig, SearchError, run_episode
from .train import Model, TrainError, train_run
from .uncert import AcquisitionConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SUITE = 2

_USAGE_ERRORS = (
    CheckpointError,
    ConfigError,
    OracleError,
    TrainError,
    SearchError,
    GraphError,
    GeneratorError,
    RuleError,
    AnswerError,
    BridgeError,
    FileNotFoundError,
    KeyError,
    ValueError,
)

ERROR_MODES = ("retrieval", "reasoning", "generation")


# ------------------------------------------------------------ shared pieces


def load_benchmark(bench_dir: str | Path) -> tuple[KnowledgeGraph, list[BenchmarkItem]]:
    d = Path(bench_dir)
    graph_path = d / "graph.tsv"
    items_path = d / "items.jsonl"
    if not graph_path.exists() or not items_path.exists():
        raise FileNotFoundError(f"benchmark dir {d} must hold graph.tsv and items.jsonl")
    graph = load_graph(graph_path)
    items = load_items_jsonl(items_path, graph)
    return graph, items


def rebuild_model(cfg: Config, graph: KnowledgeGraph, checkpoint: str | Path | None) -> Model:
    """Same construction path the trainer takes, then checkpoint weights on
    top; key or shape mismatches are validation errors."""
    n_rules = 0 if cfg.variant == "neural_only" else cfg.n_rules
    model = Model.init(
        np.random.default_rng(cfg.seed), graph, cfg.d, h_max=cfg.max_depth, n_rules=n_rules
    )
    if checkpoint is not None:
        load_into(model.params(), checkpoint)
    return model


def _eval_search_config(cfg: Config) -> SearchConfig:
    tau_search = 1e-3 if cfg.variant == "hard_ste" else cfg.tau_search_end
    return SearchConfig(
        k=cfg.k,
        alpha=cfg.alpha,
        c_explore=cfg.c_explore,
        tau_search=tau_search,
        max_depth=cfg.max_depth,
        n_inner=cfg.n_inner,
        a_max=cfg.a_max,
        tau_gumbel=cfg.tau_gumbel_end,
        descent=cfg.descent,
    )


def _acq(cfg: Config) -> AcquisitionConfig:
    return AcquisitionConfig(
        lambda_cost=cfg.lambda_cost,
        c_human=cfg.c_human,
        tau_hop=cfg.tau_hop,
        tau_human=cfg.tau_human,
        beta=cfg.beta,
    )


def _query_row(q, a) -> dict:
    row = {"kind": q.kind, "label": bool(a.label) if isinstance(a.label, bool) else int(a.label)}
    if "relation" in q.payload:
        row["relation"] = int(q.payload["relation"])
    row["source"] = a.source
    return row


def eval_episode(
    model: Model,
    graph: KnowledgeGraph,
    item: BenchmarkItem,
    cfg: Config,
    rng: np.random.Generator,
    oracle,
    query_strategy: str = "adaptive",
):
    buffer = ReplayBuffer()
    ctx = model.context(graph, _acq(cfg), buffer, oracle, query_strategy=query_strategy)
    budgets = Budgets(rollouts=cfg.rollouts, human_queries=cfg.human_queries)
    return run_episode(item, ctx, _eval_search_config(cfg), budgets, rng, with_gold=True), ctx


def evaluate(
    model: Model,
    graph: KnowledgeGraph,
    items: list[BenchmarkItem],
    cfg: Config,
    seed: int,
    oracle=None,
    query_strategy: str = "adaptive",
) -> tuple[dict, list[dict]]:
    """Run one scored episode per item; report Hits@1, query rate, the
    accuracy-minus-annotation-cost objective, and the error-mode breakdown
    over wrong answers."""
    if not items:
        raise ValueError("evaluate: empty benchmark")
    acq = _acq(cfg)
    rows: list[dict] = []
    hits = 0
    queries_total = 0
    objective_sum = 0.0
    mode_counts = dict.fromkeys(ERROR_MODES, 0)
    for idx, item in enumerate(items):
        rng = np.random.default_rng([seed, idx])
        rng_oracle = np.random.default_rng([seed, idx, 1])
        if oracle is None:
            def _oracle(q, _item=item, _rng=rng_oracle):
                return simulated_answer(q, _item, cfg.oracle_noise, _rng, cost=cfg.c_human)
        else:
            def _oracle(q, _item=item):
                return oracle(q, _item)
        res, _ctx = eval_episode(model, graph, item, cfg, rng, _oracle, query_strategy)
        n_q = len(res.human_queries)
        obj = objective_value(bool(res.correct), n_q, acq)
        hits += int(bool(res.correct))
        queries_total += n_q
        objective_sum += obj
        if not res.correct:
            mode_counts[res.error_mode] += 1
        rows.append(
            {
                "item": idx,
                "anchors": [int(a) for a in item.anchors],
                "gold": sorted(int(g) for g in item.gold_answers),
                "predicted": int(res.answers[0]),
                "predicted_name": graph.entities[res.answers[0]],
                "correct": bool(res.correct),
                "error_mode": res.error_mode,
                "committed": [int(r) for r in res.committed],
                "candidates": [int(c) for c in res.answer_dist.candidates],
                "best_path": None
                if res.best_path is None
                else [[int(x) for x in t] for t in res.best_path.triples],
                "n_queries": n_q,
                "queries": [_query_row(q, a) for q, a in res.human_queries],
                "flags": sorted(res.flags),
                "objective": obj,
            }
        )
    n = len(items)
    wrong = n - hits
    report = {
        "n_items": n,
        "hits_at_1": hits / n,
        "mean_queries_per_episode": queries_total / n,
        "objective": objective_sum / n,
        "wrong": wrong,
        "error_modes": {
            mode: {
                "count": mode_counts[mode],
                "pct": (100.0 * mode_counts[mode] / wrong) if wrong else 0.0,
            }
            for mode in ERROR_MODES
        },
    }
    return report, rows


# ------------------------------------------- trace-replay reclassification


def _replay_paths(graph: KnowledgeGraph, anchors, relations, cap: int = 8) -> list[tuple]:
    """Brute-force mirror of the emitter's path enumeration: breadth-first
    chains along the committed relations, same caps, same order."""
    if not relations:
        return []
    partial: list[tuple[tuple[int, int, int], ...]] = [()]
    for r in relations:
        nxt: list[tuple[tuple[int, int, int], ...]] = []
        for chain in partial:
            heads = tuple(sorted(anchors)) if not chain else (chain[-1][2],)
            for h in heads:
                for t in graph.tails(h, r):
                    nxt.append(chain + ((h, r, t),))
                    if len(nxt) >= cap * 4:
                        break
                if len(nxt) >= cap * 4:
                    break
            if len(nxt) >= cap * 4:
                break
        partial = nxt
        if not partial:
            return []
    return partial[:cap]


def replay_candidates(graph: KnowledgeGraph, anchors, committed) -> list[int]:
    """Reconstruct the emitter's candidate set from the committed relation
    sequence alone: anchors, every post-commit frontier, the final frontier,
    and enumerated path endpoints."""
    frontier = frozenset(anchors)
    touched = set(anchors)
    for r in committed:
        frontier = graph.reach(frontier, r)
        touched |= set(frontier)
        if not frontier:
            break
    endpoints = {chain[-1][2] for chain in _replay_paths(graph, anchors, committed)}
    cands = sorted(set(frontier) | touched | endpoints)[:256]
    if not cands:
        cands = sorted(set(anchors))
    return cands


def reclassify_row(graph: KnowledgeGraph, row: dict) -> str | None:
    """Independent error-mode classification from the recorded raw facts."""
    if row["correct"]:
        return None
    gold = set(row["gold"])
    cands = replay_candidates(graph, row["anchors"], row["committed"])
    if cands != row["candidates"]:
        raise ValueError(
            f"item {row['item']}: replayed candidates disagree with the recorded set"
        )
    if not gold & set(cands):
        return "retrieval"
    best = row["best_path"]
    if best is not None and best[-1][2] not in gold:
        return "reasoning"
    return "generation"


def reclassify_rows(graph: KnowledgeGraph, rows: list[dict]) -> dict:
    counts = dict.fromkeys(ERROR_MODES, 0)
    for row in rows:
        mode = reclassify_row(graph, row)
        if mode is None:
            continue
        counts[mode] += 1
        if mode != row["error_mode"]:
            raise ValueError(
                f"item {row['item']}: recorded mode {row['error_mode']!r}, replay says {mode!r}"
            )
    return counts


# ----------------------------------------------------------------- commands


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args, extra: dict | None = None) -> Config:
    overrides: dict = dict(extra or {})
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return load_config(args.config, overrides)


def cmd_generate(args) -> int:
    overrides = {}
    if args.items is not None:
        overrides["n_items"] = args.items
    cfg = _load_cfg(args, overrides)
    out = _out_dir(args)
    graph, items = generate_benchmark(cfg.generator_config())
    for i, item in enumerate(items):
        rels = [t[1] for t in item.gold_paths[0].triples]
        frontier = frozenset(item.anchors)
        for r in rels:
            frontier = graph.reach(frontier, r)
        if frontier != item.gold_answers:
            raise GeneratorError(f"item {i} failed the brute-force solvability audit")
    save_tsv(graph, out / "graph.tsv")
    save_items_jsonl(items, graph, out / "items.jsonl")
    save_config(cfg, out / "config.ini")
    print(
        f"generated {graph.n_entities} entities, {len(graph.triples)} triples, "
        f"{len(items)} items -> {out}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.variant is not None:
        overrides["variant"] = args.variant
    cfg = _load_cfg(args, overrides)
    out = _out_dir(args)
    graph, items = load_benchmark(args.benchmark)
    result = train_run(
        graph,
        items,
        cfg.train_config(),
        schedules=cfg.schedules(),
        metrics_path=out / "metrics.jsonl",
        checkpoint_path=out / "checkpoint.npz",
    )
    save_config(cfg, out / "config.ini")
    status = "diverged (last finite checkpoint kept)" if result.diverged else "done"
    print(
        f"train {status}: {result.steps_done}/{cfg.steps} steps, "
        f"checkpoint -> {result.checkpoint_path}, metrics -> {result.metrics_path}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    graph, items = load_benchmark(args.benchmark)
    model = rebuild_model(cfg, graph, args.checkpoint)
    report, rows = evaluate(model, graph, items, cfg, cfg.seed)
    if args.audit:
        reclassify_rows(graph, rows)  # raises on any disagreement
        report["audit"] = "ok"
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    with (out / "episodes.jsonl").open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"hits@1 {report['hits_at_1']:.4f}")
    print(f"queries/episode {report['mean_queries_per_episode']:.3f}")
    print(f"objective {report['objective']:.4f}")
    for mode in ERROR_MODES:
        m = report["error_modes"][mode]
        print(f"error_mode {mode}: {m['count']} ({m['pct']:.1f}% of wrong)")
    return EXIT_OK


def cmd_verify(args) -> int:
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    results = verify_mod.run_all(
        seed=args.seed if args.seed is not None else 0,
        perturb=args.perturb,
        include_slow=not args.fast,
        out_dir=out,
    )
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_SUITE


def _parse_grid(raw: str, arity: int, name: str) -> list[tuple[float, ...]]:
    points = []
    for part in raw.split(";" if arity > 1 else ","):
        part = part.strip()
        if not part:
            continue
        vals = part.split(":") if arity > 1 else [part]
        if len(vals) != arity:
            raise ConfigError(f"{name} grid point {part!r} needs {arity} value(s)")
        try:
            points.append(tuple(float(v) for v in vals))
        except ValueError:
            raise ConfigError(f"{name} grid point {part!r} is not numeric") from None
    if not points:
        raise ConfigError(f"{name} grid is empty")
    return points


def _episode_tree_stats(rows_trace: list[dict]) -> tuple[float, float]:
    """(mean rollout depth, mean expansions per expanding node) from a trace."""
    depths = []
    expansions: dict[int, int] = {}
    for rec in rows_trace:
        if rec.get("action") == "rollout":
            depths.append(rec["rollout"]["depth"])
            for step in rec["rollout"]["steps"]:
                if step.get("expanded"):
                    expansions[step["node_id"]] = expansions.get(step["node_id"], 0) + 1
    depth = float(np.mean(depths)) if depths else 0.0
    branching = float(np.mean(list(expansions.values()))) if expansions else 0.0
    return depth, branching


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    graph, items = load_benchmark(args.benchmark)
    model = rebuild_model(cfg, graph, args.checkpoint)
    seed = cfg.seed

    if args.param == "beta":
        grid = _parse_grid(args.grid or "0.1,0.3,1,3,10", 1, "beta")
        path = out / "sweep_beta.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beta", "hits_at_1", "queries_per_episode", "objective"])
            for (beta,) in grid:
                c = load_config(args.config, {"seed": seed, "beta": beta})
                report, _ = evaluate(model, graph, items, c, seed)
                w.writerow(
                    [
                        f"{beta:g}",
                        f"{report['hits_at_1']:.4f}",
                        f"{report['mean_queries_per_episode']:.4f}",
                        f"{report['objective']:.4f}",
                    ]
                )
    elif args.param == "tau":
        grid = _parse_grid(args.grid or "0.1,0.3,0.7,1.5", 1, "tau")
        path = out / "sweep_tau.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau_gumbel", "hits_at_1", "queries_per_episode", "objective"])
            for (tau,) in grid:
                c = load_config(args.config, {"seed": seed, "tau_gumbel_end": tau})
                report, _ = evaluate(model, graph, items, c, seed)
                w.writerow(
                    [
                        f"{tau:g}",
                        f"{report['hits_at_1']:.4f}",
                        f"{report['mean_queries_per_episode']:.4f}",
                        f"{report['objective']:.4f}",
                    ]
                )
    elif args.param == "widening":
        grid = _parse_grid(args.grid or "1.5:0.3;2.5:0.5;4:0.7", 2, "widening")
        path = out / "sweep_widening.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["k", "alpha", "avg_nodes", "avg_depth", "avg_branching", "rollout_ms", "hits_at_1"]
            )
            for k, alpha in grid:
                c = load_config(args.config, {"seed": seed, "k": k, "alpha": alpha})
                nodes, depths, branchings, times, hits = [], [], [], [], 0
                for idx, item in enumerate(items):
                    rng = np.random.default_rng([seed, idx])
                    rng_o = np.random.default_rng([seed, idx, 1])
                    t0 = time.perf_counter()
                    res, ctx = eval_episode(
                        model, graph, item, c, rng,
                        lambda q, _i=item, _r=rng_o: simulated_answer(q, _i, c.oracle_noise, _r, cost=c.c_human),
                    )
                    times.append(1000.0 * (time.perf_counter() - t0))
                    nodes.append(ctx._node_seq)
                    d_, b_ = _episode_tree_stats(res.trace)
                    depths.append(d_)
                    branchings.append(b_)
                    hits += int(bool(res.correct))
                w.writerow(
                    [
                        f"{k:g}",
                        f"{alpha:g}",
                        f"{np.mean(nodes):.2f}",
                        f"{np.mean(depths):.3f}",
                        f"{np.mean(branchings):.3f}",
                        f"{np.mean(times):.2f}",
                        f"{hits / len(items):.4f}",
                    ]
                )
    elif args.param == "lambdas":
        grid = _parse_grid(args.grid or "0.3:0.5:0.2;1:1:1;0:0:0", 3, "lambdas")
        path = out / "sweep_lambda.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda_explore", "lambda_symbolic", "lambda_active", "hits_at_1", "objective"])
            for l1, l2, l3 in grid:
                c = load_config(
                    args.config,
                    {
                        "seed": seed,
                        "lambda_explore": l1,
                        "lambda_symbolic": l2,
                        "lambda_active": l3,
                        "steps": args.sweep_steps,
                    },
                )
                m = rebuild_model(c, graph, args.checkpoint)
                train_run(graph, items, c.train_config(), schedules=c.schedules(), model=m)
                report, _ = evaluate(m, graph, items, c, seed)
                w.writerow(
                    [
                        f"{l1:g}",
                        f"{l2:g}",
                        f"{l3:g}",
                        f"{report['hits_at_1']:.4f}",
                        f"{report['objective']:.4f}",
                    ]
                )
    else:
        raise ConfigError(f"unknown sweep parameter {args.param!r}")
    print(f"sweep {args.param} -> {path}")
    return EXIT_OK


# --------------------------------------------------------------- cmd_serve


def recorded_answers(rows: list[tuple]) -> list[tuple[str, object]]:
    """(kind, label) feed for a replay of the episode's oracle interactions."""
    return [(q.kind, a.label) for q, a in rows]


def make_replay_oracle(feed: list[tuple[str, object]], c_human: float):
    """Answers successive queries from the recorded feed; kind mismatches and
    exhaustion are errors (the replayed trajectory must ask the same things)."""
    it = iter(list(feed))

    def _oracle(q):
        try:
            kind, label = next(it)
        except StopIteration:
            raise OracleError(f"replay feed exhausted at query {q.query_id}") from None
        if kind != q.kind:
            raise OracleError(f"replay feed has {kind!r}, episode asked {q.kind!r}")
        return OracleAnswer(query_id=q.query_id, label=label, cost=c_human, source="interactive")

    return _oracle


def serve_episode(
    model: Model,
    graph: KnowledgeGraph,
    item: BenchmarkItem,
    cfg: Config,
    seed: int,
    idx: int,
    oracle,
):
    rng = np.random.default_rng([seed, idx])
    buffer = ReplayBuffer()
    ctx = model.context(graph, _acq(cfg), buffer, oracle)
    budgets = Budgets(rollouts=cfg.rollouts, human_queries=cfg.human_queries)
    return run_episode(item, ctx, _eval_search_config(cfg), budgets, rng, with_gold=True)


def cmd_serve(args) -> int:
    cfg = _load_cfg(args)
    out = _out_dir(args)
    graph, items = load_benchmark(args.benchmark)
    model = rebuild_model(cfg, graph, args.checkpoint)
    seed = cfg.seed
    n_episodes = len(items) if args.episodes is None else min(args.episodes, len(items))

    bridge = OracleBridge(host=args.host, port=args.port, timeout=args.timeout, c_human=cfg.c_human)
    bridge.start()
    print(f"serving oracle bridge on http://{args.host}:{bridge.port}", flush=True)
    summaries = []
    try:
        for idx in range(n_episodes):
            item = items[idx]
            episode_id = f"ep{idx}"
            rng_o = np.random.default_rng([seed, idx, 1])
            bridge.fallback = lambda q, _i=item, _r=rng_o: simulated_answer(
                q, _i, cfg.oracle_noise, _r, cost=cfg.c_human
            )
            bridge.begin_episode(episode_id)
            res = serve_episode(model, graph, item, cfg, seed, idx, bridge.ask)
            for rec in res.trace:
                bridge.publish_trace(episode_id, rec)
            feed = recorded_answers(res.human_queries)
            replay = serve_episode(
                model, graph, item, cfg, seed, idx, make_replay_oracle(feed, cfg.c_human)
            )
            summary = {
                "episode_id": episode_id,
                "item": idx,
                "answer": graph.entities[res.answers[0]],
                "correct": bool(res.correct),
                "n_queries": len(res.human_queries),
                "queries": [_query_row(q, a) for q, a in res.human_queries],
                "replay_match": replay.answers == res.answers
                and replay.committed == res.committed,
            }
            summaries.append(summary)
            bridge.end_episode(episode_id, {"answer": summary["answer"], "correct": summary["correct"]})
            print(
                f"{episode_id}: answer {summary['answer']} "
                f"({'correct' if summary['correct'] else 'wrong'}), "
                f"{summary['n_queries']} queries, replay_match={summary['replay_match']}",
                flush=True,
            )
        with (out / "serve_traces.jsonl").open("w") as fh:
            for idx in range(n_episodes):
                for rec in bridge.trace_of(f"ep{idx}") or []:
                    fh.write(json.dumps({"episode_id": f"ep{idx}", "record": rec}) + "\n")
        (out / "serve_summary.json").write_text(
            json.dumps(summaries, indent=2, sort_keys=True) + "\n"
        )
        if args.hold:
            print("episodes done; bridge stays up (interrupt to stop)", flush=True)
            try:
                while True:
                    time.sleep(0.5)
            except KeyboardInterrupt:
                pass
    finally:
        bridge.stop()
    mismatches = [s["episode_id"] for s in summaries if not s["replay_match"]]
    if mismatches:
        print(f"error: replay mismatch in {mismatches}", file=sys.stderr)
        return EXIT_SUITE
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activekg",
        description="Active knowledge-graph QA: generate, train, eval, verify, sweep, serve.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("generate", help="build a synthetic benchmark")
    common(p)
    p.add_argument("--items", type=int, default=None, help="override item count")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="joint training run")
    common(p)
    p.add_argument("--benchmark", required=True, help="dir with graph.tsv + items.jsonl")
    p.add_argument("--steps", type=int, default=None, help="override step count")
    p.add_argument("--variant", default=None, help="full|neural_only|fixed_rules|hard_ste|random_queries")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a benchmark")
    common(p)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audit", action="store_true", help="cross-check error modes by trace replay")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the theorem suites")
    p.add_argument("--config", default=None, help="unused; accepted for symmetry")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="artifact directory (optional)")
    p.add_argument("--perturb", default=None, choices=["lemma5"], help="fault injection self-test")
    p.add_argument("--fast", action="store_true", help="skip the slow convergence-trend suite")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="sensitivity sweeps to CSV")
    common(p)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--param", required=True, choices=["beta", "tau", "widening", "lambdas"])
    p.add_argument("--grid", default=None, help="comma list; ':' inside multi-value points, ';' between")
    p.add_argument("--sweep-steps", type=int, default=25, help="training steps per lambda point")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="interactive oracle service over HTTP")
    common(p)
    p.add_argument("--benchmark", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--timeout", type=float, default=120.0, help="seconds before simulated fallback")
    p.add_argument("--episodes", type=int, default=None, help="episode count (default: all items)")
    p.add_argument("--hold", action="store_true", help="keep serving after episodes finish")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        msg = exc.args[0] if exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
