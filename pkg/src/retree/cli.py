"""Command-line entry point: ``retree <command> ...``.

Exit codes: 0 success, 2 input error, 3 completion endpoint failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from functools import partial
from typing import Any, Callable, Iterable, Optional, Sequence

from retree import __version__
from retree.ingest import (
    EndpointError,
    IngestError,
    SamplerConfig,
    assemble_tree,
    group_by_query,
    integer_verifier,
    read_records,
    sample_branched,
)
from retree.io import InputError, provenance, read_jsonl, read_trees, write_csv, write_jsonl, write_trees
from retree.mcn import Unattainable, mcn
from retree.rscore import QueryScore, Semantics, query_rscore
from retree.schedule import OMEGA_PRESETS, ScheduleParams, build_schedule
from retree.simulate import SimRunConfig, SimTreeSpec, generate_cohort, run_training_sim, summarize
from retree.tree import ReasoningTree, TreeError, validate

log = logging.getLogger("retree")

EXIT_INPUT = 2
EXIT_ENDPOINT = 3

METRIC_ALIASES = {"sum": "rscore_sum", "seq": "rscore_seq", "rscore_sum": "rscore_sum", "rscore_seq": "rscore_seq", "acc": "acc"}

# keys that name files or execution resources; they do not change results
NON_SEMANTIC_KEYS = {"trees", "trajectories", "scores", "out", "scores_out", "summary", "prompts", "workers", "concurrency"}


@dataclass
class PipelineConfig:
    preset: str = "default"
    # tree shape
    k: int = 4
    d: int = 4
    l: int = 200
    strict: bool = False
    # scoring
    budget: int = 4
    semantics: str = "fix"
    metric: str = "rscore_sum"
    mass_preserving: bool = False
    mcn_target: float = 0.9
    min_base_acc: float = 0.0
    # schedule
    epochs: int = 10
    omega_min: float = 0.5
    omega_max: float = 2.0
    gamma: str = "sigmoid"
    normalize: bool = False
    queries: Optional[list] = None
    # sampler
    endpoint: Optional[str] = None
    model: Optional[str] = None
    temperature: float = 1.0
    top_p: float = 1.0
    max_tokens: int = 4096
    timeout: float = 120.0
    retries: int = 3
    concurrency: int = 8
    seed: Optional[int] = None
    # paths
    trees: Optional[str] = None
    trajectories: Optional[str] = None
    scores: Optional[str] = None
    prompts: Optional[str] = None
    out: Optional[str] = None
    scores_out: Optional[str] = None
    summary: Optional[str] = None
    workers: int = 1

    def semantic_dict(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if k not in NON_SEMANTIC_KEYS}


PRESETS: dict[str, dict[str, Any]] = {
    "default": {},
    "narrow": {"omega_min": OMEGA_PRESETS["narrow"][0], "omega_max": OMEGA_PRESETS["narrow"][1]},
}


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Preset, then config file, then explicit flags."""
    known = {f.name for f in fields(PipelineConfig)}
    file_cfg: dict[str, Any] = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot load config {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise InputError("config must be a JSON object")
        unknown = sorted(set(file_cfg) - known)
        if unknown:
            raise InputError(f"unknown config key(s): {', '.join(unknown)}")
    flags = {k: v for k, v in vars(args).items() if k in known and v is not None}
    preset = flags.get("preset", file_cfg.get("preset", "default"))
    if preset not in PRESETS:
        raise InputError(f"unknown preset {preset!r}")
    merged = {**PRESETS[preset], **file_cfg, **flags, "preset": preset}
    cfg = PipelineConfig(**merged)
    if cfg.seed is None and os.environ.get("RETREE_SEED"):
        try:
            cfg.seed = int(os.environ["RETREE_SEED"])
        except ValueError:
            raise InputError("RETREE_SEED must be an integer") from None
    if cfg.metric not in METRIC_ALIASES:
        raise InputError(f"unknown metric {cfg.metric!r}")
    cfg.metric = METRIC_ALIASES[cfg.metric]
    try:
        cfg.semantics = Semantics.parse(cfg.semantics).value
    except ValueError as exc:
        raise InputError(str(exc)) from None
    return cfg


def _header(cfg: PipelineConfig, command: str) -> dict:
    return provenance({"command": command, **cfg.semantic_dict()}, cfg.seed)


def _require(value: Optional[str], flag: str) -> str:
    if not value:
        raise InputError(f"missing required {flag}")
    return value


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# -- build ----------------------------------------------------------------------


def _build_trees(cfg: PipelineConfig) -> tuple[list[ReasoningTree], dict]:
    path = _require(cfg.trajectories, "--trajectories")
    try:
        records = read_records(path)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    except IngestError as exc:
        raise InputError(f"{path}: {exc}") from None
    if not records:
        raise InputError("no records")
    trees = []
    for qid, recs in sorted(group_by_query(records).items()):
        try:
            tree = assemble_tree(qid, recs, cfg.k, cfg.d)
        except IngestError as exc:
            raise InputError(f"query {qid}: {exc}") from None
        report = validate(tree, strict=cfg.strict)
        if not report.ok:
            raise InputError(f"query {qid}: {report}")
        trees.append(tree)
    correct = sum(t.counts()[0] for t in trees)
    total = sum(t.counts()[1] for t in trees)
    summary = {
        "queries": len(trees),
        "ragged": sum(t.ragged for t in trees),
        "leaves": total,
        "correct_leaves": correct,
        "label_balance": correct / total,
        "base_acc": {t.query_id: float(t.base_acc) for t in trees},
    }
    return trees, summary


def cmd_build(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    trees, summary = _build_trees(cfg)
    write_trees(_require(cfg.out, "--out"), trees, _header(cfg, "build"))
    if cfg.summary:
        write_jsonl(cfg.summary, [summary], _header(cfg, "build"))
    print(json.dumps(summary, sort_keys=True))
    return 0


# -- score ----------------------------------------------------------------------


def _score_one(tree: ReasoningTree, budget: int, semantics: str, mass_preserving: bool) -> dict:
    return query_rscore(tree, budget, semantics, mass_preserving).to_dict()


def _score_trees(trees: Sequence[ReasoningTree], cfg: PipelineConfig) -> list[dict]:
    fn = partial(_score_one, budget=cfg.budget, semantics=cfg.semantics, mass_preserving=cfg.mass_preserving)
    try:
        rows = _map(fn, list(trees), cfg.workers)
    except TreeError as exc:
        raise InputError(str(exc)) from None
    for row in rows:
        row["metric"] = cfg.metric
        row["score"] = row["base_acc"] if cfg.metric == "acc" else row[cfg.metric]
    return rows


def _load_trees(cfg: PipelineConfig) -> list[ReasoningTree]:
    if cfg.trees:
        trees = read_trees(cfg.trees)
    elif cfg.trajectories:
        trees, _ = _build_trees(cfg)
    else:
        raise InputError("missing required --trees")
    if not trees:
        raise InputError("no trees")
    for t in trees:
        report = validate(t, strict=cfg.strict)
        if not report.ok:
            raise InputError(f"query {t.query_id}: {report}")
    return trees


def cmd_score(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    rows = _score_trees(_load_trees(cfg), cfg)
    write_jsonl(_require(cfg.out, "--out"), rows, _header(cfg, "score"))
    return 0


# -- mcn ------------------------------------------------------------------------


def _mcn_one(tree: ReasoningTree, target: float, semantics: str) -> Optional[int]:
    v = mcn(tree, target, semantics)
    return None if v is Unattainable else v


def cmd_mcn(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    trees = [t for t in _load_trees(cfg) if float(t.base_acc) >= cfg.min_base_acc]
    values = _map(partial(_mcn_one, target=cfg.mcn_target, semantics=cfg.semantics), trees, cfg.workers)
    rows = [
        {
            "query_id": t.query_id,
            "target": cfg.mcn_target,
            "mcn": "unattainable" if v is None else v,
            "base_acc": float(t.base_acc),
        }
        for t, v in zip(trees, values)
    ]
    write_csv(_require(cfg.out, "--out"), ["query_id", "target", "mcn", "base_acc"], rows, _header(cfg, "mcn"))
    return 0


# -- schedule -------------------------------------------------------------------


def _schedule_params(cfg: PipelineConfig) -> ScheduleParams:
    try:
        return ScheduleParams(cfg.epochs, cfg.omega_min, cfg.omega_max, cfg.gamma, cfg.metric, cfg.normalize)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _metric_scores(rows: Iterable[dict], metric: str) -> dict[str, float]:
    scores = {}
    for row in rows:
        q = QueryScore.from_dict(row)
        if q.query_id in scores:
            raise InputError(f"duplicate score for query {q.query_id}")
        value = {"rscore_sum": q.rscore_sum, "rscore_seq": q.rscore_seq, "acc": q.base_acc}[metric]
        scores[q.query_id] = float(value)
    return scores


def _check_listed(scores: dict[str, float], cfg: PipelineConfig) -> dict[str, float]:
    if cfg.queries is None:
        return scores
    missing = [q for q in cfg.queries if q not in scores]
    if missing:
        raise InputError(f"unscored query: {', '.join(map(str, missing))}")
    return {q: scores[q] for q in cfg.queries}


def cmd_schedule(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    params = _schedule_params(cfg)
    path = _require(cfg.scores, "--scores")
    try:
        scores = _metric_scores((doc for _, doc in read_jsonl(path)), cfg.metric)
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, InputError):
            raise
        raise InputError(f"{path}: malformed score record ({exc})") from None
    if not scores:
        raise InputError("no scores")
    entries = build_schedule(_check_listed(scores, cfg), params)
    write_jsonl(_require(cfg.out, "--out"), (e.to_dict() for e in entries), _header(cfg, "schedule"))
    return 0


# -- pipeline -------------------------------------------------------------------


def cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    params = _schedule_params(cfg)
    out = _require(cfg.out, "--out")
    rows = _score_trees(_load_trees(cfg), cfg)
    scores = {row["query_id"]: float(row["score"]) for row in rows}
    entries = build_schedule(_check_listed(scores, cfg), params)
    header = _header(cfg, "pipeline")
    if cfg.scores_out:
        write_jsonl(cfg.scores_out, rows, header)
    write_jsonl(out, (e.to_dict() for e in entries), header)
    return 0


# -- sample ---------------------------------------------------------------------


def cmd_sample(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    prompts = read_jsonl(_require(cfg.prompts, "--prompts"))
    try:
        sampler = SamplerConfig(
            endpoint_url=_require(cfg.endpoint, "--endpoint"),
            model_name=_require(cfg.model, "--model"),
            k=cfg.k,
            d=cfg.d,
            l=cfg.l,
            temperature=cfg.temperature,
            top_p=cfg.top_p,
            max_tokens_per_segment=cfg.max_tokens,
            request_timeout=cfg.timeout,
            max_retries=cfg.retries,
            concurrency=cfg.concurrency,
            seed=cfg.seed or 0,
            backoff=float(os.environ.get("RETREE_BACKOFF", 0.5)),
        )
    except ValueError as exc:
        raise InputError(str(exc)) from None
    records = []
    incomplete = []
    for lineno, doc in prompts:
        try:
            qid, prompt, answer = str(doc["query_id"]), str(doc["prompt"]), int(doc["answer"])
        except (KeyError, TypeError, ValueError):
            raise InputError(f"{cfg.prompts}:{lineno}: need query_id, prompt and integer answer") from None
        try:
            records.extend(sample_branched(sampler, prompt, integer_verifier(answer), qid))
        except EndpointError as exc:
            log.error("%s", exc)
            records.extend(exc.partial)
            incomplete.append(qid)
    header = _header(cfg, "sample")
    header["incomplete"] = incomplete
    write_jsonl(_require(cfg.out, "--out"), (r.to_json() for r in records), header)
    return EXIT_ENDPOINT if incomplete else 0


# -- simulate -------------------------------------------------------------------


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot load {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: expected a JSON object")
    return doc


def _cohorts(doc: dict) -> list[ReasoningTree]:
    base_seed = doc.get("seed", 0)
    specs = doc.get("cohorts", [doc])
    trees = []
    allowed = {f.name for f in fields(SimTreeSpec)} | {"name", "count"}
    for i, c in enumerate(specs):
        unknown = set(c) - allowed - {"cohorts"}
        if unknown:
            raise InputError(f"unknown tree spec key(s): {', '.join(sorted(unknown))}")
        kw = {f.name: c[f.name] for f in fields(SimTreeSpec) if f.name in c}
        kw.setdefault("seed", base_seed)
        try:
            spec = SimTreeSpec(**kw)
        except (TypeError, ValueError) as exc:
            raise InputError(f"cohort {i}: {exc}") from None
        trees.extend(generate_cohort(spec, int(c.get("count", 1)), str(c.get("name", f"c{i}"))))
    return trees


def cmd_simulate(args: argparse.Namespace) -> int:
    spec_doc = _load_json(args.spec)
    run_doc = _load_json(args.run)
    if args.seed is not None:
        run_doc["seed"] = args.seed
    elif "seed" not in run_doc and os.environ.get("RETREE_SEED"):
        run_doc["seed"] = int(os.environ["RETREE_SEED"])
    try:
        run_cfg = SimRunConfig(**run_doc)
    except (TypeError, ValueError) as exc:
        raise InputError(f"run config: {exc}") from None
    trees = _cohorts(spec_doc)
    result = run_training_sim(trees, run_cfg)
    header = provenance({"command": "simulate", "spec": spec_doc, "run": dataclasses.asdict(run_cfg)}, run_cfg.seed)
    cols = ["step", "query_id", "acc", "mcn", "rscore_sum", "rscore_seq", "selected"]
    write_csv(args.out, cols, (dataclasses.asdict(r) for r in result.rows), header)
    if args.summary:
        rows = summarize(result)
        write_csv(args.summary, list(rows[0]), rows, header)
    return 0


# -- argument parsing -----------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config document; flags override it")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)


def _add_tree_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trees", help="tree manifest (JSONL, one tree per line)")
    p.add_argument("--trajectories", help="trajectory JSONL to build trees from")
    p.add_argument("--k", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--strict", action="store_true", default=None, help="reject ragged trees")


def _add_scoring(p: argparse.ArgumentParser) -> None:
    p.add_argument("--budget", type=int, help="edit budget M")
    p.add_argument("--semantics", choices=["fix", "prune"])
    p.add_argument("--mass-preserving", dest="mass_preserving", action="store_true", default=None)


def _add_schedule(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int)
    p.add_argument("--gamma", choices=["linear", "sigmoid"])
    p.add_argument("--wmin", dest="omega_min", type=float)
    p.add_argument("--wmax", dest="omega_max", type=float)
    p.add_argument("--normalize", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retree", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"retree {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="branched sampling against a completions endpoint")
    _add_common(p)
    p.add_argument("--prompts", help="JSONL with query_id, prompt, answer")
    p.add_argument("--endpoint")
    p.add_argument("--model")
    p.add_argument("--k", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--l", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-p", dest="top_p", type=float)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--retries", type=int)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("build", help="assemble trajectory records into a tree manifest")
    _add_common(p)
    _add_tree_inputs(p)
    p.add_argument("--out")
    p.add_argument("--summary")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("score", help="r-scores per query")
    _add_common(p)
    _add_tree_inputs(p)
    _add_scoring(p)
    p.add_argument("--metric", choices=["sum", "seq", "acc", "rscore_sum", "rscore_seq"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("mcn", help="minimum corrective nodes per query")
    _add_common(p)
    _add_tree_inputs(p)
    p.add_argument("--semantics", choices=["fix", "prune"])
    p.add_argument("--target", dest="mcn_target", type=float)
    p.add_argument("--min-base-acc", dest="min_base_acc", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mcn)

    p = sub.add_parser("schedule", help="curriculum weights from a score report")
    _add_common(p)
    _add_schedule(p)
    p.add_argument("--scores")
    p.add_argument("--metric", choices=["sum", "seq", "acc", "rscore_sum", "rscore_seq"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("simulate", help="synthetic edit-based training run")
    p.add_argument("--spec", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("pipeline", help="score and schedule in one go")
    _add_common(p)
    _add_tree_inputs(p)
    _add_scoring(p)
    _add_schedule(p)
    p.add_argument("--metric", choices=["sum", "seq", "acc", "rscore_sum", "rscore_seq"])
    p.add_argument("--scores-out", dest="scores_out")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, IngestError, TreeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except EndpointError as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT


if __name__ == "__main__":
    sys.exit(main())
