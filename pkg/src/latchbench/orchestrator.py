"""Experiment lifecycle: forge, run, judge, score, ablations and simulator sweeps."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .backends import Backend, CompletionParams
from .config import ConfigError, RunConfig, build_backends
from .forge.builders import DEFAULT_BUDGETS, Trajectory, TrajectorySkipped, build_equidistant, build_trajectory
from .forge.corpus import DialogueSource, load_dialogues
from .forge.geometry import GeometryError
from .forge.noise import NoiseError
from .forge.updates import IntentPair, UpdateGenerationError, generate_update
from .judge import Verdict, judge_record
from .metrics import DEFAULT_TIER_X, MetricsReport, ReportConfig, aggregate_report
from .prompts import PROMPT_VERSION
from .protocol import GRANULARITY
from .simulator import CurveParams, LatchParams, predicted_single_pass, simulate_outcome
from .store import (
    JsonlAppender,
    LedgerCorruption,
    LedgerEntry,
    RunLedger,
    content_hash,
    externalize_prompts,
    read_jsonl,
    resolve_prompts,
    truncate_torn_tail,
    write_jsonl,
)
from .strategies import AgentRunRecord, run_reflexion, run_ssrp, run_vanilla
from .tokens import derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Layout:
    root: Path

    @property
    def trajectories(self) -> Path:
        return self.root / "trajectories.jsonl"

    @property
    def skips(self) -> Path:
        return self.root / "forge_skips.jsonl"

    @property
    def runs(self) -> Path:
        return self.root / "runs.jsonl"

    @property
    def timings(self) -> Path:
        return self.root / "timings.jsonl"

    @property
    def ledger(self) -> Path:
        return self.root / "ledger.jsonl"

    @property
    def verdicts(self) -> Path:
        return self.root / "verdicts.jsonl"

    @property
    def blobs(self) -> Path:
        return self.root / "blobs"

    def report(self, name: str) -> Path:
        return self.root / name


def layout(cfg: RunConfig) -> Layout:
    return Layout(cfg.experiment_dir)


def _params(cfg: RunConfig) -> CompletionParams:
    return CompletionParams(temperature=cfg.temperature, max_output_tokens=cfg.max_output_tokens)


# ------------------------------------------------------------------ forge

def intent_pair_for(cfg: RunConfig, dialogue: DialogueSource, backends: dict[str, Backend] | None) -> IntentPair:
    if cfg.update_mode == "templated":
        return generate_update(dialogue, "templated")
    backend = (backends or {})[cfg.update_backend]
    params = CompletionParams(cfg.temperature, cfg.max_output_tokens, "", derive_seed(cfg.global_seed, dialogue.id, "update"))
    return generate_update(dialogue, "dynamic", backend, params)


def forge_trajectories(
    cfg: RunConfig,
    dialogues: Sequence[DialogueSource],
    tiers: dict[str, int],
    backends: dict[str, Backend] | None = None,
) -> tuple[list[Trajectory], list[dict[str, Any]]]:
    """Build every (tier, dialogue) trajectory; failures become skip records instead of aborting."""
    pairs: dict[str, IntentPair | Exception] = {}
    for d in dialogues:
        try:
            pairs[d.id] = intent_pair_for(cfg, d, backends)
        except UpdateGenerationError as exc:
            pairs[d.id] = exc
    out: list[Trajectory] = []
    skips: list[dict[str, Any]] = []
    for tier, budget in tiers.items():
        for d in dialogues:
            pair = pairs[d.id]
            if isinstance(pair, Exception):
                skips.append({"dialogue_id": d.id, "tier": tier, "reason": f"update generation failed: {pair}"})
                continue
            try:
                out.append(build_trajectory(
                    tier, d, pair, budget=budget, rng_seed=derive_seed(cfg.global_seed, d.id, tier),
                    cpt=cfg.chars_per_token,
                ))
            except (TrajectorySkipped, GeometryError, NoiseError) as exc:
                skips.append({"dialogue_id": d.id, "tier": tier, "reason": str(exc)})
    return out, skips


def forge_experiment(cfg: RunConfig, backends: dict[str, Backend] | None = None) -> list[Trajectory]:
    if cfg.corpus is None:
        raise ConfigError("forge needs a corpus path")
    dialogues = load_dialogues(cfg.corpus, limit=cfg.n_per_tier)
    if cfg.update_mode == "dynamic" and backends is None:
        backends = build_backends(cfg)
    trajectories, skips = forge_trajectories(cfg, dialogues, cfg.tiers, backends)
    lay = layout(cfg)
    write_jsonl(lay.trajectories, (t.to_json() for t in trajectories))
    write_jsonl(lay.skips, skips)
    log.info("forged %d trajectories (%d skipped) into %s", len(trajectories), len(skips), lay.trajectories)
    return trajectories


def load_trajectories(path: Path) -> list[Trajectory]:
    if not path.exists():
        raise ConfigError(f"trajectory store {path} not found; run `forge build` first")
    return [Trajectory.from_json(o) for o in read_jsonl(path)]


# ------------------------------------------------------------------ run

@dataclass(frozen=True)
class WorkItem:
    trajectory: Trajectory
    strategy: str
    seed: int
    granularity: str | None = None

    @property
    def key(self) -> tuple[str, str]:
        return (self.trajectory.id, self.strategy)


def work_items(cfg: RunConfig, trajectories: Sequence[Trajectory]) -> list[WorkItem]:
    return [
        WorkItem(t, s, derive_seed(cfg.global_seed, t.id, s), cfg.strategies[s].granularity if s == "ssrp" else None)
        for t in trajectories
        for s in cfg.strategies
    ]


def _backend_fingerprint(cfg: RunConfig, name: str) -> dict[str, Any]:
    """Backend identity for input hashes; fixture files count by content, not by path."""
    spec = cfg.backends[name]
    out: dict[str, Any] = {"kind": spec.kind}
    for k, v in spec.options.items():
        if k == "fixture":
            out[k] = "sha256:" + hashlib.sha256(Path(v).read_bytes()).hexdigest()
        else:
            out[k] = v
    return out


def _input_hash(cfg: RunConfig, item: WorkItem) -> str:
    spec = cfg.strategies[item.strategy]
    backends = {b: _backend_fingerprint(cfg, b) for b in spec.backend_names()}
    return content_hash({
        "trajectory": item.trajectory.to_json(),
        "strategy": item.strategy,
        "granularity": item.granularity,
        "window": spec.executive_window_tokens,
        "seed": item.seed,
        "prompt_version": PROMPT_VERSION,
        "backends": backends,
    })


def execute(cfg: RunConfig, backends: dict[str, Backend], item: WorkItem) -> AgentRunRecord:
    spec = cfg.strategies[item.strategy]
    params = _params(cfg)
    if item.strategy == "vanilla":
        return run_vanilla(item.trajectory, backends[spec.backend], params, seed=item.seed)
    if item.strategy == "reflexion":
        return run_reflexion(item.trajectory, backends[spec.backend], params, seed=item.seed)
    return run_ssrp(
        item.trajectory, backends[spec.architect], backends[spec.executive], item.granularity or spec.granularity,
        params, seed=item.seed, window_tokens=spec.executive_window_tokens,
    )


def _record_row(record: AgentRunRecord, blob_dir: Path) -> dict[str, Any]:
    return externalize_prompts(record.to_json(include_timing=False), blob_dir)


def _prepare_resume(lay: Layout, expected: dict[tuple[str, str], str], order: list[tuple[str, str]]) -> RunLedger:
    """Load the ledger, drop run rows it does not vouch for, and verify every done entry."""
    for p in (lay.ledger, lay.runs, lay.timings):
        truncate_torn_tail(p)
    ledger = RunLedger.load(lay.ledger)
    runs = {(r["trajectory_id"], r["strategy"]): r for r in read_jsonl(lay.runs, tolerate_torn_tail=True)}
    timings = {(r["trajectory_id"], r["strategy"]): r for r in read_jsonl(lay.timings, tolerate_torn_tail=True)}
    for key, entry in ledger.entries.items():
        if key not in expected:
            raise LedgerCorruption(f"ledger entry {key} is not part of this experiment; start a fresh run")
        if entry.input_hash != expected[key]:
            raise LedgerCorruption(f"inputs for {key} changed since the ledger was written; start a fresh run")
        row = runs.get(key)
        if row is None or content_hash(row) != entry.output_hash:
            raise LedgerCorruption(f"stored run for {key} does not match its ledger hash; start a fresh run")
    kept = [k for k in order if k in ledger.entries]
    write_jsonl(lay.runs, (runs[k] for k in kept))
    write_jsonl(lay.timings, (timings[k] for k in kept if k in timings))
    write_jsonl(lay.ledger, (ledger.entries[k].to_json() for k in kept))
    return ledger


def run_experiment(
    cfg: RunConfig,
    *,
    resume: bool = False,
    backends: dict[str, Backend] | None = None,
    trajectories: Sequence[Trajectory] | None = None,
    on_record: Callable[[AgentRunRecord], None] | None = None,
) -> RunLedger:
    """Execute pending (trajectory, strategy) pairs with at most ``parallelism`` in flight.

    Results are written by this coordinator in submission order, so stores do
    not depend on completion order or on the parallelism bound.
    """
    lay = layout(cfg)
    if trajectories is None:
        trajectories = load_trajectories(lay.trajectories)
    backends = backends if backends is not None else build_backends(cfg, trajectories)
    items = work_items(cfg, trajectories)
    expected = {it.key: _input_hash(cfg, it) for it in items}
    order = [it.key for it in items]

    if resume:
        ledger = _prepare_resume(lay, expected, order)
    else:
        for p in (lay.runs, lay.timings, lay.ledger):
            if p.exists():
                p.unlink()
        ledger = RunLedger()
    pending = [it for it in items if ledger.status(it.key) == "pending"]
    log.info("%d pairs pending (%d already recorded)", len(pending), len(items) - len(pending))

    pool = ThreadPoolExecutor(max_workers=cfg.parallelism)
    try:
        with JsonlAppender(lay.runs) as runs, JsonlAppender(lay.ledger) as led, JsonlAppender(lay.timings) as tim:
            for item, record in zip(pending, pool.map(lambda it: execute(cfg, backends, it), pending)):
                row = _record_row(record, lay.blobs)
                runs.append(row)
                tim.append({"trajectory_id": record.trajectory_id, "strategy": record.strategy,
                            "wall_time_ms": record.wall_time_ms})
                entry = LedgerEntry(record.trajectory_id, record.strategy, "error" if record.error else "done",
                                    expected[item.key], content_hash(row))
                led.append(entry.to_json())
                ledger.record(entry)
                if on_record is not None:
                    on_record(record)
    finally:
        pool.shutdown(wait=True, cancel_futures=True)
    (lay.root / "run_stats.json").write_text(
        json.dumps({name: b.stats.snapshot() for name, b in sorted(backends.items())}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    return ledger


def load_records(lay: Layout) -> list[AgentRunRecord]:
    return [AgentRunRecord.from_json(resolve_prompts(r, lay.blobs)) for r in read_jsonl(lay.runs)]


# ------------------------------------------------------------------ judge / score

def judge_experiment(
    cfg: RunConfig,
    *,
    backends: dict[str, Backend] | None = None,
    trajectories: Sequence[Trajectory] | None = None,
) -> list[Verdict]:
    lay = layout(cfg)
    trajectories = trajectories if trajectories is not None else load_trajectories(lay.trajectories)
    backends = backends if backends is not None else build_backends(cfg, trajectories)
    by_id = {t.id: t for t in trajectories}
    records = load_records(lay)
    verdicts = _judge_all(cfg, backends, records, by_id)
    write_jsonl(lay.verdicts, (v.to_json() for v in verdicts))
    return verdicts


def _judge_all(cfg: RunConfig, backends: dict[str, Backend], records: Sequence[AgentRunRecord],
               by_id: dict[str, Trajectory]) -> list[Verdict]:
    judge = backends[cfg.judge]
    params = _params(cfg)
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        return list(pool.map(
            lambda r: judge_record(r, by_id[r.trajectory_id], judge, model_pair=cfg.model_pair, params=params),
            records,
        ))


def tier_positions(trajectories: Iterable[Trajectory]) -> dict[str, float]:
    """Mean placed fraction of the fact seeds per tier, for curve points."""
    sums: dict[str, list[float]] = {}
    for t in trajectories:
        xs = [t.placed_fraction(fid) for fid in t.fact_ids()]
        if xs:
            sums.setdefault(t.tier, []).append(sum(xs) / len(xs))
    out = dict(DEFAULT_TIER_X)
    out.update({tier: round(sum(v) / len(v), 6) for tier, v in sums.items()})
    return out


def write_report(report: MetricsReport, root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    (root / "report.json").write_text(report.dumps() + "\n", encoding="utf-8")
    (root / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (root / "curve_points.csv").write_text(report.curve_csv(), encoding="utf-8")


def score_experiment(cfg: RunConfig, *, trajectories: Sequence[Trajectory] | None = None) -> MetricsReport:
    lay = layout(cfg)
    if not lay.verdicts.exists():
        raise ConfigError(f"verdict store {lay.verdicts} not found; run `judge` first")
    verdicts = [Verdict.from_json(o) for o in read_jsonl(lay.verdicts)]
    if trajectories is None:
        trajectories = load_trajectories(lay.trajectories) if lay.trajectories.exists() else []
    report = aggregate_report(verdicts, ReportConfig(
        experiment_id=cfg.experiment_id, strategies=list(cfg.strategies), tier_x=tier_positions(trajectories),
    ))
    write_report(report, lay.root)
    return report


# ------------------------------------------------------------------ ablations

def _ablation_dialogues(cfg: RunConfig, n: int | None) -> list[DialogueSource]:
    if cfg.corpus is None:
        raise ConfigError("ablations need a corpus path")
    return load_dialogues(cfg.corpus, limit=n or cfg.n_ablation)


def ablate_granularity(
    cfg: RunConfig, *, n: int | None = None, backends: dict[str, Backend] | None = None
) -> MetricsReport:
    """SSRP at every granularity tier over the same trajectories; one APA row per tier."""
    spec = cfg.strategies.get("ssrp")
    if spec is None:
        raise ConfigError("ablate granularity needs an 'ssrp' strategy")
    tier = cfg.ablation_tier
    trajectories, _ = forge_trajectories(cfg, _ablation_dialogues(cfg, n), {tier: cfg.tiers.get(tier) or DEFAULT_BUDGETS[tier]}, backends)
    backends = backends if backends is not None else build_backends(cfg, trajectories)
    for b in backends.values():
        if hasattr(b, "register"):
            b.register(trajectories)
    items = [WorkItem(t, "ssrp", derive_seed(cfg.global_seed, t.id, "ssrp", g), g)
             for g in GRANULARITY for t in trajectories]
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        records = list(pool.map(lambda it: execute(cfg, backends, it), items))
    for r in records:
        if r.protocol is not None and not GRANULARITY[r.granularity].admits(len(r.protocol.steps)):
            raise AssertionError(f"{r.trajectory_id}: protocol violates {r.granularity} bounds")
    root = layout(cfg).root / "ablate_granularity"
    write_jsonl(root / "runs.jsonl", (_record_row(r, root / "blobs") for r in records))
    verdicts = _judge_all(cfg, backends, records, {t.id: t for t in trajectories})
    write_jsonl(root / "verdicts.jsonl", (v.to_json() for v in verdicts))
    report = aggregate_report(verdicts, ReportConfig(
        experiment_id=f"{cfg.experiment_id}-granularity", strategies=("ssrp",), split_granularity=True,
        tier_x=tier_positions(trajectories),
    ))
    write_report(report, root)
    return report


def ablate_equidistant(
    cfg: RunConfig, *, n: int | None = None, backends: dict[str, Backend] | None = None
) -> MetricsReport:
    """Vanilla over symmetric 25%/75% contexts: positional advantage is removed, leaving intent weighting."""
    spec = cfg.strategies.get("vanilla")
    if spec is None:
        raise ConfigError("ablate equidistant needs a 'vanilla' strategy")
    budget = cfg.tiers.get("equidistant") or DEFAULT_BUDGETS["equidistant"]
    trajectories = []
    for d in _ablation_dialogues(cfg, n):
        pair = intent_pair_for(cfg, d, backends)
        trajectories.append(build_equidistant(
            pair, budget, rng_seed=derive_seed(cfg.global_seed, d.id, "equidistant"),
            trajectory_id=f"equidistant-{d.id}", cpt=cfg.chars_per_token,
        ))
    backends = backends if backends is not None else build_backends(cfg, trajectories)
    for b in backends.values():
        if hasattr(b, "register"):
            b.register(trajectories)
    items = [WorkItem(t, "vanilla", derive_seed(cfg.global_seed, t.id, "vanilla")) for t in trajectories]
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        records = list(pool.map(lambda it: execute(cfg, backends, it), items))
    root = layout(cfg).root / "ablate_equidistant"
    write_jsonl(root / "trajectories.jsonl", (t.to_json() for t in trajectories))
    write_jsonl(root / "runs.jsonl", (_record_row(r, root / "blobs") for r in records))
    verdicts = _judge_all(cfg, backends, records, {t.id: t for t in trajectories})
    write_jsonl(root / "verdicts.jsonl", (v.to_json() for v in verdicts))
    report = aggregate_report(verdicts, ReportConfig(
        experiment_id=f"{cfg.experiment_id}-equidistant", strategies=("vanilla",),
    ))
    write_report(report, root)
    return report


# ------------------------------------------------------------------ simulator sweep

def simulate_sweep(cfg: RunConfig, *, n: int | None = None) -> list[dict[str, Any]]:
    """Empirical vs closed-form single-pass success over a grid of curves."""
    sim = cfg.simulate
    tier = sim.get("tier", "hijack")
    draws = int(n or sim.get("n", 1000))
    curves = [CurveParams(float(a), float(g)) for a, g in sim.get("curves", [[1.0, 0.1], [1.0, 0.3], [2.0, 0.5]])]
    latch = LatchParams(**sim.get("latch", {}))
    dialogue = _ablation_dialogues(cfg, 1)[0]
    pair = intent_pair_for(cfg, dialogue, None)
    traj = build_trajectory(tier, dialogue, pair, budget=cfg.tiers.get(tier), rng_seed=derive_seed(cfg.global_seed, dialogue.id, tier),
                            cpt=cfg.chars_per_token)
    rows = []
    for curve in curves:
        hits = sum(
            simulate_outcome(traj, curve, latch, derive_seed(cfg.global_seed, "sweep", curve.alpha, curve.gamma, i)).success
            for i in range(draws)
        )
        rows.append({"alpha": curve.alpha, "gamma": curve.gamma, "n": draws, "empirical": hits / draws,
                     "predicted": predicted_single_pass(traj, curve, latch)})
    root = layout(cfg).root
    root.mkdir(parents=True, exist_ok=True)
    with (root / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["alpha", "gamma", "n", "empirical", "predicted"], lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: format(v, ".10g") if isinstance(v, float) else v for k, v in r.items()})
    return rows
