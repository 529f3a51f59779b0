"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

from __future__ import annotations

import dataclasses
import math
import random
import shutil
import time
from pathlib import Path

import pytest
import yaml

from latchbench.backends import CompletionParams
from latchbench.config import load_config
from latchbench.forge.builders import build_trajectory, symmetry_residual
from latchbench.forge.sample import sample_dialogues
from latchbench.forge.updates import generate_update
from latchbench.judge import RuleJudgeBackend, judge_record
from latchbench.metrics import (
    OutcomeVector,
    ReportConfig,
    aggregate_report,
    apa,
    fit_attention_curve,
    mcnemar_exact,
    paired_t,
    resilience_lift,
)
from latchbench.orchestrator import ablate_granularity, judge_experiment, layout, run_experiment, score_experiment
from latchbench.protocol import GRANULARITY
from latchbench.simulator import (
    CurveParams,
    LatchParams,
    SimulatorConfig,
    SyntheticBackend,
    predicted_joint_success,
    predicted_single_pass,
    retrieval_prob,
    simulate_outcome,
)
from latchbench.store import read_jsonl
from latchbench.strategies import run_reflexion, run_ssrp, run_vanilla
from latchbench.tokens import derive_seed

from conftest import forge, minimal_trajectory, scripted_experiment
from oracles import geometry_violations, mcnemar_enumerated, paired_t_stat, t_two_sided_p

SAMPLE = Path(__file__).resolve().parents[1] / "sample"


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nCRITERION {n:>2}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail
    return emit


def _sigma(p: float, n: int) -> float:
    return math.sqrt(p * (1 - p) / n)


def _clones(trajectories, copies):
    """Distinct ids per copy so every run is its own record."""
    return [dataclasses.replace(t, id=f"{t.id}~{k}") for k in range(copies) for t in trajectories]


def _run_all(strategy, trajectories, backend, seed=0):
    judge = RuleJudgeBackend("rule")
    verdicts = []
    for t in trajectories:
        s = derive_seed(seed, t.id, strategy)
        if strategy == "vanilla":
            rec = run_vanilla(t, backend, seed=s)
        elif strategy == "reflexion":
            rec = run_reflexion(t, backend, seed=s)
        else:
            rec = run_ssrp(t, backend, backend, "optimal", seed=s)
        verdicts.append(judge_record(rec, t, judge, model_pair="sim/sim"))
    return verdicts


# Vanilla and SSRP APA as printed, per (pair, methodology), with the printed lift in percent.
TABLE_ONE = [
    ("gemini", "shallow", 640, 809, 26.41),
    ("gemini", "high_entropy", 413, 506, 22.52),
    ("claude", "shallow", 422, 439, 4.03),
    ("claude", "high_entropy", 538, 925, 71.93),
    ("deepseek", "shallow", 980, 990, 1.02),
    ("deepseek", "high_entropy", 310, 490, 58.06),
    ("gpt", "shallow", 709, 875, 23.41),
    ("gpt", "high_entropy_s", 942, 950, 0.85),
    ("gpt", "hijack", 1, 716, 71500.00),
]


def test_criterion_01_table_closure(verdict):
    start = time.perf_counter()
    worst = 0.0
    for _, _, v, s, lift_pct in TABLE_ONE:
        a_v = apa(OutcomeVector.from_counts(v, 1000, "vanilla"))
        a_s = apa(OutcomeVector.from_counts(s, 1000, "ssrp"))
        worst = max(worst, abs(a_v * 100 - v / 10), abs(a_s * 100 - s / 10))
        worst = max(worst, abs(resilience_lift(a_s, a_v) * 100 - lift_pct))
    elapsed = time.perf_counter() - start
    verdict(1, worst <= 0.01 and elapsed < 1.0,
            f"9 rows, max deviation {worst:.4f} pp (tolerance 0.01), {elapsed * 1000:.1f} ms")


CLIFF = SimulatorConfig(
    CurveParams(1.0, 0.1),
    LatchParams(w1=1.0, w2=1.0, redirect=True, unchecked_purge_leak=0.25, critique_rereads=64),
    architect_grounding=0.885,
)


def _ssrp_expected(traj, cfg):
    """Cited facts are forced; an uncited fact falls back to its positional draw."""
    g = cfg.architect_grounding
    out = 1.0
    for fid in traj.fact_ids():
        out *= g + (1 - g) * retrieval_prob(cfg.curve, traj.placed_fraction(fid))
    return out * (1 - cfg.latch.refusal_rate)


def test_criterion_02_cliff(dialogues, verdict):
    start = time.perf_counter()
    base = [forge("hijack", d, seed=2) for d in dialogues[:20]]
    trajs = _clones(base, 500)
    backend = SyntheticBackend("sim", CLIFF, trajs)
    n = len(trajs)
    vanilla = sum(v.final_success for v in _run_all("vanilla", trajs, backend)) / n
    ssrp = sum(v.final_success for v in _run_all("ssrp", trajs, backend)) / n
    plain = dataclasses.replace(CLIFF.latch, redirect=False)
    pred_v = sum(predicted_single_pass(t, CLIFF.curve, plain) for t in base) / len(base)
    pred_s = sum(_ssrp_expected(t, CLIFF) for t in base) / len(base)
    elapsed = time.perf_counter() - start
    per_fact = [retrieval_prob(CLIFF.curve, base[0].placed_fraction(f)) for f in base[0].fact_ids()]
    ok = (
        vanilla <= 0.005 and abs(vanilla - pred_v) <= 3 * _sigma(pred_v, n) + 1e-12
        and ssrp >= 0.7 and abs(ssrp - pred_s) <= 3 * _sigma(pred_s, n)
        and elapsed < 30
    )
    verdict(2, ok,
            f"N={n}, per-fact p={[round(p, 4) for p in per_fact]}, vanilla {vanilla:.4f} (pred {pred_v:.4f}), "
            f"ssrp {ssrp:.4f} (pred {pred_s:.4f}), {elapsed:.1f} s")


def test_criterion_03_joint_collapse(verdict):
    start = time.perf_counter()
    rng = random.Random(20260301)
    curve = CurveParams(4.0, 0.0)
    latch = LatchParams()
    n, misses, worst = 10_000, 0, 0.0
    for k in range(100):
        probs = [rng.random() for _ in range(rng.randint(1, 5))]
        xs = [0.5 + math.sqrt(p) / 2 for p in probs]
        traj = minimal_trajectory(xs, g2_x=1.0, tid=f"J{k}")
        realized = [retrieval_prob(curve, x) for x in xs]
        pred = predicted_joint_success(realized)
        hits = sum(simulate_outcome(traj, curve, latch, derive_seed(k, i)).success for i in range(n))
        z = abs(hits / n - pred) / _sigma(pred, n) if 0 < pred < 1 else 0.0
        worst = max(worst, z)
        misses += z > 3
        assert max(abs(a - b) for a, b in zip(realized, probs)) < 1e-12
    elapsed = time.perf_counter() - start
    verdict(3, misses == 0 and elapsed < 120,
            f"100 lists x N={n}, worst |z| {worst:.2f} (bound 3), {elapsed:.1f} s")


def test_criterion_04_curve_fit(verdict):
    errs = []
    for alpha, gamma, xs in [
        (1.7, 0.2, [0.1, 0.5, 0.95]),
        (0.9, 0.05, [0.0, 0.15, 0.3, 0.5, 0.62, 0.8, 1.0]),
    ]:
        fit = fit_attention_curve([(x, alpha * (x - 0.5) ** 2 + gamma) for x in xs])
        errs += [abs(fit.alpha_hat - alpha), abs(fit.gamma_hat - gamma)]
    anchors = fit_attention_curve([(0.95, 0.709), (0.5, 0.310)])
    gamma_cf = 0.310
    alpha_cf = (0.709 - gamma_cf) / (0.95 - 0.5) ** 2
    errs += [abs(anchors.alpha_hat - alpha_cf), abs(anchors.gamma_hat - gamma_cf)]
    ok = max(errs) <= 1e-6 and abs(alpha_cf - 1.9704) < 1e-4
    verdict(4, ok, f"3-pt and 7-pt planted fits, anchors alpha={anchors.alpha_hat:.6f} gamma={anchors.gamma_hat:.6f}, "
                   f"max error {max(errs):.2e}")


def test_criterion_05_geometry(verdict):
    start = time.perf_counter()
    pool = sample_dialogues(200, seed=505)
    bad, counted = [], 0
    for tier in ("shallow", "high_entropy", "hijack", "equidistant"):
        for d in pool:
            traj = build_trajectory(tier, d, generate_update(d), rng_seed=derive_seed(505, d.id, tier))
            counted += 1
            problems = geometry_violations(traj)
            if tier == "equidistant" and symmetry_residual(traj) > 0.01 * traj.token_count:
                problems.append("asymmetric")
            if problems:
                bad.append((traj.id, problems))
    elapsed = time.perf_counter() - start
    verdict(5, not bad and elapsed < 60, f"{counted} trajectories (200 per tier), {len(bad)} violations, {elapsed:.1f} s")


def test_criterion_06_reflexion_parity_and_refusal(dialogues, verdict):
    cfg = SimulatorConfig(CurveParams(1.0, 0.3), LatchParams(w1=1.0, w2=1.0, posthoc_correct=True, critique_rereads=64))
    base = [forge("hijack", d, seed=6) for d in dialogues[:10]]
    trajs = _clones(base, 20)
    g2_p = min(retrieval_prob(cfg.curve, t.placed_fraction(t.intent_pair.g2_id)) for t in base)
    refl = _run_all("reflexion", trajs, SyntheticBackend("sim", cfg, trajs))
    refl_apa = sum(v.final_success for v in refl) / len(refl)

    refusing = SimulatorConfig(CurveParams(1.0, 0.1), LatchParams(redirect=True, refusal_rate=0.18), architect_grounding=0.885)
    many = _clones(base, 400)
    ssrp = _run_all("ssrp", many, SyntheticBackend("sim", refusing, many))
    report = aggregate_report(ssrp, ReportConfig(strategies=("ssrp",)))
    measured = report.refusal_rate["ssrp"]
    row_rate = report.rows[0]["refusal_rate"]
    ok = len(refl) == 200 and g2_p >= 0.3 and refl_apa == 1.0 and abs(measured - 0.18) <= 0.02 and row_rate == measured
    verdict(6, ok, f"reflexion APA {refl_apa:.3f} over {len(refl)} seeds (g2 p >= {g2_p:.3f}); "
                   f"ssrp refusal {measured:.4f} over {len(ssrp)} runs, in report")


def test_criterion_07_grounding_gap(dialogues, verdict):
    base = [forge("hijack", d, seed=7) for d in dialogues[:20]]
    trajs = _clones(base, 50)
    verdicts = _run_all("ssrp", trajs, SyntheticBackend("sim", CLIFF, trajs))
    report = aggregate_report(verdicts, ReportConfig(strategies=("ssrp",)))
    pi, a = report.pi_rate, report.per_strategy_apa["ssrp"]
    ok = pi >= 0.98 and a <= 0.75 and report.grounding_gap == pi - a
    verdict(7, ok, f"PI {pi:.4f}, APA {a:.4f}, gap {report.grounding_gap:.4f} == PI - APA exactly, N={len(verdicts)}")


def test_criterion_08_significance(verdict):
    rng = random.Random(8)
    worst_t = 0.0
    for _ in range(20):
        n = rng.randint(5, 40)
        while True:
            a = [rng.randint(0, 1) for _ in range(n)]
            b = [rng.randint(0, 1) for _ in range(n)]
            if len({x - y for x, y in zip(a, b)}) > 1:
                break
        _, p, _ = paired_t([x - y for x, y in zip(a, b)])
        t_ref, df = paired_t_stat(a, b)
        worst_t = max(worst_t, abs(p - t_two_sided_p(t_ref, df)))
    worst_m = 0.0
    for total in range(13):
        for b in range(total + 1):
            worst_m = max(worst_m, abs(mcnemar_exact(b, total - b) - mcnemar_enumerated(b, total - b)))
    verdict(8, worst_t <= 1e-9 and worst_m <= 1e-12,
            f"t-test max |dp| {worst_t:.1e} over 20 fixtures; McNemar max |dp| {worst_m:.1e} for b+c <= 12")


def _artifacts(cfg) -> dict[str, bytes]:
    root = layout(cfg).root
    names = ("runs.jsonl", "ledger.jsonl", "verdicts.jsonl", "report.json", "report.csv", "curve_points.csv")
    return {n: (root / n).read_bytes() for n in names}


def _pipeline(cfg, **kw):
    run_experiment(cfg, **kw)
    judge_experiment(cfg)
    score_experiment(cfg)
    return _artifacts(cfg)


def test_criterion_09_pipeline_determinism(tmp_path, dialogues, verdict):
    trajs = [forge("hijack", d, seed=9) for d in dialogues[:20]]
    serial = _pipeline(scripted_experiment(tmp_path / "p1", trajs, parallelism=1))
    wide = _pipeline(scripted_experiment(tmp_path / "p8", trajs, parallelism=8))
    again = _pipeline(scripted_experiment(tmp_path / "p1", trajs, parallelism=1))

    cut = scripted_experiment(tmp_path / "cut", trajs, parallelism=8)
    count = []

    def interrupt(_record):
        count.append(1)
        if len(count) == 31:
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        run_experiment(cut, on_record=interrupt)
    with layout(cut).ledger.open("a") as fh:
        fh.write('{"trajectory_id": ')
    resumed = _pipeline(cut, resume=True)
    n_rows = len(read_jsonl(layout(cut).runs))
    ok = serial == wide == again == resumed and n_rows == 60
    verdict(9, ok, f"20 trajectories x 3 strategies: parallelism 1 == 8, rerun identical, "
                   f"resume after interrupt at 30 records identical ({len(serial)} artifacts compared)")


def test_criterion_10_granularity_ablation(tmp_path, verdict):
    shutil.copy(SAMPLE / "corpus.jsonl", tmp_path / "corpus.jsonl")
    raw = yaml.safe_load((SAMPLE / "synthetic.yaml").read_text())
    (tmp_path / "exp.yaml").write_text(yaml.safe_dump(raw))
    cfg = load_config(tmp_path / "exp.yaml")
    report = ablate_granularity(cfg, n=50)
    rows = {r["strategy"]: r for r in report.rows}
    runs = read_jsonl(layout(cfg).root / "ablate_granularity" / "runs.jsonl")
    bounds_ok = all(GRANULARITY[r["granularity"]].admits(len(r["protocol"]["steps"])) for r in runs if r["protocol"])
    steps = {g: sorted({len(r["protocol"]["steps"]) for r in runs if r["granularity"] == g and r["protocol"]})
             for g in GRANULARITY}
    a = {g: rows[f"ssrp:{g}"]["apa"] for g in GRANULARITY}
    ok = (
        len(report.rows) == 3 and bounds_ok and len(runs) == 150
        and a["optimal"] >= a["hyper_compressed"] > a["verbose"]
    )
    verdict(10, ok, f"3 rows, step counts {steps}, APA hyper {a['hyper_compressed']:.2f} "
                    f"optimal {a['optimal']:.2f} verbose {a['verbose']:.2f}")
