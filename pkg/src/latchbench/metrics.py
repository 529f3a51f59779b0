"""Outcome aggregation: pivot accuracy, lift, paired significance, PI/refusal rates and curve fits."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .judge import Verdict

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("model_pair", "tier", "strategy", "apa", "n", "lift", "t_p", "mcnemar_p")
CURVE_COLUMNS = ("x", "apa", "strategy", "model_pair")
ZERO_BASELINE = "n/a (baseline zero)"
DEFAULT_TIER_X = {"shallow": 0.95, "high_entropy": 0.5, "hijack": 0.5}


class UndefinedLift(ZeroDivisionError):
    """Lift is undefined against a zero baseline."""


class MissingStrategyError(ValueError):
    pass


@dataclass(frozen=True)
class OutcomeVector:
    experiment_id: str
    strategy: str
    outcomes: tuple[int, ...]
    keys: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.outcomes:
            raise ValueError("outcome vector is empty")
        if any(o not in (0, 1) for o in self.outcomes):
            raise ValueError("outcomes must be 0/1")
        if self.keys and len(self.keys) != len(self.outcomes):
            raise ValueError("keys and outcomes differ in length")

    @property
    def n(self) -> int:
        return len(self.outcomes)

    @classmethod
    def from_counts(cls, successes: int, n: int, strategy: str = "", experiment_id: str = "") -> "OutcomeVector":
        if not 0 <= successes <= n:
            raise ValueError("successes must lie in [0, n]")
        return cls(experiment_id, strategy, tuple([1] * successes + [0] * (n - successes)))


def apa(v: OutcomeVector) -> float:
    if v.n == 0:
        raise ValueError("empty outcome vector")
    return sum(v.outcomes) / v.n


def resilience_lift(apa_ssrp: float, apa_vanilla: float) -> float:
    """``(apa_ssrp - apa_vanilla) / apa_vanilla``."""
    if apa_vanilla == 0:
        raise UndefinedLift(ZERO_BASELINE)
    if apa_vanilla < 0:
        raise ValueError("baseline APA must be positive")
    return (apa_ssrp - apa_vanilla) / apa_vanilla


# ------------------------------------------------------------------ significance

@dataclass(frozen=True)
class Significance:
    n: int
    t_stat: float | None
    t_p: float | None
    t_degenerate: bool
    mcnemar_b: int
    mcnemar_c: int
    mcnemar_p: float
    t_test_label: str = "paired t-test on 0/1 outcomes, df = n - 1"


def mcnemar_exact(b: int, c: int) -> float:
    """Exact two-sided McNemar p-value: ``min(1, 2 * P[Bin(b+c, 1/2) <= min(b, c)])``."""
    if b < 0 or c < 0:
        raise ValueError("discordant counts must be non-negative")
    n = b + c
    if n == 0:
        return 1.0
    tail = sum(math.comb(n, k) for k in range(min(b, c) + 1))
    return min(1.0, 2 * tail / 2**n)


def paired_t(diffs: Sequence[float]) -> tuple[float | None, float | None, bool]:
    """Two-sided one-sample t-test on paired differences, ``n - 1`` degrees of freedom."""
    n = len(diffs)
    if n < 2:
        raise ValueError("paired test needs n >= 2")
    d = np.asarray(diffs, dtype=float)
    sd = d.std(ddof=1)
    if sd == 0:
        return None, None, True
    t = float(d.mean() / (sd / math.sqrt(n)))
    p = float(2 * stats.t.sf(abs(t), n - 1))
    return t, p, False


def paired_significance(a: OutcomeVector, b: OutcomeVector) -> Significance:
    if a.n != b.n:
        raise ValueError(f"vectors differ in length: {a.n} vs {b.n}")
    if a.keys and b.keys and a.keys != b.keys:
        raise ValueError("trajectory keys are misaligned")
    if a.n < 2:
        raise ValueError("paired test needs n >= 2")
    diffs = [x - y for x, y in zip(a.outcomes, b.outcomes)]
    t, p, degenerate = paired_t(diffs)
    nb = sum(1 for d in diffs if d == 1)
    nc = sum(1 for d in diffs if d == -1)
    return Significance(a.n, t, p, degenerate, nb, nc, mcnemar_exact(nb, nc))


# ------------------------------------------------------------------ curve fit

@dataclass(frozen=True)
class CurveFit:
    alpha_hat: float
    gamma_hat: float
    residual_sse: float
    points: tuple[tuple[float, float], ...]
    out_of_range: bool = False
    label: str = ""
    pooled: bool = False

    def predict(self, x: float) -> float:
        return self.alpha_hat * (x - 0.5) ** 2 + self.gamma_hat


def fit_attention_curve(points: Iterable[tuple[float, float]], *, label: str = "", pooled: bool = False) -> CurveFit:
    """Least squares for ``apa = alpha * (x - 0.5)**2 + gamma``, linear in ``(alpha, gamma)``.

    Estimates are reported unclamped; ``out_of_range`` flags fits that imply a
    probability outside [0, 1] somewhere on [0, 1].
    """
    pts = tuple((float(x), float(y)) for x, y in points)
    for x, y in pts:
        if not 0.0 <= x <= 1.0 or not 0.0 <= y <= 1.0:
            raise ValueError(f"point ({x}, {y}) outside the unit square")
    u = np.array([(x - 0.5) ** 2 for x, _ in pts])
    # Mirror-image x values give u that differ only by rounding; treat those as equal.
    if len(pts) < 2 or np.ptp(u) <= 1e-12:
        raise ValueError("rank deficient: need at least two distinct values of (x - 0.5)^2")
    design = np.column_stack([u, np.ones_like(u)])
    y = np.array([p[1] for p in pts])
    (alpha_hat, gamma_hat), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ np.array([alpha_hat, gamma_hat])
    sse = max(0.0, float(resid @ resid))
    lo, hi = sorted((gamma_hat, gamma_hat + alpha_hat / 4))
    return CurveFit(float(alpha_hat), float(gamma_hat), sse, pts, bool(lo < 0 or hi > 1), label, pooled)


# ------------------------------------------------------------------ report

@dataclass
class ReportConfig:
    experiment_id: str = "experiment"
    strategies: Sequence[str] = ("vanilla", "ssrp", "reflexion")
    baseline: str = "vanilla"
    tier_x: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_TIER_X))
    split_granularity: bool = False


@dataclass
class MetricsReport:
    experiment_id: str
    rows: list[dict[str, Any]]
    per_strategy_apa: dict[str, float]
    lifts: list[dict[str, Any]]
    significance: list[dict[str, Any]]
    pi_rate: float | None
    refusal_rate: dict[str, float]
    grounding_gap: float | None
    curve_fits: list[dict[str, Any]]
    curve_points: list[dict[str, Any]]
    judge_errors: int
    backend_errors: int
    judge_parse_failures: int

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True, default=_json_default)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([_cell(r[c]) for c in REPORT_COLUMNS])
        return buf.getvalue()

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for p in self.curve_points:
            w.writerow([_cell(p[c]) for c in CURVE_COLUMNS])
        return buf.getvalue()


def _json_default(obj: Any) -> Any:
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(type(obj).__name__)


def _cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return format(v, ".10g")
    return str(v)


def _label(v: Verdict, split: bool) -> str:
    if split and v.strategy == "ssrp" and v.granularity:
        return f"ssrp:{v.granularity}"
    return v.strategy


def _rate(values: list[bool]) -> float | None:
    return sum(values) / len(values) if values else None


def aggregate_report(verdicts: Sequence[Verdict], config: ReportConfig | None = None) -> MetricsReport:
    """Aggregate verdicts into rows per ``(model_pair, tier, strategy)`` plus pooled figures.

    Judge errors leave the denominators; backend errors stay in as failures.
    """
    config = config or ReportConfig()
    present = {v.strategy for v in verdicts}
    for s in config.strategies:
        if s not in present:
            raise MissingStrategyError(f"no verdicts for configured strategy {s!r}")

    split = config.split_granularity
    groups: dict[tuple[str, str, str], list[Verdict]] = defaultdict(list)
    for v in verdicts:
        if v.judge_error is None:
            groups[(v.model_pair, v.tier, _label(v, split))].append(v)

    rows: list[dict[str, Any]] = []
    lifts: list[dict[str, Any]] = []
    sig_rows: list[dict[str, Any]] = []
    for (pair, tier, label) in sorted(groups):
        vs = sorted(groups[(pair, tier, label)], key=lambda v: v.trajectory_id)
        ov = OutcomeVector(config.experiment_id, label, tuple(int(v.final_success) for v in vs), tuple(v.trajectory_id for v in vs))
        row: dict[str, Any] = {
            "model_pair": pair, "tier": tier, "strategy": label, "apa": apa(ov), "n": ov.n,
            "lift": None, "t_p": None, "mcnemar_p": None,
            "refusal_rate": _rate([v.refusal for v in vs]),
            "pi_rate": _rate([bool(v.pi_adherent) for v in vs]) if label.startswith("ssrp") else None,
        }
        if row["pi_rate"] is not None:
            row["grounding_gap"] = row["pi_rate"] - row["apa"]
        base = groups.get((pair, tier, config.baseline))
        if base is not None and label != config.baseline:
            base_by_id = {v.trajectory_id: v for v in base}
            base_apa = sum(v.final_success for v in base) / len(base)
            try:
                row["lift"] = resilience_lift(row["apa"], base_apa)
            except UndefinedLift:
                row["lift"] = ZERO_BASELINE
            lifts.append({"model_pair": pair, "tier": tier, "strategy": label, "apa": row["apa"],
                          "baseline_apa": base_apa, "lift": row["lift"]})
            common = [v for v in vs if v.trajectory_id in base_by_id]
            if len(common) >= 2:
                a = OutcomeVector(config.experiment_id, label, tuple(int(v.final_success) for v in common),
                                  tuple(v.trajectory_id for v in common))
                b = OutcomeVector(config.experiment_id, config.baseline,
                                  tuple(int(base_by_id[v.trajectory_id].final_success) for v in common), a.keys)
                sig = paired_significance(a, b)
                row["t_p"] = "degenerate" if sig.t_degenerate else sig.t_p
                row["mcnemar_p"] = sig.mcnemar_p
                sig_rows.append({"model_pair": pair, "tier": tier, "strategy": label, "vs": config.baseline,
                                 **asdict(sig)})
        rows.append(row)

    scored = [v for v in verdicts if v.judge_error is None]
    per_strategy: dict[str, list[bool]] = defaultdict(list)
    refusals: dict[str, list[bool]] = defaultdict(list)
    for v in scored:
        per_strategy[_label(v, split)].append(v.final_success)
        refusals[_label(v, split)].append(v.refusal)
    per_strategy_apa = {k: sum(x) / len(x) for k, x in sorted(per_strategy.items())}
    ssrp = [v for v in scored if v.strategy == "ssrp"]
    pi_rate = _rate([bool(v.pi_adherent) for v in ssrp])
    apa_ssrp = _rate([v.final_success for v in ssrp])
    gap = pi_rate - apa_ssrp if pi_rate is not None and apa_ssrp is not None else None

    points, fits = _curves(rows, config.tier_x)
    return MetricsReport(
        experiment_id=config.experiment_id,
        rows=rows,
        per_strategy_apa=per_strategy_apa,
        lifts=lifts,
        significance=sig_rows,
        pi_rate=pi_rate,
        refusal_rate={k: sum(x) / len(x) for k, x in sorted(refusals.items())},
        grounding_gap=gap,
        curve_fits=fits,
        curve_points=points,
        judge_errors=sum(1 for v in verdicts if v.judge_error is not None),
        backend_errors=sum(1 for v in verdicts if v.run_error),
        judge_parse_failures=sum(1 for v in verdicts if v.judge_parse_failure),
    )


def _curves(rows: list[dict[str, Any]], tier_x: Mapping[str, float]) -> tuple[list[dict[str, Any]], list[dict[str, Any]]]:
    points = [
        {"x": float(tier_x[r["tier"]]), "apa": r["apa"], "strategy": r["strategy"], "model_pair": r["model_pair"]}
        for r in rows if r["tier"] in tier_x
    ]
    families: dict[tuple[str, str], list[tuple[float, float]]] = defaultdict(list)
    pooled: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for p in points:
        families[(p["model_pair"], p["strategy"])].append((p["x"], p["apa"]))
        pooled[p["strategy"]].append((p["x"], p["apa"]))
    fits = []
    pairs = {mp for mp, _ in families}
    candidates = [(f"{mp}/{s}", pts, False) for (mp, s), pts in sorted(families.items())]
    if len(pairs) > 1:
        candidates += [(f"pooled/{s}", pts, True) for s, pts in sorted(pooled.items())]
    for label, pts, is_pooled in candidates:
        try:
            fit = fit_attention_curve(pts, label=label, pooled=is_pooled)
        except ValueError:
            continue
        d = asdict(fit)
        d["points"] = [list(p) for p in fit.points]
        fits.append(d)
    return points, fits
