"""Declarative run configuration (YAML), validation and backend construction."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from .backends import Backend, RemoteBackend, RemoteDescriptor, RetryPolicy, ScriptedBackend
from .forge.builders import DEFAULT_BUDGETS, TIERS, Trajectory
from .judge import RuleJudgeBackend
from .protocol import GRANULARITY
from .simulator import SimulatorConfig, SyntheticBackend
from .strategies import STRATEGIES

_SAFE_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")
BACKEND_KINDS = ("remote", "scripted", "synthetic", "rule")
RULE_JUDGE = "rule"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendSpec:
    name: str
    kind: str
    options: Mapping[str, Any]


@dataclass(frozen=True)
class StrategySpec:
    name: str
    backend: str | None = None
    architect: str | None = None
    executive: str | None = None
    granularity: str = "optimal"
    executive_window_tokens: int | None = None

    def backend_names(self) -> list[str]:
        return [b for b in (self.backend, self.architect, self.executive) if b]


@dataclass
class RunConfig:
    experiment_id: str
    global_seed: int
    corpus: Path | None
    output_dir: Path
    tiers: dict[str, int]
    strategies: dict[str, StrategySpec]
    backends: dict[str, BackendSpec]
    judge: str = RULE_JUDGE
    model_pair: str = ""
    n_per_tier: int = 1000
    n_ablation: int = 50
    ablation_tier: str = "hijack"
    update_mode: str = "templated"
    update_backend: str | None = None
    parallelism: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    chars_per_token: int = 4
    temperature: float = 0.0
    max_output_tokens: int = 1024
    simulate: Mapping[str, Any] = field(default_factory=dict)
    source: Path | None = None

    @property
    def experiment_dir(self) -> Path:
        return self.output_dir / self.experiment_id

    def plan(self) -> list[str]:
        lines = [
            f"experiment {self.experiment_id} (seed {self.global_seed})",
            f"corpus {self.corpus} -> {self.n_per_tier} dialogues per tier",
            "tiers " + ", ".join(f"{t}={b}" for t, b in self.tiers.items()),
        ]
        for s in self.strategies.values():
            extra = f" granularity={s.granularity}" if s.name == "ssrp" else ""
            lines.append(f"strategy {s.name}: backends {'/'.join(s.backend_names())}{extra}")
        lines.append(f"judge {self.judge}; parallelism {self.parallelism}")
        lines.append(f"outputs under {self.experiment_dir}")
        return lines


def _path(base: Path, value: Any) -> Path:
    p = Path(str(value))
    return p if p.is_absolute() else (base / p)


def _require(obj: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in obj:
        raise ConfigError(f"{where}: missing key {key!r}")
    return obj[key]


def parse_config(raw: Mapping[str, Any], base_dir: Path | str = ".", *, check_paths: bool = True) -> RunConfig:
    base = Path(base_dir)
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a mapping")
    exp = str(_require(raw, "experiment_id", "config"))
    if not _SAFE_ID.match(exp):
        raise ConfigError(f"experiment_id {exp!r} is not filesystem-safe")
    try:
        seed = int(raw.get("global_seed", 0))
    except (TypeError, ValueError):
        raise ConfigError("global_seed must be an integer") from None

    tiers_raw = raw.get("tiers", {"shallow": None, "high_entropy": None, "hijack": None})
    if isinstance(tiers_raw, list):
        tiers_raw = {t: None for t in tiers_raw}
    tiers = {}
    for t, budget in tiers_raw.items():
        if t not in TIERS:
            raise ConfigError(f"unknown tier {t!r}; expected one of {TIERS}")
        tiers[t] = int(budget or DEFAULT_BUDGETS[t])

    backends: dict[str, BackendSpec] = {}
    for name, spec in (raw.get("backends") or {}).items():
        kind = spec.get("kind") if isinstance(spec, Mapping) else None
        if kind not in BACKEND_KINDS:
            raise ConfigError(f"backend {name!r}: kind must be one of {BACKEND_KINDS}")
        opts = {k: v for k, v in spec.items() if k != "kind"}
        if kind == "remote":
            for key in ("endpoint", "api_key_env", "model_id"):
                _require(opts, key, f"backend {name!r}")
            if "api_key" in opts:
                raise ConfigError(f"backend {name!r}: credentials belong in the environment, not the config")
        if kind == "scripted":
            opts["fixture"] = _path(base, _require(opts, "fixture", f"backend {name!r}"))
            if check_paths and not opts["fixture"].exists():
                raise ConfigError(f"backend {name!r}: fixture {opts['fixture']} not found")
        if kind == "synthetic":
            try:
                SimulatorConfig.from_dict(opts.get("simulator", {}))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"backend {name!r}: bad simulator block: {exc}") from None
        backends[name] = BackendSpec(name, kind, opts)

    strategies: dict[str, StrategySpec] = {}
    for name, spec in (raw.get("strategies") or {}).items():
        if name not in STRATEGIES:
            raise ConfigError(f"unknown strategy {name!r}; expected one of {STRATEGIES}")
        spec = dict(spec or {})
        unknown = set(spec) - {"backend", "architect", "executive", "granularity", "executive_window_tokens"}
        if unknown:
            raise ConfigError(f"strategy {name!r}: unknown keys {sorted(unknown)}")
        s = StrategySpec(name, **spec)
        if name == "ssrp":
            if not (s.architect and s.executive):
                raise ConfigError("strategy 'ssrp' needs both architect and executive backends")
            if s.granularity not in GRANULARITY:
                raise ConfigError(f"unknown granularity {s.granularity!r}")
        elif not s.backend:
            raise ConfigError(f"strategy {name!r} needs a backend")
        for b in s.backend_names():
            if b not in backends:
                raise ConfigError(f"strategy {name!r} references unknown backend {b!r}")
        strategies[name] = s
    if not strategies:
        raise ConfigError("no strategies configured")

    judge = str(raw.get("judge", RULE_JUDGE))
    if judge != RULE_JUDGE and judge not in backends:
        raise ConfigError(f"judge references unknown backend {judge!r}")

    parallelism = int(raw.get("parallelism", 4))
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1")

    update_mode = raw.get("update_mode", "templated")
    if update_mode not in ("templated", "dynamic"):
        raise ConfigError("update_mode must be 'templated' or 'dynamic'")
    update_backend = raw.get("update_backend")
    if update_mode == "dynamic" and update_backend not in backends:
        raise ConfigError("update_mode 'dynamic' needs update_backend naming a configured backend")

    corpus = _path(base, raw["corpus"]) if raw.get("corpus") else None
    if check_paths and corpus is not None and not corpus.exists():
        raise ConfigError(f"corpus {corpus} not found")

    retry_raw = raw.get("retry") or {}
    try:
        retry = RetryPolicy(**retry_raw)
    except TypeError as exc:
        raise ConfigError(f"retry: {exc}") from None

    ablation_tier = raw.get("ablation_tier", "hijack")
    if ablation_tier not in TIERS or ablation_tier == "equidistant":
        raise ConfigError("ablation_tier must be shallow, high_entropy or hijack")
    cpt = int(raw.get("chars_per_token", 4))
    if cpt <= 0:
        raise ConfigError("chars_per_token must be positive")

    return RunConfig(
        experiment_id=exp,
        global_seed=seed,
        corpus=corpus,
        output_dir=_path(base, raw.get("output_dir", "runs")),
        tiers=tiers,
        strategies=strategies,
        backends=backends,
        judge=judge,
        model_pair=str(raw.get("model_pair", "")),
        n_per_tier=int(raw.get("n_per_tier", 1000)),
        n_ablation=int(raw.get("n_ablation", 50)),
        ablation_tier=ablation_tier,
        update_mode=update_mode,
        update_backend=update_backend,
        parallelism=parallelism,
        retry=retry,
        chars_per_token=cpt,
        temperature=float(raw.get("temperature", 0.0)),
        max_output_tokens=int(raw.get("max_output_tokens", 1024)),
        simulate=raw.get("simulate") or {},
    )


def load_config(path: str | Path, *, check_paths: bool = True) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    cfg = parse_config(raw, path.parent, check_paths=check_paths)
    cfg.source = path
    return cfg


def build_backend(spec: BackendSpec, retry: RetryPolicy, trajectories: Iterable[Trajectory] = ()) -> Backend:
    o = spec.options
    if spec.kind == "scripted":
        return ScriptedBackend.from_fixture(spec.name, o["fixture"])
    if spec.kind == "synthetic":
        return SyntheticBackend(spec.name, SimulatorConfig.from_dict(o.get("simulator", {})), trajectories)
    if spec.kind == "rule":
        return RuleJudgeBackend(spec.name)
    desc = RemoteDescriptor(
        backend_id=spec.name,
        endpoint=o["endpoint"],
        model_id=o["model_id"],
        api_key_env=o["api_key_env"],
        headers=dict(o.get("headers", {})),
        timeout=float(o.get("timeout", 120)),
        max_concurrency=int(o.get("max_concurrency", 4)),
        requests_per_minute=o.get("requests_per_minute"),
    )
    return RemoteBackend(desc, retry)


def build_backends(cfg: RunConfig, trajectories: Iterable[Trajectory] = ()) -> dict[str, Backend]:
    trajectories = list(trajectories)
    out = {name: build_backend(spec, cfg.retry, trajectories) for name, spec in cfg.backends.items()}
    if cfg.judge == RULE_JUDGE and RULE_JUDGE not in out:
        out[RULE_JUDGE] = RuleJudgeBackend(RULE_JUDGE)
    return out
