"""Configuration, per-pair pipeline and the parallel sweep driver.

Seeds: agent ``k`` of pair ``p`` uses ``base_seed + 2 * p + k``. Each agent
seed spawns independent PCG64 streams for weight init (0), data sampling
(1) and training (2). Pair-level randomness (train/test split, role flips,
per-turn meaning draws) uses the stream ``(base_seed, 3, p)``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .agents import Agent, ModelConfig
from .evaluation import CLASSES, EvalReport, evaluate_pair, pair_communication_accuracy
from .language import (
    PRESETS,
    Condition,
    Inventory,
    LanguageSpec,
    Meaning,
    build_meaning_space,
    generate_corpus,
    resample_sl_subset,
    split_dataset,
    write_corpus,
    write_lexicon,
)
from .nn import make_rng
from .training import RlConfig, SlConfig, TurnLog, run_rl, train_supervised

log = logging.getLogger(__name__)

DATA_STREAM = 1
PAIR_STREAM = 3
EVAL_STREAM = 4


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Config


@dataclass
class ExperimentConfig:
    language: LanguageSpec = PRESETS["dominant-obj"]
    inventory: Inventory = Inventory()
    model: ModelConfig = ModelConfig()
    sl: SlConfig = SlConfig()
    rl: RlConfig = RlConfig()
    n_pairs: int = 50
    base_seed: int = 0
    train_fraction: float = 0.8
    eval_interval: int = 1
    eval_mode: str = "greedy"
    save_checkpoints: bool = True
    jobs: int = 1
    out: str = "runs/default"

    # fields that do not influence results
    RUNTIME_FIELDS = ("jobs", "out")

    def __post_init__(self):
        if self.n_pairs < 1:
            raise ConfigError("n_pairs must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")
        if self.eval_mode not in ("greedy", "sample"):
            raise ConfigError("eval_mode must be 'greedy' or 'sample'")
        if self.eval_interval < 0:
            raise ConfigError("eval_interval must be >= 0")

    def agent_seed(self, pair_id: int, k: int) -> int:
        return self.base_seed + 2 * pair_id + k

    def to_dict(self) -> dict:
        lang = asdict(self.language)
        lang["condition"] = self.language.condition.value
        if self.language.name in PRESETS and PRESETS[self.language.name] == self.language:
            lang = {"preset": self.language.name}
        return {
            "experiment": {
                "n_pairs": self.n_pairs, "base_seed": self.base_seed,
                "train_fraction": self.train_fraction, "eval_interval": self.eval_interval,
                "eval_mode": self.eval_mode, "save_checkpoints": self.save_checkpoints,
                "jobs": self.jobs, "out": self.out,
            },
            "language": lang,
            "inventory": asdict(self.inventory),
            "model": asdict(self.model),
            "sl": asdict(self.sl),
            "rl": asdict(self.rl),
        }

    @classmethod
    def from_dict(cls, d: dict | None) -> "ExperimentConfig":
        d = dict(d or {})
        unknown = set(d) - {"experiment", "language", "inventory", "model", "sl", "rl"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            kw: dict[str, Any] = dict(d.get("experiment") or {})
            bad = set(kw) - {f.name for f in fields(cls)} - {"language", "inventory", "model", "sl", "rl"}
            if bad:
                raise ConfigError(f"unknown experiment keys: {sorted(bad)}")
            kw["language"] = parse_language(d.get("language") or {"preset": "dominant-obj"})
            kw["inventory"] = _build(Inventory, d.get("inventory"), "inventory")
            kw["model"] = _build(ModelConfig, d.get("model"), "model")
            kw["sl"] = _build(SlConfig, d.get("sl"), "sl")
            kw["rl"] = _build(RlConfig, d.get("rl"), "rl")
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def replace(self, **kw) -> "ExperimentConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return ExperimentConfig(**d)

    def config_hash(self) -> str:
        d = self.to_dict()
        for k in self.RUNTIME_FIELDS:
            d["experiment"].pop(k)
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _build(klass, d, section):
    d = d or {}
    names = {f.name for f in fields(klass)}
    bad = set(d) - names
    if bad:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(bad)}")
    return klass(**d)


def parse_language(d: dict | str) -> LanguageSpec:
    if isinstance(d, str):
        d = {"preset": d}
    if "preset" in d:
        if len(d) > 1:
            raise ConfigError("language: 'preset' excludes other keys")
        if d["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {d['preset']!r}; choose from {sorted(PRESETS)}")
        return PRESETS[d["preset"]]
    need = {"condition", "p_sov", "p_mk_given_sov", "p_mk_given_osv"}
    if not need <= set(d) or set(d) - need - {"name"}:
        raise ConfigError(f"custom language needs exactly {sorted(need)} (+ optional name)")
    return LanguageSpec(Condition(d["condition"]), float(d["p_sov"]), float(d["p_mk_given_sov"]),
                        float(d["p_mk_given_osv"]), d.get("name", "custom"))


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return ExperimentConfig.from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# --------------------------------------------------------------------------
# Output helpers


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r[h]) for h in header])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


EVAL_COLUMNS = ("language", "pair_id", "agent_id", "agent_seed", "phase", "ambiguity_class",
                "n_total", "n_wellformed", "n_sov", "n_marked", "p_sov", "p_marked",
                "ill_formed_ratio", "defined", "comm_acc", "pair_comm_acc",
                "speaking_acc", "listening_acc")
TURN_COLUMNS = ("pair_id", "turn", "self_play", "speaker_agent", "mean_reward", "mean_acc")
ACC_COLUMNS = ("pair_id", "turn", "acc_all", "acc_amb", "acc_notamb")
SL_COLUMNS = ("pair_id", "agent_id", "epoch", "speaker_loss", "listener_loss")


def eval_rows(report: EvalReport, cfg: ExperimentConfig, pair_id: int) -> list[dict]:
    rows = []
    pair_acc = report.pair_comm_acc()
    for a in report.agents:
        for c in CLASSES:
            s = a.stats[c]
            rows.append({
                "language": cfg.language.name, "pair_id": pair_id, "agent_id": a.agent_id,
                "agent_seed": cfg.agent_seed(pair_id, a.agent_id), "phase": report.phase,
                "ambiguity_class": c, "n_total": s.n_total, "n_wellformed": s.n_wellformed,
                "n_sov": s.n_sov, "n_marked": s.n_marked, "p_sov": s.p_sov, "p_marked": s.p_marked,
                "ill_formed_ratio": s.ill_formed_ratio, "defined": s.defined,
                "comm_acc": a.comm_acc[c], "pair_comm_acc": pair_acc[c],
                "speaking_acc": a.speaking_acc, "listening_acc": a.listening_acc,
            })
    return rows


# --------------------------------------------------------------------------
# One pair


@dataclass
class PairData:
    pair_id: int
    train: list[Meaning]
    test: list[Meaning]
    sl_corpora: list[list]
    test_corpora: list[list]
    pair_rng: np.random.Generator


def prepare_pair(cfg: ExperimentConfig, pair_id: int) -> PairData:
    """Deterministic data for one pair: split, per-agent SL corpora and test references."""
    inv, spec = cfg.inventory, cfg.language
    space = build_meaning_space(inv, spec.condition)
    pair_rng = make_rng(cfg.base_seed, PAIR_STREAM, pair_id)
    train, test = split_dataset(space, pair_rng, cfg.train_fraction)
    sl_corpora, test_corpora = [], []
    for k in range(2):
        rng = make_rng(cfg.agent_seed(pair_id, k), DATA_STREAM)
        subset = resample_sl_subset(train, rng, inv, spec.condition, cfg.sl.subset_fraction)
        sl_corpora.append(generate_corpus(subset, spec, rng, inv))
        test_corpora.append(generate_corpus(test, spec, rng, inv))
    return PairData(pair_id, train, test, sl_corpora, test_corpora, pair_rng)


def pair_dir(out: Path, pair_id: int) -> Path:
    return Path(out) / "pairs" / f"pair_{pair_id:03d}"


ARTIFACTS = ("eval.csv", "turns.csv", "accuracy.csv", "sl_curve.csv")


def checkpoint_names() -> list[str]:
    return [f"agent{k}_{ph}.ckpt" for k in range(2) for ph in ("sl", "rl")]


def _evaluate(cfg, pair, data, phase, pair_id):
    greedy = cfg.eval_mode == "greedy"
    rng = None if greedy else make_rng(cfg.base_seed, EVAL_STREAM, pair_id, ("PostSL", "PostRL").index(phase))
    return evaluate_pair(pair, data.test, data.test_corpora, cfg.language, cfg.inventory, phase,
                         greedy=greedy, rng=rng)


def run_pair(cfg: ExperimentConfig, pair_id: int) -> dict:
    """Full pipeline for one pair; writes its artifacts and returns a status record."""
    t0 = time.perf_counter()
    out = pair_dir(Path(cfg.out), pair_id)
    out.mkdir(parents=True, exist_ok=True)
    inv, spec = cfg.inventory, cfg.language
    data = prepare_pair(cfg, pair_id)
    for k in range(2):
        write_corpus(out / f"corpus_agent{k}.tsv", data.sl_corpora[k])
    write_corpus(out / "test_reference_agent0.tsv", data.test_corpora[0])
    write_corpus(out / "test_reference_agent1.tsv", data.test_corpora[1])

    pair = [Agent(inv, cfg.agent_seed(pair_id, k), cfg.model) for k in range(2)]
    sl_rows = []
    for k, agent in enumerate(pair):
        for rec in train_supervised(agent, data.sl_corpora[k], cfg.sl):
            sl_rows.append({"pair_id": pair_id, "agent_id": k, **rec})
        if cfg.save_checkpoints:
            agent.save(out / f"agent{k}_sl.ckpt", {"pair_id": pair_id, "phase": "PostSL"})
    rows = eval_rows(_evaluate(cfg, pair, data, "PostSL", pair_id), cfg, pair_id)

    acc_rows = []

    def record_accuracy(turn, _log=None):
        every = cfg.eval_interval
        if turn == 0 or turn == cfg.rl.inter_turns or (every and turn % every == 0):
            acc = pair_communication_accuracy(pair, data.test, spec.condition, inv)
            acc_rows.append({"pair_id": pair_id, "turn": turn, "acc_all": acc["All"],
                             "acc_amb": acc["Amb"], "acc_notamb": acc["NotAmb"]})

    record_accuracy(0)
    logs: list[TurnLog] = run_rl(pair, data.train, cfg.rl, data.pair_rng, record_accuracy)
    if cfg.save_checkpoints:
        for k, agent in enumerate(pair):
            agent.save(out / f"agent{k}_rl.ckpt", {"pair_id": pair_id, "phase": "PostRL"})
    rows += eval_rows(_evaluate(cfg, pair, data, "PostRL", pair_id), cfg, pair_id)
    turn_rows = [{"pair_id": pair_id, **asdict(lg)} for lg in logs]

    atomic_write_text(out / "sl_curve.csv", csv_text(SL_COLUMNS, sl_rows))
    atomic_write_text(out / "turns.csv", csv_text(TURN_COLUMNS, turn_rows))
    atomic_write_text(out / "accuracy.csv", csv_text(ACC_COLUMNS, acc_rows))
    atomic_write_text(out / "eval.csv", csv_text(EVAL_COLUMNS, rows))
    status = {
        "pair_id": pair_id,
        "status": "completed",
        "config_hash": cfg.config_hash(),
        "agent_seeds": [cfg.agent_seed(pair_id, k) for k in range(2)],
        "artifacts": {name: str(out / name) for name in
                      list(ARTIFACTS) + (checkpoint_names() if cfg.save_checkpoints else [])},
        "wall_clock_s": round(time.perf_counter() - t0, 3),
    }
    atomic_write_text(out / "status.json", json.dumps(status, indent=2, sort_keys=True))
    return status


def _safe_run_pair(cfg: ExperimentConfig, pair_id: int) -> dict:
    try:
        return run_pair(cfg, pair_id)
    except Exception as e:  # one failing pair must not sink the sweep
        log.error("pair %d failed: %s", pair_id, e)
        return {"pair_id": pair_id, "status": "failed", "error": f"{type(e).__name__}: {e}",
                "traceback": traceback.format_exc()}


def completed_status(cfg: ExperimentConfig, pair_id: int) -> dict | None:
    """Status of a previously completed pair that can be reused, else None."""
    path = pair_dir(Path(cfg.out), pair_id) / "status.json"
    try:
        status = json.loads(path.read_text())
    except (OSError, ValueError):
        return None
    if status.get("status") != "completed" or status.get("config_hash") != cfg.config_hash():
        return None
    if not all(Path(p).exists() for p in status.get("artifacts", {}).values()):
        return None
    return status


def _worker_init():
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(1)
    except ImportError:
        pass


# --------------------------------------------------------------------------
# Sweep


@dataclass
class RunManifest:
    config_hash: str
    config: dict
    pairs: list[dict] = field(default_factory=list)
    aggregates: dict[str, str] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    @property
    def failed(self) -> list[int]:
        return [p["pair_id"] for p in self.pairs if p["status"] != "completed"]

    @property
    def completed(self) -> list[int]:
        return [p["pair_id"] for p in self.pairs if p["status"] == "completed"]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def aggregate(out: Path, pair_ids: Sequence[int]) -> dict[str, str]:
    """Concatenate per-pair CSVs (in pair order) into run-level CSVs."""
    paths = {}
    for name in ARTIFACTS:
        parts = []
        for i, pid in enumerate(sorted(pair_ids)):
            text = (pair_dir(out, pid) / name).read_text()
            parts.append(text if i == 0 else text.split("\n", 1)[1])
        if parts:
            atomic_write_text(out / name, "".join(parts))
            paths[name] = str(out / name)
    return paths


def run_experiment(cfg: ExperimentConfig, resume: bool = True) -> RunManifest:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    atomic_write_text(out / "config.yaml", dump_config(cfg))
    write_lexicon(out / "lexicon.tsv", cfg.inventory)
    results: dict[int, dict] = {}
    todo = []
    for pid in range(cfg.n_pairs):
        st = completed_status(cfg, pid) if resume else None
        if st is not None:
            log.info("pair %d already complete; reusing", pid)
            results[pid] = st
        else:
            todo.append(pid)
    if cfg.jobs == 1 or len(todo) <= 1:
        for pid in todo:
            results[pid] = _safe_run_pair(cfg, pid)
            log.info("pair %d: %s", pid, results[pid]["status"])
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_worker_init) as pool:
            futures = {pid: pool.submit(_safe_run_pair, cfg, pid) for pid in todo}
            for pid, fut in futures.items():
                try:
                    results[pid] = fut.result()
                except Exception as e:  # worker process died
                    results[pid] = {"pair_id": pid, "status": "failed", "error": repr(e)}
                log.info("pair %d: %s", pid, results[pid]["status"])
    manifest = RunManifest(cfg.config_hash(), cfg.to_dict(), [results[p] for p in sorted(results)])
    manifest.aggregates = aggregate(out, manifest.completed)
    manifest.wall_clock_s = round(time.perf_counter() - t0, 3)
    atomic_write_text(out / "manifest.json", manifest.to_json())
    return manifest


def reevaluate(run_dir, phases: Sequence[str] = ("PostSL", "PostRL")) -> list[dict]:
    """Rebuild eval rows for every completed pair from its checkpoints."""
    run_dir = Path(run_dir)
    cfg = load_config(run_dir / "config.yaml").replace(out=str(run_dir))
    rows = []
    for pid in range(cfg.n_pairs):
        d = pair_dir(run_dir, pid)
        if not all((d / f"agent{k}_{'sl' if ph == 'PostSL' else 'rl'}.ckpt").exists()
                   for k in range(2) for ph in phases):
            continue
        data = prepare_pair(cfg, pid)
        for ph in phases:
            tag = "sl" if ph == "PostSL" else "rl"
            pair = [Agent.load(d / f"agent{k}_{tag}.ckpt") for k in range(2)]
            rows += eval_rows(_evaluate(cfg, pair, data, ph, pid), cfg, pid)
    return rows
