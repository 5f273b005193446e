"""Accuracy, production preferences and the ambiguity split.

Every production-based statistic is computed on well-formed productions
only; a class with no well-formed production has undefined proportions
(``nan``) and is excluded from seed averages rather than imputed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .agents import Agent, meanings_to_array, pad_utterances, unpad
from .language import AmbClass, Condition, Inventory, LanguageSpec, Meaning, Order, parse, classify_ambiguity

CLASSES = ("All", AmbClass.AMB.value, AmbClass.NOT_AMB.value)
PHASES = ("PostSL", "PostRL")


@dataclass
class ProductionStats:
    ambiguity_class: str
    n_total: int = 0
    n_wellformed: int = 0
    n_sov: int = 0
    n_marked: int = 0

    @property
    def defined(self) -> bool:
        return self.n_wellformed > 0

    @property
    def p_sov(self) -> float:
        return self.n_sov / self.n_wellformed if self.defined else math.nan

    @property
    def p_marked(self) -> float:
        return self.n_marked / self.n_wellformed if self.defined else math.nan

    @property
    def ill_formed_ratio(self) -> float:
        return 1.0 - self.n_wellformed / self.n_total if self.n_total else math.nan


def class_masks(meanings: Sequence[Meaning], cond: Condition, inv: Inventory) -> dict[str, np.ndarray]:
    amb = np.array([classify_ambiguity(m, cond, inv) is AmbClass.AMB for m in meanings], dtype=bool)
    return {"All": np.ones(len(meanings), dtype=bool), "Amb": amb, "NotAmb": ~amb}


def produce(agent: Agent, meanings: Sequence[Meaning], greedy: bool = True,
            rng: np.random.Generator | None = None) -> list[list[int]]:
    tokens, lengths, _, _ = agent.decode(meanings_to_array(meanings), greedy=greedy, rng=rng)
    return unpad(tokens, lengths)


def production_preferences(agent: Agent | None, meanings: Sequence[Meaning], spec: LanguageSpec,
                           inv: Inventory, utterances: Sequence[Sequence[int]] | None = None,
                           filter_ill_formed: bool = True) -> dict[str, ProductionStats]:
    """Order and marker proportions of an agent's productions per ambiguity class.

    Pass ``utterances`` to score precomputed productions instead of decoding.
    With ``filter_ill_formed=False`` every production counts towards the
    denominator and ill-formed ones count as neither SOV nor marked.
    """
    if utterances is None:
        utterances = produce(agent, meanings)
    masks = class_masks(meanings, spec.condition, inv)
    out = {c: ProductionStats(c) for c in CLASSES}
    for i, (m, u) in enumerate(zip(meanings, utterances)):
        res = parse(u, m, spec, inv)
        for c in CLASSES:
            if not masks[c][i]:
                continue
            s = out[c]
            s.n_total += 1
            if res.well_formed or not filter_ill_formed:
                s.n_wellformed += 1
            if res.well_formed:
                s.n_sov += res.order is Order.SOV
                s.n_marked += bool(res.marked)
    return out


def speaking_accuracy(agent: Agent | None, meanings: Sequence[Meaning], spec: LanguageSpec, inv: Inventory,
                      utterances: Sequence[Sequence[int]] | None = None) -> float:
    """Share of productions that are a valid variant for their meaning."""
    if utterances is None:
        utterances = produce(agent, meanings)
    ok = [parse(u, m, spec, inv).well_formed for m, u in zip(meanings, utterances)]
    return float(np.mean(ok)) if ok else math.nan


def listening_accuracy(agent: Agent, corpus: Sequence[tuple[Meaning, Sequence[int]]]) -> float:
    """Exact-match rate of the listener on reference (meaning, utterance) pairs."""
    M = meanings_to_array([m for m, _ in corpus])
    tokens, lengths = pad_utterances([u for _, u in corpus])
    return float(np.all(agent.predict_batch(tokens, lengths) == M, axis=1).mean())


def exact_matches(listener: Agent, meanings: Sequence[Meaning], utterances: Sequence[Sequence[int]]) -> np.ndarray:
    tokens, lengths = pad_utterances(utterances)
    return np.all(listener.predict_batch(tokens, lengths) == meanings_to_array(meanings), axis=1)


def communication_accuracy(speaker: Agent, listener: Agent, meanings: Sequence[Meaning], cond: Condition,
                           inv: Inventory, utterances: Sequence[Sequence[int]] | None = None,
                           masks: dict[str, np.ndarray] | None = None) -> dict[str, float]:
    if utterances is None:
        utterances = produce(speaker, meanings)
    hits = exact_matches(listener, meanings, utterances)
    masks = class_masks(meanings, cond, inv) if masks is None else masks
    return {c: float(hits[mk].mean()) if mk.any() else math.nan for c, mk in masks.items()}


def pair_communication_accuracy(pair: Sequence[Agent], meanings: Sequence[Meaning], cond: Condition,
                                inv: Inventory) -> dict[str, float]:
    """Accuracy per class averaged over every speaker -> partner direction."""
    masks = class_masks(meanings, cond, inv)
    per_dir = [communication_accuracy(a, pair[(i + 1) % len(pair)], meanings, cond, inv, masks=masks)
               for i, a in enumerate(pair)]
    return {c: float(np.mean([d[c] for d in per_dir])) for c in CLASSES}


# --------------------------------------------------------------------------
# Reports


@dataclass
class AgentEval:
    agent_id: int
    stats: dict[str, ProductionStats]
    comm_acc: dict[str, float]  # this agent speaking to its partner
    speaking_acc: float
    listening_acc: float


@dataclass
class EvalReport:
    phase: str
    agents: list[AgentEval] = field(default_factory=list)

    def pair_comm_acc(self) -> dict[str, float]:
        """Communication accuracy averaged over both speaking directions."""
        return {c: float(np.mean([a.comm_acc[c] for a in self.agents])) for c in CLASSES}

    def ill_formed_ratio(self) -> float:
        return float(np.mean([a.stats["All"].ill_formed_ratio for a in self.agents]))


def evaluate_pair(pair: Sequence[Agent], test: Sequence[Meaning],
                  test_corpora: Sequence[Sequence[tuple[Meaning, Sequence[int]]]],
                  spec: LanguageSpec, inv: Inventory, phase: str, greedy: bool = True,
                  rng: np.random.Generator | None = None) -> EvalReport:
    """Evaluate both agents on the held-out meanings; read-only on parameters."""
    masks = class_masks(test, spec.condition, inv)
    utts = [produce(a, test, greedy=greedy, rng=rng) for a in pair]
    report = EvalReport(phase)
    for i, agent in enumerate(pair):
        partner = pair[(i + 1) % len(pair)]
        report.agents.append(AgentEval(
            agent_id=i,
            stats=production_preferences(agent, test, spec, inv, utterances=utts[i]),
            comm_acc=communication_accuracy(agent, partner, test, spec.condition, inv,
                                            utterances=utts[i], masks=masks),
            speaking_acc=speaking_accuracy(agent, test, spec, inv, utterances=utts[i]),
            listening_acc=listening_accuracy(agent, test_corpora[i]),
        ))
    return report


def dcm_delta(stats: dict[str, ProductionStats]) -> tuple[float, float]:
    """(Δ p_marked, Δ p_sov) as Amb minus NotAmb; nan when either is undefined."""
    amb, notamb = stats["Amb"], stats["NotAmb"]
    if not (amb.defined and notamb.defined):
        return math.nan, math.nan
    return amb.p_marked - notamb.p_marked, amb.p_sov - notamb.p_sov


# --------------------------------------------------------------------------
# Summary statistics


def sign_test(values: Sequence[float]) -> float:
    """Two-sided sign test p-value for a zero median; ties and nans dropped."""
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    pos, neg = int(np.sum(v > 0)), int(np.sum(v < 0))
    if pos + neg == 0:
        return 1.0
    return float(stats.binomtest(pos, pos + neg, 0.5).pvalue)


def bootstrap_ci(values: Sequence[float], n_resamples: int = 10_000, level: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    v = np.asarray([x for x in values if not math.isnan(x)], dtype=float)
    if len(v) == 0:
        return math.nan, math.nan
    rng = np.random.default_rng(seed)
    means = v[rng.integers(0, len(v), size=(n_resamples, len(v)))].mean(axis=1)
    a = (1 - level) / 2
    return float(np.quantile(means, a)), float(np.quantile(means, 1 - a))


def summarize(values: Sequence[float], seed: int = 0) -> dict[str, float]:
    """Mean, sd, bootstrap CI, sign-test p and exclusion count, nans excluded."""
    v = [x for x in values if not math.isnan(x)]
    lo, hi = bootstrap_ci(v, seed=seed)
    return {
        "n": len(v),
        "excluded": len(values) - len(v),
        "mean": float(np.mean(v)) if v else math.nan,
        "sd": float(np.std(v, ddof=1)) if len(v) > 1 else math.nan,
        "ci_low": lo,
        "ci_high": hi,
        "sign_p": sign_test(v),
    }
