"""Meaning spaces, miniature languages, corpus sampling and parsing.

Token layout for an inventory with ``E = n_amb + n_unamb`` entities and
``A`` actions::

    0 .. n_amb-1        ambiguous entities (can fill both roles)
    n_amb .. E-1        unambiguous entities (one role only)
    E .. E+A-1          actions
    E+A                 case marker ``mk``
    E+A+1               end-of-sequence (internal, never in corpora)

Meanings store entity ids directly and actions as ``0 .. A-1``; the word
for action ``a`` is token ``E + a``. The meaning-embedding row of an
entity or action is the same integer as its word token.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np


class Condition(str, enum.Enum):
    OBJECT = "object"
    SUBJECT = "subject"


class Order(str, enum.Enum):
    SOV = "SOV"
    OSV = "OSV"


class AmbClass(str, enum.Enum):
    AMB = "Amb"
    NOT_AMB = "NotAmb"


@dataclass(frozen=True)
class Inventory:
    n_amb: int = 10
    n_unamb: int = 10
    n_actions: int = 8

    def __post_init__(self):
        if self.n_amb < 2 or self.n_unamb < 0 or self.n_actions < 1:
            raise ValueError(f"degenerate inventory {self}")

    @property
    def n_entities(self) -> int:
        return self.n_amb + self.n_unamb

    @property
    def amb_entities(self) -> range:
        return range(self.n_amb)

    @property
    def unamb_entities(self) -> range:
        return range(self.n_amb, self.n_entities)

    @property
    def actions(self) -> range:
        return range(self.n_actions)

    @property
    def marker(self) -> int:
        return self.n_entities + self.n_actions

    @property
    def vocab_size(self) -> int:
        """External vocabulary: entities + actions + marker."""
        return self.marker + 1

    @property
    def eos(self) -> int:
        return self.vocab_size

    @property
    def n_meaning_rows(self) -> int:
        return self.n_entities + self.n_actions

    def action_token(self, action: int) -> int:
        return self.n_entities + action

    def is_amb(self, entity: int) -> bool:
        return 0 <= entity < self.n_amb

    def display(self, token: int) -> str:
        if token < self.n_amb:
            return f"amb{token}"
        if token < self.n_entities:
            return f"unamb{token - self.n_amb}"
        if token < self.marker:
            return f"act{token - self.n_entities}"
        if token == self.marker:
            return "mk"
        if token == self.eos:
            return "<eos>"
        raise ValueError(f"token {token} outside vocabulary")


class Meaning(NamedTuple):
    action: int
    agent: int
    patient: int


@dataclass(frozen=True)
class LanguageSpec:
    condition: Condition
    p_sov: float
    p_mk_given_sov: float
    p_mk_given_osv: float
    name: str = "custom"

    def __post_init__(self):
        for v in (self.p_sov, self.p_mk_given_sov, self.p_mk_given_osv):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"probability out of range in {self}")
        object.__setattr__(self, "condition", Condition(self.condition))

    @property
    def p_marked(self) -> float:
        return self.p_sov * self.p_mk_given_sov + (1 - self.p_sov) * self.p_mk_given_osv

    def joint(self) -> dict[tuple[Order, bool], float]:
        """Probability of each (order, marked) outcome."""
        ps, po = self.p_sov, 1.0 - self.p_sov
        return {
            (Order.SOV, True): ps * self.p_mk_given_sov,
            (Order.SOV, False): ps * (1 - self.p_mk_given_sov),
            (Order.OSV, True): po * self.p_mk_given_osv,
            (Order.OSV, False): po * (1 - self.p_mk_given_osv),
        }


PRESETS: dict[str, LanguageSpec] = {
    "dominant-obj": LanguageSpec(Condition.OBJECT, 0.60, 0.67, 0.50, "dominant-obj"),
    "neutral-obj": LanguageSpec(Condition.OBJECT, 0.50, 0.67, 0.67, "neutral-obj"),
    "neutral-subj": LanguageSpec(Condition.SUBJECT, 0.50, 0.67, 0.67, "neutral-subj"),
}


class ParseResult(NamedTuple):
    well_formed: bool
    order: Order | None = None
    marked: bool | None = None


ILL_FORMED = ParseResult(False)


# --------------------------------------------------------------------------
# Meaning space


def build_meaning_space(inv: Inventory, cond: Condition) -> list[Meaning]:
    """All legal meanings, sorted by (action, agent, patient)."""
    cond = Condition(cond)
    entities = range(inv.n_entities)
    out = []
    for action in inv.actions:
        if cond is Condition.OBJECT:
            for agent in inv.amb_entities:
                out.extend(Meaning(action, agent, p) for p in entities if p != agent)
        else:
            for agent in entities:
                out.extend(Meaning(action, agent, p) for p in inv.amb_entities if p != agent)
    out.sort()
    return out


def meaning_space_size(inv: Inventory) -> int:
    return inv.n_amb * (inv.n_unamb + inv.n_amb - 1) * inv.n_actions


def classify_ambiguity(m: Meaning, cond: Condition, inv: Inventory) -> AmbClass:
    free = m.patient if Condition(cond) is Condition.OBJECT else m.agent
    return AmbClass.AMB if inv.is_amb(free) else AmbClass.NOT_AMB


# --------------------------------------------------------------------------
# Utterances


def render(m: Meaning, order: Order, marked: bool, cond: Condition, inv: Inventory) -> list[int]:
    """Surface template for a meaning with a fixed order and marking choice."""
    subj, obj, verb = m.agent, m.patient, inv.action_token(m.action)
    first, second = (subj, obj) if order is Order.SOV else (obj, subj)
    tokens = [first, second]
    if marked:
        target = obj if Condition(cond) is Condition.OBJECT else subj
        tokens.insert(tokens.index(target) + 1, inv.marker)
    tokens.append(verb)
    return tokens


def sample_form(spec: LanguageSpec, rng: np.random.Generator) -> tuple[Order, bool]:
    order = Order.SOV if rng.random() < spec.p_sov else Order.OSV
    p_mk = spec.p_mk_given_sov if order is Order.SOV else spec.p_mk_given_osv
    return order, bool(rng.random() < p_mk)


def sample_utterance(m: Meaning, spec: LanguageSpec, rng: np.random.Generator, inv: Inventory) -> list[int]:
    order, marked = sample_form(spec, rng)
    return render(m, order, marked, spec.condition, inv)


def generate_corpus(meanings: Sequence[Meaning], spec: LanguageSpec, rng: np.random.Generator,
                    inv: Inventory) -> list[tuple[Meaning, list[int]]]:
    return [(m, sample_utterance(m, spec, rng, inv)) for m in meanings]


def parse(u: Sequence[int], m: Meaning, spec_or_cond, inv: Inventory) -> ParseResult:
    """Check ``u`` against the grammar for meaning ``m``.

    Accepted shapes are ``N1 N2 V``, ``N1 N2 mk V`` and ``N1 mk N2 V`` where
    the nouns are exactly the agent and patient of ``m`` and ``mk`` sits
    right after the noun in the marked role.
    """
    cond = spec_or_cond.condition if isinstance(spec_or_cond, LanguageSpec) else Condition(spec_or_cond)
    u = list(u)
    n = len(u)
    if n not in (3, 4) or u[-1] != inv.action_token(m.action):
        return ILL_FORMED
    mk = inv.marker
    if n == 3:
        n1, n2 = u[0], u[1]
        marked_noun = None
    elif u[2] == mk:
        n1, n2 = u[0], u[1]
        marked_noun = n2
    elif u[1] == mk:
        n1, n2 = u[0], u[2]
        marked_noun = n1
    else:
        return ILL_FORMED
    if m.agent == m.patient or {n1, n2} != {m.agent, m.patient} or mk in (n1, n2):
        return ILL_FORMED
    if marked_noun is not None:
        target = m.patient if cond is Condition.OBJECT else m.agent
        if marked_noun != target:
            return ILL_FORMED
    order = Order.SOV if n1 == m.agent else Order.OSV
    return ParseResult(True, order, marked_noun is not None)


# --------------------------------------------------------------------------
# Data splits


def split_dataset(meanings: Sequence[Meaning], rng: np.random.Generator,
                  train_fraction: float = 0.8) -> tuple[list[Meaning], list[Meaning]]:
    ordered = sorted(meanings)
    perm = rng.permutation(len(ordered))
    n_train = int(round(train_fraction * len(ordered)))
    train = sorted(ordered[i] for i in perm[:n_train])
    test = sorted(ordered[i] for i in perm[n_train:])
    return train, test


def _role_requirements(inv: Inventory, cond: Condition) -> tuple[set, set, set]:
    """Entities that must appear as agent, as patient, and actions that must appear."""
    all_entities = set(range(inv.n_entities))
    amb = set(inv.amb_entities)
    if Condition(cond) is Condition.OBJECT:
        return amb, all_entities, set(inv.actions)
    return all_entities, amb, set(inv.actions)


def covers_all(meanings: Sequence[Meaning], inv: Inventory, cond: Condition) -> bool:
    need_agent, need_patient, need_action = _role_requirements(inv, cond)
    agents = {m.agent for m in meanings}
    patients = {m.patient for m in meanings}
    actions = {m.action for m in meanings}
    return need_agent <= agents and need_patient <= patients and need_action <= actions


class CoverageError(RuntimeError):
    pass


def resample_sl_subset(train: Sequence[Meaning], rng: np.random.Generator, inv: Inventory,
                       cond: Condition, fraction: float = 0.667, max_attempts: int = 1000) -> list[Meaning]:
    """Uniform subset of ``floor(fraction * len(train))`` meanings in which every
    entity is seen in each role it can take and every action is seen."""
    ordered = sorted(train)
    k = math.floor(fraction * len(ordered))
    for _ in range(max_attempts):
        idx = rng.choice(len(ordered), size=k, replace=False)
        subset = sorted(ordered[i] for i in idx)
        if covers_all(subset, inv, cond):
            return subset
    raise CoverageError(f"no covering subset of size {k} after {max_attempts} attempts")


# --------------------------------------------------------------------------
# Files


def write_corpus(path, corpus: Sequence[tuple[Meaning, Sequence[int]]]) -> None:
    lines = [f"{m.action}\t{m.agent}\t{m.patient}\t{' '.join(map(str, u))}\n" for m, u in corpus]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_corpus(path) -> list[tuple[Meaning, list[int]]]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        a, ag, pt, toks = line.split("\t")
        out.append((Meaning(int(a), int(ag), int(pt)), [int(t) for t in toks.split()]))
    return out


def write_lexicon(path, inv: Inventory) -> None:
    lines = [f"{t}\t{inv.display(t)}\n" for t in range(inv.vocab_size + 1)]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_lexicon(path) -> dict[int, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            i, s = line.split("\t")
            out[int(i)] = s
    return out
