"""Aggregate statistics over the tidy evaluation CSV."""

from __future__ import annotations

import math
from collections import defaultdict
from typing import Iterable

import numpy as np

from .evaluation import CLASSES, PHASES, summarize

METRICS = ("p_sov", "p_marked", "comm_acc", "speaking_acc", "listening_acc", "ill_formed_ratio")


def _f(x) -> float:
    try:
        return float(x)
    except (TypeError, ValueError):
        return math.nan


def group_rows(rows: Iterable[dict]) -> dict[tuple, list[dict]]:
    out = defaultdict(list)
    for r in rows:
        out[(r["language"], r["phase"], r["ambiguity_class"])].append(r)
    return out


def agent_deltas(rows: Iterable[dict], phase: str = "PostRL") -> dict[str, dict[tuple, tuple[float, float]]]:
    """Per language, ``{(pair, agent): (d_marked, d_sov)}`` with Amb minus NotAmb."""
    by = defaultdict(dict)
    for r in rows:
        if r["phase"] == phase and r["ambiguity_class"] in ("Amb", "NotAmb"):
            by[(r["language"], r["pair_id"], r["agent_id"])][r["ambiguity_class"]] = r
    out: dict[str, dict] = defaultdict(dict)
    for (lang, pid, aid), cls in sorted(by.items()):
        a, n = cls.get("Amb"), cls.get("NotAmb")
        if a is None or n is None:
            continue
        out[lang][(int(pid), int(aid))] = (_f(a["p_marked"]) - _f(n["p_marked"]),
                                          _f(a["p_sov"]) - _f(n["p_sov"]))
    return dict(out)


def summary_table(rows: list[dict]) -> list[dict]:
    """One record per (language, phase, class, metric) with mean/sd/CI."""
    out = []
    groups = group_rows(rows)
    langs = sorted({k[0] for k in groups})
    for lang in langs:
        for phase in PHASES:
            for c in CLASSES:
                g = groups.get((lang, phase, c), [])
                if not g:
                    continue
                for metric in METRICS:
                    vals = [_f(r[metric]) for r in g]
                    s = summarize(vals)
                    out.append({"language": lang, "phase": phase, "ambiguity_class": c,
                                "metric": metric, **s})
        for phase in PHASES:
            deltas = agent_deltas(rows, phase).get(lang, {})
            for j, metric in enumerate(("delta_p_marked", "delta_p_sov")):
                vals = [d[j] for d in deltas.values()]
                if vals:
                    out.append({"language": lang, "phase": phase, "ambiguity_class": "Amb-NotAmb",
                                "metric": metric, **summarize(vals)})
    return out


def format_table(summary: list[dict]) -> str:
    head = f"{'language':<14}{'phase':<8}{'class':<12}{'metric':<18}{'n':>4}{'mean':>9}{'sd':>8}  {'95% CI':<17}{'sign p':>9}"
    lines = [head, "-" * len(head)]
    for s in summary:
        ci = f"[{s['ci_low']:.3f}, {s['ci_high']:.3f}]"
        lines.append(f"{s['language']:<14}{s['phase']:<8}{s['ambiguity_class']:<12}{s['metric']:<18}"
                     f"{s['n']:>4}{s['mean']:>9.3f}{s['sd']:>8.3f}  {ci:<17}{s['sign_p']:>9.2g}")
    return "\n".join(lines)


def accuracy_curve(rows: Iterable[dict]) -> dict[str, list[tuple[int, float, float]]]:
    """Mean and sd of the pair accuracy per turn, per class column."""
    by_turn = defaultdict(lambda: defaultdict(list))
    for r in rows:
        for col in ("acc_all", "acc_amb", "acc_notamb"):
            by_turn[col][int(r["turn"])].append(_f(r[col]))
    return {col: [(t, float(np.mean(v)), float(np.std(v))) for t, v in sorted(turns.items())]
            for col, turns in by_turn.items()}
