"""Character-level ROUGE-1/2/L and n-gram duplicate rates."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, overlap: float, cand_total: float, ref_total: float) -> "RougeScore":
        p = overlap / cand_total if cand_total else 0.0
        r = overlap / ref_total if ref_total else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f)


def ngrams(text: str, n: int) -> Counter:
    return Counter(text[i:i + n] for i in range(len(text) - n + 1))


def rouge_n(candidate: str, reference: str, n: int = 1) -> RougeScore:
    cand, ref = ngrams(candidate, n), ngrams(reference, n)
    overlap = sum((cand & ref).values())
    return RougeScore.from_counts(overlap, sum(cand.values()), sum(ref.values()))


def lcs_length(a: str, b: str) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if ca == cb else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> RougeScore:
    return RougeScore.from_counts(lcs_length(candidate, reference), len(candidate), len(reference))


def duplicate_rate(summary: str, n: int, distinct: bool = False) -> float:
    """Share of n-gram occurrences whose n-gram occurs at least twice.

    With ``distinct=True``: 1 - (#distinct n-grams / #n-gram occurrences).
    """
    grams = ngrams(summary, n)
    total = sum(grams.values())
    if not total:
        return 0.0
    if distinct:
        return 1.0 - len(grams) / total
    return sum(c for c in grams.values() if c >= 2) / total


def corpus_scores(candidates: Sequence[str], references: Sequence[str]) -> dict[str, float]:
    """Mean F1 per ROUGE variant plus mean 1..4-gram duplicate rates of the candidates."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    k = max(len(candidates), 1)
    out = {
        "rouge-1": sum(rouge_n(c, r, 1).f1 for c, r in zip(candidates, references)) / k,
        "rouge-2": sum(rouge_n(c, r, 2).f1 for c, r in zip(candidates, references)) / k,
        "rouge-l": sum(rouge_l(c, r).f1 for c, r in zip(candidates, references)) / k,
    }
    for n in (1, 2, 3, 4):
        out[f"dup-{n}"] = sum(duplicate_rate(c, n) for c in candidates) / k
    return out


def write_report(path: str | Path, scores: dict[str, float]) -> None:
    """``metric\\tvalue`` lines, plus a JSON summary next to it."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as f:
        for k, v in scores.items():
            f.write(f"{k}\t{v:.6f}\n")
    path.with_suffix(".json").write_text(json.dumps(scores, indent=2, sort_keys=True), encoding="utf-8")

