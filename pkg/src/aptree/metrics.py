"""Exact match, prefix exact match and corpus-level BLEU-4."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .ast import tokenize_code

PREFIX_PERCENTS = (5, 10, 20, 50)


def exact_match(pred: str, gold: str) -> int:
    return int(tokenize_code(pred) == tokenize_code(gold))


def prefix_length(gold_len: int, percent: float) -> int:
    return math.ceil(percent / 100 * gold_len)


def prefix_match(pred: Sequence, gold: Sequence, percent: float) -> int:
    """1 iff the first ceil(percent% of len(gold)) elements agree."""
    if not gold:
        raise ValueError("empty gold sequence")
    if not 0 < percent <= 100:
        raise ValueError(f"percent must be in (0, 100], got {percent}")
    k = prefix_length(len(gold), percent)
    if len(pred) < k:
        return 0
    return int(list(pred[:k]) == list(gold[:k]))


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(predictions: Sequence[Sequence[str]], references: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """Corpus BLEU, one reference per prediction, uniform weights, no smoothing."""
    if len(predictions) != len(references):
        raise ValueError("predictions and references differ in length")
    if not predictions:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    pred_len = ref_len = 0
    for pred, ref in zip(predictions, references):
        pred_len += len(pred)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            p, r = _ngrams(pred, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in p.items())
            totals[n - 1] += max(len(pred) - n + 1, 0)
    if min(matches) == 0:
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matches, totals)) / max_n
    bp = 1.0 if pred_len > ref_len else math.exp(1 - ref_len / pred_len)
    return bp * math.exp(log_precision)


@dataclass
class EvalReport:
    count: int
    em: float
    bleu: float
    prefix_actions: dict[int, float] = field(default_factory=dict)
    prefix_code: dict[int, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [f"{'examples':<14}{self.count}", f"{'EM':<14}{self.em:.4f}", f"{'BLEU-4':<14}{self.bleu:.4f}"]
        if self.prefix_actions:
            rows.append(f"{'prefix %':<14}" + "".join(f"{p:>8}" for p in self.prefix_actions))
            rows.append(f"{'  actions':<14}" + "".join(f"{v:>8.4f}" for v in self.prefix_actions.values()))
        if self.prefix_code:
            rows.append(f"{'  code':<14}" + "".join(f"{v:>8.4f}" for v in self.prefix_code.values()))
        return "\n".join(rows)


def evaluate(pred_codes: Sequence[str], gold_codes: Sequence[str],
             pred_actions: Sequence[Sequence[str]] | None = None,
             gold_actions: Sequence[Sequence[str]] | None = None,
             percents: Sequence[int] = PREFIX_PERCENTS) -> EvalReport:
    """Aggregate metrics; action sequences are compared as their text forms."""
    if len(pred_codes) != len(gold_codes):
        raise ValueError("prediction and gold lists differ in length")
    n = len(gold_codes)
    if n == 0:
        raise ValueError("nothing to evaluate")
    pred_toks = [tokenize_code(p) for p in pred_codes]
    gold_toks = [tokenize_code(g) for g in gold_codes]
    report = EvalReport(
        count=n,
        em=sum(exact_match(p, g) for p, g in zip(pred_codes, gold_codes)) / n,
        bleu=bleu4(pred_toks, gold_toks),
        prefix_code={p: sum(prefix_match(a, b, p) for a, b in zip(pred_toks, gold_toks)) / n for p in percents},
    )
    if pred_actions is not None and gold_actions is not None:
        report.prefix_actions = {
            p: sum(prefix_match(a, b, p) for a, b in zip(pred_actions, gold_actions)) / n for p in percents
        }
    return report
