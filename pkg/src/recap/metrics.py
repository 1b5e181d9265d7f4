"""Corpus- and sentence-level BLEU-4, ROUGE-L, and CIDEr over token sequences.

Tokens may be ids or strings; all three metrics are pure functions of the
token sequences, so any consistent relabeling leaves the scores unchanged.
The plain CIDEr form (normalized term frequencies, no length penalty, no
clipping) is the default and doubles as the policy-gradient reward; the
``variant="d"`` form adds the Gaussian length penalty (sigma 6) and count
clipping of the CIDEr-D evaluation-server implementation.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Sequence

Token = Hashable
Sentence = Sequence[Token]

MAX_NGRAM = 4
ROUGE_BETA = 1.2
CIDER_D_SIGMA = 6.0


class MetricInputError(ValueError):
    pass


def ngram_counts(tokens: Sentence, max_n: int = MAX_NGRAM) -> Counter:
    counts: Counter = Counter()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


def _check_inputs(candidates, reference_sets) -> None:
    if len(candidates) == 0:
        raise MetricInputError("empty candidate list")
    if len(candidates) != len(reference_sets):
        raise MetricInputError(
            f"{len(candidates)} candidates but {len(reference_sets)} reference sets"
        )
    for refs in reference_sets:
        if len(refs) == 0:
            raise MetricInputError("a reference set is empty")


def bleu4(
    candidates: Sequence[Sentence], reference_sets: Sequence[Sequence[Sentence]]
) -> float:
    """Corpus BLEU-4: pooled clipped precisions, closest-reference brevity.

    No smoothing; if any pooled precision is zero the score is zero.
    """
    _check_inputs(candidates, reference_sets)
    correct = [0] * MAX_NGRAM
    guess = [0] * MAX_NGRAM
    cand_len_total = 0
    ref_len_total = 0
    for cand, refs in zip(candidates, reference_sets):
        cand_len_total += len(cand)
        ref_len_total += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        cand_counts = ngram_counts(cand)
        max_ref: Counter = Counter()
        for ref in refs:
            for gram, c in ngram_counts(ref).items():
                if c > max_ref[gram]:
                    max_ref[gram] = c
        for gram, c in cand_counts.items():
            n = len(gram)
            guess[n - 1] += c
            correct[n - 1] += min(c, max_ref.get(gram, 0))
    if any(g == 0 or c == 0 for g, c in zip(guess, correct)):
        return 0.0
    log_prec = sum(math.log(c / g) for c, g in zip(correct, guess)) / MAX_NGRAM
    if cand_len_total > ref_len_total:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len_total / cand_len_total)
    return bp * math.exp(log_prec)


def _lcs_length(a: Sentence, b: Sentence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def sentence_rouge_l(cand: Sentence, refs: Sequence[Sentence], beta: float = ROUGE_BETA) -> float:
    best = 0.0
    for ref in refs:
        if len(cand) == 0 or len(ref) == 0:
            continue
        lcs = _lcs_length(cand, ref)
        if lcs == 0:
            continue
        prec = lcs / len(cand)
        rec = lcs / len(ref)
        score = (1 + beta * beta) * prec * rec / (rec + beta * beta * prec)
        best = max(best, score)
    return best


def rouge_l(
    candidates: Sequence[Sentence],
    reference_sets: Sequence[Sequence[Sentence]],
    beta: float = ROUGE_BETA,
) -> float:
    """Mean over sentences of the best-reference LCS F-measure."""
    _check_inputs(candidates, reference_sets)
    scores = [
        sentence_rouge_l(c, refs, beta) for c, refs in zip(candidates, reference_sets)
    ]
    return sum(scores) / len(scores)


@dataclass
class DocFreq:
    """Per-gram count of reference sets containing it, plus the corpus size."""

    df: dict[tuple, int] = field(default_factory=dict)
    n_ref: int = 0

    def idf(self, gram: tuple) -> float:
        return math.log(self.n_ref / self.df.get(gram, 1))


def build_docfreq(reference_sets: Sequence[Sequence[Sentence]]) -> DocFreq:
    """A gram appearing in several references of one set still counts once."""
    if len(reference_sets) == 0:
        raise MetricInputError("empty reference corpus")
    df: dict[tuple, int] = {}
    for refs in reference_sets:
        grams = set()
        for ref in refs:
            grams.update(ngram_counts(ref).keys())
        for g in grams:
            df[g] = df.get(g, 0) + 1
    return DocFreq(df=df, n_ref=len(reference_sets))


def _tfidf_by_order(tokens: Sentence, df: DocFreq) -> list[dict[tuple, float]]:
    vecs: list[dict[tuple, float]] = [dict() for _ in range(MAX_NGRAM)]
    totals = [0] * MAX_NGRAM
    counts = ngram_counts(tokens)
    for gram, c in counts.items():
        totals[len(gram) - 1] += c
    for gram, c in counts.items():
        n = len(gram) - 1
        vecs[n][gram] = (c / totals[n]) * df.idf(gram)
    return vecs


def _cosine(a: dict[tuple, float], b: dict[tuple, float]) -> float:
    num = sum(v * b[g] for g, v in a.items() if g in b)
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return num / (na * nb)


def _clipped_cosine(a: dict[tuple, float], b: dict[tuple, float]) -> float:
    num = sum(min(v, b[g]) * b[g] for g, v in a.items() if g in b)
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return num / (na * nb)


def sentence_cider(
    cand: Sentence, refs: Sequence[Sentence], df: DocFreq, variant: str = "plain"
) -> float:
    cand_vecs = _tfidf_by_order(cand, df)
    per_ref_total = 0.0
    for ref in refs:
        ref_vecs = _tfidf_by_order(ref, df)
        sim = 0.0
        for n in range(MAX_NGRAM):
            if variant == "d":
                s = _clipped_cosine(cand_vecs[n], ref_vecs[n])
                delta = len(cand) - len(ref)
                s *= math.exp(-(delta * delta) / (2.0 * CIDER_D_SIGMA**2))
            else:
                s = _cosine(cand_vecs[n], ref_vecs[n])
            sim += s
        per_ref_total += sim / MAX_NGRAM
    return 10.0 * per_ref_total / len(refs)


def cider(
    candidates: Sequence[Sentence],
    reference_sets: Sequence[Sequence[Sentence]],
    df: DocFreq,
    variant: str = "plain",
) -> tuple[float, list[float]]:
    """TF-IDF n-gram consensus score scaled to [0, 10]."""
    _check_inputs(candidates, reference_sets)
    if variant not in ("plain", "d"):
        raise MetricInputError(f"unknown cider variant {variant!r}")
    per_sentence = [
        sentence_cider(c, refs, df, variant)
        for c, refs in zip(candidates, reference_sets)
    ]
    return sum(per_sentence) / len(per_sentence), per_sentence


@dataclass
class MetricReport:
    bleu4: float
    rougeL: float
    cider: float
    per_sentence_cider: list[float]

    def to_json(self) -> str:
        return json.dumps(
            {
                "bleu4": self.bleu4,
                "rougeL": self.rougeL,
                "cider": self.cider,
                "per_sentence": self.per_sentence_cider,
            }
        )


def compute_report(
    candidates: Sequence[Sentence],
    reference_sets: Sequence[Sequence[Sentence]],
    df: DocFreq | None = None,
    cider_variant: str = "plain",
) -> MetricReport:
    if df is None:
        df = build_docfreq(reference_sets)
    corpus_cider, per_sentence = cider(candidates, reference_sets, df, cider_variant)
    return MetricReport(
        bleu4=bleu4(candidates, reference_sets),
        rougeL=rouge_l(candidates, reference_sets),
        cider=corpus_cider,
        per_sentence_cider=per_sentence,
    )
