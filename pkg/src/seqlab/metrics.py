"""Text-overlap metric suite.

ROUGE-1/2/L full-length F1, novel n-gram percentage, repeated n-gram
rate, and keyword saliency match.  Tokenization everywhere is lowercase +
whitespace split with no stemming: a ROUGE-compatible core, not
byte-identical to the official Perl package.  All functions are pure.

F1 scores are computed as 2m/(|cand| + |ref|) — algebraically the
harmonic mean of precision and recall, but exact in floating point for
the small integer counts involved.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .errors import ContractError

__all__ = [
    "Score",
    "tokenize",
    "rouge_n",
    "rouge_l",
    "best_rouge",
    "lcs_length",
    "lcs_length_bruteforce",
    "novel_ngram_pct",
    "saliency_match",
    "repetition_rate",
    "EvalItem",
    "EvalReport",
    "evaluate_corpus",
]

NOVEL_NS = (2, 3, 4)


class Score(NamedTuple):
    p: float
    r: float
    f1: float


def tokenize(text) -> list[str]:
    """Lowercase, whitespace-split.  Token sequences pass through lowered."""
    if isinstance(text, str):
        return text.lower().split()
    return [str(t).lower() for t in text]


def _ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def rouge_n(candidate, reference, n: int) -> Score:
    """Clipped n-gram overlap: P = m/|cand|, R = m/|ref|, F1 = 2m/(|cand|+|ref|)."""
    if n < 1:
        raise ContractError(f"rouge_n: n must be >= 1, got {n}")
    cand = _ngrams(tokenize(candidate), n)
    ref = _ngrams(tokenize(reference), n)
    overlap = Counter(cand) & Counter(ref)
    m = sum(overlap.values())
    p = m / len(cand) if cand else 0.0
    r = m / len(ref) if ref else 0.0
    denom = len(cand) + len(ref)
    return Score(p, r, 2 * m / denom if denom else 0.0)


def lcs_length(a: Sequence, b: Sequence) -> int:
    """Longest common subsequence length by dynamic programming."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def lcs_length_bruteforce(a: Sequence, b: Sequence) -> int:
    """Independent oracle: enumerate every subsequence of the shorter side.

    Exponential; only for verifying `lcs_length` on short inputs.
    """
    if len(a) > len(b):
        a, b = b, a
    best = 0
    for mask in range(1 << len(a)):
        length = mask.bit_count()
        if length <= best:
            continue
        it = iter(b)
        if all(
            any(x == y for y in it)
            for i, x in enumerate(a)
            if mask >> i & 1
        ):
            best = length
    return best


def rouge_l(candidate, reference) -> Score:
    """LCS-based scores: P = L/|cand|, R = L/|ref|, F1 = 2L/(|cand|+|ref|)."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    lcs = lcs_length(cand, ref)
    p = lcs / len(cand) if cand else 0.0
    r = lcs / len(ref) if ref else 0.0
    denom = len(cand) + len(ref)
    return Score(p, r, 2 * lcs / denom if denom else 0.0)


def best_rouge(candidate, references: Iterable, scorer, **kwargs) -> Score:
    """Multi-reference variant: the Score with the highest F1 wins."""
    scores = [scorer(candidate, ref, **kwargs) for ref in references]
    if not scores:
        raise ContractError("best_rouge: no references given")
    return max(scores, key=lambda s: s.f1)


def novel_ngram_pct(summary, source, n: int) -> tuple[float, bool]:
    """Percentage of summary n-grams absent from the source.

    Duplicate summary n-grams count once per occurrence; membership in the
    source is set-based.  A summary shorter than n has no n-grams: the
    percentage is reported as 0.0 with the defined flag False.
    """
    if n not in NOVEL_NS:
        raise ContractError(f"novel_ngram_pct: n must be one of {NOVEL_NS}, got {n}")
    grams = _ngrams(tokenize(summary), n)
    if not grams:
        return 0.0, False
    seen = set(_ngrams(tokenize(source), n))
    novel = sum(1 for g in grams if g not in seen)
    return 100.0 * novel / len(grams), True


def saliency_match(keywords, candidate) -> float | None:
    """Percentage of keywords present in the candidate (type-level,
    lowercased).  An empty keyword list is undefined: returns None.
    """
    wanted = set(tokenize(keywords))
    if not wanted:
        return None
    have = set(tokenize(candidate))
    return 100.0 * len(wanted & have) / len(wanted)


def repetition_rate(text, n: int) -> float:
    """Fraction of n-gram occurrences whose n-gram appears more than once."""
    if n < 1:
        raise ContractError(f"repetition_rate: n must be >= 1, got {n}")
    grams = _ngrams(tokenize(text), n)
    if not grams:
        return 0.0
    counts = Counter(grams)
    repeated = sum(1 for g in grams if counts[g] > 1)
    return repeated / len(grams)


# ---------------------------------------------------------------------------
# Corpus-level report


@dataclass(frozen=True)
class EvalItem:
    """One example to score.

    `source` enables the novel n-gram metrics; `keywords` enables saliency.
    """

    candidate: Sequence[str] | str
    reference: Sequence[str] | str
    source: Sequence[str] | str | None = None
    keywords: Sequence[str] | None = None


@dataclass(frozen=True)
class ExampleScores:
    rouge1: Score
    rouge2: Score
    rougeL: Score
    novel: dict[int, float]
    novel_defined: dict[int, bool]
    repeated_bigrams: float
    saliency: float | None


@dataclass
class EvalReport:
    """Per-example scores plus arithmetic corpus means.

    Saliency means skip undefined examples (empty keyword lists) but count
    them in `saliency_skipped`; novel n-gram means likewise skip examples
    with no n-grams of that order.
    """

    examples: list[ExampleScores] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def saliency_skipped(self) -> int:
        return sum(1 for e in self.examples if e.saliency is None)

    def mean_rouge(self, which: str) -> Score:
        if not self.examples:
            return Score(0.0, 0.0, 0.0)
        scores = [getattr(e, which) for e in self.examples]
        k = len(scores)
        return Score(
            sum(s.p for s in scores) / k,
            sum(s.r for s in scores) / k,
            sum(s.f1 for s in scores) / k,
        )

    def mean_novel(self, n: int) -> float | None:
        vals = [e.novel[n] for e in self.examples if e.novel_defined.get(n)]
        return sum(vals) / len(vals) if vals else None

    @property
    def mean_repeated_bigrams(self) -> float:
        if not self.examples:
            return 0.0
        return sum(e.repeated_bigrams for e in self.examples) / len(self.examples)

    @property
    def mean_saliency(self) -> float | None:
        vals = [e.saliency for e in self.examples if e.saliency is not None]
        return sum(vals) / len(vals) if vals else None

    def records(self) -> Iterable[dict]:
        """Machine-readable stream: one record per example, then the summary."""
        for i, e in enumerate(self.examples):
            yield {
                "kind": "example",
                "index": i,
                "rouge1": e.rouge1._asdict(),
                "rouge2": e.rouge2._asdict(),
                "rougeL": e.rougeL._asdict(),
                "novel": {str(n): (e.novel[n] if e.novel_defined.get(n) else None)
                          for n in e.novel},
                "repeated_bigrams": e.repeated_bigrams,
                "saliency": e.saliency,
            }
        yield self.summary_record()

    def summary_record(self) -> dict:
        return {
            "kind": "summary",
            "examples": len(self.examples),
            "rouge1": self.mean_rouge("rouge1")._asdict(),
            "rouge2": self.mean_rouge("rouge2")._asdict(),
            "rougeL": self.mean_rouge("rougeL")._asdict(),
            "novel": {str(n): self.mean_novel(n) for n in NOVEL_NS},
            "repeated_bigrams": self.mean_repeated_bigrams,
            "saliency": self.mean_saliency,
            "saliency_skipped": self.saliency_skipped,
        }

    def write_jsonl(self, fh) -> None:
        for record in self.records():
            fh.write(json.dumps(record) + "\n")

    def table(self) -> str:
        """Human-readable summary table."""
        s = self.summary_record()
        lines = [
            f"examples           {s['examples']}",
            f"rouge-1  P/R/F1    {s['rouge1']['p']:.4f} {s['rouge1']['r']:.4f} {s['rouge1']['f1']:.4f}",
            f"rouge-2  P/R/F1    {s['rouge2']['p']:.4f} {s['rouge2']['r']:.4f} {s['rouge2']['f1']:.4f}",
            f"rouge-L  P/R/F1    {s['rougeL']['p']:.4f} {s['rougeL']['r']:.4f} {s['rougeL']['f1']:.4f}",
        ]
        for n in NOVEL_NS:
            v = s["novel"][str(n)]
            lines.append(
                f"novel {n}-grams %   " + ("n/a" if v is None else f"{v:.2f}")
            )
        lines.append(f"repeated bigrams   {s['repeated_bigrams']:.4f}")
        sal = s["saliency"]
        lines.append(
            "saliency match %   " + ("n/a" if sal is None else f"{sal:.2f}")
            + (f"  ({s['saliency_skipped']} undefined)" if s["saliency_skipped"] else "")
        )
        return "\n".join(lines)


def evaluate_corpus(items: Iterable[EvalItem]) -> EvalReport:
    report = EvalReport()
    for item in items:
        novel: dict[int, float] = {}
        defined: dict[int, bool] = {}
        for n in NOVEL_NS:
            if item.source is None:
                novel[n], defined[n] = 0.0, False
            else:
                novel[n], defined[n] = novel_ngram_pct(item.candidate, item.source, n)
        report.examples.append(
            ExampleScores(
                rouge1=rouge_n(item.candidate, item.reference, 1),
                rouge2=rouge_n(item.candidate, item.reference, 2),
                rougeL=rouge_l(item.candidate, item.reference),
                novel=novel,
                novel_defined=defined,
                repeated_bigrams=repetition_rate(item.candidate, 2),
                saliency=(
                    saliency_match(item.keywords, item.candidate)
                    if item.keywords is not None
                    else None
                ),
            )
        )
    return report
