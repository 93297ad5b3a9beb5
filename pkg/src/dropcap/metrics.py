"""Caption evaluation: corpus BLEU-4, METEOR, word-distribution KL, diversity.

BLEU and METEOR are reported on a 0-100 scale. KL divergence uses natural log
over a shared smoothed support (add-count epsilon on both distributions).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .corpus import Vocabulary
from .errors import DataError
from .stemmer import stem


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidates: list[list[str]], references: list[list[list[str]]]) -> float:
    """Corpus-level BLEU with n=1..4, no smoothing, 0-100 scale.

    references[i] is the set of reference token sequences for candidates[i].
    Any all-zero modified precision gives a score of exactly 0.
    """
    if not candidates:
        raise DataError("bleu4: empty candidate list")
    if len(candidates) != len(references):
        raise DataError(
            f"bleu4: {len(candidates)} candidates but {len(references)} reference sets"
        )
    for refs in references:
        if not refs:
            raise DataError("bleu4: empty reference set")

    clipped = [0] * 4
    totals = [0] * 4
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        c = len(cand)
        cand_len += c
        # closest reference length; ties go to the shorter reference
        ref_len += min((len(r) for r in refs), key=lambda rl: (abs(rl - c), rl))
        for n in range(1, 5):
            counts = _ngrams(cand, n)
            if not counts:
                continue
            max_counts: Counter = Counter()
            for ref in refs:
                rc = _ngrams(ref, n)
                for g in counts:
                    if rc[g] > max_counts[g]:
                        max_counts[g] = rc[g]
            clipped[n - 1] += sum(min(cnt, max_counts[g]) for g, cnt in counts.items())
            totals[n - 1] += sum(counts.values())

    if any(t == 0 or c == 0 for c, t in zip(clipped, totals)):
        return 0.0
    log_prec = math.fsum(0.25 * math.log(c / t) for c, t in zip(clipped, totals))
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / max(cand_len, 1))
    if cand_len == 0:
        return 0.0
    return 100.0 * bp * math.exp(log_prec)


def _align(candidate: list[str], reference: list[str]) -> list[tuple[int, int]]:
    """Two-stage unigram alignment: exact matches first, then stem matches.

    Within a stage each candidate position takes the unused reference position
    closest to it (deterministic). Returns (cand_idx, ref_idx) pairs.
    """
    used_c = [False] * len(candidate)
    used_r = [False] * len(reference)
    pairs: list[tuple[int, int]] = []
    for key_fn in (lambda w: w, stem):
        ref_keys = [key_fn(w) for w in reference]
        for i, w in enumerate(candidate):
            if used_c[i]:
                continue
            key = key_fn(w)
            best = None
            for j, rk in enumerate(ref_keys):
                if used_r[j] or rk != key:
                    continue
                if best is None or abs(j - i) < abs(best - i):
                    best = j
            if best is not None:
                used_c[i] = True
                used_r[best] = True
                pairs.append((i, best))
    pairs.sort()
    return pairs


def _count_chunks(pairs: list[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for ci, ri in pairs:
        if prev is None or ci != prev[0] + 1 or ri != prev[1] + 1:
            chunks += 1
        prev = (ci, ri)
    return chunks


def meteor(candidate: list[str], references: list[list[str]]) -> float:
    """METEOR with exact + Porter-stem matching, 0-100 scale.

    F = 10PR / (R + 9P); fragmentation penalty 0.5 * (chunks/m)^3; the best
    reference's score is returned. Zero matches (or an empty candidate) -> 0.
    """
    if not references:
        raise DataError("meteor: empty reference set")
    if not candidate:
        return 0.0
    best = 0.0
    for ref in references:
        if not ref:
            continue
        pairs = _align(candidate, ref)
        m = len(pairs)
        if m == 0:
            continue
        precision = m / len(candidate)
        recall = m / len(ref)
        fmean = 10.0 * precision * recall / (recall + 9.0 * precision)
        penalty = 0.5 * (_count_chunks(pairs) / m) ** 3
        best = max(best, fmean * (1.0 - penalty))
    return 100.0 * best


def corpus_meteor(candidates: list[list[str]], references: list[list[list[str]]]) -> float:
    if not candidates:
        raise DataError("corpus_meteor: empty candidate list")
    if len(candidates) != len(references):
        raise DataError("corpus_meteor: candidate/reference length mismatch")
    return math.fsum(meteor(c, r) for c, r in zip(candidates, references)) / len(candidates)


@dataclass
class WordDistribution:
    probs: dict[str, float]

    def support(self) -> frozenset:
        return frozenset(self.probs)


def word_distribution(
    captions: list[list[str]], vocab: Vocabulary, eps: float = 0.5
) -> WordDistribution:
    """Smoothed frequency distribution over the vocabulary's content words.

    Tokens outside the content vocabulary are ignored; eps is added to every
    content word's count before normalizing, so the support is the full
    content vocabulary whenever eps > 0.
    """
    if not captions:
        raise DataError("word_distribution: empty caption set")
    content = vocab.content_words()
    content_set = set(content)
    counts = Counter()
    for tokens in captions:
        counts.update(t for t in tokens if t in content_set)
    total = sum(counts.values()) + eps * len(content)
    if total <= 0:
        raise DataError("word_distribution: no countable tokens and no smoothing")
    return WordDistribution(probs={w: (counts[w] + eps) / total for w in content})


def kl_divergence(p: WordDistribution, q: WordDistribution) -> float:
    """Sum of P(w) ln(P(w)/Q(w)) over the shared support, in nats."""
    if p.support() != q.support():
        raise DataError("kl_divergence: distributions have different supports")
    return math.fsum(
        pw * math.log(pw / q.probs[w]) for w, pw in p.probs.items() if pw > 0.0
    )


def diversity_stats(captions: list[list[str]], exceeded_flags: list[bool]) -> tuple[int, float]:
    """(distinct content words across all captions, fraction of exceeded generations)."""
    if not exceeded_flags:
        raise DataError("diversity_stats: empty result list")
    if len(captions) != len(exceeded_flags):
        raise DataError("diversity_stats: captions/flags length mismatch")
    vocab_seen = set()
    for tokens in captions:
        vocab_seen.update(tokens)
    p_exceed = sum(1 for f in exceeded_flags if f) / len(exceeded_flags)
    return len(vocab_seen), p_exceed


@dataclass
class MetricsReport:
    d_t: float
    d_e: float
    bleu4: float
    meteor: float
    d_kl: float
    v_size: int
    p_len_gt_20: float

    CSV_HEADER = "d_t,d_e,bleu4,meteor,d_kl,v_size,p_len_gt_20"

    def csv_row(self) -> str:
        return (
            f"{self.d_t:g},{self.d_e:g},{self.bleu4:.6f},{self.meteor:.6f},"
            f"{self.d_kl:.6f},{self.v_size},{self.p_len_gt_20:.6f}"
        )
