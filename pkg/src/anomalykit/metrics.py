"""Corpus diversity and similarity metrics.

Self-BLEU (unsmoothed, max_n=4), mean pairwise embedding similarity, and
Word Mover's Distance backed by an exact balanced-transportation solver.
All functions are pure; pairwise fan-out uses a fixed pair ordering so
corpus-level results are deterministic.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import DegenerateInput, UnbalancedMass
from .providers import cosine

MASS_TOL = 1e-9


@dataclass(frozen=True)
class TokenizedDoc:
    doc_id: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class DiscreteDistribution:
    support: tuple  # points: word embeddings or 3D particles
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) != len(self.weights):
            raise ValueError("support and weights must have equal length")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if self.weights and abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")


@dataclass(frozen=True)
class DiversityReport:
    corpus_id: str
    self_bleu: float
    mean_embedding_similarity: float
    mean_wmd: float
    n_docs: int


_TOKEN_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"


def tokenize(text: str, doc_id: str = "") -> TokenizedDoc:
    """Lowercase, split on whitespace/punctuation, drop punctuation."""
    tokens = []
    current = []
    for ch in text.lower():
        if ch in _TOKEN_CHARS:
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return TokenizedDoc(doc_id=doc_id, tokens=tuple(tokens))


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: TokenizedDoc, references: list[TokenizedDoc], max_n: int = 4) -> float:
    """Unsmoothed BLEU: geometric mean of modified n-gram precisions with
    brevity penalty. Any zero precision makes the score 0. Orders for which
    the candidate has no n-grams at all (candidate shorter than n) are
    skipped rather than counted as zero.
    """
    if not references:
        raise ValueError("bleu needs at least one reference")
    cand = candidate.tokens
    c = len(cand)
    if c == 0:
        return 0.0
    log_sum = 0.0
    levels = 0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(cand, n)
        total = sum(cand_counts.values())
        if total == 0:
            continue
        max_ref = Counter()
        for ref in references:
            for gram, cnt in _ngram_counts(ref.tokens, n).items():
                if cnt > max_ref[gram]:
                    max_ref[gram] = cnt
        clipped = sum(min(cnt, max_ref[gram]) for gram, cnt in cand_counts.items())
        if clipped == 0:
            return 0.0
        log_sum += np.log(clipped / total)
        levels += 1
    precision = np.exp(log_sum / levels)
    # Closest reference length; ties go to the shorter reference.
    r = min((abs(len(ref.tokens) - c), len(ref.tokens)) for ref in references)[1]
    bp = 1.0 if c >= r else float(np.exp(1.0 - r / c))
    return float(bp * precision)


def self_bleu(corpus: list[TokenizedDoc], max_n: int = 4) -> float:
    """Mean BLEU of each doc against all others. Lower = more diverse."""
    if len(corpus) < 2:
        raise ValueError("self_bleu needs at least 2 documents")
    scores = []
    for i, doc in enumerate(corpus):
        refs = corpus[:i] + corpus[i + 1 :]
        scores.append(bleu(doc, refs, max_n=max_n))
    return float(np.mean(scores))


def mean_pairwise_similarity(texts: list[str], embed) -> float:
    """Mean cosine over all unordered distinct pairs. Lower = more diverse."""
    if len(texts) < 2:
        raise ValueError("mean_pairwise_similarity needs at least 2 texts")
    vecs = [v.array() for v in embed.embed(list(texts))]
    sims = []
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            sims.append(cosine(vecs[i], vecs[j]))
    return float(np.mean(sims))


def solve_transport(source: DiscreteDistribution | np.ndarray,
                    sink: DiscreteDistribution | np.ndarray,
                    cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact optimal transport plan for a balanced transportation problem.

    Solved as an LP with the HiGHS simplex; at desk-scale supports the
    vertex solution matches the exact optimum to well under 1e-9.
    Returns (plan, objective) where plan row sums equal source weights and
    column sums equal sink weights.
    """
    a = np.asarray(
        source.weights if isinstance(source, DiscreteDistribution) else source,
        dtype=np.float64,
    )
    b = np.asarray(
        sink.weights if isinstance(sink, DiscreteDistribution) else sink,
        dtype=np.float64,
    )
    cost = np.asarray(cost, dtype=np.float64)
    m, n = a.size, b.size
    if m == 0 or n == 0:
        raise DegenerateInput("transport distributions must have non-empty support")
    if cost.shape != (m, n):
        raise ValueError(f"cost matrix shape {cost.shape} != ({m}, {n})")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0):
        raise ValueError("cost entries must be finite and non-negative")
    if abs(a.sum() - b.sum()) > MASS_TOL:
        raise UnbalancedMass(f"total masses differ: {a.sum()} vs {b.sum()}")

    # Equality constraints: row marginals then column marginals (one row of
    # the system is redundant for a balanced problem; HiGHS copes).
    n_var = m * n
    rows = []
    for i in range(m):
        row = np.zeros(n_var)
        row[i * n : (i + 1) * n] = 1.0
        rows.append(row)
    for j in range(n):
        row = np.zeros(n_var)
        row[j::n] = 1.0
        rows.append(row)
    a_eq = np.vstack(rows)
    b_eq = np.concatenate([a, b])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(m, n)
    objective = float(np.sum(plan * cost))
    return plan, objective


def _bow_distribution(doc: TokenizedDoc) -> tuple[list[str], np.ndarray]:
    counts = Counter(doc.tokens)
    vocab = sorted(counts)
    weights = np.array([counts[w] for w in vocab], dtype=np.float64)
    weights /= weights.sum()
    return vocab, weights


def wmd(doc_a: TokenizedDoc, doc_b: TokenizedDoc, embed) -> float:
    """Word Mover's Distance between normalized bag-of-words distributions
    under Euclidean embedding-space ground cost.
    """
    if not doc_a.tokens or not doc_b.tokens:
        raise DegenerateInput("wmd needs non-empty documents")
    vocab_a, w_a = _bow_distribution(doc_a)
    vocab_b, w_b = _bow_distribution(doc_b)
    vecs = {
        word: v.array()
        for word, v in zip(vocab_a + vocab_b, embed.embed(vocab_a + vocab_b))
    }
    ea = np.stack([vecs[w] for w in vocab_a])
    eb = np.stack([vecs[w] for w in vocab_b])
    diff = ea[:, None, :] - eb[None, :, :]
    cost = np.sqrt(np.sum(diff * diff, axis=2))
    _, objective = solve_transport(w_a, w_b, cost)
    return objective


def mean_pairwise_wmd(docs: list[TokenizedDoc], embed) -> float:
    if len(docs) < 2:
        raise ValueError("mean_pairwise_wmd needs at least 2 documents")
    vals = []
    for i in range(len(docs)):
        for j in range(i + 1, len(docs)):
            vals.append(wmd(docs[i], docs[j], embed))
    return float(np.mean(vals))


def build_report(texts: list[str], embed, corpus_id: str = "corpus") -> DiversityReport:
    """Aggregate the three diversity metrics over one corpus."""
    docs = [tokenize(t, doc_id=str(i)) for i, t in enumerate(texts)]
    return DiversityReport(
        corpus_id=corpus_id,
        self_bleu=self_bleu(docs),
        mean_embedding_similarity=mean_pairwise_similarity(texts, embed),
        mean_wmd=mean_pairwise_wmd(docs, embed),
        n_docs=len(texts),
    )


def format_diversity_table(reports: list[DiversityReport]) -> str:
    """Aligned-text table, one row per corpus."""
    header = f"{'Corpus':<28} {'Self-BLEU':>10} {'EmbedSim':>10} {'WMD':>10} {'Docs':>6}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(
            f"{r.corpus_id:<28} {r.self_bleu:>10.4f} "
            f"{r.mean_embedding_similarity:>10.4f} {r.mean_wmd:>10.4f} {r.n_docs:>6d}"
        )
    return "\n".join(lines) + "\n"
