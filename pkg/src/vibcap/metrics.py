"""Multi-reference caption metrics and report assembly.

BLEU is corpus-level: clipped n-gram counts are pooled over all samples
before the precision ratio is taken (stated in the report header, since
mean-of-sentence BLEU is a different quantity).  ROUGE-L takes the best
reference per sample and averages.  CIDEr uses plain TF-IDF cosine
similarity with document frequencies from the evaluated reference corpus,
averaged over n-gram orders 1..4 and scaled by 10.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .data import DataError, Dataset, tokenize

ROUGE_BETA = 1.2
CIDER_MAX_N = 4
BLEU_MAX_N = 4

METRIC_COLUMNS = ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "cider")


def ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# ---------------------------------------------------------------------------
# BLEU

def bleu_corpus(hypotheses: list[list[str]], reference_sets: list[list[list[str]]],
                max_n: int = BLEU_MAX_N) -> dict[str, float]:
    """Corpus BLEU-1..max_n with per-reference clipping and brevity penalty."""
    if not hypotheses:
        raise DataError("empty hypothesis set")
    if len(hypotheses) != len(reference_sets):
        raise DataError(
            f"{len(hypotheses)} hypotheses vs {len(reference_sets)} reference sets")
    matched = np.zeros(max_n)
    possible = np.zeros(max_n)
    hyp_len = 0
    ref_len = 0
    for hyp, refs in zip(hypotheses, reference_sets):
        if not refs:
            raise DataError("hypothesis without references")
        hyp_len += len(hyp)
        # closest reference length; ties toward the shorter reference
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = ngrams(hyp, n)
            if not counts:
                continue
            cap = Counter()
            for r in refs:
                rc = ngrams(r, n)
                for g in counts:
                    cap[g] = max(cap[g], rc[g])
            matched[n - 1] += sum(min(c, cap[g]) for g, c in counts.items())
            possible[n - 1] += sum(counts.values())
    if hyp_len == 0:
        return {f"bleu{k}": 0.0 for k in range(1, max_n + 1)}
    bp = 1.0 if hyp_len >= ref_len else float(np.exp(1.0 - ref_len / hyp_len))
    precisions = [matched[i] / possible[i] if possible[i] > 0 else 0.0
                  for i in range(max_n)]
    out = {}
    for k in range(1, max_n + 1):
        if any(p == 0.0 for p in precisions[:k]):
            out[f"bleu{k}"] = 0.0
        else:
            out[f"bleu{k}"] = bp * float(np.exp(np.mean(np.log(precisions[:k]))))
    return out


def bleu_sentence(hyp: list[str], refs: list[list[str]], max_n: int = BLEU_MAX_N):
    return bleu_corpus([hyp], [refs], max_n)


# ---------------------------------------------------------------------------
# ROUGE-L

def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_pair(hyp: list[str], ref: list[str], beta: float = ROUGE_BETA) -> float:
    lcs = _lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    r = lcs / len(ref)
    p = lcs / len(hyp)
    return (1 + beta * beta) * r * p / (r + beta * beta * p)


def rouge_l_sample(hyp: list[str], refs: list[list[str]], beta: float = ROUGE_BETA) -> float:
    if not hyp:
        return 0.0
    return max(rouge_l_pair(hyp, r, beta) for r in refs)


def rouge_l_corpus(hypotheses, reference_sets, beta: float = ROUGE_BETA) -> float:
    if not hypotheses:
        raise DataError("empty hypothesis set")
    return float(np.mean([rouge_l_sample(h, rs, beta)
                          for h, rs in zip(hypotheses, reference_sets)]))


# ---------------------------------------------------------------------------
# CIDEr

def _tfidf(counts: Counter, df: Counter, n_docs: int) -> dict:
    vec = {}
    for g, c in counts.items():
        d = df.get(g, 0)
        if d > 0:
            vec[g] = c * np.log(n_docs / d)
    return vec


def _cosine(a: dict, b: dict) -> float:
    na = np.sqrt(sum(v * v for v in a.values()))
    nb = np.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    return float(dot / (na * nb))


def cider_corpus(hypotheses, reference_sets, max_n: int = CIDER_MAX_N
                 ) -> tuple[float, list[float]]:
    """Corpus CIDEr and per-sample scores.

    Document frequency counts, per n-gram order, the number of samples whose
    reference set mentions the n-gram.  A single-sample corpus scores 0 by
    construction (every IDF is ln 1).
    """
    if not hypotheses:
        raise DataError("empty hypothesis set")
    for refs in reference_sets:
        if not refs:
            raise DataError("sample without references")
    n_docs = len(reference_sets)
    dfs = []
    for n in range(1, max_n + 1):
        df = Counter()
        for refs in reference_sets:
            seen = set()
            for r in refs:
                seen.update(ngrams(r, n).keys())
            df.update(seen)
        dfs.append(df)
    per_sample = []
    for hyp, refs in zip(hypotheses, reference_sets):
        order_scores = []
        for n in range(1, max_n + 1):
            hvec = _tfidf(ngrams(hyp, n), dfs[n - 1], n_docs)
            sims = [_cosine(hvec, _tfidf(ngrams(r, n), dfs[n - 1], n_docs))
                    for r in refs]
            order_scores.append(float(np.mean(sims)))
        per_sample.append(10.0 * float(np.mean(order_scores)))
    return float(np.mean(per_sample)), per_sample


# ---------------------------------------------------------------------------
# report

@dataclass
class EvalReport:
    scores: dict[str, float]
    per_sample: list[dict]
    config: dict = field(default_factory=dict)
    header: str = "BLEU scored corpus-level (pooled clipped counts), not mean-of-sentence."

    def to_json(self) -> str:
        return json.dumps({
            "header": self.header,
            "config": self.config,
            "scores": self.scores,
            "per_sample": self.per_sample,
        }, indent=2)

    def to_table(self, label: str = "model") -> str:
        cols = [c for c in METRIC_COLUMNS if c in self.scores]
        names = {"bleu1": "BLEU1", "bleu2": "BLEU2", "bleu3": "BLEU3",
                 "bleu4": "BLEU4", "rouge_l": "ROUGE-L", "cider": "CIDEr"}
        width = max(12, len(label) + 2)
        head = "Model".ljust(width) + "".join(names[c].rjust(9) for c in cols)
        row = label.ljust(width) + "".join(f"{self.scores[c]:9.4f}" for c in cols)
        rule = "-" * len(head)
        return "\n".join([self.header, rule, head, rule, row, rule])

    def to_csv(self, label: str = "model") -> str:
        cols = [c for c in METRIC_COLUMNS if c in self.scores]
        lines = ["model," + ",".join(cols)]
        lines.append(label + "," + ",".join(f"{self.scores[c]:.6f}" for c in cols))
        return "\n".join(lines) + "\n"


def score_captions(hypotheses: list[str], reference_sets: list[list[str]],
                   sample_ids: list[str] | None = None) -> EvalReport:
    """Score raw caption strings against their reference sets."""
    hyp_tok = [tokenize(h) for h in hypotheses]
    ref_tok = [[tokenize(r) for r in refs] for refs in reference_sets]
    scores = bleu_corpus(hyp_tok, ref_tok)
    scores["rouge_l"] = rouge_l_corpus(hyp_tok, ref_tok)
    cider, per_cider = cider_corpus(hyp_tok, ref_tok)
    scores["cider"] = cider
    ids = sample_ids or [str(i) for i in range(len(hypotheses))]
    per_sample = []
    for i, (h, rs) in enumerate(zip(hyp_tok, ref_tok)):
        entry = {"id": ids[i], "caption": " ".join(h)}
        entry.update(bleu_sentence(h, rs))
        entry["rouge_l"] = rouge_l_sample(h, rs)
        entry["cider"] = per_cider[i]
        per_sample.append(entry)
    config = {"bleu_max_n": BLEU_MAX_N, "rouge_beta": ROUGE_BETA,
              "cider_max_n": CIDER_MAX_N, "cider_idf": "evaluated reference corpus",
              "scoring": "corpus-level"}
    return EvalReport(scores, per_sample, config)


def evaluate_model(model, dataset: Dataset, split: str = "test",
                   variant: str = "full", input_mode: str = "dft321",
                   mode: str = "greedy", beam: int = 3,
                   exclude_category: str | None = None) -> EvalReport:
    """Generate a caption per sample of the split and score it.

    With ``exclude_category`` set, evaluation runs on every sample of that
    category (the hold-out protocol); otherwise on the named split.
    """
    if exclude_category:
        records = [r for r in dataset.records if r.category == exclude_category]
    else:
        records = dataset.split(split)
    if not records:
        raise DataError(f"evaluation split {split!r} is empty")
    hyps, refs, ids = [], [], []
    for rec in records:
        sig = dataset.load_signal(rec)
        sample = model.prepare(sig, input_mode, sample_id=rec.id, category=rec.category)
        hyps.append(model.caption(sample, variant=variant, mode=mode, beam=beam))
        refs.append(rec.captions)
        ids.append(rec.id)
    report = score_captions(hyps, refs, ids)
    report.config.update({"split": "category:" + exclude_category if exclude_category
                          else split,
                          "decode": mode if mode == "greedy" else f"beam({beam})",
                          "variant": variant, "input_mode": input_mode})
    return report
