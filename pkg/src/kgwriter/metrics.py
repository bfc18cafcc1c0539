"""Automatic evaluation: perplexity, n-gram overlap against the human input,
the repeated-entity sentence rate, and BLEU/ROUGE-L utilities.

Choices pinned for reproducibility: the overlap counts distinct n-gram types
(not occurrences); sentences split on ".", "!", "?" tokens; BLEU-n is the
brevity-penalized geometric mean of modified precisions 1..n with add-one
smoothing applied only to zero counts at n >= 2; ROUGE-L is the balanced
LCS F-measure.
"""

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple


@dataclass
class MetricReport:
    metric: str
    values: dict
    corpus: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({"metric": self.metric, "values": self.values,
                           "corpus": self.corpus, "parameters": self.parameters},
                          ensure_ascii=False, sort_keys=True)


def perplexity(provider, corpus):
    """exp of the mean negative log-probability of the gold tokens.

    ``provider(src_tokens, tgt_tokens)`` yields P(gold | prefix) per target
    token. A zero probability anywhere makes the result +inf.
    """
    total = 0.0
    count = 0
    for src, tgt in corpus:
        for p in provider(src, tgt):
            if p <= 0.0:
                return math.inf
            total += -math.log(p)
            count += 1
    if count == 0:
        raise ValueError("perplexity: empty corpus")
    return math.exp(total / count)


class OverlapResult(NamedTuple):
    percent: float
    defined: bool


def _ngrams(tokens, n):
    return {tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)}


def ngram_overlap(input_tokens, output_tokens, n):
    """Percentage of the input's distinct n-grams present in the output.

    An input shorter than n has no n-grams; the result is 0 with the
    ``defined`` flag cleared.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    src = _ngrams(list(input_tokens), n)
    if not src:
        return OverlapResult(0.0, False)
    out = _ngrams(list(output_tokens), n)
    return OverlapResult(100.0 * len(src & out) / len(src), True)


def split_sentences(tokens):
    """Split a token list into sentences at ".", "!", "?" tokens."""
    sentences = []
    current = []
    for t in tokens:
        current.append(t)
        if t in (".", "!", "?"):
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return sentences


def _count_phrase(sentence, phrase):
    """Non-overlapping occurrences of a token phrase in a sentence."""
    n = len(phrase)
    count = 0
    i = 0
    while i + n <= len(sentence):
        if tuple(sentence[i:i + n]) == phrase:
            count += 1
            i += n
        else:
            i += 1
    return count


def repetition_rate(tokens, sentence_splitter=None, entity_lexicon=()):
    """Fraction of sentences mentioning some lexicon entity at least twice."""
    lexicon = [tuple(str(e).lower().split()) if isinstance(e, str) else tuple(e)
               for e in entity_lexicon]
    lexicon = [p for p in lexicon if p]
    if not lexicon:
        raise ValueError("repetition_rate: empty entity lexicon")
    splitter = sentence_splitter or split_sentences
    sentences = splitter([t.lower() for t in tokens])
    if not sentences:
        return 0.0
    repeated = sum(
        1 for s in sentences
        if any(_count_phrase(s, phrase) >= 2 for phrase in lexicon))
    return repeated / len(sentences)


@dataclass
class BleuRouge:
    bleu: tuple           # cumulative BLEU-1..max_n
    rouge_l: float


def _clipped_matches(cand, ref, n):
    def counts(tokens):
        c = {}
        for i in range(len(tokens) - n + 1):
            key = tuple(tokens[i:i + n])
            c[key] = c.get(key, 0) + 1
        return c

    cc = counts(cand)
    rc = counts(ref)
    matched = sum(min(v, rc.get(k, 0)) for k, v in cc.items())
    total = sum(cc.values())
    return matched, total


def _lcs(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def bleu_rouge(candidate, reference, max_n=4):
    """Cumulative BLEU-1..max_n with brevity penalty, and ROUGE-L F1."""
    cand = list(candidate)
    ref = list(reference)
    if not ref:
        raise ValueError("bleu_rouge: empty reference")
    if not cand:
        return BleuRouge(tuple(0.0 for _ in range(max_n)), 0.0)

    precisions = []
    for n in range(1, max_n + 1):
        matched, total = _clipped_matches(cand, ref, n)
        if matched == 0 and n >= 2:
            # add-one smoothing; also covers candidates shorter than n
            precisions.append((matched + 1.0) / (total + 1.0))
        elif total == 0:
            precisions.append(0.0)
        else:
            precisions.append(matched / total)

    bp = 1.0 if len(cand) >= len(ref) else math.exp(1.0 - len(ref) / len(cand))
    scores = []
    for n in range(1, max_n + 1):
        ps = precisions[:n]
        if any(p == 0.0 for p in ps):
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in ps) / n))

    lcs = _lcs(cand, ref)
    r = lcs / len(ref)
    p = lcs / len(cand)
    f1 = 0.0 if r + p == 0.0 else 2 * p * r / (p + r)
    return BleuRouge(tuple(scores), f1)
