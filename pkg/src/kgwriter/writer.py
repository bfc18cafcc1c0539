"""Memory-attention pointer-generator writer.

Generation runs title-to-abstract style: a bi-GRU encodes the source, a
multi-hop attention over related-entity memories initializes the decoder
state, and every decode step combines three distributions: vocabulary
generation from the decoder/reference/memory context, copying source tokens
through reference attention, and copying entity tokens through the memory
attention. Two sigmoid gates blend them:

    P(z) = g_p * P_gen + (1 - g_p) * (g~_p * P_tau + (1 - g~_p) * P_e)

Running coverage vectors (sums of past attention distributions) feed back
into both attentions and add min(attention, coverage) penalty terms to the
loss. Decoding is beam search with a repetition mask: a non-stopword,
non-punctuation token already emitted is never selected again.

Copying extends the vocabulary per example: out-of-vocabulary source and
entity tokens get temporary indices past the vocabulary, so they can be
emitted even though the generator never scores them. Hop attentions are
softmax-normalized at every hop, and entity copy mass splits evenly over
the tokens of a multi-word entity so P(z) stays a proper distribution.
When the memory is empty the copy gate pins to the reference side (g~_p = 1)
for the same reason.

Training mutates one parameter set single-threaded and seeded; decoding is
read-only over parameters, so concurrent beam searches against one trained
model are safe.
"""

import json
import math
import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .kg import match_title_entities
from .linkpred import related_entities

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ["<pad>", "<bos>", "<eos>", "<unk>"]

DEFAULT_PUNCTUATION = set(string.punctuation) | {"``", "''", "--", "...", "…", "‘", "’", "“", "”"}


def default_stopwords():
    from importlib.resources import files
    text = files("kgwriter").joinpath("data/stopwords.txt").read_text(encoding="utf-8")
    return {line.strip() for line in text.splitlines() if line.strip()}


@dataclass
class Vocabulary:
    itos: list
    stop_words: set
    punctuation: set
    stoi: dict = field(init=False)

    def __post_init__(self):
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def id_of(self, token):
        return self.stoi.get(token, UNK)

    def is_stopish(self, token):
        return token in self.stop_words or token in self.punctuation


def build_vocabulary(token_seqs, oov_floor=5, stop_words=None, punctuation=None):
    """Frequency-floored vocabulary; tokens below the floor fall to <unk>."""
    counts = Counter()
    for seq in token_seqs:
        counts.update(seq)
    kept = sorted((t for t, c in counts.items() if c >= oov_floor),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(RESERVED + kept,
                      set(stop_words) if stop_words is not None else default_stopwords(),
                      set(punctuation) if punctuation is not None else set(DEFAULT_PUNCTUATION))


# ------------------------------------------------------------------- params

@dataclass
class WriterDims:
    vocab_size: int
    emb_dim: int = 128
    dec_hidden: int = 256
    attn_hidden: int = 256
    init_hops: int = 3
    step_hops: int = 3
    n_memory: int = 0
    max_len: int = 120

    def __post_init__(self):
        if self.dec_hidden % 2:
            raise ValueError("dec_hidden must be even (bi-GRU halves)")


@dataclass
class AttnHop:
    Wq: Tensor
    Ue: Tensor
    b: Tensor
    nu: Tensor


class WriterParams:
    """Learnable tensors of the writer; rows of entity_emb align with
    ``entity_vocab``, a list of (external_id, surface_name) pairs."""

    def __init__(self, rng, dims, entity_vocab=()):
        self.dims = dims
        self.entity_vocab = [(str(e), str(n)) for e, n in entity_vocab]
        if len(self.entity_vocab) != dims.n_memory:
            raise ValueError("entity_vocab length must match dims.n_memory")
        V, E, H, m = dims.vocab_size, dims.emb_dim, dims.dec_hidden, dims.attn_hidden
        u = nn.uniform_init
        self.embedding = u(rng, V, E)
        self.enc_fwd = nn.init_gru(rng, E, H // 2)
        self.enc_bwd = nn.init_gru(rng, E, H // 2)
        self.dec = nn.init_gru(rng, E, H)
        self.init_hops = [AttnHop(u(rng, m, H), u(rng, m, H), u(rng, m), u(rng, m))
                          for _ in range(dims.init_hops)]
        self.mem_hops = [AttnHop(u(rng, m, H), u(rng, m, H), u(rng, m), u(rng, m))
                         for _ in range(dims.step_hops)]
        self.mem_cov = u(rng, m)
        self.ref_Wh = u(rng, m, H)
        self.ref_Wt = u(rng, m, H)
        self.ref_cov = u(rng, m)
        self.ref_b = u(rng, m)
        self.ref_v = u(rng, m)
        self.gen_W = u(rng, V, 3 * H)
        self.gen_b = u(rng, V)
        self.gate_h = u(rng, H)
        self.gate_z = u(rng, E)
        self.gate_b = u(rng, 1)
        self.gate2_phi = u(rng, H)
        self.gate2_chi = u(rng, H)
        self.gate2_b = u(rng, 1)
        self.entity_emb = u(rng, dims.n_memory, H)

    def fields(self):
        out = [("embedding", self.embedding)]
        for tag, gru in (("enc_fwd", self.enc_fwd), ("enc_bwd", self.enc_bwd),
                         ("dec", self.dec)):
            for name, t in zip(("W_z", "U_z", "b_z", "W_r", "U_r", "b_r",
                                "W_c", "U_c", "b_c"), gru.tensors()):
                out.append((f"{tag}.{name}", t))
        for tag, hops in (("init_hop", self.init_hops), ("mem_hop", self.mem_hops)):
            for k, hop in enumerate(hops):
                out += [(f"{tag}{k}.Wq", hop.Wq), (f"{tag}{k}.Ue", hop.Ue),
                        (f"{tag}{k}.b", hop.b), (f"{tag}{k}.nu", hop.nu)]
        out += [("mem_cov", self.mem_cov),
                ("ref_Wh", self.ref_Wh), ("ref_Wt", self.ref_Wt),
                ("ref_cov", self.ref_cov), ("ref_b", self.ref_b), ("ref_v", self.ref_v),
                ("gen_W", self.gen_W), ("gen_b", self.gen_b),
                ("gate_h", self.gate_h), ("gate_z", self.gate_z), ("gate_b", self.gate_b),
                ("gate2_phi", self.gate2_phi), ("gate2_chi", self.gate2_chi),
                ("gate2_b", self.gate2_b),
                ("entity_emb", self.entity_emb)]
        return out

    def tensors(self):
        return [t for _, t in self.fields()]


def init_writer_params(dims, entity_vocab=(), seed=13):
    return WriterParams(np.random.default_rng(seed), dims, entity_vocab)


@dataclass
class MemoryEntry:
    row: int              # row of WriterParams.entity_emb
    tokens: tuple         # lowercase surface tokens, used for copying
    name: str = ""
    external_id: str = ""


@dataclass
class TrainPair:
    src: list
    tgt: list
    memories: list = field(default_factory=list)


# --------------------------------------------------------- sequence context

class SeqContext:
    """Per-example constants: encoded source, memory rows, copy index maps."""

    def __init__(self, params, vocab, src_tokens, memories):
        dims = params.dims
        if not src_tokens:
            raise ValueError("source must contain at least one token")
        if len(src_tokens) > dims.max_len:
            raise ValueError(f"source longer than truncation limit {dims.max_len}")
        self.vocab = vocab
        self.src_tokens = [t.lower() for t in src_tokens]
        self.memories = list(memories)
        V = len(vocab)

        ext = {}
        for t in self.src_tokens:
            if t not in vocab.stoi and t not in ext:
                ext[t] = V + len(ext)
        for m in self.memories:
            for t in m.tokens:
                if t not in vocab.stoi and t not in ext:
                    ext[t] = V + len(ext)
        self._ext_map = ext
        self.ext_tokens = list(ext)
        self.ext_size = V + len(self.ext_tokens)
        self.src_ext_ids = np.array(
            [vocab.stoi[t] if t in vocab.stoi else ext[t] for t in self.src_tokens],
            dtype=np.intp)
        self.src_vocab_ids = np.array(
            [vocab.id_of(t) for t in self.src_tokens], dtype=np.intp)

        # flattened memory-token scatter map: one slot per (entity, token)
        owners, tok_ids, weights = [], [], []
        for j, m in enumerate(self.memories):
            if not m.tokens:
                continue
            w = 1.0 / len(m.tokens)
            for t in m.tokens:
                owners.append(j)
                tok_ids.append(vocab.stoi.get(t, ext.get(t, UNK)))
                weights.append(w)
        self.mem_owner = np.array(owners, dtype=np.intp)
        self.mem_tok_ids = np.array(tok_ids, dtype=np.intp)
        self.mem_weights = np.array(weights, dtype=np.float64)

        self._surface_ids = {}
        for i, t in enumerate(vocab.itos):
            self._surface_ids.setdefault(t, []).append(i)
        for t, i in ext.items():
            self._surface_ids.setdefault(t, []).append(i)

        # encoding and per-sequence attention projections
        self.H, self.h_last = encode_reference(self.src_tokens, vocab, params)
        self.ref_proj = self.H @ ad.transpose(params.ref_Wt)
        if self.memories:
            rows = np.array([m.row for m in self.memories], dtype=np.intp)
            self.E = ad.take(params.entity_emb, rows)
            self.init_projs = [self.E @ ad.transpose(h.Ue) for h in params.init_hops]
            self.mem_projs = [self.E @ ad.transpose(h.Ue) for h in params.mem_hops]
        else:
            self.E = None
            self.init_projs = None
            self.mem_projs = None

    def surface(self, ext_id):
        if ext_id < len(self.vocab):
            return self.vocab.itos[ext_id]
        return self.ext_tokens[ext_id - len(self.vocab)]

    def ids_of(self, token):
        return self._surface_ids.get(token, [])

    def gold_id(self, token):
        """Target id in the extended vocabulary; unresolvable tokens -> UNK."""
        t = token.lower()
        if t in self.vocab.stoi:
            return self.vocab.stoi[t]
        return self._ext_map.get(t, UNK)


# ---------------------------------------------------------------- operations

def encode_reference(tokens, vocab, params):
    """Bi-GRU over the source; returns (H matrix of per-token states, h_last)."""
    if not tokens:
        raise ValueError("encode_reference: empty input")
    if len(tokens) > params.dims.max_len:
        raise ValueError(f"encode_reference: input exceeds limit {params.dims.max_len}")
    ids = np.array([vocab.id_of(t) for t in tokens], dtype=np.intp)
    X = ad.take(params.embedding, ids)
    l = len(tokens)
    fwd = nn.gru_sequence_pre(nn.gru_inputs(X, params.enc_fwd), params.enc_fwd)
    bwd = nn.gru_sequence_pre(nn.gru_inputs(X, params.enc_bwd), params.enc_bwd,
                              order=range(l - 1, -1, -1))
    rows = [ad.concat([fwd[j], bwd[l - 1 - j]]) for j in range(l)]
    return ad.stack_rows(rows), rows[-1]


def _hop_attention(q, E, hop, cov_term=None, E_proj=None):
    pre = E @ ad.transpose(hop.Ue) if E_proj is None else E_proj
    shift = hop.Wq @ q + hop.b
    pre = pre + ad.reshape(shift, (1, -1))
    if cov_term is not None:
        pre = pre + cov_term
    scores = ad.tanh(pre) @ hop.nu
    return ad.softmax(scores)


def init_decoder_state(h_last, E, params, E_projs=None):
    """Multi-hop memory attention turning h_last into the initial decoder
    hidden state; with no memories the query passes through unchanged."""
    q = h_last
    if E is None:
        return q
    for k, hop in enumerate(params.init_hops):
        attn = _hop_attention(q, E, hop, E_proj=None if E_projs is None else E_projs[k])
        q = attn @ E + q
    return q


def memory_step(h_dec, E, ent_cov, params, E_projs=None, return_hops=False):
    """Per-step memory network: returns (context chi, final attention beta)."""
    if E is None:
        chi = Tensor(np.zeros(params.dims.dec_hidden))
        return (chi, None, []) if return_hops else (chi, None)
    cov_term = ad.reshape(ent_cov, (-1, 1)) * ad.reshape(params.mem_cov, (1, -1))
    q = h_dec
    hops = []
    attn = None
    u = None
    for k, hop in enumerate(params.mem_hops):
        attn = _hop_attention(q, E, hop, cov_term,
                              None if E_projs is None else E_projs[k])
        u = attn @ E
        q = u + q
        hops.append(attn)
    return (u, attn, hops) if return_hops else (u, attn)


def reference_attention(h_dec, H, ref_cov, params, ref_proj=None):
    """Coverage-aware attention over source states; returns (phi, alpha)."""
    pre = H @ ad.transpose(params.ref_Wt) if ref_proj is None else ref_proj
    pre = pre + ad.reshape(params.ref_Wh @ h_dec + params.ref_b, (1, -1))
    pre = pre + ad.reshape(ref_cov, (-1, 1)) * ad.reshape(params.ref_cov, (1, -1))
    alpha = ad.softmax(ad.tanh(pre) @ params.ref_v)
    return alpha @ H, alpha


@dataclass
class MixtureDistribution:
    combined: Tensor          # P(z) over the extended vocabulary
    p_gen: Tensor
    p_tau: Tensor
    p_e: Tensor | None
    g_p: Tensor               # shape (1,)
    g_tp: Tensor              # shape (1,)
    alpha: Tensor             # reference attention, sums to 1
    beta: Tensor | None       # memory attention, sums to 1 (None if no memory)

    def branch_masses(self, ext_id):
        """(generate, copy-title, copy-entity) probability mass on one id."""
        gp = float(self.g_p.data[0])
        gtp = float(self.g_tp.data[0])
        gen = gp * float(self.p_gen.data[ext_id])
        tau = (1 - gp) * gtp * float(self.p_tau.data[ext_id])
        ent = 0.0 if self.p_e is None else (1 - gp) * (1 - gtp) * float(self.p_e.data[ext_id])
        return gen, tau, ent

    def source_tag(self, ext_id):
        gen, tau, ent = self.branch_masses(ext_id)
        return ("generate", "copy-title", "copy-entity")[int(np.argmax([gen, tau, ent]))]


def mixture(h_dec, phi, chi, alpha, beta, prev_emb, params, ctx,
            force_gp=None, force_gtp=None):
    """Blend generation and the two copy distributions into P(z)."""
    V = len(ctx.vocab)
    n_ext = ctx.ext_size - V
    logits = params.gen_W @ ad.concat([h_dec, phi, chi]) + params.gen_b
    p_gen = ad.softmax(logits)
    if n_ext:
        p_gen = ad.concat([p_gen, Tensor(np.zeros(n_ext))])
    p_tau = ad.index_add(alpha, ctx.src_ext_ids, ctx.ext_size)

    if force_gp is not None:
        g_p = Tensor(np.array([float(force_gp)]))
    else:
        g_p = ad.sigmoid(params.gate_h @ h_dec + params.gate_z @ prev_emb + params.gate_b)

    if beta is None:
        p_e = None
        g_tp = Tensor(np.array([1.0])) if force_gtp is None else Tensor(np.array([float(force_gtp)]))
        combined = g_p * p_gen + (1.0 - g_p) * (g_tp * p_tau)
    else:
        if force_gtp is not None:
            g_tp = Tensor(np.array([float(force_gtp)]))
        else:
            g_tp = ad.sigmoid(params.gate2_phi @ phi + params.gate2_chi @ chi + params.gate2_b)
        slot_vals = ad.take(beta, ctx.mem_owner) * Tensor(ctx.mem_weights)
        p_e = ad.index_add(slot_vals, ctx.mem_tok_ids, ctx.ext_size)
        combined = g_p * p_gen + (1.0 - g_p) * (g_tp * p_tau + (1.0 - g_tp) * p_e)

    return MixtureDistribution(combined, p_gen, p_tau, p_e, g_p, g_tp, alpha, beta)


@dataclass
class DecoderState:
    h: Tensor
    ref_cov: Tensor
    ent_cov: Tensor | None
    step: int = 0


def initial_state(params, ctx):
    h0 = init_decoder_state(ctx.h_last, ctx.E, params, E_projs=ctx.init_projs)
    ref_cov = Tensor(np.zeros(len(ctx.src_tokens)))
    ent_cov = Tensor(np.zeros(len(ctx.memories))) if ctx.memories else None
    return DecoderState(h0, ref_cov, ent_cov, 0)


def _attend_and_mix(params, ctx, h, prev_emb, state, force_gates):
    phi, alpha = reference_attention(h, ctx.H, state.ref_cov, params, ctx.ref_proj)
    chi, beta = memory_step(h, ctx.E, state.ent_cov, params, ctx.mem_projs)
    fg = force_gates or (None, None)
    mix = mixture(h, phi, chi, alpha, beta, prev_emb, params, ctx,
                  force_gp=fg[0], force_gtp=fg[1])
    new_state = DecoderState(
        h, state.ref_cov + alpha,
        None if beta is None else state.ent_cov + beta,
        state.step + 1)
    return mix, new_state


def decode_step(params, ctx, state, prev_ext_id, force_gates=None):
    """One decode step: returns (mixture, next state).

    Coverage vectors in the returned state include this step's attentions;
    the mixture was computed against the incoming (pre-step) coverage.
    """
    prev_vocab_id = prev_ext_id if prev_ext_id < len(ctx.vocab) else UNK
    prev_emb = ad.take(params.embedding, prev_vocab_id)
    h = nn.gru_cell(prev_emb, state.h, params.dec)
    return _attend_and_mix(params, ctx, h, prev_emb, state, force_gates)


def _teacher_steps(params, ctx, golds, force_gates=None):
    """Yield (mixture, pre-step state) per gold position under teacher
    forcing, with decoder input projections batched over the sequence."""
    prev_ids = np.array(
        [BOS] + [g if g < len(ctx.vocab) else UNK for g in golds[:-1]],
        dtype=np.intp)
    X = ad.take(params.embedding, prev_ids)
    gates = nn.gru_inputs(X, params.dec)
    state = initial_state(params, ctx)
    for t in range(len(golds)):
        prev_emb = ad.take(X, t)
        h = nn.gru_cell_pre(ad.take(gates[0], t), ad.take(gates[1], t),
                            ad.take(gates[2], t), state.h, params.dec)
        mix, nstate = _attend_and_mix(params, ctx, h, prev_emb, state, force_gates)
        yield mix, state
        state = nstate


def coverage_penalty(attn, cov):
    """Coverage loss term for one step: sum of min(attention, coverage)."""
    return ad.tsum(ad.minimum(attn, cov))


def sequence_loss(pair, params, vocab, coverage_lambda=1.0):
    """Teacher-forced loss for one pair: NLL plus coverage penalty.

    Returns (loss tensor, float NLL sum, token count). The gold sequence is
    the target plus the end marker; gold tokens outside vocabulary and copy
    sources score as <unk>.
    """
    ctx = SeqContext(params, vocab, pair.src, pair.memories)
    golds = [ctx.gold_id(t) for t in pair.tgt] + [EOS]
    nll = Tensor(np.zeros(()))
    cov = Tensor(np.zeros(()))
    nll_float = 0.0
    for gold, (mix, pre_state) in zip(golds, _teacher_steps(params, ctx, golds)):
        pen = coverage_penalty(mix.alpha, pre_state.ref_cov)
        if mix.beta is not None:
            pen = pen + coverage_penalty(mix.beta, pre_state.ent_cov)
        cov = cov + pen
        p_gold = ad.take(mix.combined, gold)
        nll = nll + (-ad.tlog(p_gold))
        nll_float += -float(np.log(p_gold.data))
    return nll + coverage_lambda * cov, nll_float, len(golds)


def evaluate(pairs, params, vocab):
    """(mean NLL per token, perplexity) of teacher-forced gold tokens."""
    total = 0.0
    count = 0
    with ad.no_grad():
        for pair in pairs:
            _, nll, n = sequence_loss(pair, params, vocab, coverage_lambda=0.0)
            total += nll
            count += n
    mean = total / count
    return mean, float(np.exp(mean))


def gold_token_probs(params, vocab, pair):
    """P(gold token) per step under teacher forcing; adapter for metrics."""
    with ad.no_grad():
        ctx = SeqContext(params, vocab, pair.src, pair.memories)
        golds = [ctx.gold_id(t) for t in pair.tgt] + [EOS]
        probs = [float(mix.combined.data[gold])
                 for gold, (mix, _) in zip(golds, _teacher_steps(params, ctx, golds))]
    return probs


def train_writer(pairs, params, vocab, epochs, seed, lr=0.001,
                 coverage_lambda=1.0, stop_ppl=None, log_fn=None):
    """Adam training over (source, target, memories) pairs.

    One optimizer step per pair, order reshuffled per epoch from the seed.
    Every epoch reports the training-pass perplexity estimate; a clean
    teacher-forced re-scoring pass (the "ppl" entry, what eval.perplexity
    reproduces) runs on the final epoch and whenever the estimate nears
    ``stop_ppl``, stopping early once it drops below. Returns the history.
    """
    if not pairs:
        raise ValueError("train_writer: empty corpus")
    limit = params.dims.max_len
    pairs = [TrainPair(p.src[:limit], p.tgt[:limit], p.memories) for p in pairs]
    rng = np.random.default_rng(seed)
    opt = nn.Adam(params.tensors(), lr=lr)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        total = 0.0
        nll_sum = 0.0
        tokens = 0
        for idx in order:
            loss, nll, n = sequence_loss(pairs[idx], params, vocab, coverage_lambda)
            grads = ad.gradients(loss, params.tensors())
            opt.step(grads)
            total += float(loss.data)
            nll_sum += nll
            tokens += n
        train_ppl = math.exp(nll_sum / tokens)
        entry = {"epoch": epoch, "train_loss": total, "train_ppl": train_ppl}
        if epoch == epochs - 1 or (stop_ppl is not None and train_ppl < 1.5 * stop_ppl):
            mean_nll, ppl = evaluate(pairs, params, vocab)
            entry["nll"] = mean_nll
            entry["ppl"] = ppl
        history.append(entry)
        if log_fn:
            log_fn(entry)
        if stop_ppl is not None and entry.get("ppl", math.inf) < stop_ppl:
            break
    return history


# ------------------------------------------------------------- beam search

@dataclass
class Beam:
    ids: list
    logp: float
    state: DecoderState
    prev: int
    emitted: frozenset
    tags: list


def _beam_sort_key(b):
    length = max(len(b.ids), 1)
    return (-(b.logp / length), tuple(b.ids))


def beam_search(params, vocab, src_tokens, memories=(), beam=4, max_len=120,
                mask_repetition=True, force_gates=None, return_tags=False):
    """Beam-search decode with repetition masking.

    A candidate whose surface form was already emitted has its probability
    zeroed unless it is a stop word or punctuation, so when masking consumes
    every content token the surviving stop words are selected as ordinary
    top candidates. A fully zero distribution (reachable only with pinned
    gates once every copyable token is masked) terminates the beam. Finished
    beams rank by length-normalized log-probability, ties broken by
    lexicographic token ids. Returns the token list (and per-token source
    tags when requested).
    """
    with ad.no_grad():
        ctx = SeqContext(params, vocab, src_tokens, memories)
        live = [Beam([], 0.0, initial_state(params, ctx), BOS, frozenset(), [])]
        finished = []
        for _ in range(max_len):
            if not live:
                break
            pool = []
            for bm in live:
                mix, nstate = decode_step(params, ctx, bm.state, bm.prev, force_gates)
                probs = mix.combined.data.copy()
                probs[PAD] = 0.0
                probs[BOS] = 0.0
                if mask_repetition:
                    for t in bm.emitted:
                        if not vocab.is_stopish(t):
                            for i in ctx.ids_of(t):
                                probs[i] = 0.0
                order = np.argsort(-probs, kind="stable")[:beam]
                cands = [(int(i), probs[i]) for i in order if probs[i] > 0.0]
                if not cands:
                    cands = [(EOS, 1e-300)]
                for tok, pr in cands:
                    lp = bm.logp + float(np.log(max(pr, 1e-300)))
                    tag = mix.source_tag(tok) if return_tags else None
                    if tok == EOS:
                        done = Beam(bm.ids, lp, nstate, tok, bm.emitted,
                                    bm.tags)
                        finished.append(done)
                    else:
                        pool.append(Beam(
                            bm.ids + [tok], lp, nstate, tok,
                            bm.emitted | {ctx.surface(tok)},
                            bm.tags + [tag] if return_tags else bm.tags))
            pool.sort(key=lambda b: (-b.logp, tuple(b.ids)))
            live = pool[:beam]
        finished.extend(live)
        finished.sort(key=_beam_sort_key)
        best = finished[0]
        tokens = [ctx.surface(i) for i in best.ids]
    if return_tags:
        return tokens, list(best.tags)
    return tokens


# ---------------------------------------------------------------- the chain

@dataclass
class WriterModel:
    task: str
    vocab: Vocabulary
    params: WriterParams

    def row_of(self, external_id):
        if not hasattr(self, "_rows"):
            self._rows = {}
            for i, (ext, _) in enumerate(self.params.entity_vocab):
                self._rows.setdefault(ext, i)
        return self._rows.get(external_id)


@dataclass
class GenerationRecord:
    title: list
    related: list                    # [(external_id, name, confidence)]
    abstract: list
    conclusion_future_work: list
    new_title: list
    second_abstract: list | None
    source_tags: dict
    error: str | None = None

    def to_json(self):
        return json.dumps({
            "title": self.title,
            "related_entities": [
                {"external_id": e, "name": n, "confidence": c}
                for e, n, c in self.related],
            "abstract": self.abstract,
            "conclusion_future_work": self.conclusion_future_work,
            "new_title": self.new_title,
            "second_abstract": self.second_abstract,
            "source_tags": self.source_tags,
            "error": self.error,
        }, ensure_ascii=False, separators=(",", ":"))


def _memories_for(source_tokens, graph, model, limit):
    matches = match_title_entities(source_tokens, graph)
    ids = list(dict.fromkeys(eid for eid, _ in matches))
    related = related_entities(ids, graph, limit=limit)
    memories = []
    info = []
    for eid, conf in related:
        ent = graph.entities[eid]
        row = model.row_of(ent.external_id)
        if row is None:
            continue
        memories.append(MemoryEntry(row, tuple(ent.surface_name.lower().split()),
                                    ent.surface_name, ent.external_id))
        info.append((ent.external_id, ent.surface_name, conf))
    return memories, info


def generate_chain(title_tokens, graph, models, limit=10, beam=4, max_len=120,
                   second_abstract=False):
    """Run the incremental chain: title -> abstract -> conclusion/future work
    -> new title (-> optional second abstract from the new title).

    Each stage matches entities in its own source text, retrieves related
    entities from the enriched graph, and decodes with those memories. An
    empty stage output halts the chain with the error flag set.
    """
    title = [t.lower() for t in title_tokens]
    if not title:
        raise ValueError("generate_chain: empty title")
    rec = GenerationRecord(title, [], [], [], [], None, {})

    def run(task, source):
        model = models[task]
        src = source[:max_len]
        memories, info = _memories_for(src, graph, model, limit)
        tokens, tags = beam_search(model.params, model.vocab, src, memories,
                                   beam=beam, max_len=max_len, return_tags=True)
        return tokens, tags, info

    abstract, tags, info = run("title2abstract", title)
    rec.related = info
    rec.abstract = abstract
    rec.source_tags["abstract"] = tags
    if not abstract:
        rec.error = "empty output at stage abstract"
        return rec

    conclusion, tags, _ = run("abstract2conclusion", abstract)
    rec.conclusion_future_work = conclusion
    rec.source_tags["conclusion_future_work"] = tags
    if not conclusion:
        rec.error = "empty output at stage conclusion_future_work"
        return rec

    new_title, tags, _ = run("conclusion2title", conclusion)
    rec.new_title = new_title
    rec.source_tags["new_title"] = tags
    if not new_title:
        rec.error = "empty output at stage new_title"
        return rec

    if second_abstract:
        second, tags, _ = run("title2abstract", new_title)
        rec.second_abstract = second
        rec.source_tags["second_abstract"] = tags
        if not second:
            rec.error = "empty output at stage second_abstract"
    return rec


# ------------------------------------------------------------------ corpora

def save_writer_model(path, model):
    from dataclasses import asdict as _asdict

    from . import serialize
    meta = {
        "task": model.task,
        "dims": _asdict(model.params.dims),
        "vocab": model.vocab.itos,
        "stop_words": sorted(model.vocab.stop_words),
        "punctuation": sorted(model.vocab.punctuation),
        "entity_vocab": [[e, n] for e, n in model.params.entity_vocab],
    }
    serialize.save_model(path, "writer", meta,
                         [(n, t.data) for n, t in model.params.fields()])


def load_writer_model(path):
    from . import serialize
    kind, meta, arrays = serialize.load_model(path)
    if kind != "writer":
        raise serialize.ModelFormatError(f"{path}: expected a writer model, got {kind!r}")
    dims = WriterDims(**meta["dims"])
    vocab = Vocabulary(list(meta["vocab"]), set(meta["stop_words"]),
                       set(meta["punctuation"]))
    params = WriterParams(np.random.default_rng(0), dims,
                          [tuple(x) for x in meta["entity_vocab"]])
    for name, t in params.fields():
        if arrays[name].shape != t.data.shape:
            raise serialize.ModelFormatError(f"{path}: field {name} has shape "
                                             f"{arrays[name].shape}, expected {t.data.shape}")
        t.data = arrays[name]
    return WriterModel(meta["task"], vocab, params)


def read_corpus(path):
    """JSONL corpus records: {"src": [...], "tgt": [...]} plus an optional
    "entities" list of surface names."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                src = [str(t).lower() for t in rec["src"]]
                tgt = [str(t).lower() for t in rec["tgt"]]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad corpus record ({exc})") from None
            ents = [str(e) for e in rec.get("entities", [])]
            records.append({"src": src, "tgt": tgt, "entities": ents})
    return records
