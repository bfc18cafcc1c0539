"""Entity representations, triple scoring, and similarity-driven enrichment.

Each entity gets a combined representation: a multi-head graph-attention
encoding of its outgoing neighborhood concatenated with a bi-GRU encoding of
its context sentences. Triples score as the negative L2 residual of a
translation in a learned projection space; training minimizes a margin
ranking loss against type-consistent corruptions. Entity pairs whose
combined vectors pass a cosine threshold exchange their outgoing edges
(one round), producing the enriched graph used for related-entity retrieval.

Training is single-threaded and seeded. Encoding entities for propagation
only reads the graph and parameters, so it could fan out per entity; results
merge by entity id either way.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .kg import KnowledgeGraph

log = logging.getLogger(__name__)


@dataclass
class EntityRepresentation:
    graph_vector: np.ndarray
    text_vector: np.ndarray

    @property
    def combined(self):
        return np.concatenate([self.graph_vector, self.text_vector])


class LinkPredictParams:
    """All learnable tensors plus the fixed slope/margin hyperparameters."""

    def __init__(self, rng, n_entities, n_relations, ctx_vocab,
                 heads=8, head_hidden=8, entity_dim=64, text_emb=128,
                 context_hidden=32, alpha=0.2, margin=1.0):
        if heads * head_hidden != entity_dim:
            raise ValueError(
                f"heads*head_hidden must equal entity_dim ({heads}x{head_hidden} != {entity_dim})")
        self.heads = heads
        self.head_hidden = head_hidden
        self.entity_dim = entity_dim
        self.text_emb = text_emb
        self.context_hidden = context_hidden
        self.alpha = alpha
        self.margin = margin
        self.ctx_vocab = list(ctx_vocab)           # index 0 is the unknown token
        self.ctx_stoi = {t: i for i, t in enumerate(self.ctx_vocab)}

        u = nn.uniform_init
        self.entity_emb = u(rng, n_entities, entity_dim)
        self.rel_emb = u(rng, n_relations, entity_dim)
        # head_W stored (entity_dim, head_hidden): projected rows come from emb @ W
        self.head_W = [u(rng, entity_dim, head_hidden) for _ in range(heads)]
        self.head_a = [u(rng, 2 * head_hidden) for _ in range(heads)]
        self.tok_emb = u(rng, len(self.ctx_vocab), text_emb)
        self.gru_fwd = nn.init_gru(rng, text_emb, context_hidden)
        self.gru_bwd = nn.init_gru(rng, text_emb, context_hidden)
        self.text_proj = u(rng, entity_dim, 2 * context_hidden)
        self.text_bias = u(rng, entity_dim)
        self.triple_proj = u(rng, entity_dim, 2 * entity_dim)

    def fields(self):
        out = [("entity_emb", self.entity_emb), ("rel_emb", self.rel_emb)]
        for k in range(self.heads):
            out.append((f"head_W{k}", self.head_W[k]))
            out.append((f"head_a{k}", self.head_a[k]))
        out.append(("tok_emb", self.tok_emb))
        for tag, gru in (("gru_fwd", self.gru_fwd), ("gru_bwd", self.gru_bwd)):
            for name, t in zip(("W_z", "U_z", "b_z", "W_r", "U_r", "b_r",
                                "W_c", "U_c", "b_c"), gru.tensors()):
                out.append((f"{tag}.{name}", t))
        out.append(("text_proj", self.text_proj))
        out.append(("text_bias", self.text_bias))
        out.append(("triple_proj", self.triple_proj))
        return out

    def tensors(self):
        return [t for _, t in self.fields()]


def build_ctx_vocab(ctx):
    """Sorted unique sentence tokens, with the unknown marker at index 0."""
    toks = sorted({t for sent in ctx.sentences.values() for t in sent})
    return ["<unk>"] + toks


def init_link_params(g, ctx, seed, **kwargs):
    rng = np.random.default_rng(seed)
    return LinkPredictParams(rng, g.n_entities, g.n_relations,
                             build_ctx_vocab(ctx), **kwargs)


# ----------------------------------------------------------- entity encoders

def encode_graph(entity_id, g, p):
    """Multi-head attention over the entity's outgoing neighbors plus itself.

    Per head: score(e, j) = LeakyReLU(a . [W emb(e) ; W emb(j)]), softmax
    over candidates, output the attention-weighted sum of projected
    candidates; heads concatenate. Candidates are deduplicated and sorted by
    id, so the encoding is invariant to input neighbor order.
    """
    ids = sorted(set(g.neighbor_entities(entity_id)) | {entity_id})
    self_pos = ids.index(entity_id)
    embs = ad.take(p.entity_emb, np.array(ids, dtype=np.intp))   # (n, d)
    outs = []
    for k in range(p.heads):
        proj = embs @ p.head_W[k]                                # (n, hh)
        a_self = ad.take(p.head_a[k], np.arange(p.head_hidden))
        a_nb = ad.take(p.head_a[k], np.arange(p.head_hidden, 2 * p.head_hidden))
        self_score = ad.take(proj, self_pos) @ a_self            # scalar
        scores = ad.leaky_relu(proj @ a_nb + self_score, p.alpha)
        attn = ad.softmax(scores)
        outs.append(attn @ proj)
    return ad.concat(outs)


def _encode_sentence(tokens, p):
    ids = np.array([p.ctx_stoi.get(t, 0) for t in tokens], dtype=np.intp)
    X = ad.take(p.tok_emb, ids)
    fwd = nn.gru_sequence_pre(nn.gru_inputs(X, p.gru_fwd), p.gru_fwd)
    bwd = nn.gru_sequence_pre(nn.gru_inputs(X, p.gru_bwd), p.gru_bwd,
                              order=range(len(ids) - 1, -1, -1))
    return ad.concat([fwd[-1], bwd[-1]])


def encode_context(entity_id, ctx, p, sentence_cache=None):
    """Bi-GRU per context sentence, mean-pooled, projected to entity_dim.

    Entities with no context sentences map to the zero vector. Sentences
    shared between entities can reuse one encoding per pass through the
    optional cache (the tape handles the shared subgraph).
    """
    sids = ctx.sentences_for(entity_id)
    if not sids:
        return Tensor(np.zeros(p.entity_dim))
    encs = []
    for sid in sids:
        if sentence_cache is None:
            encs.append(_encode_sentence(ctx.sentences[sid], p))
            continue
        enc = sentence_cache.get(sid)
        if enc is None:
            enc = sentence_cache[sid] = _encode_sentence(ctx.sentences[sid], p)
        encs.append(enc)
    pooled = encs[0]
    for e in encs[1:]:
        pooled = pooled + e
    pooled = pooled * (1.0 / len(encs))
    return p.text_proj @ pooled + p.text_bias


def encode_entity_tensors(entity_id, g, ctx, p, sentence_cache=None):
    """(graph_vector, text_vector) as tape tensors, for training."""
    return (encode_graph(entity_id, g, p),
            encode_context(entity_id, ctx, p, sentence_cache))


def encode_all(g, ctx, p):
    """EntityRepresentation per entity id, computed off the tape."""
    reps = []
    with ad.no_grad():
        cache = {}
        for eid in range(g.n_entities):
            gv, tv = encode_entity_tensors(eid, g, ctx, p, cache)
            reps.append(EntityRepresentation(gv.data.copy(), tv.data.copy()))
    return reps


# ------------------------------------------------------------ triple scoring

def _score_tensors(h_comb, rel_id, t_comb, p):
    resid = p.triple_proj @ h_comb + ad.take(p.rel_emb, int(rel_id)) - p.triple_proj @ t_comb
    return -ad.l2norm(resid)


def score_triple(h, rel_id, t, p):
    """Plausibility of (h, rel, t); always <= 0, higher is more plausible."""
    if not 0 <= rel_id < p.rel_emb.data.shape[0]:
        raise KeyError(f"unknown relation id {rel_id}")
    with ad.no_grad():
        s = _score_tensors(Tensor(h.combined), rel_id, Tensor(t.combined), p)
    return float(s.data)


def entity_similarity(a, b):
    """Cosine similarity of combined vectors; zero vectors give 0."""
    va, vb = a.combined, b.combined
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(va @ vb / (na * nb))


# ----------------------------------------------------------------- training

def _corrupt(triple, g, by_type, rng, max_tries=50):
    """Replace head or tail with a same-type entity; avoid real triples."""
    head, rel, tail = triple
    for _ in range(max_tries):
        corrupt_head = bool(rng.integers(2))
        victim = head if corrupt_head else tail
        pool = by_type[g.entities[victim].entity_type]
        repl = int(pool[rng.integers(len(pool))])
        cand = (repl, rel, tail) if corrupt_head else (head, rel, repl)
        if cand != triple and not g.has_triple(*cand):
            return cand
    return None


def train_margin(g, ctx, p, epochs, seed, lr=0.001):
    """Margin ranking training over all triples, full batch per epoch.

    Corruptions resample uniformly per epoch from a generator seeded once,
    so a fixed seed reproduces the run exactly. Batches whose hinge loss is
    exactly zero skip the optimizer step, leaving parameters untouched.
    Returns the per-epoch loss history.
    """
    if not g.triples:
        raise ValueError("train_margin: graph has no triples")
    rng = np.random.default_rng(seed)
    by_type = {t: [] for t in ("Disease", "Chemical", "Gene")}
    for ent in g.entities:
        by_type[ent.entity_type].append(ent.id)
    opt = nn.Adam(p.tensors(), lr=lr)
    history = []
    for _ in range(epochs):
        cache = {}
        combined = {}
        for eid in range(g.n_entities):
            gv, tv = encode_entity_tensors(eid, g, ctx, p, cache)
            combined[eid] = ad.concat([gv, tv])
        loss = Tensor(np.zeros(()))
        for triple in g.triples:
            corrupted = _corrupt(triple, g, by_type, rng)
            if corrupted is None:
                continue
            gold = _score_tensors(combined[triple[0]], triple[1], combined[triple[2]], p)
            bad = _score_tensors(combined[corrupted[0]], corrupted[1], combined[corrupted[2]], p)
            loss = loss + ad.relu(p.margin + bad - gold)
        value = float(loss.data)
        history.append(value)
        if value > 0.0:
            opt.step(ad.gradients(loss, p.tensors()))
    return history


def margin_loss_tensor(g, ctx, p, corruptions):
    """Hinge loss tensor for explicit (gold, corrupted) pairs; used by tests
    and gradient checks where the sampling must be pinned."""
    cache = {}
    combined = {}
    needed = {e for g_, c in corruptions for e in (g_[0], g_[2], c[0], c[2])}
    for eid in sorted(needed):
        gv, tv = encode_entity_tensors(eid, g, ctx, p, cache)
        combined[eid] = ad.concat([gv, tv])
    loss = Tensor(np.zeros(()))
    for gold, bad in corruptions:
        s_gold = _score_tensors(combined[gold[0]], gold[1], combined[gold[2]], p)
        s_bad = _score_tensors(combined[bad[0]], bad[1], combined[bad[2]], p)
        loss = loss + ad.relu(p.margin + s_bad - s_gold)
    return loss


# ---------------------------------------------------------------- enrichment

def propagate_links(g, reps, threshold):
    """One similarity-driven propagation round; returns a new graph.

    Every unordered entity pair with cosine similarity >= threshold swaps
    outgoing edges: each side gains the other's original (relation, tail)
    edges it lacks, at confidence equal to the pair similarity (the maximum
    when several pairs contribute the same edge). Original triples and their
    confidences are untouched.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"similarity threshold must be in (0, 1], got {threshold}")
    if len(reps) != g.n_entities:
        raise ValueError("representations must cover every entity")
    out = KnowledgeGraph()
    for ent in g.entities:
        out.add_entity(ent.external_id, ent.surface_name, ent.entity_type)
        out.entities[ent.id].context_sentence_ids = list(ent.context_sentence_ids)
    for rel in g.relations:
        out.add_relation(rel.subtype_name)
    for triple in g.triples:
        out.add_triple(*triple, confidence=g.confidence[triple])
    n = g.n_entities
    for a in range(n):
        for b in range(a + 1, n):
            sim = entity_similarity(reps[a], reps[b])
            if sim < threshold:
                continue
            for src, dst in ((b, a), (a, b)):
                for rel, tail in sorted({(r, t) for r, t, _ in g.neighbors(src)}):
                    if not g.has_triple(dst, rel, tail):
                        out.add_triple(dst, rel, tail, confidence=sim)
    return out


def save_link_params(path, p):
    from . import serialize
    meta = {
        "heads": p.heads, "head_hidden": p.head_hidden,
        "entity_dim": p.entity_dim, "text_emb": p.text_emb,
        "context_hidden": p.context_hidden,
        "alpha": p.alpha, "margin": p.margin,
        "ctx_vocab": p.ctx_vocab,
        "n_entities": p.entity_emb.data.shape[0],
        "n_relations": p.rel_emb.data.shape[0],
    }
    serialize.save_model(path, "linkpred", meta,
                         [(n, t.data) for n, t in p.fields()])


def load_link_params(path):
    from . import serialize
    kind, meta, arrays = serialize.load_model(path)
    if kind != "linkpred":
        raise serialize.ModelFormatError(f"{path}: expected link-predictor params, got {kind!r}")
    p = LinkPredictParams(
        np.random.default_rng(0), meta["n_entities"], meta["n_relations"],
        meta["ctx_vocab"], heads=meta["heads"], head_hidden=meta["head_hidden"],
        entity_dim=meta["entity_dim"], text_emb=meta["text_emb"],
        context_hidden=meta["context_hidden"], alpha=meta["alpha"],
        margin=meta["margin"])
    for name, t in p.fields():
        if arrays[name].shape != t.data.shape:
            raise serialize.ModelFormatError(f"{path}: field {name} has shape "
                                             f"{arrays[name].shape}, expected {t.data.shape}")
        t.data = arrays[name]
    return p


def related_entities(title_entities, g, limit=10):
    """Neighbors of the title entities ranked by edge confidence.

    Title entities themselves are excluded; each candidate scores as the
    maximum confidence over contributing edges; ties order by entity id.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    title_set = set(title_entities)
    best = {}
    for eid in title_entities:
        for _, tail, conf in g.neighbors(eid):
            if tail in title_set:
                continue
            if tail not in best or conf > best[tail]:
                best[tail] = conf
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:limit]
