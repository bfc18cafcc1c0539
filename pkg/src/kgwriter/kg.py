"""Background knowledge graph: ingestion, adjacency queries, serialization,
and dictionary matching of entities in titles.

File formats
------------
triples file      tab-separated, 7 columns per line:
                  head_ext_id, head_name, head_type, relation_subtype,
                  tail_ext_id, tail_name, tail_type
                  plus an optional 8th column holding a confidence in [0, 1]
                  (written by graph serialization; absent columns mean 1.0).
                  Lines starting with ``#`` and blank lines are ignored.
sentences file    one JSON object per line:
                  {"sid": int, "tokens": [str], "entities": [external ids]}

Graphs are immutable after ingestion; enrichment builds a new graph value.
Triples keep their first-seen insertion order, and serialization writes that
order back out, so ingest -> serialize -> ingest reproduces the same integer
ids (entities that appear in no triple cannot survive the triples-only
format and are excluded from the round-trip guarantee).
"""

import json
import logging
from dataclasses import dataclass, field

log = logging.getLogger(__name__)

ENTITY_TYPES = ("Disease", "Chemical", "Gene")


class DataFormatError(ValueError):
    """Malformed ingestion input; message carries the offending line number."""


@dataclass
class Entity:
    id: int
    surface_name: str
    entity_type: str
    external_id: str
    context_sentence_ids: list = field(default_factory=list)


@dataclass
class Relation:
    subtype_name: str
    subtype_id: int


class KnowledgeGraph:
    """Entities, typed relations, and directed triples with confidences."""

    def __init__(self):
        self.entities = []                # Entity, index == id
        self.relations = []               # Relation, index == id
        self._entity_by_ext = {}          # external_id -> id
        self._relation_by_name = {}       # subtype_name -> id
        self.triples = []                 # (head, rel, tail) in insertion order
        self._triple_set = set()
        self.confidence = {}              # (head, rel, tail) -> float
        self._adjacency = {}              # head -> list[(rel, tail)]

    # -- construction -------------------------------------------------------

    def add_entity(self, external_id, name, entity_type):
        if entity_type not in ENTITY_TYPES:
            raise DataFormatError(f"unknown entity type {entity_type!r}")
        eid = self._entity_by_ext.get(external_id)
        if eid is None:
            eid = len(self.entities)
            self.entities.append(Entity(eid, name, entity_type, external_id))
            self._entity_by_ext[external_id] = eid
        return eid

    def add_relation(self, subtype_name):
        rid = self._relation_by_name.get(subtype_name)
        if rid is None:
            rid = len(self.relations)
            self.relations.append(Relation(subtype_name, rid))
            self._relation_by_name[subtype_name] = rid
        return rid

    def add_triple(self, head, rel, tail, confidence=1.0):
        key = (head, rel, tail)
        if key in self._triple_set:
            self.confidence[key] = max(self.confidence[key], confidence)
            return False
        self.triples.append(key)
        self._triple_set.add(key)
        self.confidence[key] = confidence
        self._adjacency.setdefault(head, []).append((rel, tail))
        return True

    def has_triple(self, head, rel, tail):
        return (head, rel, tail) in self._triple_set

    # -- queries ------------------------------------------------------------

    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_relations(self):
        return len(self.relations)

    def entity_id(self, external_id):
        return self._entity_by_ext[external_id]

    def neighbors(self, entity_id):
        """Outgoing edges of an entity: set of (relation, tail, confidence)."""
        if not 0 <= entity_id < len(self.entities):
            raise KeyError(f"unknown entity id {entity_id}")
        return {(r, t, self.confidence[(entity_id, r, t)])
                for r, t in self._adjacency.get(entity_id, [])}

    def neighbor_entities(self, entity_id):
        """Distinct tail entity ids, sorted."""
        return sorted({t for _, t in self._adjacency.get(entity_id, [])})


def ingest_triples(lines):
    """Build a KnowledgeGraph from an iterable of triple-file lines."""
    g = KnowledgeGraph()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (7, 8):
            raise DataFormatError(
                f"line {lineno}: expected 7 or 8 tab-separated columns, got {len(cols)}")
        h_ext, h_name, h_type, rel_name, t_ext, t_name, t_type = cols[:7]
        conf = 1.0
        if len(cols) == 8:
            try:
                conf = float(cols[7])
            except ValueError:
                raise DataFormatError(f"line {lineno}: bad confidence {cols[7]!r}") from None
        try:
            head = g.add_entity(h_ext, h_name, h_type)
            tail = g.add_entity(t_ext, t_name, t_type)
        except DataFormatError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from None
        rel = g.add_relation(rel_name)
        g.add_triple(head, rel, tail, conf)
    return g


def load_triples(path):
    with open(path, encoding="utf-8") as fh:
        return ingest_triples(fh)


def serialize_graph(g, path):
    """Write the graph in the 8-column triples format, insertion order."""
    with open(path, "w", encoding="utf-8") as fh:
        for head, rel, tail in g.triples:
            h = g.entities[head]
            t = g.entities[tail]
            r = g.relations[rel]
            conf = g.confidence[(head, rel, tail)]
            fh.write("\t".join([h.external_id, h.surface_name, h.entity_type,
                                r.subtype_name,
                                t.external_id, t.surface_name, t.entity_type,
                                repr(conf)]) + "\n")


class ContextIndex:
    """Bidirectional sentence index: sid -> tokens, entity id -> sids."""

    def __init__(self):
        self.sentences = {}           # sid -> [tokens]
        self.by_entity = {}           # entity_id -> [sid]

    def sentences_for(self, entity_id):
        return self.by_entity.get(entity_id, [])


def ingest_sentences(lines, g):
    """Build a ContextIndex from sentence-file lines against a graph."""
    ctx = ContextIndex()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            sid = int(rec["sid"])
            tokens = [str(t).lower() for t in rec["tokens"]]
            ext_ids = rec["entities"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"line {lineno}: bad sentence record ({exc})") from None
        ctx.sentences[sid] = tokens
        for ext in ext_ids:
            try:
                eid = g.entity_id(ext)
            except KeyError:
                log.warning("sentence %d mentions unknown entity %r, skipped", sid, ext)
                continue
            ctx.by_entity.setdefault(eid, []).append(sid)
            g.entities[eid].context_sentence_ids.append(sid)
    return ctx


def load_sentences(path, g):
    with open(path, encoding="utf-8") as fh:
        return ingest_sentences(fh, g)


def build_lexicon(g):
    """Surface-name lexicon: lowercase token tuple -> entity id.

    Entities sharing a surface form resolve to the lowest id.
    """
    lex = {}
    for ent in g.entities:
        key = tuple(ent.surface_name.lower().split())
        if key and key not in lex:
            lex[key] = ent.id
    return lex


def match_title_entities(title_tokens, g, lexicon=None):
    """Dictionary-match graph entities in a lowercase token list.

    Longest match wins at each position, scanning left to right; matched
    spans never overlap. Returns [(entity_id, (start, end))] in span order.
    """
    lex = lexicon if lexicon is not None else build_lexicon(g)
    if not lex:
        return []
    max_len = max(len(k) for k in lex)
    tokens = [t.lower() for t in title_tokens]
    out = []
    i = 0
    n = len(tokens)
    while i < n:
        hit = None
        for span in range(min(max_len, n - i), 0, -1):
            eid = lex.get(tuple(tokens[i:i + span]))
            if eid is not None:
                hit = (eid, (i, i + span))
                break
        if hit is None:
            i += 1
        else:
            out.append(hit)
            i = hit[1][1]
    return out
