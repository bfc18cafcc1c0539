import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgwriter import kg
from kgwriter.kg import DataFormatError


def _line(h, hn, ht, r, t, tn, tt, conf=None):
    cols = [h, hn, ht, r, t, tn, tt]
    if conf is not None:
        cols.append(str(conf))
    return "\t".join(cols)


FIG3 = [
    _line("D002", "zinc", "Chemical", "associated_with", "G001", "cd14 molecule", "Gene"),
    _line("D002", "zinc", "Chemical", "associated_with", "G002", "neuropilin 2", "Gene"),
    _line("D002", "zinc", "Chemical", "marker_mechanism", "D101", "prostate cancer", "Disease"),
    _line("D001", "calcium", "Chemical", "marker_mechanism", "D101", "prostate cancer", "Disease"),
    _line("D001", "calcium", "Chemical", "increases_expression", "G003", "snail", "Gene"),
    _line("D002", "zinc", "Chemical", "increases_expression", "G003", "snail", "Gene"),
]


def test_empty_stream():
    g = kg.ingest_triples([])
    assert g.n_entities == 0 and len(g.triples) == 0


def test_shared_neighbor_fragment():
    g = kg.ingest_triples(FIG3)
    assert len(g.triples) == 6
    zinc = g.entity_id("D002")
    names = {g.entities[t].surface_name for _, t, _ in g.neighbors(zinc)}
    assert {"cd14 molecule", "neuropilin 2"} <= names
    calcium = g.entity_id("D001")
    cal_names = {g.entities[t].surface_name for _, t, _ in g.neighbors(calcium)}
    assert "cd14 molecule" not in cal_names


def test_duplicate_triple_stored_once():
    g = kg.ingest_triples(FIG3 + [FIG3[0], FIG3[0]])
    assert len(g.triples) == 6


def test_unknown_entity_type_reports_line_number():
    bad = FIG3[:2] + [_line("X", "x", "Mineral", "r", "Y", "y", "Gene")]
    with pytest.raises(DataFormatError, match="line 3"):
        kg.ingest_triples(bad)


def test_malformed_line_reports_line_number():
    with pytest.raises(DataFormatError, match="line 1"):
        kg.ingest_triples(["just two\tcolumns"])


def test_comments_and_blanks_ignored():
    g = kg.ingest_triples(["# comment", "", FIG3[0]])
    assert len(g.triples) == 1


def test_neighbors_unknown_id_rejected():
    g = kg.ingest_triples(FIG3)
    with pytest.raises(KeyError):
        g.neighbors(99)


def test_isolated_entity_empty_neighbors():
    g = kg.ingest_triples(FIG3)
    tail_only = g.entity_id("G001")
    assert g.neighbors(tail_only) == set()


def _random_graph_lines(rng, n_entities=12, n_triples=30):
    types = ["Disease", "Chemical", "Gene"]
    ents = [(f"E{i}", f"ent {i}", types[i % 3]) for i in range(n_entities)]
    lines = []
    for _ in range(n_triples):
        h = ents[rng.integers(n_entities)]
        t = ents[rng.integers(n_entities)]
        r = f"rel_{rng.integers(4)}"
        lines.append(_line(h[0], h[1], h[2], r, t[0], t[1], t[2]))
    return lines


def test_neighbors_matches_linear_scan_oracle():
    rng = np.random.default_rng(7)
    lines = _random_graph_lines(rng)
    g = kg.ingest_triples(lines)
    for eid in range(g.n_entities):
        expected = {(r, t, g.confidence[(h, r, t)])
                    for (h, r, t) in g.triples if h == eid}
        assert g.neighbors(eid) == expected


def test_neighbors_enumerate_each_triple_once():
    rng = np.random.default_rng(8)
    g = kg.ingest_triples(_random_graph_lines(rng))
    seen = []
    for eid in range(g.n_entities):
        for r, t, _ in g.neighbors(eid):
            seen.append((eid, r, t))
    assert sorted(seen) == sorted(g.triples)


def test_serialize_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    g = kg.ingest_triples(_random_graph_lines(rng))
    path = tmp_path / "graph.tsv"
    kg.serialize_graph(g, path)
    g2 = kg.load_triples(path)
    assert g2.triples == g.triples
    assert g2.confidence == g.confidence
    assert [(e.external_id, e.surface_name, e.entity_type) for e in g2.entities] == \
           [(e.external_id, e.surface_name, e.entity_type) for e in g.entities]
    assert [r.subtype_name for r in g2.relations] == [r.subtype_name for r in g.relations]


def test_serialize_round_trip_preserves_confidence(tmp_path):
    lines = FIG3[:2] + [_line("D001", "calcium", "Chemical", "associated_with",
                              "G001", "cd14 molecule", "Gene", conf=0.93)]
    g = kg.ingest_triples(lines)
    path = tmp_path / "g.tsv"
    kg.serialize_graph(g, path)
    g2 = kg.load_triples(path)
    key = (g2.entity_id("D001"), g2._relation_by_name["associated_with"], g2.entity_id("G001"))
    assert g2.confidence[key] == 0.93


# ---------------------------------------------------------------- sentences

def test_sentences_empty():
    g = kg.ingest_triples(FIG3)
    ctx = kg.ingest_sentences([], g)
    assert ctx.sentences == {}


def test_sentence_with_two_entities_maps_both():
    g = kg.ingest_triples(FIG3)
    ctx = kg.ingest_sentences(
        ['{"sid": 4, "tokens": ["zinc", "and", "calcium"], "entities": ["D002", "D001"]}'], g)
    assert ctx.sentences_for(g.entity_id("D002")) == [4]
    assert ctx.sentences_for(g.entity_id("D001")) == [4]


def test_unknown_entity_mention_warns_and_skips(caplog):
    g = kg.ingest_triples(FIG3)
    with caplog.at_level("WARNING"):
        ctx = kg.ingest_sentences(
            ['{"sid": 1, "tokens": ["x"], "entities": ["NOPE", "D001"]}'], g)
    assert "NOPE" in caplog.text
    assert ctx.sentences_for(g.entity_id("D001")) == [1]


def test_sentence_index_matches_brute_force_rebuild():
    rng = np.random.default_rng(11)
    g = kg.ingest_triples(_random_graph_lines(rng))
    records = []
    raw = []
    for sid in range(100):
        n_ment = int(rng.integers(0, 4))
        ments = sorted({f"E{rng.integers(g.n_entities)}" for _ in range(n_ment)})
        toks = [f"w{rng.integers(20)}" for _ in range(int(rng.integers(1, 6)))]
        records.append((sid, toks, ments))
        raw.append(f'{{"sid": {sid}, "tokens": {list(toks)}, "entities": {ments}}}'
                   .replace("'", '"'))
    ctx = kg.ingest_sentences(raw, g)
    # brute-force rebuild from the record list
    expected_sent = {sid: toks for sid, toks, _ in records}
    expected_by_ent = {}
    for sid, _, ments in records:
        for ext in ments:
            expected_by_ent.setdefault(g.entity_id(ext), []).append(sid)
    assert ctx.sentences == expected_sent
    assert ctx.by_entity == expected_by_ent


# ----------------------------------------------------------------- matching

def test_match_no_lexicon_words():
    g = kg.ingest_triples(FIG3)
    assert kg.match_title_entities(["unrelated", "words", "only"], g) == []


def test_match_bold_entity_spans():
    lines = FIG3 + [
        _line("G004", "maspin tumor suppressor", "Gene", "associated_with",
              "D101", "prostate cancer", "Disease"),
    ]
    g = kg.ingest_triples(lines)
    title = ("snail transcription factor negatively regulates maspin tumor "
             "suppressor in human prostate cancer cells").split()
    got = kg.match_title_entities(title, g)
    names = [g.entities[e].surface_name for e, _ in got]
    assert names == ["snail", "maspin tumor suppressor", "prostate cancer"]
    spans = [s for _, s in got]
    assert spans == [(0, 1), (5, 8), (10, 12)]


def test_match_longest_wins():
    lines = [
        _line("A", "tumor", "Disease", "r", "B", "b", "Gene"),
        _line("C", "tumor suppressor", "Gene", "r", "B", "b", "Gene"),
    ]
    g = kg.ingest_triples(lines)
    got = kg.match_title_entities("the tumor suppressor gene".split(), g)
    assert [g.entities[e].surface_name for e, _ in got] == ["tumor suppressor"]


def test_match_case_insensitive():
    g = kg.ingest_triples(FIG3)
    got = kg.match_title_entities(["Zinc", "AND", "CALCIUM"], g)
    assert [g.entities[e].surface_name for e, _ in got] == ["zinc", "calcium"]


@given(st.lists(st.sampled_from(["zinc", "calcium", "snail", "cd14", "molecule",
                                 "prostate", "cancer", "the", "of"]),
                min_size=0, max_size=15))
def test_match_spans_never_overlap_and_sorted(tokens):
    g = kg.ingest_triples(FIG3)
    got = kg.match_title_entities(tokens, g)
    spans = [s for _, s in got]
    assert spans == sorted(spans)
    for (a, b), (c, d) in zip(spans, spans[1:]):
        assert b <= c
