"""Desk-scale pipeline: ingest a background knowledge graph, enrich it by
link prediction over combined graph/text entity representations, and draft
paper elements (abstract, conclusion and future work, follow-on title) with
a memory-attention pointer-generator writer, plus the matching automatic
evaluation metrics."""

__version__ = "0.1.0"
