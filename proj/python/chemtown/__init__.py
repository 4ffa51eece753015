"""Python interface to the chemtown core library."""

import json as _json

from ._core import (
    Chunk,
    ChemtownError,
    HashEmbedder,
    KnowledgeGraph,
    OntologyRegistry,
    VectorStore,
    __version__,
    chunk_text,
    cosine_similarity,
    count_tokens,
    extract_metadata,
    run_cli,
    tokenize,
)
from . import _core


def gap_effect(improvements, distance):
    """Bin (a, b, improvement) triples by domain distance.

    ``distance`` is a callable taking two domain tags and returning a float.
    Returns the report as a plain dict.
    """
    return _json.loads(_core.gap_effect_json(improvements, distance))


def compare_runs(baseline, treated):
    """Per-agent improvement of treated over baseline overall scores.

    Both arguments map agent abbreviations to lists of overall scores.
    Returns the comparison as a plain dict.
    """
    return _json.loads(_core.compare_runs_json(baseline, treated))


def score_transcripts(path, lexicons=None):
    """Score every completed transcript in a JSONL file.

    Returns a list of dicts with conversation_id, pair, dims, and overall.
    """
    return _json.loads(_core.score_transcripts_json(str(path), lexicons or {}))


__all__ = [
    "Chunk",
    "ChemtownError",
    "HashEmbedder",
    "KnowledgeGraph",
    "OntologyRegistry",
    "VectorStore",
    "__version__",
    "chunk_text",
    "compare_runs",
    "cosine_similarity",
    "count_tokens",
    "extract_metadata",
    "gap_effect",
    "run_cli",
    "score_transcripts",
    "tokenize",
]
