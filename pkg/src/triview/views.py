"""Retrieval views: textualization, dense indexing, and exact top-K search.

Three views share one embedding space: relation edges ("source relation
target"), entity anchors (name, type, attributes, local relation summaries),
and evidence texts ("title. body"). Search is an exhaustive exact cosine
scan; corpora stay small enough that exactness is cheaper than approximation
and it keeps the fusion math testable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus
from .errors import DimensionMismatchError, ProviderError, SchemaVersionError
from .gateway import EmbeddingProvider
from .graph import EvidenceGroundedGraph, RelationEdge, canonical_entity_key

INDEX_SCHEMA_VERSION = 1

VIEW_RELATION = "relation"
VIEW_ENTITY = "entity_anchor"
VIEW_TEXT = "text_evidence"
ALL_VIEWS = (VIEW_RELATION, VIEW_ENTITY, VIEW_TEXT)

# Relation item ids are zero-padded edge ids so the lexicographic tie rule
# coincides with numeric edge order.
_EDGE_ID_WIDTH = 8


def relation_item_id(eid: int) -> str:
    return f"{eid:0{_EDGE_ID_WIDTH}d}"


def textualize_relation(edge: RelationEdge) -> str:
    return f"{edge.source} {edge.relation} {edge.target}"


def textualize_entity(node_key: str, graph: EvidenceGroundedGraph, max_edges: int = 10) -> str:
    """Anchor text: "name (type). attr_1; attr_2. rel_1; rel_2..."

    Attributes are sorted; relation summaries are tau_r of up to max_edges
    incident edges in ascending edge-id order.
    """
    node = graph.node(node_key)
    parts = [f"{node.canonical_name} ({node.entity_type})."]
    if node.attributes:
        parts.append(" " + "; ".join(sorted(node.attributes)) + ".")
    incident = graph.incident_edge_ids(node_key)[:max_edges]
    if incident:
        parts.append(" " + "; ".join(textualize_relation(graph.edge_by_id(eid)) for eid in incident))
    return "".join(parts)


@dataclass(frozen=True)
class RetrievalHit:
    item_id: str
    score: float


@dataclass
class ViewIndex:
    view: str
    item_ids: list[str]
    texts: list[str]
    vectors: np.ndarray

    def __post_init__(self) -> None:
        if len(self.item_ids) != len(self.texts) or len(self.item_ids) != self.vectors.shape[0]:
            raise ValueError(f"{self.view}: item/text/vector counts disagree")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise ValueError(f"{self.view}: duplicate item ids")
        if self.vectors.size and not np.all(np.isfinite(self.vectors)):
            raise ProviderError(f"{self.view}: non-finite embedding values")

    def __len__(self) -> int:
        return len(self.item_ids)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]


def embed(texts: Sequence[str], provider: EmbeddingProvider) -> np.ndarray:
    matrix = provider.embed(texts)
    if matrix.shape[0] != len(texts):
        raise ProviderError(f"provider returned {matrix.shape[0]} vectors for {len(texts)} texts")
    if matrix.size and not np.all(np.isfinite(matrix)):
        raise ProviderError("provider returned non-finite embedding values")
    return matrix


def topk_search(index: ViewIndex, query_vec: np.ndarray, k: int) -> list[RetrievalHit]:
    """Exact top-K by cosine similarity.

    Zero vectors (query or item) get similarity 0. Ties break by ascending
    item_id; fewer than K hits are returned when the index is smaller.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query_vec, dtype=np.float64).reshape(-1)
    if len(index) == 0:
        return []
    if query.shape[0] != index.dimension:
        raise DimensionMismatchError(f"query dim {query.shape[0]} != index dim {index.dimension}")
    query_norm = float(np.linalg.norm(query))
    if query_norm == 0.0:
        sims = np.zeros(len(index), dtype=np.float64)
    else:
        item_norms = np.linalg.norm(index.vectors, axis=1)
        safe_norms = np.where(item_norms == 0.0, 1.0, item_norms)
        sims = (index.vectors @ query) / (safe_norms * query_norm)
        sims = np.where(item_norms == 0.0, 0.0, sims)
    order = sorted(range(len(index)), key=lambda i: (-sims[i], index.item_ids[i]))
    return [RetrievalHit(item_id=index.item_ids[i], score=float(sims[i])) for i in order[:k]]


def build_view_indexes(
    corpus: Corpus,
    graph: EvidenceGroundedGraph,
    provider: EmbeddingProvider,
    views: Sequence[str] = ALL_VIEWS,
    max_anchor_edges: int = 10,
) -> dict[str, ViewIndex]:
    """Textualize and embed every item of the requested views.

    Index completeness: one relation item per edge, one anchor item per
    node, one text item per evidence unit.
    """
    indexes: dict[str, ViewIndex] = {}
    for view in views:
        if view == VIEW_RELATION:
            ids = [relation_item_id(e.eid) for e in graph.edges]
            texts = [textualize_relation(e) for e in graph.edges]
        elif view == VIEW_ENTITY:
            keys = sorted(graph.node_keys)
            ids = list(keys)
            texts = [textualize_entity(key, graph, max_anchor_edges) for key in keys]
        elif view == VIEW_TEXT:
            ids = corpus.ids()
            texts = [unit.display_text() for unit in corpus.units]
        else:
            raise ValueError(f"unknown view: {view!r}")
        vectors = embed(texts, provider) if texts else np.zeros((0, max(provider.dimension, 1)))
        indexes[view] = ViewIndex(view=view, item_ids=ids, texts=texts, vectors=vectors)
    dims = {idx.dimension for idx in indexes.values() if len(idx)}
    if len(dims) > 1:
        raise DimensionMismatchError(f"views have mixed embedding dimensions: {sorted(dims)}")
    return indexes


def save_indexes(indexes: dict[str, ViewIndex], directory: str | Path, provider_id: str) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    dims = {idx.dimension for idx in indexes.values() if len(idx)}
    manifest = {
        "version": INDEX_SCHEMA_VERSION,
        "provider_id": provider_id,
        "dimension": dims.pop() if len(dims) == 1 else 0,
        "views": {view: len(idx) for view, idx in sorted(indexes.items())},
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    for view, idx in indexes.items():
        items = [[item_id, text] for item_id, text in zip(idx.item_ids, idx.texts)]
        (out / f"{view}.items.json").write_text(
            json.dumps(items, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        with (out / f"{view}.vectors.npy").open("wb") as fh:
            np.save(fh, idx.vectors)


def load_indexes(directory: str | Path) -> tuple[dict[str, ViewIndex], dict]:
    root = Path(directory)
    manifest_path = root / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaVersionError(f"{manifest_path}: not an index manifest: {exc}") from exc
    if manifest.get("version") != INDEX_SCHEMA_VERSION:
        raise SchemaVersionError(f"{manifest_path}: unsupported index schema version {manifest.get('version')!r}")
    indexes: dict[str, ViewIndex] = {}
    for view in manifest.get("views", {}):
        items = json.loads((root / f"{view}.items.json").read_text(encoding="utf-8"))
        vectors = np.load(root / f"{view}.vectors.npy")
        index = ViewIndex(
            view=view,
            item_ids=[row[0] for row in items],
            texts=[row[1] for row in items],
            vectors=vectors,
        )
        if len(index) and manifest.get("dimension") and index.dimension != manifest["dimension"]:
            raise DimensionMismatchError(
                f"{view}: vector dimension {index.dimension} != manifest dimension {manifest['dimension']}"
            )
        indexes[view] = index
    return indexes, manifest


def resolve_anchor_key(item_id: str) -> str:
    """Entity-anchor item ids are the graph's canonical match keys."""
    return canonical_entity_key(item_id)
