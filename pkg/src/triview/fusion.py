"""Consensus fusion: project view hits onto evidence units, score, rank.

All scoring happens in the unified evidence-unit space: text hits contribute
directly, relation and anchor hits contribute through their source units.
Per-view scores are max-normalized per query, anchor mass is damped by node
degree, unit-level structure is damped by p(c), and units supported by
multiple views get the multiplicative consensus bonus.

Determinism contract: residual relation terms are summed in ascending edge-id
order and anchor terms in ascending node-key order, and every ranking tie
breaks by ascending unit id, so identical inputs give bit-identical output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import DanglingSourceError, InvalidQueryError
from .gateway import EmbeddingProvider
from .graph import EvidenceGroundedGraph
from .views import (
    ALL_VIEWS,
    VIEW_ENTITY,
    VIEW_RELATION,
    VIEW_TEXT,
    RetrievalHit,
    ViewIndex,
    topk_search,
)

DEFAULT_BETA = 0.02
DEFAULT_LAMBDA = 0.05
DEFAULT_K_FINAL = 3
DEFAULT_K_VIEW = 20

# Per-dataset fusion weights (alpha_r, alpha_a, alpha_t); unknown datasets
# fall back to the last row.
ALPHA_PRESETS: dict[str, tuple[float, float, float]] = {
    "hotpotqa": (0.15, 0.20, 0.65),
    "2wikimultihopqa": (0.25, 0.20, 0.55),
    "musique": (0.25, 0.10, 0.65),
}
DEFAULT_ALPHA = ALPHA_PRESETS["musique"]


@dataclass(frozen=True)
class FusionConfig:
    alpha: tuple[float, float, float] = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    lambda_: float = DEFAULT_LAMBDA
    k_final: int = DEFAULT_K_FINAL
    k_view: int = DEFAULT_K_VIEW

    def __post_init__(self) -> None:
        if len(self.alpha) != 3 or any(a < 0 for a in self.alpha):
            raise ValueError(f"alpha must be three nonnegative weights, got {self.alpha}")
        if abs(sum(self.alpha) - 1.0) > 1e-9:
            raise ValueError(f"alpha must sum to 1 (got {sum(self.alpha)!r})")
        if self.beta < 0 or self.lambda_ < 0:
            raise ValueError("beta and lambda must be nonnegative")
        if self.k_final < 1 or self.k_view < 1:
            raise ValueError("k_final and k_view must be >= 1")


@dataclass
class ViewHits:
    relation: list[RetrievalHit] = field(default_factory=list)
    anchor: list[RetrievalHit] = field(default_factory=list)
    text: list[RetrievalHit] = field(default_factory=list)


@dataclass
class CandidateSupport:
    relation_hits: list[tuple[int, float]] = field(default_factory=list)
    anchor_hits: list[tuple[str, float]] = field(default_factory=list)
    text_score: float | None = None


@dataclass
class FusedCandidate:
    unit_id: str
    raw_relation: float = 0.0
    raw_anchor: float = 0.0
    raw_text: float = 0.0
    norm_relation: float = 0.0
    norm_anchor: float = 0.0
    norm_text: float = 0.0
    structural_control: float = 1.0
    view_count: int = 0
    bonus: float = 1.0
    final: float = 0.0
    relation_edges: list[int] = field(default_factory=list)
    anchor_nodes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "raw": {"relation": self.raw_relation, "anchor": self.raw_anchor, "text": self.raw_text},
            "normalized": {"relation": self.norm_relation, "anchor": self.norm_anchor, "text": self.norm_text},
            "structural_control": self.structural_control,
            "view_count": self.view_count,
            "bonus": self.bonus,
            "final": self.final,
            "relation_edges": self.relation_edges,
            "anchor_nodes": self.anchor_nodes,
        }


def degree_penalty(degree: int) -> float:
    """Hub damping for entity nodes: 1 for degree <= 1, else 1/(1+ln deg)."""
    if degree <= 1:
        return 1.0
    return 1.0 / (1.0 + math.log(degree))


def structural_control(evidence_degree: int) -> float:
    """Unit-level damping, same shape as degree_penalty."""
    if evidence_degree <= 1:
        return 1.0
    return 1.0 / (1.0 + math.log(evidence_degree))


def consensus_bonus(view_count: int, lambda_: float) -> float:
    return 1.0 + lambda_ * max(0, view_count - 1) / 2.0


def relation_score(relation_hits: Sequence[tuple[int, float]], beta: float) -> float:
    """Strongest relation match plus beta-weighted residual matches.

    The primary hit is the highest-scoring edge (ties to the lowest edge id);
    residuals are summed in ascending edge-id order.
    """
    if not relation_hits:
        return 0.0
    best_eid, best_score = min(relation_hits, key=lambda pair: (-pair[1], pair[0]))
    residual = 0.0
    for eid, score in sorted(relation_hits):
        if eid != best_eid:
            residual += score
    return best_score + beta * residual


def anchor_score(anchor_hits: Sequence[tuple[str, float]], degrees: Mapping[str, int]) -> float:
    """Degree-damped anchor mass, summed in ascending node-key order."""
    total = 0.0
    for key, score in sorted(anchor_hits):
        total += score * degree_penalty(degrees[key])
    return total


def project_candidates(hits: ViewHits, graph: EvidenceGroundedGraph) -> dict[str, CandidateSupport]:
    """Union of text hits and the source units of relation/anchor hits.

    Every candidate records exactly which hits support it. A hit whose graph
    object cannot be resolved, or whose source set is empty, is a dangling
    reference.
    """
    candidates: dict[str, CandidateSupport] = {}

    def support(unit_id: str) -> CandidateSupport:
        if unit_id not in candidates:
            candidates[unit_id] = CandidateSupport()
        return candidates[unit_id]

    for hit in hits.relation:
        try:
            eid = int(hit.item_id)
            edge_sources = graph.edge_sources(eid)
        except Exception as exc:
            raise DanglingSourceError(f"relation hit {hit.item_id!r} does not resolve: {exc}") from exc
        if not edge_sources:
            raise DanglingSourceError(f"relation edge {eid} has an empty source set")
        for unit_id in edge_sources:
            support(unit_id).relation_hits.append((eid, hit.score))
    for hit in hits.anchor:
        try:
            node_sources = graph.node_sources(hit.item_id)
        except Exception as exc:
            raise DanglingSourceError(f"anchor hit {hit.item_id!r} does not resolve: {exc}") from exc
        if not node_sources:
            raise DanglingSourceError(f"entity node {hit.item_id!r} has an empty source set")
        for unit_id in node_sources:
            support(unit_id).anchor_hits.append((hit.item_id, hit.score))
    for hit in hits.text:
        support(hit.item_id).text_score = hit.score
    return candidates


def score_candidates(
    supports: Mapping[str, CandidateSupport],
    graph: EvidenceGroundedGraph,
    config: FusionConfig,
) -> list[FusedCandidate]:
    """Raw scores, normalization, structural control, consensus, final Score.

    Normalization divides each view by its per-query maximum raw score; a
    view whose maximum is not positive normalizes to all zeros (a negative
    maximum would otherwise flip signs). View counts m(c) use raw positivity
    so degenerate normalization cannot manufacture consensus.
    """
    candidates: list[FusedCandidate] = []
    for unit_id in sorted(supports):
        item = supports[unit_id]
        degrees = {key: graph.entity_degree(key) for key, _ in item.anchor_hits}
        cand = FusedCandidate(
            unit_id=unit_id,
            raw_relation=relation_score(item.relation_hits, config.beta),
            raw_anchor=anchor_score(item.anchor_hits, degrees),
            raw_text=item.text_score if item.text_score is not None else 0.0,
            structural_control=structural_control(graph.evidence_degree(unit_id)),
            relation_edges=sorted(eid for eid, _ in item.relation_hits),
            anchor_nodes=sorted(key for key, _ in item.anchor_hits),
        )
        cand.view_count = sum(1 for raw in (cand.raw_relation, cand.raw_anchor, cand.raw_text) if raw > 0.0)
        cand.bonus = consensus_bonus(cand.view_count, config.lambda_)
        candidates.append(cand)

    for raw_attr, norm_attr in (
        ("raw_relation", "norm_relation"),
        ("raw_anchor", "norm_anchor"),
        ("raw_text", "norm_text"),
    ):
        view_max = max((getattr(c, raw_attr) for c in candidates), default=0.0)
        for cand in candidates:
            setattr(cand, norm_attr, getattr(cand, raw_attr) / view_max if view_max > 0.0 else 0.0)

    alpha_r, alpha_a, alpha_t = config.alpha
    for cand in candidates:
        weighted = (
            alpha_r * cand.norm_relation
            + alpha_a * cand.norm_anchor * cand.structural_control
            + alpha_t * cand.norm_text
        )
        cand.final = weighted * cand.bonus
    return candidates


@dataclass
class RankedResult:
    ranking: list[tuple[str, float]]
    candidates: list[FusedCandidate]


def fuse_and_rank(
    candidates: Iterable[FusedCandidate], config: FusionConfig
) -> list[tuple[str, float]]:
    ordered = sorted(candidates, key=lambda c: (-c.final, c.unit_id))
    return [(c.unit_id, c.final) for c in ordered[: config.k_final]]


def rank_units(hits: ViewHits, graph: EvidenceGroundedGraph, config: FusionConfig) -> RankedResult:
    supports = project_candidates(hits, graph)
    candidates = score_candidates(supports, graph, config)
    ordered = sorted(candidates, key=lambda c: (-c.final, c.unit_id))
    return RankedResult(
        ranking=[(c.unit_id, c.final) for c in ordered[: config.k_final]],
        candidates=ordered,
    )


VIEW_FLAGS = {"r": VIEW_RELATION, "a": VIEW_ENTITY, "t": VIEW_TEXT}


class MultiViewRetriever:
    """Embeds a query once, searches the enabled views, and fuses."""

    def __init__(
        self,
        graph: EvidenceGroundedGraph,
        indexes: Mapping[str, ViewIndex],
        embedder: EmbeddingProvider,
        config: FusionConfig,
        views: Sequence[str] = ALL_VIEWS,
    ):
        unknown = set(views) - set(ALL_VIEWS)
        if unknown:
            raise ValueError(f"unknown views: {sorted(unknown)}")
        if not views:
            raise ValueError("at least one view must be enabled")
        self.graph = graph
        self.indexes = indexes
        self.embedder = embedder
        self.config = config
        self.views = tuple(views)

    def view_hits(self, query: str) -> ViewHits:
        if not query.strip():
            raise InvalidQueryError("query is empty")
        query_vec = self.embedder.embed([query])[0]
        hits = ViewHits()
        for view, attr in ((VIEW_RELATION, "relation"), (VIEW_ENTITY, "anchor"), (VIEW_TEXT, "text")):
            if view in self.views and view in self.indexes and len(self.indexes[view]):
                setattr(hits, attr, topk_search(self.indexes[view], query_vec, self.config.k_view))
        return hits

    def retrieve(self, query: str) -> RankedResult:
        return rank_units(self.view_hits(query), self.graph, self.config)
