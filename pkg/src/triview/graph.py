"""Evidence-grounded knowledge graph: extraction, merging, and persistence.

Every node and edge carries a source map back to the evidence units it was
extracted from. Entity identity is a case-insensitive exact match on the
whitespace-collapsed name; no fuzzy merging. Edges keep their extracted
direction and are unique per (source, relation, target).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import prompts
from .corpus import Corpus, EvidenceUnit, nfc, normalize_whitespace
from .errors import (
    SchemaVersionError,
    UnknownEntityError,
    UnknownUnitError,
    UnparseableOutputError,
)
from .gateway import ChatProvider, ChatRequest, TokenUsage, request_json

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

DEFAULT_SCHEMA_LABELS = [
    "Person",
    "Organization",
    "Location",
    "Event",
    "Work",
    "Date",
    "Number",
    "Other",
]


def canonical_entity_key(name: str) -> str:
    """Case-insensitive match key; display forms keep their original case."""
    return normalize_whitespace(nfc(name)).casefold()


@dataclass
class EntityNode:
    canonical_name: str
    entity_type: str
    attributes: set[str] = field(default_factory=set)


@dataclass(frozen=True)
class RelationEdge:
    eid: int
    source: str
    relation: str
    target: str


@dataclass
class ExtractionResult:
    entities: dict[str, str] = field(default_factory=dict)
    triples: list[tuple[str, str, str]] = field(default_factory=list)
    attributes: dict[str, list[str]] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not (self.entities or self.triples or self.attributes)


def parse_extraction_payload(payload: Any) -> ExtractionResult:
    """Validate and normalize a raw extraction payload.

    Malformed individual items are dropped (extraction is noisy by nature);
    a payload whose overall shape is wrong is rejected. Entities referenced
    by triples or attributes but absent from the entities map are repaired
    in with type "Unknown".
    """
    if not isinstance(payload, dict):
        raise UnparseableOutputError(f"extraction payload is not an object: {type(payload).__name__}")
    entities_raw = payload.get("entities", {})
    triples_raw = payload.get("triples", [])
    attributes_raw = payload.get("attributes", {})
    if not isinstance(entities_raw, dict) or not isinstance(triples_raw, list) or not isinstance(attributes_raw, dict):
        raise UnparseableOutputError("extraction payload fields have wrong types")

    entities: dict[str, str] = {}
    for name, etype in entities_raw.items():
        clean = normalize_whitespace(nfc(str(name)))
        if clean:
            entities.setdefault(clean, normalize_whitespace(nfc(str(etype))) or "Unknown")

    triples: list[tuple[str, str, str]] = []
    for item in triples_raw:
        if not (isinstance(item, (list, tuple)) and len(item) == 3):
            continue
        subject, relation, obj = (normalize_whitespace(nfc(str(part))) for part in item)
        if subject and relation and obj:
            triples.append((subject, relation, obj))

    attributes: dict[str, list[str]] = {}
    for name, values in attributes_raw.items():
        clean = normalize_whitespace(nfc(str(name)))
        if not clean or not isinstance(values, list):
            continue
        clean_values = [normalize_whitespace(nfc(str(v))) for v in values]
        clean_values = [v for v in clean_values if v]
        if clean_values:
            attributes[clean] = clean_values

    result = ExtractionResult(entities=entities, triples=triples, attributes=attributes)
    _repair_missing_entities(result)
    return result


def _repair_missing_entities(result: ExtractionResult) -> None:
    known = {canonical_entity_key(name) for name in result.entities}
    referenced: list[str] = []
    for subject, _, obj in result.triples:
        referenced.extend((subject, obj))
    referenced.extend(result.attributes)
    for name in referenced:
        if canonical_entity_key(name) not in known:
            result.entities[name] = "Unknown"
            known.add(canonical_entity_key(name))


def extract_graph_facts(
    unit: EvidenceUnit,
    provider: ChatProvider,
    schema_labels: Sequence[str] = tuple(DEFAULT_SCHEMA_LABELS),
    usages: list[TokenUsage] | None = None,
) -> ExtractionResult:
    prompt = prompts.render(
        prompts.EXTRACTION,
        schema=", ".join(schema_labels),
        passage=unit.display_text(),
    )
    return request_json(provider, ChatRequest(user=prompt), usages, validate=parse_extraction_payload)


class EvidenceGroundedGraph:
    """Directed entity-relation graph with per-object evidence sources."""

    def __init__(self) -> None:
        self._nodes: dict[str, EntityNode] = {}
        self._edges: list[RelationEdge] = []
        self._edge_lookup: dict[tuple[str, str, str], int] = {}
        self._degree: dict[str, int] = {}
        self._incident: dict[str, list[int]] = {}
        self._node_src: dict[str, set[str]] = {}
        self._edge_src: dict[int, set[str]] = {}
        self._unit_nodes: dict[str, set[str]] = {}
        self.failed_units: set[str] = set()

    # -- structure access ---------------------------------------------------

    @property
    def node_keys(self) -> list[str]:
        return list(self._nodes)

    @property
    def edges(self) -> list[RelationEdge]:
        return list(self._edges)

    def node_count(self) -> int:
        return len(self._nodes)

    def edge_count(self) -> int:
        return len(self._edges)

    def known_units(self) -> set[str]:
        return set(self._unit_nodes)

    def node(self, key: str) -> EntityNode:
        node = self._nodes.get(canonical_entity_key(key))
        if node is None:
            raise UnknownEntityError(f"no entity node for key {key!r}")
        return node

    def has_node(self, key: str) -> bool:
        return canonical_entity_key(key) in self._nodes

    def edge_by_id(self, eid: int) -> RelationEdge:
        if not 0 <= eid < len(self._edges):
            raise UnknownEntityError(f"no relation edge with id {eid}")
        return self._edges[eid]

    def incident_edge_ids(self, key: str) -> list[int]:
        """Distinct incident edge ids in ascending order."""
        self.node(key)
        return sorted(set(self._incident.get(canonical_entity_key(key), [])))

    def node_sources(self, key: str) -> set[str]:
        self.node(key)
        return set(self._node_src.get(canonical_entity_key(key), set()))

    def edge_sources(self, eid: int) -> set[str]:
        self.edge_by_id(eid)
        return set(self._edge_src.get(eid, set()))

    # -- construction -------------------------------------------------------

    def register_unit(self, unit_id: str) -> None:
        self._unit_nodes.setdefault(unit_id, set())

    def mark_failed(self, unit_id: str) -> None:
        self.register_unit(unit_id)
        self.failed_units.add(unit_id)

    def _ensure_node(self, name: str, entity_type: str) -> str:
        key = canonical_entity_key(name)
        node = self._nodes.get(key)
        if node is None:
            self._nodes[key] = EntityNode(
                canonical_name=normalize_whitespace(nfc(name)),
                entity_type=entity_type or "Unknown",
            )
            self._degree[key] = 0
            self._incident[key] = []
            self._node_src[key] = set()
        elif node.entity_type == "Unknown" and entity_type and entity_type != "Unknown":
            node.entity_type = entity_type
        return key

    def _ensure_edge(self, source_key: str, relation: str, target_key: str) -> int:
        lookup_key = (source_key, relation, target_key)
        eid = self._edge_lookup.get(lookup_key)
        if eid is None:
            eid = len(self._edges)
            self._edges.append(
                RelationEdge(
                    eid=eid,
                    source=self._nodes[source_key].canonical_name,
                    relation=relation,
                    target=self._nodes[target_key].canonical_name,
                )
            )
            self._edge_lookup[lookup_key] = eid
            self._edge_src[eid] = set()
            for endpoint in (source_key, target_key):
                self._degree[endpoint] += 1
                self._incident[endpoint].append(eid)
        return eid

    def _touch_node(self, key: str, unit_id: str) -> None:
        self._node_src[key].add(unit_id)
        self._unit_nodes[unit_id].add(key)

    # -- queries ------------------------------------------------------------

    def entity_degree(self, key: str) -> int:
        self.node(key)
        return self._degree[canonical_entity_key(key)]

    def evidence_degree(self, unit_id: str) -> int:
        if unit_id not in self._unit_nodes:
            raise UnknownUnitError(f"unit {unit_id!r} was never registered with the graph")
        return len(self._unit_nodes[unit_id])


def merge_extraction(graph: EvidenceGroundedGraph, unit_id: str, result: ExtractionResult) -> EvidenceGroundedGraph:
    """Merge one unit's extraction into the graph. Total and idempotent."""
    graph.register_unit(unit_id)
    for name, entity_type in result.entities.items():
        key = graph._ensure_node(name, entity_type)
        graph._touch_node(key, unit_id)
    for name, values in result.attributes.items():
        key = graph._ensure_node(name, "Unknown")
        graph._nodes[key].attributes.update(values)
        graph._touch_node(key, unit_id)
    for subject, relation, obj in result.triples:
        source_key = graph._ensure_node(subject, "Unknown")
        target_key = graph._ensure_node(obj, "Unknown")
        eid = graph._ensure_edge(source_key, relation, target_key)
        graph._edge_src[eid].add(unit_id)
        graph._touch_node(source_key, unit_id)
        graph._touch_node(target_key, unit_id)
    return graph


def entity_degree(graph: EvidenceGroundedGraph, key: str) -> int:
    return graph.entity_degree(key)


def evidence_degree(graph: EvidenceGroundedGraph, unit_id: str) -> int:
    return graph.evidence_degree(unit_id)


def build_graph_from_corpus(
    corpus: Corpus,
    provider: ChatProvider,
    schema_labels: Sequence[str] = tuple(DEFAULT_SCHEMA_LABELS),
    max_workers: int = 4,
    usages: list[TokenUsage] | None = None,
) -> EvidenceGroundedGraph:
    """Extract all units (concurrently) and merge in corpus order.

    Merge order is the corpus order regardless of extraction completion
    order, so edge ids are deterministic. Units whose output stays
    unparseable after repair are recorded as failed and contribute nothing.
    """
    graph = EvidenceGroundedGraph()
    per_unit_usages: dict[str, list[TokenUsage]] = {u.id: [] for u in corpus.units}

    def run_one(unit: EvidenceUnit) -> ExtractionResult | None:
        try:
            return extract_graph_facts(unit, provider, schema_labels, per_unit_usages[unit.id])
        except UnparseableOutputError:
            return None

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        results = list(pool.map(run_one, corpus.units))

    for unit, result in zip(corpus.units, results):
        if usages is not None:
            usages.extend(per_unit_usages[unit.id])
        if result is None:
            logger.warning("extraction failed for unit %s; unit stays text-only", unit.id)
            graph.mark_failed(unit.id)
        else:
            merge_extraction(graph, unit.id, result)
    return graph


def graph_state(graph: EvidenceGroundedGraph) -> dict[str, Any]:
    """Canonical JSON-ready structural state; also the persistence payload."""
    entities = {
        node.canonical_name: {"type": node.entity_type}
        for node in (graph._nodes[k] for k in sorted(graph._nodes))
    }
    attributes = {
        node.canonical_name: sorted(node.attributes)
        for node in (graph._nodes[k] for k in sorted(graph._nodes))
        if node.attributes
    }
    edges = [
        {"id": e.eid, "source": e.source, "relation": e.relation, "target": e.target}
        for e in graph._edges
    ]
    source_map = {
        "nodes": {graph._nodes[k].canonical_name: sorted(srcs) for k, srcs in sorted(graph._node_src.items())},
        "edges": {str(eid): sorted(srcs) for eid, srcs in sorted(graph._edge_src.items())},
    }
    return {
        "version": SCHEMA_VERSION,
        "entities": entities,
        "attributes": attributes,
        "edges": edges,
        "source_map": source_map,
        "failed_units": sorted(graph.failed_units),
        "units": sorted(graph._unit_nodes),
    }


def persist_graph(graph: EvidenceGroundedGraph, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(graph_state(graph), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_graph(path: str | Path) -> EvidenceGroundedGraph:
    try:
        state = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaVersionError(f"{path}: not a graph file: {exc}") from exc
    if not isinstance(state, dict) or "version" not in state:
        raise SchemaVersionError(f"{path}: not a graph file (missing version)")
    if state["version"] != SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: unsupported graph schema version {state['version']!r}")

    graph = EvidenceGroundedGraph()
    for unit_id in state.get("units", []):
        graph.register_unit(unit_id)
    graph.failed_units = set(state.get("failed_units", []))
    for name, meta in state.get("entities", {}).items():
        graph._ensure_node(name, meta.get("type", "Unknown"))
    for name, attrs in state.get("attributes", {}).items():
        graph._nodes[canonical_entity_key(name)].attributes.update(attrs)
    for edge in state.get("edges", []):
        source_key = canonical_entity_key(edge["source"])
        target_key = canonical_entity_key(edge["target"])
        eid = graph._ensure_edge(source_key, edge["relation"], target_key)
        if eid != edge["id"]:
            raise SchemaVersionError(f"{path}: edge ids are not contiguous in file order")
    node_src = state.get("source_map", {}).get("nodes", {})
    for name, srcs in node_src.items():
        key = canonical_entity_key(name)
        for unit_id in srcs:
            graph.register_unit(unit_id)
            graph._touch_node(key, unit_id)
    edge_src = state.get("source_map", {}).get("edges", {})
    for eid_str, srcs in edge_src.items():
        graph._edge_src[int(eid_str)].update(srcs)
    return graph
