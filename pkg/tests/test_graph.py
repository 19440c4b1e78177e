from __future__ import annotations

import json

import pytest

import synthetic_world
from triview.corpus import EvidenceUnit, ingest_passages
from triview.errors import SchemaVersionError, UnknownEntityError, UnknownUnitError, UnparseableOutputError
from triview.gateway import ScriptedChatProvider, TokenUsage
from triview.graph import (
    DEFAULT_SCHEMA_LABELS,
    EvidenceGroundedGraph,
    ExtractionResult,
    build_graph_from_corpus,
    canonical_entity_key,
    extract_graph_facts,
    graph_state,
    load_graph,
    merge_extraction,
    parse_extraction_payload,
    persist_graph,
)


class TestParseExtractionPayload:
    def test_clean_payload_round_trips(self):
        payload = {
            "entities": {"Inception": "Work", "Christopher Nolan": "Person"},
            "triples": [["Inception", "directed by", "Christopher Nolan"]],
            "attributes": {"Inception": ["release year: 2010"]},
        }
        result = parse_extraction_payload(payload)
        assert result.entities == {"Inception": "Work", "Christopher Nolan": "Person"}
        assert result.triples == [("Inception", "directed by", "Christopher Nolan")]
        assert result.attributes == {"Inception": ["release year: 2010"]}

    def test_malformed_items_dropped(self):
        payload = {
            "entities": {"Good": "Type", "  ": "Dropped"},
            "triples": [
                ["only", "two"],
                ["a", "", "b"],
                ["S", "rel", "O"],
                "not a triple",
            ],
            "attributes": {"Good": ["k: v", ""], "Bad": "not a list", "": ["x"]},
        }
        result = parse_extraction_payload(payload)
        assert ("S", "rel", "O") in result.triples
        assert len(result.triples) == 1
        assert result.attributes == {"Good": ["k: v"]}
        assert "  " not in result.entities

    def test_referenced_entities_repaired_as_unknown(self):
        payload = {
            "entities": {"A": "Person"},
            "triples": [["A", "knows", "B"]],
            "attributes": {"C": ["k: v"]},
        }
        result = parse_extraction_payload(payload)
        assert result.entities["B"] == "Unknown"
        assert result.entities["C"] == "Unknown"
        assert result.entities["A"] == "Person"

    def test_wrong_top_level_shape_rejected(self):
        with pytest.raises(UnparseableOutputError):
            parse_extraction_payload([1, 2, 3])
        with pytest.raises(UnparseableOutputError):
            parse_extraction_payload({"entities": "nope", "triples": [], "attributes": {}})
        with pytest.raises(UnparseableOutputError):
            parse_extraction_payload({"entities": {}, "triples": {}, "attributes": {}})

    def test_empty_payload_is_valid_and_empty(self):
        result = parse_extraction_payload({"entities": {}, "triples": [], "attributes": {}})
        assert result.is_empty()


class TestMerge:
    def test_idempotent(self):
        result = parse_extraction_payload(synthetic_world.EXTRACTIONS["Paris"])
        g1 = merge_extraction(EvidenceGroundedGraph(), "u1", result)
        state_once = graph_state(g1)
        merge_extraction(g1, "u1", result)
        assert graph_state(g1) == state_once

    def test_same_triple_from_two_units_shares_edge(self):
        result = parse_extraction_payload(
            {"entities": {"A": "T", "B": "T"}, "triples": [["A", "r", "B"]], "attributes": {}}
        )
        graph = EvidenceGroundedGraph()
        merge_extraction(graph, "u1", result)
        merge_extraction(graph, "u2", result)
        assert graph.edge_count() == 1
        assert graph.edge_sources(0) == {"u1", "u2"}
        assert graph.node_sources("a") == {"u1", "u2"}

    def test_case_insensitive_entity_identity(self):
        graph = EvidenceGroundedGraph()
        merge_extraction(
            graph, "u1",
            parse_extraction_payload({"entities": {"Paris": "Location"}, "triples": [], "attributes": {}}),
        )
        merge_extraction(
            graph, "u2",
            parse_extraction_payload({"entities": {"PARIS": "City"}, "triples": [], "attributes": {"paris": ["pop: 2M"]}}),
        )
        assert graph.node_count() == 1
        node = graph.node("pArIs")
        assert node.canonical_name == "Paris"
        assert node.entity_type == "Location"
        assert node.attributes == {"pop: 2M"}

    def test_unknown_type_upgraded_but_first_real_type_wins(self):
        graph = EvidenceGroundedGraph()
        merge_extraction(
            graph, "u1",
            parse_extraction_payload({"entities": {}, "triples": [["X", "r", "Y"]], "attributes": {}}),
        )
        assert graph.node("x").entity_type == "Unknown"
        merge_extraction(
            graph, "u2",
            parse_extraction_payload({"entities": {"X": "Person"}, "triples": [], "attributes": {}}),
        )
        assert graph.node("x").entity_type == "Person"
        merge_extraction(
            graph, "u3",
            parse_extraction_payload({"entities": {"X": "Location"}, "triples": [], "attributes": {}}),
        )
        assert graph.node("x").entity_type == "Person"

    def test_self_loop_counts_twice_in_degree(self):
        graph = EvidenceGroundedGraph()
        merge_extraction(
            graph, "u1",
            parse_extraction_payload({"entities": {}, "triples": [["A", "references", "A"]], "attributes": {}}),
        )
        assert graph.entity_degree("a") == 2
        assert graph.edge_count() == 1

    def test_attribute_only_node_has_degree_zero(self):
        graph = EvidenceGroundedGraph()
        merge_extraction(
            graph, "u1",
            parse_extraction_payload({"entities": {}, "triples": [], "attributes": {"Lonely": ["k: v"]}}),
        )
        assert graph.entity_degree("lonely") == 0
        assert graph.evidence_degree("u1") == 1


class TestGraphQueries:
    def test_world_counts_and_degree_sum(self, world):
        graph = world.graph
        assert graph.node_count() == synthetic_world.EXPECTED_NODES
        assert graph.edge_count() == synthetic_world.EXPECTED_EDGES
        total_degree = sum(graph.entity_degree(k) for k in graph.node_keys)
        assert total_degree == 2 * graph.edge_count()

    def test_world_entity_degrees(self, world):
        assert world.graph.entity_degree("christopher nolan") == 3
        assert world.graph.entity_degree("paris") == 2
        assert world.graph.entity_degree("dijon") == 1

    def test_world_evidence_degree(self, world):
        paris_id = synthetic_world.unit_id("Paris")
        assert world.graph.evidence_degree(paris_id) == 3

    def test_unknown_entity_raises(self, world):
        with pytest.raises(UnknownEntityError):
            world.graph.entity_degree("atlantis")
        with pytest.raises(UnknownEntityError):
            world.graph.edge_by_id(999)

    def test_unregistered_unit_raises(self, world):
        with pytest.raises(UnknownUnitError):
            world.graph.evidence_degree("u-nope")

    def test_incident_edges_sorted_distinct(self, world):
        incident = world.graph.incident_edge_ids("christopher nolan")
        assert incident == sorted(set(incident))
        assert len(incident) == 3

    def test_every_world_object_has_sources(self, world):
        graph = world.graph
        for key in graph.node_keys:
            assert graph.node_sources(key)
        for edge in graph.edges:
            assert graph.edge_sources(edge.eid)

    def test_edges_use_display_names(self, world):
        edge = world.graph.edge_by_id(0)
        assert edge.source == "Inception"
        assert edge.relation == "directed by"
        assert edge.target == "Christopher Nolan"

    def test_canonical_entity_key(self):
        assert canonical_entity_key("  La   La Land ") == "la la land"
        assert canonical_entity_key("PARIS") == "paris"


class TestExtraction:
    def test_prompt_contains_schema_and_passage(self):
        unit = EvidenceUnit(id="u1", title="Paris", text="Paris is the capital of France.")
        provider = ScriptedChatProvider(
            [{"response": json.dumps({"entities": {}, "triples": [], "attributes": {}})}]
        )
        usages: list[TokenUsage] = []
        result = extract_graph_facts(unit, provider, usages=usages)
        assert result.is_empty()
        prompt = provider.calls[0]
        assert "<schema>\n" + ", ".join(DEFAULT_SCHEMA_LABELS) + "\n</schema>" in prompt
        assert "<passage>\nParis. Paris is the capital of France.\n</passage>" in prompt
        assert len(usages) == 1

    def test_unparseable_extraction_marks_unit_failed(self):
        corpus = ingest_passages([("u1", "T", "body text")])
        provider = ScriptedChatProvider([{"response": "definitely not json"}])
        graph = build_graph_from_corpus(corpus, provider, max_workers=1)
        assert graph.failed_units == {"u1"}
        assert "u1" in graph.known_units()
        assert graph.evidence_degree("u1") == 0
        assert graph.node_count() == 0
        assert len(provider.calls) == 2  # original + one repair re-prompt

    def test_merge_order_follows_corpus_order(self):
        corpus = ingest_passages([("u1", None, "first"), ("u2", None, "second")])
        responses = {
            "first": {"entities": {}, "triples": [["A", "r1", "B"]], "attributes": {}},
            "second": {"entities": {}, "triples": [["C", "r2", "D"]], "attributes": {}},
        }
        provider = ScriptedChatProvider(
            [
                {"match": "<passage>\nfirst\n</passage>", "response": json.dumps(responses["first"])},
                {"match": "<passage>\nsecond\n</passage>", "response": json.dumps(responses["second"])},
            ]
        )
        graph = build_graph_from_corpus(corpus, provider, max_workers=2)
        assert graph.edge_by_id(0).relation == "r1"
        assert graph.edge_by_id(1).relation == "r2"


class TestPersistence:
    def test_round_trip_exact(self, world, tmp_path):
        path = tmp_path / "graph.json"
        persist_graph(world.graph, path)
        loaded = load_graph(path)
        assert graph_state(loaded) == graph_state(world.graph)

    def test_round_trip_preserves_failed_and_registered_units(self, tmp_path):
        graph = EvidenceGroundedGraph()
        graph.mark_failed("u-bad")
        graph.register_unit("u-empty")
        merge_extraction(
            graph, "u1",
            parse_extraction_payload({"entities": {"A": "T"}, "triples": [], "attributes": {}}),
        )
        path = tmp_path / "graph.json"
        persist_graph(graph, path)
        loaded = load_graph(path)
        assert loaded.failed_units == {"u-bad"}
        assert loaded.known_units() == {"u-bad", "u-empty", "u1"}
        assert loaded.evidence_degree("u-empty") == 0

    def test_empty_graph_round_trips(self, tmp_path):
        path = tmp_path / "graph.json"
        persist_graph(EvidenceGroundedGraph(), path)
        loaded = load_graph(path)
        assert loaded.node_count() == 0
        assert loaded.edge_count() == 0

    def test_persist_is_byte_deterministic(self, world, tmp_path):
        p1, p2 = tmp_path / "g1.json", tmp_path / "g2.json"
        persist_graph(world.graph, p1)
        persist_graph(world.graph, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_wrong_version_rejected(self, world, tmp_path):
        path = tmp_path / "graph.json"
        persist_graph(world.graph, path)
        state = json.loads(path.read_text(encoding="utf-8"))
        state["version"] = 99
        path.write_text(json.dumps(state), encoding="utf-8")
        with pytest.raises(SchemaVersionError):
            load_graph(path)

    def test_corrupt_file_rejected(self, tmp_path):
        path = tmp_path / "graph.json"
        path.write_text("garbage {", encoding="utf-8")
        with pytest.raises(SchemaVersionError):
            load_graph(path)
        path.write_text(json.dumps({"no_version": True}), encoding="utf-8")
        with pytest.raises(SchemaVersionError):
            load_graph(path)

    def test_non_contiguous_edge_ids_rejected(self, world, tmp_path):
        path = tmp_path / "graph.json"
        persist_graph(world.graph, path)
        state = json.loads(path.read_text(encoding="utf-8"))
        state["edges"][0], state["edges"][1] = state["edges"][1], state["edges"][0]
        path.write_text(json.dumps(state), encoding="utf-8")
        with pytest.raises(SchemaVersionError):
            load_graph(path)


def test_build_registers_every_unit(world):
    assert world.graph.known_units() == set(world.corpus.ids())
    assert not world.graph.failed_units
