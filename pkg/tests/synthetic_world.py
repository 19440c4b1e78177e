"""Shared offline fixture: a 12-passage corpus, scripted extraction payloads,
and six 2-hop questions with scripted decomposition/step/final responses.

Everything is content-addressed and deterministic: building the world twice
gives structurally identical graphs, indexes, and traces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from triview.corpus import Corpus, ingest_passages, unit_id_for
from triview.fusion import FusionConfig, MultiViewRetriever
from triview.gateway import HashEmbedder, ScriptedChatProvider
from triview.graph import EvidenceGroundedGraph, build_graph_from_corpus
from triview.views import ALL_VIEWS, ViewIndex, build_view_indexes

PASSAGES: list[tuple[str, str]] = [
    ("Inception", "Inception is a 2010 science fiction film directed by Christopher Nolan."),
    ("Christopher Nolan", "Christopher Nolan is a British-American film director born in London."),
    ("La La Land", "La La Land is a 2016 musical film directed by Damien Chazelle."),
    ("Damien Chazelle", "Damien Chazelle is an American director born in Providence, Rhode Island."),
    ("The Matrix", "The Matrix is a 1999 film directed by the Wachowskis."),
    ("Paris", "Paris is the capital of France. The Eiffel Tower is located in Paris."),
    ("Eiffel Tower", "The Eiffel Tower was designed by Gustave Eiffel and completed in 1889."),
    ("Gustave Eiffel", "Gustave Eiffel was a French engineer born in Dijon."),
    ("France", "France is a country in Europe. Its capital is Paris."),
    ("London", "London is the capital city of England and the United Kingdom."),
    ("Providence", "Providence is the capital city of Rhode Island."),
    ("Interstellar", "Interstellar is a 2014 science fiction film directed by Christopher Nolan."),
]

EXTRACTIONS: dict[str, dict] = {
    "Inception": {
        "entities": {"Inception": "Work", "Christopher Nolan": "Person"},
        "triples": [["Inception", "directed by", "Christopher Nolan"]],
        "attributes": {"Inception": ["release year: 2010", "genre: science fiction"]},
    },
    "Christopher Nolan": {
        "entities": {"Christopher Nolan": "Person", "London": "Location"},
        "triples": [["Christopher Nolan", "born in", "London"]],
        "attributes": {"Christopher Nolan": ["occupation: film director", "nationality: British-American"]},
    },
    "La La Land": {
        "entities": {"La La Land": "Work", "Damien Chazelle": "Person"},
        "triples": [["La La Land", "directed by", "Damien Chazelle"]],
        "attributes": {"La La Land": ["release year: 2016", "genre: musical"]},
    },
    "Damien Chazelle": {
        "entities": {"Damien Chazelle": "Person", "Providence": "Location"},
        "triples": [["Damien Chazelle", "born in", "Providence"]],
        "attributes": {"Damien Chazelle": ["occupation: director", "nationality: American"]},
    },
    "The Matrix": {
        "entities": {"The Matrix": "Work", "The Wachowskis": "Person"},
        "triples": [["The Matrix", "directed by", "The Wachowskis"]],
        "attributes": {"The Matrix": ["release year: 1999"]},
    },
    "Paris": {
        "entities": {"Paris": "Location", "France": "Location", "Eiffel Tower": "Work"},
        "triples": [["Paris", "capital of", "France"], ["Eiffel Tower", "located in", "Paris"]],
        "attributes": {},
    },
    "Eiffel Tower": {
        "entities": {"Eiffel Tower": "Work", "Gustave Eiffel": "Person"},
        "triples": [["Eiffel Tower", "designed by", "Gustave Eiffel"]],
        "attributes": {"Eiffel Tower": ["completed: 1889"]},
    },
    "Gustave Eiffel": {
        "entities": {"Gustave Eiffel": "Person", "Dijon": "Location"},
        "triples": [["Gustave Eiffel", "born in", "Dijon"]],
        "attributes": {"Gustave Eiffel": ["occupation: engineer", "nationality: French"]},
    },
    "France": {
        "entities": {"France": "Location", "Paris": "Location", "Europe": "Location"},
        "triples": [["France", "located in", "Europe"], ["Paris", "capital of", "France"]],
        "attributes": {},
    },
    "London": {
        "entities": {"London": "Location", "England": "Location"},
        "triples": [["London", "capital of", "England"]],
        "attributes": {},
    },
    "Providence": {
        "entities": {"Providence": "Location", "Rhode Island": "Location"},
        "triples": [["Providence", "capital of", "Rhode Island"]],
        "attributes": {},
    },
    "Interstellar": {
        "entities": {"Interstellar": "Work", "Christopher Nolan": "Person"},
        "triples": [["Interstellar", "directed by", "Christopher Nolan"]],
        "attributes": {"Interstellar": ["release year: 2014"]},
    },
}

EXPECTED_NODES = 17
EXPECTED_EDGES = 13


@dataclass(frozen=True)
class FixtureQuestion:
    qid: str
    question: str
    gold: str
    qtype: str
    decompose_payload: dict
    steps: list[dict]
    final: str
    step_golds: dict[int, str]
    context_titles: list[str]


QUESTIONS: list[FixtureQuestion] = [
    FixtureQuestion(
        qid="sw-q1",
        question="Where was the director of Inception born?",
        gold="London",
        qtype="bridge",
        decompose_payload={
            "acquired_information": "Inception is a 2010 film.",
            "plan": [
                {"id": 0, "sub_question": "Who directed Inception?", "dependencies": []},
                {"id": 1, "sub_question": "Where was <dep:0> born?", "dependencies": [0]},
            ],
        },
        steps=[
            {
                "bound": "Who directed Inception?",
                "answer": "Christopher Nolan",
                "acquired": "Inception was directed by Christopher Nolan.",
            },
            {
                "bound": "Where was Christopher Nolan born?",
                "answer": "London",
                "acquired": "Christopher Nolan was born in London.",
            },
        ],
        final="London",
        step_golds={0: "Christopher Nolan", 1: "London"},
        context_titles=["Inception", "Christopher Nolan", "The Matrix", "London"],
    ),
    FixtureQuestion(
        qid="sw-q2",
        question="Where was the director of La La Land born?",
        gold="Providence",
        qtype="bridge",
        decompose_payload={
            "acquired_information": "La La Land is a 2016 musical film.",
            "plan": [
                {"id": 0, "sub_question": "Who directed La La Land?", "dependencies": []},
                {"id": 1, "sub_question": "Where was <dep:0> born?", "dependencies": [0]},
            ],
        },
        steps=[
            {
                "bound": "Who directed La La Land?",
                "answer": "Damien Chazelle",
                "acquired": "La La Land was directed by Damien Chazelle.",
            },
            {
                "bound": "Where was Damien Chazelle born?",
                "answer": "Providence",
                "acquired": "Damien Chazelle was born in Providence.",
            },
        ],
        final="Providence",
        step_golds={0: "Damien Chazelle", 1: "Providence"},
        context_titles=["La La Land", "Damien Chazelle", "Providence", "The Matrix"],
    ),
    FixtureQuestion(
        qid="sw-q3",
        question="Who designed the tower located in Paris?",
        gold="Gustave Eiffel",
        qtype="bridge",
        decompose_payload={
            "acquired_information": "Paris has a famous tower.",
            "plan": [
                {"id": 0, "sub_question": "Which tower is located in Paris?", "dependencies": []},
                {"id": 1, "sub_question": "Who designed <dep:0>?", "dependencies": [0]},
            ],
        },
        steps=[
            {
                "bound": "Which tower is located in Paris?",
                "answer": "Eiffel Tower",
                "acquired": "The Eiffel Tower is located in Paris.",
            },
            {
                "bound": "Who designed Eiffel Tower?",
                "answer": "Gustave Eiffel",
                "acquired": "The Eiffel Tower was designed by Gustave Eiffel.",
            },
        ],
        final="Gustave Eiffel",
        step_golds={0: "Eiffel Tower", 1: "Gustave Eiffel"},
        context_titles=["Paris", "Eiffel Tower", "France", "Gustave Eiffel"],
    ),
    FixtureQuestion(
        qid="sw-q4",
        question="Where was the designer of the Eiffel Tower born?",
        gold="Dijon",
        qtype="bridge",
        decompose_payload={
            "acquired_information": "The Eiffel Tower was completed in 1889.",
            "plan": [
                {"id": 0, "sub_question": "Who designed the Eiffel Tower?", "dependencies": []},
                {"id": 1, "sub_question": "Where was <dep:0> born?", "dependencies": [0]},
            ],
        },
        steps=[
            {
                "bound": "Who designed the Eiffel Tower?",
                "answer": "Gustave Eiffel",
                "acquired": "Gustave Eiffel designed the Eiffel Tower.",
            },
            {
                "bound": "Where was Gustave Eiffel born?",
                "answer": "Dijon",
                "acquired": "Gustave Eiffel was born in Dijon.",
            },
        ],
        final="Dijon",
        step_golds={0: "Gustave Eiffel", 1: "Dijon"},
        context_titles=["Eiffel Tower", "Gustave Eiffel", "Paris", "France"],
    ),
    FixtureQuestion(
        qid="sw-q5",
        question="Did Christopher Nolan direct both Inception and Interstellar?",
        gold="Yes",
        qtype="comparison",
        decompose_payload={
            "acquired_information": "Both films are science fiction.",
            "plan": [
                {"id": 0, "sub_question": "Who directed Inception?", "dependencies": []},
                {"id": 1, "sub_question": "Who directed Interstellar?", "dependencies": []},
            ],
        },
        steps=[
            {
                "bound": "Who directed Inception?",
                "answer": "Christopher Nolan",
                "acquired": "Inception was directed by Christopher Nolan.",
            },
            {
                "bound": "Who directed Interstellar?",
                "answer": "Christopher Nolan",
                "acquired": "Interstellar was directed by Christopher Nolan.",
            },
        ],
        final="Yes.",
        step_golds={},
        context_titles=["Inception", "Interstellar", "Christopher Nolan", "La La Land"],
    ),
    FixtureQuestion(
        qid="sw-q6",
        question="What is the capital of the country where the Eiffel Tower is located?",
        gold="Paris",
        qtype="bridge",
        decompose_payload={
            "acquired_information": "The Eiffel Tower is a landmark.",
            "plan": [
                {"id": 0, "sub_question": "In which country is the Eiffel Tower located?", "dependencies": []},
                {"id": 1, "sub_question": "What is the capital of <dep:0>?", "dependencies": [0]},
            ],
        },
        steps=[
            {
                "bound": "In which country is the Eiffel Tower located?",
                "answer": "France",
                "acquired": "The Eiffel Tower is in Paris, France.",
            },
            {
                "bound": "What is the capital of France?",
                "answer": "Paris",
                "acquired": "The capital of France is Paris.",
            },
        ],
        final="Paris",
        step_golds={0: "France", 1: "Paris"},
        context_titles=["Eiffel Tower", "France", "Paris", "Interstellar"],
    ),
]


def passage_display(title: str) -> str:
    text = dict(PASSAGES)[title]
    return f"{title}. {text}"


def chat_entries(usage: tuple[int, int] | None = None) -> list[dict]:
    """Script covering extraction, decomposition, steps, and final answers.

    When usage is given, every entry reports it as [prompt, completion]
    tokens so token accounting is hand-checkable.
    """
    entries: list[dict] = []
    for title, _ in PASSAGES:
        entries.append(
            {
                "match": ["Extract explicit graph facts", f"<passage>\n{passage_display(title)}\n</passage>"],
                "response": json.dumps(EXTRACTIONS[title]),
            }
        )
    for q in QUESTIONS:
        entries.append(
            {
                "match": ["Create the retrieval plan", f"<question>\n{q.question}\n</question>"],
                "response": json.dumps(q.decompose_payload),
            }
        )
        for step in q.steps:
            entries.append(
                {
                    "match": ["Answer one plan step", f"<sub_question>\n{step['bound']}\n</sub_question>"],
                    "response": json.dumps(
                        {"answer": step["answer"], "acquired_information": step["acquired"]}
                    ),
                }
            )
        entries.append(
            {
                "match": ["final answer agent", f"<question>\n{q.question}\n</question>"],
                "response": q.final,
            }
        )
    if usage is not None:
        for entry in entries:
            entry["usage"] = list(usage)
    return entries


def make_chat_provider(usage: tuple[int, int] | None = None) -> ScriptedChatProvider:
    return ScriptedChatProvider(chat_entries(usage))


def build_corpus() -> Corpus:
    records = [(unit_id_for(title, text), title, text) for title, text in PASSAGES]
    return Corpus(units=ingest_passages(records, source_name="synthetic").units, source_name="synthetic")


def unit_id(title: str) -> str:
    return unit_id_for(title, dict(PASSAGES)[title])


@dataclass
class World:
    corpus: Corpus
    graph: EvidenceGroundedGraph
    indexes: dict[str, ViewIndex]
    embedder: HashEmbedder
    config: FusionConfig = field(default_factory=FusionConfig)

    def retriever(self, views=None, config: FusionConfig | None = None) -> MultiViewRetriever:
        return MultiViewRetriever(
            self.graph,
            self.indexes,
            self.embedder,
            config or self.config,
            views=views or ALL_VIEWS,
        )


def build_world() -> World:
    corpus = build_corpus()
    graph = build_graph_from_corpus(corpus, make_chat_provider(), max_workers=2)
    embedder = HashEmbedder()
    indexes = build_view_indexes(corpus, graph, embedder)
    return World(corpus=corpus, graph=graph, indexes=indexes, embedder=embedder)


def write_benchmark_file(path: str | Path) -> None:
    """HotpotQA-shaped JSON file for the six fixture questions."""
    rows = []
    for q in QUESTIONS:
        rows.append(
            {
                "_id": q.qid,
                "question": q.question,
                "answer": q.gold,
                "type": q.qtype,
                "context": [[title, [dict(PASSAGES)[title]]] for title in q.context_titles],
            }
        )
    Path(path).write_text(json.dumps(rows, ensure_ascii=False, indent=2), encoding="utf-8")


def write_run_config(path: str | Path, benchmark_path: str | Path, out_dir: str | Path, **overrides) -> None:
    config = {
        "dataset_name": "hotpotqa",
        "benchmark_path": str(benchmark_path),
        "benchmark_format": "hotpotqa",
        "out_dir": str(out_dir),
        "chat_provider": {"kind": "scripted", "options": {"entries": chat_entries()}},
        "embed_provider": {"kind": "hash", "options": {"dimension": 64, "seed": 0}},
    }
    config.update(overrides)
    Path(path).write_text(json.dumps(config, ensure_ascii=False, indent=2), encoding="utf-8")
