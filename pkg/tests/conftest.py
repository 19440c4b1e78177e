from __future__ import annotations

import pytest

import synthetic_world


@pytest.fixture(scope="session")
def world():
    """One shared offline world: corpus, graph, indexes, embedder."""
    return synthetic_world.build_world()
