"""Shared fixtures: synthetic grid networks, traces, and answer keys."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from opmodenet.matching import RoadGraph
from opmodenet.roadnet import build_links, parse_network
from opmodenet.synth import SyntheticSpec, generate


@pytest.fixture(scope="session")
def grid_fixture(tmp_path_factory) -> Path:
    """5x5 grid, 50 noisy traces (sigma = 10 m), full answer key on disk."""
    out = tmp_path_factory.mktemp("grid")
    generate(SyntheticSpec(n_traces=50, noise_sigma_m=10.0, seed=1), out)
    return out


@pytest.fixture(scope="session")
def grid_key(grid_fixture) -> dict:
    return json.loads((grid_fixture / "answer_key.json").read_text())


@pytest.fixture(scope="session")
def grid_links(grid_fixture):
    return build_links(parse_network((grid_fixture / "network.json").read_text()))


@pytest.fixture(scope="session")
def grid_graph(grid_links) -> RoadGraph:
    return RoadGraph(grid_links)


@pytest.fixture(scope="session")
def clean_fixture(tmp_path_factory) -> Path:
    """Same grid, zero positional noise."""
    out = tmp_path_factory.mktemp("grid_clean")
    generate(SyntheticSpec(n_traces=50, noise_sigma_m=0.0, seed=1), out)
    return out
