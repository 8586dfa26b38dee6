import os
import sys

import numpy as np
import pytest

_ROOT = os.path.join(os.path.dirname(__file__), "..")
if _ROOT not in sys.path:
    sys.path.insert(0, _ROOT)

from services.graph_gen import GraphConfig, InGraph  # noqa: E402


def make_graph(rows, seed=0) -> InGraph:
    table = np.array(rows, dtype=np.int64)
    table.setflags(write=False)
    n, r = table.shape
    return InGraph(config=GraphConfig(n=n, r=r, seed=seed), in_nbrs=table)


@pytest.fixture
def cycle_graph() -> InGraph:
    """r = 1: y_1(x) = x - 1 mod 5."""
    return make_graph([[4], [0], [1], [2], [3]])


@pytest.fixture
def triangle_graph() -> InGraph:
    """n = 3, r = 2: every vertex reads the other two in increasing order."""
    return make_graph([[1, 2], [0, 2], [0, 1]])


@pytest.fixture
def small_graph() -> InGraph:
    """n = 6, r = 2 with a repeated in-neighbour two levels below vertex 0."""
    return make_graph([
        [1, 2],
        [3, 4],
        [4, 5],
        [0, 5],
        [1, 3],
        [2, 0],
    ])


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch, tmp_path):
    for key in list(os.environ):
        if key.startswith("SIM_"):
            monkeypatch.delenv(key, raising=False)
    monkeypatch.setenv("SIM_OUT_DIR", str(tmp_path / "output"))
    monkeypatch.setenv("SIM_LOGS_DIR", str(tmp_path / "logs"))
