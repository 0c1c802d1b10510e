import numpy as np
import pytest

from mgcnn.pipeline import ingest_csv, prepare_corridor
from mgcnn.synth import SynthConfig, generate
from mgcnn.topology import load_topology

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance pass/fail lines even when stdout is captured."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_weight_matrix(rng, n, density=0.6):
    """Random nonnegative weight matrix with zero diagonal and a symmetric
    sparsity pattern (weights themselves may be asymmetric)."""
    pattern = rng.random((n, n)) < density
    pattern = np.triu(pattern, 1)
    pattern = pattern | pattern.T
    W = rng.random((n, n)) * 50.0 * pattern
    np.fill_diagonal(W, 0.0)
    return W


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """3-intersection, 3-day synthetic corpus shared across tests."""
    out = tmp_path_factory.mktemp("corpus")
    config = SynthConfig(n_intersections=3, days=3, seed=11)
    topo_path, csv_paths = generate(config, out)
    return {"dir": out, "topology": topo_path, "csvs": csv_paths, "config": config}


@pytest.fixture(scope="session")
def small_prepared(small_corpus):
    topology = load_topology(small_corpus["topology"])
    series = ingest_csv(small_corpus["csvs"])
    return prepare_corridor(series, topology, train_days=2)
