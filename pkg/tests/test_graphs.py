import numpy as np
import pytest

from gmrec.data import init_embeddings, universe_of
from gmrec.errors import MissingEmbeddingError
from gmrec.graphs import build_graphs

from conftest import make_sample


def test_node_and_edge_counts():
    sample = make_sample(3, 2)
    table = init_embeddings(universe_of([sample]), 4, seed=0)
    user, item = build_graphs(sample, table)
    assert (user.n_nodes, user.n_edges) == (3, 3)
    assert (item.n_nodes, item.n_edges) == (2, 1)


def test_single_node_graph_has_no_edges():
    sample = make_sample(1, 2)
    table = init_embeddings(universe_of([sample]), 4, seed=0)
    user, _ = build_graphs(sample, table)
    assert user.n_nodes == 1
    assert user.n_edges == 0
    assert user.neighborhood(0) == ()


def test_four_nodes_six_edges():
    sample = make_sample(2, 4)
    table = init_embeddings(universe_of([sample]), 4, seed=0)
    _, item = build_graphs(sample, table)
    assert item.n_edges == 6


def test_neighborhood_is_everyone_else():
    sample = make_sample(4, 1)
    table = init_embeddings(universe_of([sample]), 4, seed=0)
    user, _ = build_graphs(sample, table)
    for i in range(4):
        hood = user.neighborhood(i)
        assert len(hood) == 3
        assert i not in hood


def test_node_representations_match_table():
    sample = make_sample(2, 1, vals=[2.0, 1.0, -0.5])
    table = init_embeddings(universe_of([sample]), 4, seed=1)
    user, item = build_graphs(sample, table)
    assert np.array_equal(user.nodes[0], 2.0 * table.matrix[0])
    assert np.array_equal(item.nodes[0], -0.5 * table.matrix[2])


def test_pure_function_of_inputs():
    sample = make_sample(3, 3)
    table = init_embeddings(universe_of([sample]), 4, seed=2)
    a = build_graphs(sample, table)
    b = build_graphs(sample, table)
    for ga, gb in zip(a, b):
        assert ga.atts == gb.atts
        for ua, ub in zip(ga.nodes, gb.nodes):
            assert np.array_equal(ua, ub)


def test_missing_embedding_rejected():
    sample = make_sample(2, 1)
    table = init_embeddings(universe_of([make_sample(1, 1)]), 4, seed=0)
    with pytest.raises(MissingEmbeddingError):
        build_graphs(sample, table)
