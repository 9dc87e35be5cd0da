"""Graph interchange format: validation, round-trips, and embedding."""

import json

import numpy as np
import pytest

from hlsdse.cdfg import (
    EDGE_TYPES,
    NODE_TYPES,
    CdfgEdge,
    CdfgGraph,
    CdfgNode,
    EmbeddingConfig,
    embed,
    graph_to_dict,
    numeric_node_channels,
    parse_graph,
    parse_graph_dict,
    serialize_graph,
    to_dot,
)
from hlsdse.errors import (
    DanglingEdgeError,
    DuplicateNodeError,
    EmbeddingError,
    MalformedGraphError,
)


def random_graph(rng: np.random.Generator, max_nodes: int = 12) -> CdfgGraph:
    n = int(rng.integers(1, max_nodes + 1))
    ids = rng.choice(10_000, size=n, replace=False)
    type_codes = list(NODE_TYPES.values())
    nodes = []
    for nid in ids:
        const = float(rng.integers(-50, 50)) if rng.random() < 0.3 else None
        nodes.append(
            CdfgNode(
                id=int(nid),
                node_type=int(rng.choice(type_codes)),
                opcode=f"op{int(rng.integers(0, 9))}",
                bitwidth=int(rng.integers(0, 1025)),
                const_value=const,
            )
        )
    n_edges = int(rng.integers(0, 2 * n))
    edges = []
    for eid in range(n_edges):
        src, dst = rng.choice(ids, size=2, replace=True)
        edges.append(
            CdfgEdge(
                id=eid,
                edge_type=int(rng.choice(list(EDGE_TYPES.values()))),
                src=int(src),
                dst=int(dst),
            )
        )
    return CdfgGraph(tuple(nodes), tuple(edges))


@pytest.mark.parametrize("seed", range(20))
def test_serialize_parse_roundtrip(seed):
    g = random_graph(np.random.default_rng(seed))
    g2 = parse_graph(serialize_graph(g))
    assert g2.nodes == g.nodes
    assert g2.edges == g.edges


def test_add_node_roundtrip():
    d = {
        "nodes": [{"id": 18, "type": 0, "opcode": "add", "bitwidth": 3}],
        "edges": [],
    }
    g = parse_graph_dict(d)
    assert g.nodes[0] == CdfgNode(id=18, node_type=0, opcode="add", bitwidth=3)
    assert graph_to_dict(g) == d


def test_typed_edge_roundtrip():
    d = {
        "nodes": [
            {"id": 1, "type": 2, "opcode": "load", "bitwidth": 32},
            {"id": 2, "type": 3, "opcode": "store", "bitwidth": 32},
        ],
        "edges": [{"id": 40, "type": 2, "src": 1, "dst": 2}],
    }
    g = parse_graph_dict(d)
    assert g.edges[0] == CdfgEdge(id=40, edge_type=2, src=1, dst=2)
    assert graph_to_dict(g) == d


def test_dangling_edge_rejected():
    d = {
        "nodes": [{"id": 1, "type": 0, "opcode": "add", "bitwidth": 8}],
        "edges": [{"id": 0, "type": 0, "src": 1, "dst": 999}],
    }
    with pytest.raises(DanglingEdgeError):
        parse_graph_dict(d)


def test_duplicate_node_id_rejected():
    nodes = (
        CdfgNode(id=7, node_type=0, opcode="add"),
        CdfgNode(id=7, node_type=1, opcode="mul"),
    )
    with pytest.raises(DuplicateNodeError):
        CdfgGraph(nodes, ())


@pytest.mark.parametrize(
    "text",
    [
        "not json{",
        json.dumps([1, 2]),
        json.dumps({"nodes": []}),
        json.dumps({"nodes": [], "edges": [], "extra": 1}),
        json.dumps({"nodes": [{"id": 0, "type": 0, "opcode": "a"}], "edges": []}),
        json.dumps(
            {"nodes": [{"id": 0, "type": 0, "opcode": "a", "bitwidth": 1, "x": 2}], "edges": []}
        ),
        json.dumps(
            {
                "nodes": [{"id": 0, "type": 0, "opcode": "a", "bitwidth": 1}],
                "edges": [{"id": 0, "type": 0, "src": 0}],
            }
        ),
    ],
)
def test_malformed_documents_rejected(text):
    with pytest.raises(MalformedGraphError):
        parse_graph(text)


def test_bitwidth_and_type_codes_validated():
    with pytest.raises(MalformedGraphError):
        CdfgGraph((CdfgNode(id=0, node_type=0, opcode="a", bitwidth=1025),), ())
    with pytest.raises(MalformedGraphError):
        CdfgGraph((CdfgNode(id=0, node_type=99, opcode="a"),), ())
    node = CdfgNode(id=0, node_type=0, opcode="a")
    with pytest.raises(MalformedGraphError):
        CdfgGraph((node,), (CdfgEdge(id=0, edge_type=9, src=0, dst=0),))
    with pytest.raises(MalformedGraphError):
        CdfgGraph((node,), (CdfgEdge(id=0, edge_type=0, src=0, dst=0), CdfgEdge(id=0, edge_type=1, src=0, dst=0)))


def test_as_arrays_uses_positions_not_ids():
    g = CdfgGraph(
        (
            CdfgNode(id=50, node_type=0, opcode="add"),
            CdfgNode(id=10, node_type=1, opcode="mul"),
        ),
        (CdfgEdge(id=0, edge_type=0, src=50, dst=10),),
    )
    arr = g.as_arrays()
    assert arr["edge_src"].tolist() == [0]
    assert arr["edge_dst"].tolist() == [1]
    assert arr["node_types"].tolist() == [0, 1]


def test_numeric_channels_formulas():
    g = CdfgGraph(
        (
            CdfgNode(id=0, node_type=0, opcode="add", bitwidth=3),
            CdfgNode(id=1, node_type=1, opcode="mul", bitwidth=0, const_value=2.0),
        ),
        (),
    )
    ch = numeric_node_channels(g)
    assert ch[0, 0] == pytest.approx(2.0)  # log2(1+3)
    assert ch[0, 1] == 0.0 and ch[0, 2] == 0.0
    assert ch[1, 1] == 1.0
    assert ch[1, 2] == pytest.approx(np.tanh(2.0))


def _tables(cfg: EmbeddingConfig, rng: np.random.Generator):
    node_table = rng.normal(size=(cfg.node_type_vocab, cfg.node_dim - 3))
    edge_table = rng.normal(size=(cfg.edge_type_vocab, cfg.edge_dim))
    return node_table, edge_table


def test_embed_shapes_and_determinism():
    rng = np.random.default_rng(3)
    g = random_graph(rng, max_nodes=5)
    while g.num_nodes != 5:
        g = random_graph(rng, max_nodes=5)
    cfg = EmbeddingConfig()
    nt, et = _tables(cfg, np.random.default_rng(0))
    nf1, ef1 = embed(g, cfg, nt, et)
    nf2, ef2 = embed(g, cfg, nt, et)
    assert nf1.shape == (5, cfg.node_dim)
    assert ef1.shape == (g.num_edges, cfg.edge_dim)
    assert np.array_equal(nf1, nf2) and np.array_equal(ef1, ef2)


def test_embed_permutation_equivariance():
    rng = np.random.default_rng(11)
    g = random_graph(rng, max_nodes=8)
    cfg = EmbeddingConfig()
    nt, et = _tables(cfg, np.random.default_rng(1))
    nf, _ = embed(g, cfg, nt, et)
    perm = rng.permutation(g.num_nodes)
    g_perm = CdfgGraph(tuple(g.nodes[i] for i in perm), g.edges)
    nf_perm, _ = embed(g_perm, cfg, nt, et)
    assert np.array_equal(nf_perm, nf[perm])


def test_embed_out_of_vocab_rejected():
    g = CdfgGraph((CdfgNode(id=0, node_type=7, opcode="bank"),), ())
    cfg = EmbeddingConfig(node_type_vocab=4)
    nt, et = _tables(cfg, np.random.default_rng(0))
    with pytest.raises(EmbeddingError):
        embed(g, cfg, nt, et)
    cfg2 = EmbeddingConfig()
    nt2, et2 = _tables(cfg2, np.random.default_rng(0))
    g2 = CdfgGraph(
        (CdfgNode(id=0, node_type=0, opcode="a"), CdfgNode(id=1, node_type=0, opcode="b")),
        (CdfgEdge(id=0, edge_type=2, src=0, dst=1),),
    )
    with pytest.raises(EmbeddingError):
        embed(g2, EmbeddingConfig(edge_type_vocab=2), *_tables(EmbeddingConfig(edge_type_vocab=2), np.random.default_rng(0)))
    embed(g2, cfg2, nt2, et2)


def test_embed_table_shape_checked():
    g = CdfgGraph((CdfgNode(id=0, node_type=0, opcode="a"),), ())
    cfg = EmbeddingConfig()
    nt, et = _tables(cfg, np.random.default_rng(0))
    with pytest.raises(EmbeddingError):
        embed(g, cfg, nt[:, :-1], et)
    with pytest.raises(EmbeddingError):
        embed(g, cfg, nt, et[:-1])


def test_config_validation():
    with pytest.raises(ValueError):
        EmbeddingConfig(node_dim=3)
    with pytest.raises(ValueError):
        EmbeddingConfig(edge_dim=0)


def test_to_dot_mentions_every_node():
    g = random_graph(np.random.default_rng(2), max_nodes=6)
    dot = to_dot(g)
    assert dot.startswith("digraph")
    for n in g.nodes:
        assert f"n{n.id}" in dot
