"""Control/data-flow graph interchange format and numeric embedding.

Nodes carry a small integer type code plus opcode text, a bitwidth, and an
optional constant; edges carry a type code (data, control, memory).  The
JSON schema is strict: unknown fields are rejected so that silently
mis-spelled producers fail loudly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DanglingEdgeError, DuplicateNodeError, EmbeddingError, MalformedGraphError

NODE_TYPES = {
    "add": 0,
    "mul": 1,
    "load": 2,
    "store": 3,
    "call": 4,
    "loop_iter": 5,
    "kernel_entry": 6,
    "bank": 7,
}

EDGE_TYPES = {"data": 0, "control": 1, "memory": 2}

MAX_BITWIDTH = 1024


@dataclass(frozen=True)
class CdfgNode:
    id: int
    node_type: int
    opcode: str
    bitwidth: int = 32
    const_value: float | None = None


@dataclass(frozen=True)
class CdfgEdge:
    id: int
    edge_type: int
    src: int
    dst: int


@dataclass
class CdfgGraph:
    nodes: tuple[CdfgNode, ...]
    edges: tuple[CdfgEdge, ...]
    _index: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {}
        for i, n in enumerate(self.nodes):
            if n.id in self._index:
                raise DuplicateNodeError(f"duplicate node id {n.id}")
            if n.node_type not in NODE_TYPES.values():
                raise MalformedGraphError(f"node {n.id}: unknown type code {n.node_type}")
            if not (0 <= n.bitwidth <= MAX_BITWIDTH):
                raise MalformedGraphError(f"node {n.id}: bitwidth {n.bitwidth} out of range")
            self._index[n.id] = i
        edge_ids = set()
        for e in self.edges:
            if e.id in edge_ids:
                raise MalformedGraphError(f"duplicate edge id {e.id}")
            edge_ids.add(e.id)
            if e.edge_type not in EDGE_TYPES.values():
                raise MalformedGraphError(f"edge {e.id}: unknown type code {e.edge_type}")
            if e.src not in self._index or e.dst not in self._index:
                raise DanglingEdgeError(f"edge {e.id}: endpoint {e.src}->{e.dst} missing")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def node_index(self, node_id: int) -> int:
        return self._index[node_id]

    def as_arrays(self) -> dict[str, np.ndarray]:
        """Dense index arrays for the models (edge endpoints as positions)."""
        types = np.array([n.node_type for n in self.nodes], dtype=np.int64)
        bw = np.array([n.bitwidth for n in self.nodes], dtype=np.float64)
        has_const = np.array(
            [0.0 if n.const_value is None else 1.0 for n in self.nodes], dtype=np.float64
        )
        const = np.array(
            [0.0 if n.const_value is None else float(n.const_value) for n in self.nodes],
            dtype=np.float64,
        )
        esrc = np.array([self._index[e.src] for e in self.edges], dtype=np.int64)
        edst = np.array([self._index[e.dst] for e in self.edges], dtype=np.int64)
        etypes = np.array([e.edge_type for e in self.edges], dtype=np.int64)
        return {
            "node_types": types,
            "bitwidth": bw,
            "has_const": has_const,
            "const": const,
            "edge_src": esrc,
            "edge_dst": edst,
            "edge_types": etypes,
        }


_NODE_REQUIRED = {"id", "type", "opcode", "bitwidth"}
_NODE_ALLOWED = _NODE_REQUIRED | {"const"}
_EDGE_REQUIRED = {"id", "type", "src", "dst"}


def parse_graph_dict(d: dict) -> CdfgGraph:
    if not isinstance(d, dict) or set(d) != {"nodes", "edges"}:
        raise MalformedGraphError("graph object must have exactly 'nodes' and 'edges'")
    nodes = []
    for nd in d["nodes"]:
        if not isinstance(nd, dict):
            raise MalformedGraphError("node entries must be objects")
        extra = set(nd) - _NODE_ALLOWED
        missing = _NODE_REQUIRED - set(nd)
        if extra:
            raise MalformedGraphError(f"node has unknown fields {sorted(extra)}")
        if missing:
            raise MalformedGraphError(f"node missing fields {sorted(missing)}")
        try:
            nodes.append(
                CdfgNode(
                    id=int(nd["id"]),
                    node_type=int(nd["type"]),
                    opcode=str(nd["opcode"]),
                    bitwidth=int(nd["bitwidth"]),
                    const_value=None if nd.get("const") is None else float(nd["const"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise MalformedGraphError(f"ill-typed node fields: {exc}") from exc
    edges = []
    for ed in d["edges"]:
        if not isinstance(ed, dict):
            raise MalformedGraphError("edge entries must be objects")
        if set(ed) != _EDGE_REQUIRED:
            raise MalformedGraphError(
                f"edge fields must be exactly {sorted(_EDGE_REQUIRED)}, got {sorted(ed)}"
            )
        try:
            edges.append(
                CdfgEdge(id=int(ed["id"]), edge_type=int(ed["type"]), src=int(ed["src"]), dst=int(ed["dst"]))
            )
        except (TypeError, ValueError) as exc:
            raise MalformedGraphError(f"ill-typed edge fields: {exc}") from exc
    return CdfgGraph(tuple(nodes), tuple(edges))


def parse_graph(text: str) -> CdfgGraph:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedGraphError(f"invalid JSON: {exc}") from exc
    return parse_graph_dict(d)


def graph_to_dict(g: CdfgGraph) -> dict:
    nodes = []
    for n in g.nodes:
        nd = {"id": n.id, "type": n.node_type, "opcode": n.opcode, "bitwidth": n.bitwidth}
        if n.const_value is not None:
            nd["const"] = n.const_value
        nodes.append(nd)
    edges = [{"id": e.id, "type": e.edge_type, "src": e.src, "dst": e.dst} for e in g.edges]
    return {"nodes": nodes, "edges": edges}


def serialize_graph(g: CdfgGraph) -> str:
    """Canonical JSON text; parse_graph(serialize_graph(g)) round-trips."""
    return json.dumps(graph_to_dict(g), separators=(",", ":"))


@dataclass(frozen=True)
class EmbeddingConfig:
    """Dimensions of the learned lookup embedding.

    Node vectors are a learned per-type row of width node_dim - 3 plus
    three numeric channels: log2(1 + bitwidth), a has-const flag, and
    tanh(const).  Edge vectors are a learned per-type row.
    """

    node_type_vocab: int = 8
    edge_type_vocab: int = 3
    node_dim: int = 16
    edge_dim: int = 8

    def __post_init__(self):
        if self.node_dim < 4:
            raise ValueError("node_dim must leave room for the 3 numeric channels")
        if self.edge_dim < 1 or self.node_type_vocab < 1 or self.edge_type_vocab < 1:
            raise ValueError("embedding dims and vocabs must be positive")


def numeric_node_channels(g: CdfgGraph) -> np.ndarray:
    arr = g.as_arrays()
    return np.stack(
        [np.log2(1.0 + arr["bitwidth"]), arr["has_const"], np.tanh(arr["const"])], axis=1
    )


def embed(
    g: CdfgGraph,
    cfg: EmbeddingConfig,
    node_table: np.ndarray,
    edge_table: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Embed one graph into (N, node_dim) and (E, edge_dim) float matrices."""
    if node_table.shape != (cfg.node_type_vocab, cfg.node_dim - 3):
        raise EmbeddingError(f"node table shape {node_table.shape} mismatches config")
    if edge_table.shape != (cfg.edge_type_vocab, cfg.edge_dim):
        raise EmbeddingError(f"edge table shape {edge_table.shape} mismatches config")
    arr = g.as_arrays()
    if arr["node_types"].size and arr["node_types"].max() >= cfg.node_type_vocab:
        raise EmbeddingError("node type code outside embedding vocabulary")
    if arr["edge_types"].size and arr["edge_types"].max() >= cfg.edge_type_vocab:
        raise EmbeddingError("edge type code outside embedding vocabulary")
    node_feat = np.concatenate([node_table[arr["node_types"]], numeric_node_channels(g)], axis=1)
    edge_feat = edge_table[arr["edge_types"]]
    return node_feat, edge_feat


def to_dot(g: CdfgGraph) -> str:
    """Graphviz text for eyeballing small graphs."""
    lines = ["digraph cdfg {"]
    for n in g.nodes:
        label = f"{n.opcode}#{n.id}"
        if n.const_value is not None:
            label += f"={n.const_value:g}"
        lines.append(f'  n{n.id} [label="{label}"];')
    styles = {0: "solid", 1: "dashed", 2: "dotted"}
    for e in g.edges:
        lines.append(f"  n{e.src} -> n{e.dst} [style={styles[e.edge_type]}];")
    lines.append("}")
    return "\n".join(lines)
