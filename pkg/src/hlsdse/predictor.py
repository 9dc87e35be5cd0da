"""Graph attention predictors for latency and area.

Three GATv2-style message-passing layers with edge features, mean pooling
into one feature vector per graph, and a small MLP regression head.  The
attention score of edge j -> i is a^T LeakyReLU(W [h_i || h_j || e_ij]),
computed in decomposed form (three matmuls plus gathers) so one disjoint
batch of graphs trains in a handful of dense ops per layer.

The static variant moves the LeakyReLU outside the a^T projection, which
collapses the neighbor ranking to one global ordering; it exists to show
why the dynamic form is the default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .cdfg import CdfgGraph, EmbeddingConfig, numeric_node_channels

LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    seed: int = 0
    tol: float = 1e-4  # stop once full-batch MSE converges below this
    window: int = 30  # also stop when a whole window improves less than
    window_improve: float = 0.03  # this relative fraction


@dataclass
class GraphBatch:
    """Disjoint union of graphs with self-loops appended after real edges."""

    node_types: np.ndarray
    numeric: np.ndarray
    edge_types: np.ndarray
    esrc_full: np.ndarray
    edst_full: np.ndarray
    graph_ids: np.ndarray
    num_nodes: int
    num_real_edges: int
    num_graphs: int


def build_batch(graphs: list[CdfgGraph]) -> GraphBatch:
    types, numeric, etypes, esrc, edst, gids = [], [], [], [], [], []
    offset = 0
    for gi, g in enumerate(graphs):
        arr = g.as_arrays()
        n = g.num_nodes
        types.append(arr["node_types"])
        numeric.append(numeric_node_channels(g))
        etypes.append(arr["edge_types"])
        esrc.append(arr["edge_src"] + offset)
        edst.append(arr["edge_dst"] + offset)
        gids.append(np.full(n, gi, dtype=np.int64))
        offset += n
    node_types = np.concatenate(types)
    esrc_real = np.concatenate(esrc) if esrc else np.zeros(0, dtype=np.int64)
    edst_real = np.concatenate(edst) if edst else np.zeros(0, dtype=np.int64)
    loops = np.arange(offset, dtype=np.int64)
    return GraphBatch(
        node_types=node_types,
        numeric=np.concatenate(numeric),
        edge_types=np.concatenate(etypes) if etypes else np.zeros(0, dtype=np.int64),
        esrc_full=np.concatenate([esrc_real, loops]),
        edst_full=np.concatenate([edst_real, loops]),
        graph_ids=np.concatenate(gids),
        num_nodes=offset,
        num_real_edges=esrc_real.shape[0],
        num_graphs=len(graphs),
    )


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Gatv2Layer:
    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        edge_dim: int,
        rng: np.random.Generator,
        dynamic: bool = True,
        slope: float = LEAKY_SLOPE,
    ):
        self.dynamic = dynamic
        self.slope = slope
        self.w_query = ad.tensor(_glorot(rng, in_dim, out_dim))
        self.w_key = ad.tensor(_glorot(rng, in_dim, out_dim))
        self.w_edge = ad.tensor(_glorot(rng, edge_dim, out_dim))
        self.att = ad.tensor(_glorot(rng, out_dim, 1))
        self.self_edge = ad.tensor(rng.normal(0.0, 0.1, size=(1, edge_dim)))

    def params(self) -> list[ad.Tensor]:
        return [self.w_query, self.w_key, self.w_edge, self.att, self.self_edge]

    def forward(
        self,
        h: ad.Tensor,
        edge_feat: ad.Tensor,
        esrc_full: np.ndarray,
        edst_full: np.ndarray,
        num_nodes: int,
        return_attention: bool = False,
    ):
        """edge_feat covers the real edges; a learned row stands in for the
        implicit self-loops appended at the end of esrc_full/edst_full."""
        q = ad.matmul(h, self.w_query)
        k = ad.matmul(h, self.w_key)
        efull = ad.concat([edge_feat, ad.broadcast_rows(self.self_edge, num_nodes)], axis=0)
        e = ad.matmul(efull, self.w_edge)
        pre = ad.gather_pair_add(q, k, e, edst_full, esrc_full)
        if self.dynamic:
            score = ad.matmul(ad.leaky_relu(pre, self.slope), self.att)
        else:
            score = ad.leaky_relu(ad.matmul(pre, self.att), self.slope)
        # softmax per destination, numerically stabilized by a detached max
        seg_max = np.full((num_nodes, 1), -np.inf)
        kernels.segment_max_rows(seg_max, edst_full, np.ascontiguousarray(score.data))
        shifted = ad.sub(score, ad.gather_rows(ad.Tensor(seg_max), edst_full))
        ex = ad.exp(shifted)
        denom = ad.segment_sum(ex, edst_full, num_nodes)
        alpha = ad.div(ex, ad.gather_rows(denom, edst_full))
        out = ad.attention_aggregate(alpha, k, esrc_full, edst_full, num_nodes)
        if return_attention:
            return out, alpha
        return out


def attention_matrix(
    layer: Gatv2Layer,
    h: np.ndarray,
    edge_feat: np.ndarray,
    esrc_full: np.ndarray,
    edst_full: np.ndarray,
    num_nodes: int,
) -> np.ndarray:
    """Dense (n, n) attention weights, rows = destination nodes."""
    _, alpha = layer.forward(
        ad.tensor(h), ad.tensor(edge_feat), esrc_full, edst_full, num_nodes, return_attention=True
    )
    dense = np.zeros((num_nodes, num_nodes))
    for w, s, d in zip(alpha.data[:, 0], esrc_full, edst_full):
        dense[d, s] += w
    return dense


class PredictorModel:
    """Embedding + 3 GATv2 layers + mean pool + MLP head."""

    def __init__(
        self,
        emb_cfg: EmbeddingConfig = EmbeddingConfig(),
        hidden: int = 64,
        feature_dim: int = 64,
        seed: int = 0,
        dynamic: bool = True,
    ):
        rng = np.random.default_rng(seed)
        self.emb_cfg = emb_cfg
        self.feature_dim = feature_dim
        self.emb_node = ad.tensor(rng.normal(0.0, 0.1, size=(emb_cfg.node_type_vocab, emb_cfg.node_dim - 3)))
        self.emb_edge = ad.tensor(rng.normal(0.0, 0.1, size=(emb_cfg.edge_type_vocab, emb_cfg.edge_dim)))
        self.layers = [
            Gatv2Layer(emb_cfg.node_dim, hidden, emb_cfg.edge_dim, rng, dynamic=dynamic),
            Gatv2Layer(hidden, hidden, emb_cfg.edge_dim, rng, dynamic=dynamic),
            Gatv2Layer(hidden, feature_dim, emb_cfg.edge_dim, rng, dynamic=dynamic),
        ]
        self.w1 = ad.tensor(_glorot(rng, feature_dim, hidden))
        self.b1 = ad.tensor(np.zeros((1, hidden)))
        self.w2 = ad.tensor(_glorot(rng, hidden, hidden))
        self.b2 = ad.tensor(np.zeros((1, hidden)))
        self.w3 = ad.tensor(_glorot(rng, hidden, 1))
        self.b3 = ad.tensor(np.zeros((1, 1)))

    def params(self) -> list[ad.Tensor]:
        out = [self.emb_node, self.emb_edge]
        for layer in self.layers:
            out.extend(layer.params())
        out.extend([self.w1, self.b1, self.w2, self.b2, self.w3, self.b3])
        return out

    def graph_features(self, batch: GraphBatch) -> ad.Tensor:
        """Pooled per-graph feature f, shape (num_graphs, feature_dim)."""
        x = ad.concat(
            [ad.gather_rows(self.emb_node, batch.node_types), ad.Tensor(batch.numeric)], axis=1
        )
        efeat = ad.gather_rows(self.emb_edge, batch.edge_types)
        h = self.layers[0].forward(x, efeat, batch.esrc_full, batch.edst_full, batch.num_nodes)
        h = ad.elu(h)
        h = self.layers[1].forward(h, efeat, batch.esrc_full, batch.edst_full, batch.num_nodes)
        h = ad.elu(h)
        h = self.layers[2].forward(h, efeat, batch.esrc_full, batch.edst_full, batch.num_nodes)
        return ad.segment_mean(h, batch.graph_ids, batch.num_graphs)

    def head_forward(self, feats: ad.Tensor) -> ad.Tensor:
        z = ad.elu(ad.add(ad.matmul(feats, self.w1), self.b1))
        z = ad.elu(ad.add(ad.matmul(z, self.w2), self.b2))
        return ad.add(ad.matmul(z, self.w3), self.b3)

    def forward_batch(self, batch: GraphBatch) -> tuple[ad.Tensor, ad.Tensor]:
        feats = self.graph_features(batch)
        return self.head_forward(feats), feats

    def predict(self, graphs: list[CdfgGraph]) -> np.ndarray:
        pred, _ = self.forward_batch(build_batch(graphs))
        return pred.data[:, 0].copy()

    def extract(self, graph: CdfgGraph) -> np.ndarray:
        """Feature vector f of one graph (numpy, no tape)."""
        feats = self.graph_features(build_batch([graph]))
        return feats.data[0].copy()

    def extract_batch(self, batch: GraphBatch) -> np.ndarray:
        return self.graph_features(batch).data.copy()


@dataclass
class TrainedPredictor:
    model: PredictorModel
    losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def train_predictor(
    graphs: list[CdfgGraph],
    targets: np.ndarray,
    cfg: TrainConfig = TrainConfig(),
    dynamic: bool = True,
    batch: GraphBatch | None = None,
) -> TrainedPredictor:
    """Fit a fresh predictor with full-batch Adam on MSE.

    Targets are whatever scale the caller chose (the search standardizes
    them first); the model learns that scale directly.
    """
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    if len(graphs) != targets.shape[0]:
        raise ValueError("one target per graph required")
    if batch is None:
        batch = build_batch(graphs)
    model = PredictorModel(seed=cfg.seed, dynamic=dynamic)
    opt = ad.Adam(model.params(), lr=cfg.lr)
    target_t = ad.Tensor(targets)
    losses = []
    for _ in range(cfg.epochs):
        opt.zero_grad()
        pred, _ = model.forward_batch(batch)
        loss = ad.mean_all(ad.square(ad.sub(pred, target_t)))
        loss.backward()
        opt.step()
        losses.append(loss.item())
        if losses[-1] < cfg.tol:
            break
        if len(losses) > cfg.window and losses[-1] > losses[-1 - cfg.window] * (
            1.0 - cfg.window_improve
        ):
            break
    pred, _ = model.forward_batch(batch)
    losses.append(float(np.mean((pred.data - targets) ** 2)))
    return TrainedPredictor(model=model, losses=losses)


CHECKPOINT_VERSION = 1


def save_checkpoint(model: PredictorModel, path) -> None:
    """Persist all parameter arrays plus enough metadata to rebuild."""
    arrays = {
        "meta_kind": np.array("predictor"),
        "meta_version": np.array([CHECKPOINT_VERSION]),
        "meta_dynamic": np.array([1 if model.layers[0].dynamic else 0]),
        "emb_node": model.emb_node.data,
        "emb_edge": model.emb_edge.data,
        "head_w1": model.w1.data,
        "head_b1": model.b1.data,
        "head_w2": model.w2.data,
        "head_b2": model.b2.data,
        "head_w3": model.w3.data,
        "head_b3": model.b3.data,
    }
    for i, layer in enumerate(model.layers):
        arrays[f"l{i}_w_query"] = layer.w_query.data
        arrays[f"l{i}_w_key"] = layer.w_key.data
        arrays[f"l{i}_w_edge"] = layer.w_edge.data
        arrays[f"l{i}_att"] = layer.att.data
        arrays[f"l{i}_self_edge"] = layer.self_edge.data
    np.savez(path, **arrays)


def load_checkpoint(path) -> PredictorModel:
    with np.load(path) as data:
        if str(data["meta_kind"]) != "predictor":
            raise ValueError(f"not a predictor checkpoint: {path}")
        if int(data["meta_version"][0]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version in {path}")
        emb_node = data["emb_node"]
        emb_edge = data["emb_edge"]
        emb_cfg = EmbeddingConfig(
            node_type_vocab=emb_node.shape[0],
            edge_type_vocab=emb_edge.shape[0],
            node_dim=emb_node.shape[1] + 3,
            edge_dim=emb_edge.shape[1],
        )
        model = PredictorModel(
            emb_cfg=emb_cfg,
            hidden=data["head_w2"].shape[0],
            feature_dim=data["head_w1"].shape[0],
            dynamic=bool(int(data["meta_dynamic"][0])),
        )
        model.emb_node.data = emb_node.copy()
        model.emb_edge.data = emb_edge.copy()
        for i, layer in enumerate(model.layers):
            layer.w_query.data = data[f"l{i}_w_query"].copy()
            layer.w_key.data = data[f"l{i}_w_key"].copy()
            layer.w_edge.data = data[f"l{i}_w_edge"].copy()
            layer.att.data = data[f"l{i}_att"].copy()
            layer.self_edge.data = data[f"l{i}_self_edge"].copy()
        model.w1.data = data["head_w1"].copy()
        model.b1.data = data["head_b1"].copy()
        model.w2.data = data["head_w2"].copy()
        model.b2.data = data["head_b2"].copy()
        model.w3.data = data["head_w3"].copy()
        model.b3.data = data["head_b3"].copy()
    return model
