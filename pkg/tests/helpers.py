"""Independent oracles for the test suite.

Everything here re-derives expected behavior from first principles with
its own code paths: the rule checker walks the loop forest directly, the
Pareto/ADRS oracles are quadratic literal transcriptions of the
definitions, and config enumeration runs over raw option products.  None
of it calls the library's sampling, masking, or metric internals beyond
plain dataclass field reads.
"""

from __future__ import annotations

import itertools

import numpy as np

from hlsdse.design_space import (
    VARIABLE,
    ArrayDecl,
    DesignSpace,
    FuncDecl,
    LoopDecl,
    LoopSetting,
    PragmaConfig,
    canonical_key,
)


def _descendants(space: DesignSpace, loop_id: int) -> list[int]:
    out = []
    stack = [j for j, lp in enumerate(space.loops) if lp.parent == loop_id]
    while stack:
        j = stack.pop()
        out.append(j)
        stack.extend(k for k, lp in enumerate(space.loops) if lp.parent == j)
    return out


def check_rules(config: PragmaConfig, space: DesignSpace) -> list[str]:
    """All R1/R2/R3 violations in a raw sampled config, as readable strings.

    R1  pipelined loop -> every nested loop fully unrolled, not pipelined
    R2  pipelining and full unrolling are mutually exclusive per loop
    R3  a VARIABLE-bound descendant forbids pipelining the levels above
    """
    bad = []
    for j, lp in enumerate(space.loops):
        s = config.loops[j]
        if s.pipelined:
            for d in _descendants(space, j):
                ds = config.loops[d]
                db = space.loops[d].bound
                if ds.pipelined:
                    bad.append(f"R1: loop {d} pipelined under pipelined ancestor {j}")
                if db == VARIABLE or ds.unroll != db:
                    bad.append(f"R1: loop {d} not fully unrolled under pipelined ancestor {j}")
            if isinstance(lp.bound, int) and s.unroll == lp.bound:
                bad.append(f"R2: loop {j} pipelined at full unroll {s.unroll}")
            for d in _descendants(space, j):
                if space.loops[d].bound == VARIABLE:
                    bad.append(f"R3: loop {j} pipelined above VARIABLE-bound loop {d}")
    return bad


def random_space(rng: np.random.Generator, max_loops: int = 4) -> DesignSpace:
    """A random valid DesignSpace: forest-shaped loops, mixed bounds,
    divisor-closed unroll lists, optional arrays and inlinable functions."""
    n_loops = int(rng.integers(1, max_loops + 1))
    loops = []
    for j in range(n_loops):
        parent = -1 if j == 0 else int(rng.integers(-1, j))
        if rng.random() < 0.2:
            bound: int | str = VARIABLE
            unroll = sorted({1, *(int(x) for x in rng.choice([2, 4, 8], size=2))})
        else:
            bound = int(rng.choice([1, 2, 4, 8, 16]))
            divs = [f for f in (1, 2, 4, 8, 16) if bound % f == 0]
            keep = [f for f in divs if f == 1 or rng.random() < 0.7]
            unroll = sorted(set(keep))
        ii = sorted({int(x) for x in rng.choice([1, 2, 4, 8], size=int(rng.integers(1, 4)))} | {1})
        loops.append(
            LoopDecl(id=j, parent=parent, bound=bound, unroll_options=tuple(unroll), ii_options=tuple(ii))
        )
    arrays = tuple(
        ArrayDecl(
            name=f"arr{a}",
            partition_types=("block", "cyclic") if rng.random() < 0.7 else ("block",),
            partition_factors=tuple(sorted({1, *(int(x) for x in rng.choice([2, 4, 8], size=2))})),
        )
        for a in range(int(rng.integers(0, 3)))
    )
    functions = tuple(
        FuncDecl(name=f"fn{i}", inlinable=bool(rng.random() < 0.8))
        for i in range(int(rng.integers(0, 3)))
    )
    return DesignSpace(loops=tuple(loops), arrays=arrays, functions=functions)


def enumerate_configs(space: DesignSpace) -> dict[str, PragmaConfig]:
    """Every legal raw config, keyed canonically (so masked twins collapse)."""
    loop_opts = []
    for lp in space.loops:
        opts = [LoopSetting(u, False, None) for u in lp.unroll_options]
        for u in lp.unroll_options:
            for ii in lp.ii_options:
                opts.append(LoopSetting(u, True, ii))
        loop_opts.append(opts)
    arr_opts = []
    for a in space.arrays:
        opts = [("none", 1)]
        for t in a.partition_types:
            opts.extend((t, f) for f in a.partition_factors if f > 1)
        arr_opts.append(opts)
    fn_opts = [[False, True] if f.inlinable else [False] for f in space.functions]
    out: dict[str, PragmaConfig] = {}
    for loops in itertools.product(*loop_opts):
        for parts in itertools.product(*arr_opts):
            for inl in itertools.product(*fn_opts):
                cfg = PragmaConfig(tuple(loops), tuple(parts), tuple(inl))
                if check_rules(cfg, space):
                    continue
                out.setdefault(canonical_key(cfg, space), cfg)
    return out


def brute_pareto(points):
    """Quadratic dominance filter; returns indices of non-dominated points."""
    keep = []
    for i, p in enumerate(points):
        dominated = False
        for j, q in enumerate(points):
            if j == i:
                continue
            if (
                q.latency <= p.latency
                and q.area <= p.area
                and (q.latency < p.latency or q.area < p.area)
            ):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    return keep


def brute_adrs(reference, approx) -> float:
    # literal transcription: mean over reference of min over approx of the
    # max relative gap in either coordinate
    total = 0.0
    for g in reference:
        best = min(
            max(abs(w.area - g.area) / g.area, abs(w.latency - g.latency) / g.latency)
            for w in approx
        )
        total += best
    return total / len(reference)


def central_diff(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f(x)
        flat[i] = old - eps
        lo = f(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2.0 * eps)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Largest absolute deviation relative to the larger vector magnitude.

    Norm-relative rather than per-element: near-zero components of an
    otherwise O(1) gradient are dominated by finite-difference roundoff,
    which says nothing about the correctness of the analytic gradient.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), 1e-12)
    return float(np.max(np.abs(a - b)) / denom)


def key_selection_fixture(m: int, samples: int, seed: int):
    """Bipartite lookup task where each query must read a different key.

    Per sample: m key nodes carry a random payload in their last feature
    channel, m query nodes carry none, and every key feeds every query.
    The target for query i is the payload of the key sharing identity i,
    so payloads being resampled per sample rules out memorizing targets
    from the query's own features via the self-loop.

    Returns (node_feats, edge_feats, esrc_full, edst_full, num_nodes,
    query_rows, targets); self-loop endpoints are already appended.
    """
    rng = np.random.default_rng(seed)
    feats, esrc, edst, qidx, targets = [], [], [], [], []
    off = 0
    for _ in range(samples):
        pay = rng.normal(size=m)
        for j in range(m):
            v = np.zeros(m + 2)
            v[j] = 1.0
            v[m] = 1.0
            v[m + 1] = pay[j]
            feats.append(v)
        for i in range(m):
            v = np.zeros(m + 2)
            v[i] = 1.0
            feats.append(v)
            qidx.append(off + m + i)
            targets.append(pay[i])
        for i in range(m):
            for j in range(m):
                esrc.append(off + j)
                edst.append(off + m + i)
        off += 2 * m
    loops = np.arange(off)
    return (
        np.array(feats),
        np.zeros((len(esrc), 1)),
        np.concatenate([np.array(esrc), loops]).astype(np.int64),
        np.concatenate([np.array(edst), loops]).astype(np.int64),
        off,
        np.array(qidx, dtype=np.int64),
        np.array(targets),
    )


def fit_key_selection(
    dynamic: bool,
    seed: int,
    m: int = 4,
    samples: int = 8,
    epochs: int = 800,
    lr: float = 0.01,
    out_dim: int = 32,
    tol: float = 5e-4,
) -> float:
    """Final MSE of one attention layer plus linear probe on the lookup task."""
    import hlsdse.autodiff as ad
    from hlsdse.predictor import Gatv2Layer

    h, efeat, esrc_full, edst_full, n, qidx, targets = key_selection_fixture(m, samples, seed=999)
    rng = np.random.default_rng(seed)
    layer = Gatv2Layer(m + 2, out_dim, 1, rng, dynamic=dynamic)
    probe = ad.tensor(rng.normal(0.0, 0.3, size=(out_dim, 1)))
    opt = ad.Adam(layer.params() + [probe], lr=lr)
    ht, et = ad.Tensor(h), ad.Tensor(efeat)
    tt = ad.Tensor(targets.reshape(-1, 1))
    last = float("inf")
    for _ in range(epochs):
        opt.zero_grad()
        out = layer.forward(ht, et, esrc_full, edst_full, n)
        pred = ad.matmul(ad.gather_rows(out, qidx), probe)
        loss = ad.mean_all(ad.square(ad.sub(pred, tt)))
        loss.backward()
        opt.step()
        last = loss.item()
        if last < tol:
            break
    return last
