"""Budgeted inverse-design loop over pragma distributions.

Each iteration samples a fixed number of fresh configurations from the
per-trade-off distributions Theta_k, synthesizes them, retrains the
latency/area predictors and the conditional feature estimators from
scratch on everything synthesized so far, then pushes every Theta_k
downhill on the differentiable surrogate

    c_hat_k = mean_z [ lam_k * P_l(V_l(z, Theta_k)) + (1 - lam_k) * P_a(V_a(z, Theta_k)) ]

with Adam on the site logits.  The loop stops exactly at the synthesis
budget; the batch that exhausts it still lands in the result set (and the
Pareto front) but is never trained on.

All randomness derives from (seed, iteration, purpose, k) so reruns with
one seed produce byte-identical logs, and every synthesized design is
appended to dataset.jsonl as it happens, which doubles as the resume
journal.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import autodiff as ad
from .cdfg import CdfgGraph, graph_to_dict, parse_graph_dict
from .design_space import (
    DesignSpace,
    PragmaConfig,
    ThetaDistribution,
    canonical_key,
    config_from_dict,
    config_to_dict,
    flatten_from_leaves,
    flatten_theta,
    init_theta_from_priors,
    init_theta_uniform,
    sample_config,
    theta_leaf_tensors,
)
from .errors import RunConfigError
from .estimator import (
    CvaeModel,
    EstimatorTrainConfig,
    train_estimator,
)
from .estimator import save_checkpoint as save_estimator
from .mini_hls import BackendFailure, scalarize_area
from .pareto import DesignPoint, pareto_extract
from .predictor import PredictorModel, TrainConfig, build_batch, train_predictor
from .predictor import save_checkpoint as save_predictor

DEFAULT_LAMBDAS = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

_PURPOSE = {"sample": 1, "z": 2, "pred_l": 3, "pred_a": 4, "est_l": 5, "est_a": 6, "explore": 7}

# give up on filling an iteration's synthesis quota after this many draws
# per requested design (uniform exploration in a near-exhausted space)
_ATTEMPTS_PER_DESIGN = 60


@dataclass(frozen=True)
class RunConfig:
    lam: tuple[float, ...] = DEFAULT_LAMBDAS
    budget: int = 180
    n1: int = 30
    n2: int = 64
    inner_steps: int = 50
    epochs: int = 200
    lr: float = 1e-3
    theta_lr: float = 0.05
    latent_dim: int = 16
    seed: int = 0
    stall_limit: int = 25

    def __post_init__(self):
        if not self.lam or any(not (0.0 <= v <= 1.0) for v in self.lam):
            raise RunConfigError("lam weights must lie in [0, 1]")
        if self.n1 < len(self.lam) or self.n1 % len(self.lam) != 0:
            raise RunConfigError("n1 must be a positive multiple of the number of weights")
        if self.budget < self.n1:
            raise RunConfigError("budget must cover at least one sampling iteration")
        if min(self.n2, self.inner_steps, self.epochs, self.stall_limit) < 1:
            raise RunConfigError("n2, inner_steps, epochs, stall_limit must be positive")
        if self.lr <= 0 or self.theta_lr <= 0:
            raise RunConfigError("learning rates must be positive")

    def to_dict(self) -> dict:
        return {
            "lam": list(self.lam),
            "budget": self.budget,
            "n1": self.n1,
            "n2": self.n2,
            "inner_steps": self.inner_steps,
            "epochs": self.epochs,
            "lr": self.lr,
            "theta_lr": self.theta_lr,
            "latent_dim": self.latent_dim,
            "seed": self.seed,
            "stall_limit": self.stall_limit,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunConfig":
        known = {f for f in RunConfig.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise RunConfigError(f"unknown run-config fields {sorted(unknown)}")
        if "lam" in d:
            d = dict(d, lam=tuple(d["lam"]))
        return RunConfig(**d)


@dataclass
class Standardizer:
    mean: float
    std: float

    @staticmethod
    def fit(values) -> "Standardizer":
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            raise ValueError("cannot standardize an empty sample")
        std = float(arr.std())
        return Standardizer(mean=float(arr.mean()), std=std if std > 1e-12 else 1.0)

    def transform(self, values) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std


def cost(latency_std: float, area_std: float, lam: float) -> float:
    """Scalarized trade-off over standardized objectives."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    return lam * latency_std + (1.0 - lam) * area_std


@dataclass
class DesignRecord:
    key: str
    config: PragmaConfig
    graph: CdfgGraph
    latency: int
    area: dict[str, int]
    area_scalar: float
    theta_vec: np.ndarray
    lam_k: int
    iteration: int


class DesignDataset:
    """Append-only set of synthesized designs, unique by canonical key."""

    def __init__(self):
        self.records: list[DesignRecord] = []
        self._keys: set[str] = set()
        self._by_key: dict[str, DesignRecord] = {}

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, key: str) -> bool:
        return key in self._keys

    def get(self, key: str) -> DesignRecord | None:
        return self._by_key.get(key)

    def add(self, record: DesignRecord) -> None:
        if record.key in self._keys:
            raise ValueError(f"duplicate design key {record.key}")
        self._keys.add(record.key)
        self._by_key[record.key] = record
        self.records.append(record)


def _rng(seed: int, iteration: int, purpose: str, k: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((seed, iteration, _PURPOSE[purpose], k))
    )


def _seed_int(seed: int, iteration: int, purpose: str, k: int = 0) -> int:
    return int(
        np.random.SeedSequence((seed, iteration, _PURPOSE[purpose], k)).generate_state(1)[0]
    )


def surrogate_cost_from_leaves(
    theta: ThetaDistribution,
    leaves: list[ad.Tensor],
    lam: float,
    pred_l: PredictorModel,
    pred_a: PredictorModel,
    est_l: CvaeModel,
    est_a: CvaeModel,
    z: np.ndarray,
) -> ad.Tensor:
    """Differentiable expected cost of Theta under the learned surrogate.

    Decoded features live in each estimator's standardized space, so they
    are mapped back to raw feature scale before the predictor heads.
    """
    flat = flatten_from_leaves(theta, leaves)
    n2 = z.shape[0]
    z_t = ad.Tensor(z)
    parts = []
    for weight, pred, est in ((lam, pred_l, est_l), (1.0 - lam, pred_a, est_a)):
        if weight == 0.0:
            continue
        cond = ad.broadcast_rows(est.project(flat), n2)
        f_std = est.decode(z_t, cond)
        f_raw = ad.add(ad.mul(f_std, ad.Tensor(est.feature_std)), ad.Tensor(est.feature_mean))
        parts.append(ad.mul(ad.Tensor(weight), pred.head_forward(f_raw)))
    total = parts[0] if len(parts) == 1 else ad.add(parts[0], parts[1])
    return ad.mean_all(total)


def update_theta(
    theta: ThetaDistribution,
    lam: float,
    pred_l: PredictorModel,
    pred_a: PredictorModel,
    est_l: CvaeModel,
    est_a: CvaeModel,
    z: np.ndarray,
    steps: int,
    lr: float,
) -> list[float]:
    """Adam-descend the site logits on the surrogate cost, in place.

    The z batch stays fixed across steps (common random numbers), so the
    optimized objective is deterministic within one iteration.
    """
    leaves = theta_leaf_tensors(theta)
    opt = ad.Adam(leaves, lr=lr)
    history = []
    for _ in range(steps):
        opt.zero_grad()
        c = surrogate_cost_from_leaves(theta, leaves, lam, pred_l, pred_a, est_l, est_a, z)
        c.backward()
        opt.step()
        history.append(c.item())
    for site, leaf in zip(theta.sites, leaves):
        site.logits = leaf.data.copy()
    return history


@dataclass
class RunResult:
    out_dir: Path
    front: list[DesignPoint]
    budget_used: int
    iterations: int
    dataset: DesignDataset
    stalled: bool = False


def _record_to_json(rec: DesignRecord, lam: float) -> dict:
    return {
        "key": rec.key,
        "iteration": rec.iteration,
        "k": rec.lam_k,
        "lam": lam,
        "latency": rec.latency,
        "area": rec.area,
        "area_scalar": rec.area_scalar,
        "config": config_to_dict(rec.config),
        "theta": [float(x) for x in rec.theta_vec],
        "graph": graph_to_dict(rec.graph),
    }


def _record_from_json(d: dict) -> DesignRecord:
    return DesignRecord(
        key=d["key"],
        config=config_from_dict(d["config"]),
        graph=parse_graph_dict(d["graph"]),
        latency=int(d["latency"]),
        area={k: int(v) for k, v in d["area"].items()},
        area_scalar=float(d["area_scalar"]),
        theta_vec=np.array(d["theta"], dtype=np.float64),
        lam_k=int(d["k"]),
        iteration=int(d["iteration"]),
    )


def _mean_costs_per_k(draws: list[dict], dataset: DesignDataset, lam: tuple[float, ...]):
    """Per-k mean cost of one iteration's Theta_k draws (duplicates included,
    since they are genuine samples of the distribution), standardized over
    everything synthesized so far: the logged empirical E[c_k]."""
    if not dataset.records:
        return [None] * len(lam)
    std_l = Standardizer.fit([r.latency for r in dataset.records])
    std_a = Standardizer.fit([r.area_scalar for r in dataset.records])
    out = []
    for k in range(len(lam)):
        vals = [
            cost(std_l.transform(d["latency"]), std_a.transform(d["area_scalar"]), lam[k])
            for d in draws
            if d["k"] == k and "latency" in d
        ]
        out.append(float(np.mean(vals)) if vals else None)
    return out


def run_trend(out_dir, lam: float = 0.5) -> dict[int, float]:
    """Mean scalarized cost of each iteration's Theta draws, standardized
    over the run's unique designs, for checking that sampling got cheaper.

    Duplicate draws count: the trend estimates the expected cost under the
    evolving distributions, not the cost of the novel designs only.
    """
    out_dir = Path(out_dir)
    records = read_run_records(out_dir)
    if not records:
        return {}
    std_l = Standardizer.fit([r.latency for r in records])
    std_a = Standardizer.fit([r.area_scalar for r in records])
    per_it: dict[int, list[float]] = {}
    with open(out_dir / "run_log.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("type") == "draw" and "latency" in rec:
                per_it.setdefault(rec["iteration"], []).append(
                    cost(std_l.transform(rec["latency"]), std_a.transform(rec["area_scalar"]), lam)
                )
    return {it: float(np.mean(v)) for it, v in sorted(per_it.items())}


def _save_theta(path: Path, thetas: list[ThetaDistribution], iteration: int) -> None:
    arrays = {"iteration": np.array([iteration])}
    for k, theta in enumerate(thetas):
        for i, site in enumerate(theta.sites):
            arrays[f"k{k}_s{i}"] = site.logits
    np.savez(path, **arrays)


def _load_theta(path: Path, thetas: list[ThetaDistribution]) -> int:
    with np.load(path) as data:
        for k, theta in enumerate(thetas):
            for i, site in enumerate(theta.sites):
                site.logits = data[f"k{k}_s{i}"].copy()
        return int(data["iteration"][0])


def run(
    kernel,
    space: DesignSpace,
    backend,
    rc: RunConfig,
    out_dir: str | Path,
    mode: str = "guided",
    resume: bool = False,
) -> RunResult:
    """Execute one search run and persist it under out_dir.

    mode "guided" is the full loop; "random" keeps the initial distributions
    untouched (the budget-matched baseline).  A second concurrent run on the
    same directory is refused via a lock file.
    """
    if mode not in ("guided", "random"):
        raise RunConfigError(f"unknown mode {mode!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "run_log.jsonl"
    data_path = out / "dataset.jsonl"
    if log_path.exists() and not resume:
        raise RunConfigError(f"{out} already holds a run (pass resume=True to continue)")

    lock = FileLock(str(out / ".lock"))
    try:
        lock.acquire(timeout=5)
    except Timeout:
        raise RunConfigError(f"another process is running in {out}") from None
    try:
        return _run_locked(kernel, space, backend, rc, out, mode, resume, log_path, data_path)
    finally:
        lock.release()


def _run_locked(kernel, space, backend, rc, out, mode, resume, log_path, data_path):
    K = len(rc.lam)
    per_k = rc.n1 // K
    thetas = [init_theta_from_priors(space) for _ in range(K)]
    dataset = DesignDataset()
    budget_used = 0
    start_iter = 1

    if resume and data_path.exists():
        with open(data_path) as fh:
            for line in fh:
                dataset.add(_record_from_json(json.loads(line)))
        with open(log_path) as fh:
            for line in fh:
                rec = json.loads(line)
                if rec.get("type") == "synthesis":
                    budget_used += 1
                    start_iter = rec["iteration"]
        theta_path = out / "theta.npz"
        if mode == "guided" and theta_path.exists():
            start_iter = max(start_iter, _load_theta(theta_path, thetas) + 1)
    else:
        (out / "config.json").write_text(
            json.dumps(
                {
                    "kernel": getattr(kernel, "name", str(kernel)),
                    "backend": getattr(backend, "name", type(backend).__name__),
                    "mode": mode,
                    "run": rc.to_dict(),
                    "space": space.to_dict(),
                },
                indent=2,
            )
            + "\n"
        )

    log_fh = open(log_path, "a")
    data_fh = open(data_path, "a")

    def log(obj: dict) -> None:
        log_fh.write(json.dumps(obj) + "\n")
        log_fh.flush()

    it = start_iter - 1
    stall = 0
    stalled = False
    uniform_theta = init_theta_uniform(space)
    uniform_vec = flatten_theta(uniform_theta)
    try:
        while budget_used < rc.budget:
            it += 1
            new_count = 0
            draws: list[dict] = []

            def synth_new(cfg, key, k, theta_vec):
                """Synthesize a not-yet-seen config, spending one budget unit."""
                nonlocal budget_used, new_count
                outcome = backend.synthesize(cfg)
                budget_used += 1
                if isinstance(outcome, BackendFailure):
                    log(
                        {
                            "type": "synthesis",
                            "iteration": it,
                            "k": k,
                            "key": key,
                            "status": outcome.kind,
                        }
                    )
                    # failed keys stay blocked so the budget is never
                    # burned twice on one design
                    dataset._keys.add(key)
                    return None
                rec = DesignRecord(
                    key=key,
                    config=cfg,
                    graph=outcome.graph,
                    latency=outcome.latency,
                    area=dict(outcome.area),
                    area_scalar=scalarize_area(outcome.area),
                    theta_vec=theta_vec,
                    lam_k=k,
                    iteration=it,
                )
                dataset.add(rec)
                lam_val = rc.lam[k] if k >= 0 else -1.0
                data_fh.write(json.dumps(_record_to_json(rec, lam_val)) + "\n")
                data_fh.flush()
                log(
                    {
                        "type": "synthesis",
                        "iteration": it,
                        "k": k,
                        "key": key,
                        "status": "ok",
                        "latency": rec.latency,
                        "area_scalar": rec.area_scalar,
                    }
                )
                new_count += 1
                return rec

            # phase 1: every Theta_k draws its quota; repeat draws are served
            # from the result cache but still count as samples of Theta_k
            for k in range(K):
                rng = _rng(rc.seed, it, "sample", k)
                for _ in range(per_k):
                    cfg = sample_config(thetas[k], space, rng)
                    key = canonical_key(cfg, space)
                    ev = {"type": "draw", "iteration": it, "k": k, "key": key}
                    if key in dataset:
                        prev = dataset.get(key)
                        if prev is None:
                            ev["status"] = "dup_failed"
                        else:
                            ev.update(
                                status="dup", latency=prev.latency, area_scalar=prev.area_scalar
                            )
                    elif budget_used >= rc.budget:
                        ev["status"] = "skipped_budget"
                    else:
                        rec = synth_new(cfg, key, k, flatten_theta(thetas[k]))
                        if rec is None:
                            ev["status"] = "failed"
                        else:
                            ev.update(
                                status="new", latency=rec.latency, area_scalar=rec.area_scalar
                            )
                    log(ev)
                    draws.append(ev)

            # phase 2: uniform exploration tops the iteration up to n1 fresh
            # syntheses; concentrated distributions mostly redraw known
            # configs, and the budget contract spends n1 per iteration
            rng_e = _rng(rc.seed, it, "explore")
            attempts = 0
            while (
                new_count < rc.n1
                and budget_used < rc.budget
                and attempts < rc.n1 * _ATTEMPTS_PER_DESIGN
            ):
                attempts += 1
                cfg = sample_config(uniform_theta, space, rng_e)
                key = canonical_key(cfg, space)
                if key in dataset:
                    continue
                synth_new(cfg, key, -1, uniform_vec)

            log(
                {
                    "type": "iteration",
                    "iteration": it,
                    "new": new_count,
                    "budget_used": budget_used,
                    "mean_cost": _mean_costs_per_k(draws, dataset, rc.lam),
                }
            )

            if budget_used >= rc.budget:
                break
            if new_count == 0:
                stall += 1
                if stall >= rc.stall_limit:
                    stalled = True
                    log({"type": "stalled", "iteration": it, "budget_used": budget_used})
                    break
                continue
            stall = 0
            if mode == "random":
                continue

            _train_and_update(kernel, space, rc, thetas, dataset, it, out)
            _save_theta(out / "theta.npz", thetas, it)

        points = [
            DesignPoint(latency=float(r.latency), area=r.area_scalar, key=r.key)
            for r in dataset.records
        ]
        front = pareto_extract(points) if points else []
        (out / "front.json").write_text(
            json.dumps(
                [
                    {"key": p.key, "latency": p.latency, "area_scalar": p.area}
                    for p in front
                ],
                indent=2,
            )
            + "\n"
        )
        with open(out / "front.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["key", "latency", "area_scalar"])
            for p in front:
                w.writerow([p.key, f"{p.latency:.17g}", f"{p.area:.17g}"])
        log(
            {
                "type": "final",
                "iterations": it,
                "budget_used": budget_used,
                "designs": len(dataset),
                "front_size": len(front),
                "stalled": stalled,
            }
        )
    finally:
        log_fh.close()
        data_fh.close()

    return RunResult(
        out_dir=out,
        front=front,
        budget_used=budget_used,
        iterations=it,
        dataset=dataset,
        stalled=stalled,
    )


def _workers() -> int:
    """Trainer thread count, from HLSDSE_WORKERS (default 1 = sequential)."""
    try:
        return max(1, int(os.environ.get("HLSDSE_WORKERS", "1")))
    except ValueError:
        return 1


def _train_and_update(kernel, space, rc, thetas, dataset, it, out=None):
    records = dataset.records
    graphs = [r.graph for r in records]
    batch = build_batch(graphs)
    std_l = Standardizer.fit([r.latency for r in records])
    std_a = Standardizer.fit([r.area_scalar for r in records])
    targets_l = std_l.transform([r.latency for r in records])
    targets_a = std_a.transform([r.area_scalar for r in records])

    def fit_pred(targets, purpose):
        return train_predictor(
            graphs,
            targets,
            TrainConfig(epochs=rc.epochs, lr=rc.lr, seed=_seed_int(rc.seed, it, purpose)),
            True,
            batch,
        )

    if _workers() >= 2:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fl = pool.submit(fit_pred, targets_l, "pred_l")
            fa = pool.submit(fit_pred, targets_a, "pred_a")
            pred_l, pred_a = fl.result(), fa.result()
    else:
        pred_l = fit_pred(targets_l, "pred_l")
        pred_a = fit_pred(targets_a, "pred_a")

    feats_l = pred_l.model.extract_batch(batch)
    feats_a = pred_a.model.extract_batch(batch)
    theta_mat = np.stack([r.theta_vec for r in records])

    def fit_est(feats, purpose):
        return train_estimator(
            feats,
            theta_mat,
            None,
            EstimatorTrainConfig(epochs=rc.epochs, lr=rc.lr, seed=_seed_int(rc.seed, it, purpose)),
        )

    if _workers() >= 2:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fl = pool.submit(fit_est, feats_l, "est_l")
            fa = pool.submit(fit_est, feats_a, "est_a")
            est_l, est_a = fl.result(), fa.result()
    else:
        est_l = fit_est(feats_l, "est_l")
        est_a = fit_est(feats_a, "est_a")

    if out is not None:
        mdir = out / "models"
        mdir.mkdir(exist_ok=True)
        save_predictor(pred_l.model, mdir / "predictor_latency.npz")
        save_predictor(pred_a.model, mdir / "predictor_area.npz")
        save_estimator(est_l.model, mdir / "estimator_latency.npz")
        save_estimator(est_a.model, mdir / "estimator_area.npz")

    for k in range(len(rc.lam)):
        z = _rng(rc.seed, it, "z", k).standard_normal((rc.n2, rc.latent_dim))
        update_theta(
            thetas[k],
            rc.lam[k],
            pred_l.model,
            pred_a.model,
            est_l.model,
            est_a.model,
            z,
            rc.inner_steps,
            rc.theta_lr,
        )


def read_run_points(run_dir: str | Path) -> list[DesignPoint]:
    """Synthesized (latency, scalar area) points of a stored run."""
    path = Path(run_dir) / "dataset.jsonl"
    points = []
    with open(path) as fh:
        for line in fh:
            d = json.loads(line)
            points.append(
                DesignPoint(latency=float(d["latency"]), area=float(d["area_scalar"]), key=d["key"])
            )
    return points


def read_run_records(run_dir: str | Path) -> list[DesignRecord]:
    path = Path(run_dir) / "dataset.jsonl"
    out = []
    with open(path) as fh:
        for line in fh:
            out.append(_record_from_json(json.loads(line)))
    return out
