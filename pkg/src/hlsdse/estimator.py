"""Conditional variational estimators of graph features.

Given the flattened sampling distribution that produced a design, the
model learns the distribution of the predictor's pooled graph feature f.
Encoder and decoder share one condition projector.  Training minimizes a
reconstruction term scaled by the variance constant c plus the closed-form
KL of the diagonal Gaussian posterior against the standard normal:

    sum_d (f_d - f'_d)^2 / (2c)  -  sum_i (1 + log v_i - v_i - m_i^2) / 2

averaged over the batch.  Features are standardized per dimension before
training; sample_feature returns vectors in that standardized space and
the model keeps the mean/std needed to undo it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

V_FLOOR = 1e-6  # keeps log v finite when softplus underflows


@dataclass(frozen=True)
class CvaeConfig:
    theta_dim: int
    feature_dim: int = 64
    latent_dim: int = 16
    cond_dim: int = 32
    hidden: int = 64
    c: float = 1.0

    def __post_init__(self):
        if min(self.theta_dim, self.feature_dim, self.latent_dim, self.cond_dim, self.hidden) < 1:
            raise ValueError("all estimator dimensions must be positive")
        if self.c <= 0:
            raise ValueError("reconstruction variance c must be positive")


@dataclass(frozen=True)
class EstimatorTrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    seed: int = 0


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class CvaeModel:
    def __init__(self, cfg: CvaeConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        h, zc, zd = cfg.hidden, cfg.cond_dim, cfg.latent_dim
        self.wp1 = ad.tensor(_glorot(rng, cfg.theta_dim, h))
        self.bp1 = ad.tensor(np.zeros((1, h)))
        self.wp2 = ad.tensor(_glorot(rng, h, zc))
        self.bp2 = ad.tensor(np.zeros((1, zc)))
        self.we1 = ad.tensor(_glorot(rng, cfg.feature_dim + zc, h))
        self.be1 = ad.tensor(np.zeros((1, h)))
        self.wm = ad.tensor(_glorot(rng, h, zd))
        self.bm = ad.tensor(np.zeros((1, zd)))
        self.wv = ad.tensor(_glorot(rng, h, zd))
        self.bv = ad.tensor(np.zeros((1, zd)))
        self.wd1 = ad.tensor(_glorot(rng, zd + zc, h))
        self.bd1 = ad.tensor(np.zeros((1, h)))
        self.wd2 = ad.tensor(_glorot(rng, h, cfg.feature_dim))
        self.bd2 = ad.tensor(np.zeros((1, cfg.feature_dim)))
        self.feature_mean = np.zeros(cfg.feature_dim)
        self.feature_std = np.ones(cfg.feature_dim)

    def params(self) -> list[ad.Tensor]:
        return [
            self.wp1, self.bp1, self.wp2, self.bp2,
            self.we1, self.be1, self.wm, self.bm, self.wv, self.bv,
            self.wd1, self.bd1, self.wd2, self.bd2,
        ]

    def project(self, theta: ad.Tensor) -> ad.Tensor:
        """Shared condition projector, (B, theta_dim) -> (B, cond_dim)."""
        z = ad.elu(ad.add(ad.matmul(theta, self.wp1), self.bp1))
        return ad.add(ad.matmul(z, self.wp2), self.bp2)

    def encode(self, feats: ad.Tensor, cond: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        """Posterior mean and variance, both (B, latent_dim); v > 0."""
        z = ad.elu(ad.add(ad.matmul(ad.concat([feats, cond], axis=1), self.we1), self.be1))
        m = ad.add(ad.matmul(z, self.wm), self.bm)
        v = ad.add(ad.softplus(ad.add(ad.matmul(z, self.wv), self.bv)), ad.Tensor(V_FLOOR))
        return m, v

    def decode(self, z: ad.Tensor, cond: ad.Tensor) -> ad.Tensor:
        h = ad.elu(ad.add(ad.matmul(ad.concat([z, cond], axis=1), self.wd1), self.bd1))
        return ad.add(ad.matmul(h, self.wd2), self.bd2)


def reparameterize(m: ad.Tensor, v: ad.Tensor, noise: np.ndarray) -> ad.Tensor:
    """z = m + sqrt(v) * eps with externally drawn standard-normal eps."""
    if np.any(v.data <= 0):
        raise ValueError("variance must be positive")
    return ad.add(m, ad.mul(ad.sqrt(v), ad.Tensor(noise)))


def kl_standard_normal(m: ad.Tensor, v: ad.Tensor) -> ad.Tensor:
    """Per-sample KL(N(m, v) || N(0, I)) summed over latent dims, (B, 1)."""
    one = ad.Tensor(1.0)
    inner = ad.sub(ad.add(one, ad.log(v)), ad.add(v, ad.square(m)))
    return ad.mul(ad.Tensor(-0.5), ad.sum_rows(inner))


def vae_loss(
    feats: ad.Tensor, recon: ad.Tensor, m: ad.Tensor, v: ad.Tensor, c: float
) -> ad.Tensor:
    """Batch-averaged reconstruction plus KL."""
    rec = ad.mul(ad.Tensor(1.0 / (2.0 * c)), ad.sum_rows(ad.square(ad.sub(feats, recon))))
    return ad.mean_all(ad.add(rec, kl_standard_normal(m, v)))


@dataclass
class TrainedEstimator:
    model: CvaeModel
    losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def train_estimator(
    features: np.ndarray,
    thetas: np.ndarray,
    model_cfg: CvaeConfig | None = None,
    cfg: EstimatorTrainConfig = EstimatorTrainConfig(),
) -> TrainedEstimator:
    """Fit a fresh conditional VAE on (feature, theta) pairs.

    Features arrive raw and are standardized per dimension here; fresh
    reparameterization noise is drawn each epoch from the seeded rng.
    """
    features = np.asarray(features, dtype=np.float64)
    thetas = np.asarray(thetas, dtype=np.float64)
    if features.ndim != 2 or thetas.ndim != 2 or features.shape[0] != thetas.shape[0]:
        raise ValueError("features and thetas must be matching 2-D batches")
    if model_cfg is None:
        model_cfg = CvaeConfig(theta_dim=thetas.shape[1], feature_dim=features.shape[1])
    model = CvaeModel(model_cfg, seed=cfg.seed)
    model.feature_mean = features.mean(axis=0)
    std = features.std(axis=0)
    model.feature_std = np.where(std > 1e-9, std, 1.0)
    feats_std = (features - model.feature_mean) / model.feature_std

    rng = np.random.default_rng(cfg.seed + 1)
    opt = ad.Adam(model.params(), lr=cfg.lr)
    feats_t = ad.Tensor(feats_std)
    theta_t = ad.Tensor(thetas)
    losses = []
    n, zd = features.shape[0], model_cfg.latent_dim
    for _ in range(cfg.epochs):
        opt.zero_grad()
        cond = model.project(theta_t)
        m, v = model.encode(feats_t, cond)
        z = reparameterize(m, v, rng.standard_normal((n, zd)))
        recon = model.decode(z, cond)
        loss = vae_loss(feats_t, recon, m, v, model_cfg.c)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return TrainedEstimator(model=model, losses=losses)


def sample_feature(model: CvaeModel, theta_vec: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Decode latent draws under one condition; returns standardized-space
    feature vectors, shape (k, feature_dim)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    theta_t = ad.Tensor(np.atleast_2d(theta_vec))
    cond = model.project(theta_t)
    cond_b = ad.broadcast_rows(cond, z.shape[0])
    return model.decode(ad.Tensor(z), cond_b).data.copy()


CHECKPOINT_VERSION = 1

_PARAM_NAMES = (
    "wp1", "bp1", "wp2", "bp2",
    "we1", "be1", "wm", "bm", "wv", "bv",
    "wd1", "bd1", "wd2", "bd2",
)


def save_checkpoint(model: CvaeModel, path) -> None:
    """Persist parameters, feature scaling, and the variance constant c."""
    arrays = {
        "meta_kind": np.array("estimator"),
        "meta_version": np.array([CHECKPOINT_VERSION]),
        "meta_c": np.array([model.cfg.c]),
        "feature_mean": model.feature_mean,
        "feature_std": model.feature_std,
    }
    for name in _PARAM_NAMES:
        arrays[name] = getattr(model, name).data
    np.savez(path, **arrays)


def load_checkpoint(path) -> CvaeModel:
    with np.load(path) as data:
        if str(data["meta_kind"]) != "estimator":
            raise ValueError(f"not an estimator checkpoint: {path}")
        if int(data["meta_version"][0]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version in {path}")
        cfg = CvaeConfig(
            theta_dim=data["wp1"].shape[0],
            feature_dim=data["wd2"].shape[1],
            latent_dim=data["wm"].shape[1],
            cond_dim=data["wp2"].shape[1],
            hidden=data["wp1"].shape[1],
            c=float(data["meta_c"][0]),
        )
        model = CvaeModel(cfg)
        for name in _PARAM_NAMES:
            getattr(model, name).data = data[name].copy()
        model.feature_mean = data["feature_mean"].copy()
        model.feature_std = data["feature_std"].copy()
    return model
