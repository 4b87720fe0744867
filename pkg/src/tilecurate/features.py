"""Embedding reduction: global average pooling, PCA, and 2-D projection.

PCA uses an exact solver (SVD of the mean-centered data) with a fixed sign
convention so results are reproducible: each component is flipped, if
needed, so its largest-magnitude coordinate is positive. Explained variances
are the sample (ddof=1) covariance eigenvalues in descending order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imgqual import ContractError

STAGES = ("latent", "pooled", "reduced", "projected")
STAGE_CODES = {name: i for i, name in enumerate(STAGES)}


class FitError(ValueError):
    """Model fitting was requested with insufficient or inconsistent data."""


@dataclass
class EmbeddingMatrix:
    """Row-major per-tile feature vectors with a pipeline stage tag."""

    data: np.ndarray
    stage: str
    tile_ids: list[str] | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ContractError(f"embedding matrix must be 2-D, got shape {self.data.shape}")
        if self.stage not in STAGES:
            raise ContractError(f"unknown stage {self.stage!r}, expected one of {STAGES}")
        if not np.isfinite(self.data).all():
            raise ContractError(f"{self.stage} embeddings contain non-finite values")
        if self.stage == "projected" and self.data.shape[1] != 2:
            raise ContractError("projected stage must be 2-D")
        if self.tile_ids is not None and len(self.tile_ids) != self.data.shape[0]:
            raise ContractError(
                f"{len(self.tile_ids)} tile ids for {self.data.shape[0]} rows"
            )

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def gap_rows(latent: np.ndarray, channels: int = 512) -> np.ndarray:
    """Per-channel spatial mean of channel-major latent rows.

    Each row is laid out as channels x spatial (C-order flatten of the
    encoder's CxHxW feature map).
    """
    latent = np.asarray(latent)
    if latent.ndim != 2 or latent.shape[1] % channels != 0:
        raise ContractError(
            f"latent dim {latent.shape[-1]} not divisible into {channels} channels"
        )
    spatial = latent.shape[1] // channels
    return latent.reshape(latent.shape[0], channels, spatial).mean(axis=2)


def global_average_pool(latent: EmbeddingMatrix, channels: int = 512) -> EmbeddingMatrix:
    if latent.stage != "latent":
        raise ContractError(f"expected latent stage, got {latent.stage}")
    pooled = gap_rows(latent.data.astype(np.float64), channels).astype(np.float32)
    return EmbeddingMatrix(pooled, "pooled", latent.tile_ids)


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray          # (out_dim, in_dim), row-orthonormal
    explained_variance: np.ndarray  # descending, ddof=1
    n_samples: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.components = np.asarray(self.components, dtype=np.float64)
        self.explained_variance = np.asarray(self.explained_variance, dtype=np.float64)
        gram = self.components @ self.components.T
        if not np.allclose(gram, np.eye(len(self.components)), atol=1e-6):
            raise ContractError("PCA components are not row-orthonormal")
        ev = self.explained_variance
        if (ev < -1e-9).any() or (np.diff(ev) > 1e-9).any():
            raise ContractError("explained variances must be nonnegative and nonincreasing")

    @property
    def out_dim(self) -> int:
        return self.components.shape[0]

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.shape[0]:
            raise ContractError(
                f"input dim {x.shape[-1]} does not match model dim {self.mean.shape[0]}"
            )
        return (x - self.mean) @ self.components.T


def _apply_sign_rule(components: np.ndarray) -> np.ndarray:
    flip = np.sign(components[np.arange(len(components)), np.abs(components).argmax(axis=1)])
    flip[flip == 0] = 1.0
    return components * flip[:, None]


def fit_pca(x: np.ndarray, out_dim: int) -> PcaModel:
    """Exact PCA of the rows of x, keeping out_dim leading components."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if out_dim > d:
        raise FitError(f"out_dim {out_dim} exceeds input dim {d}")
    if n < out_dim:
        raise FitError(
            f"{n} rows cannot support out_dim {out_dim}; refit with out_dim <= {n}"
        )
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    variances = (s**2) / max(n - 1, 1)
    if vt.shape[0] < out_dim:
        # fewer singular vectors than requested (n < d); complete the basis
        extra = out_dim - vt.shape[0]
        q, _ = np.linalg.qr(np.eye(d) - vt.T @ vt)
        vt = np.vstack([vt, q.T[:extra]])
        variances = np.concatenate([variances, np.zeros(extra)])
    components = _apply_sign_rule(vt[:out_dim])
    return PcaModel(mean, components, variances[:out_dim], n)


def pca_fit(pooled: EmbeddingMatrix, out_dim: int = 256) -> PcaModel:
    if pooled.stage not in ("pooled", "reduced"):
        raise ContractError(f"expected pooled embeddings, got stage {pooled.stage}")
    return fit_pca(pooled.data, out_dim)


def pca_transform(model: PcaModel, pooled: EmbeddingMatrix) -> EmbeddingMatrix:
    reduced = model.transform(pooled.data).astype(np.float32)
    return EmbeddingMatrix(reduced, "reduced", pooled.tile_ids)


def project_2d(reduced: EmbeddingMatrix) -> EmbeddingMatrix:
    """First two PCA coordinates of the reduced matrix (scatter-view feed)."""
    if reduced.rows < 2:
        raise ContractError(f"need at least 2 rows to project, got {reduced.rows}")
    model = fit_pca(reduced.data, 2)
    points = model.transform(reduced.data).astype(np.float32)
    return EmbeddingMatrix(points, "projected", reduced.tile_ids)
