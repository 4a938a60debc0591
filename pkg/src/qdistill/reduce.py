"""Dimensionality reduction from images to encoder-sized feature vectors.

Five strategies: a trainable two-layer FC reducer and four frozen ones
(center crop, PCA, max pooling, average pooling). Frozen reducers work on a
single-channel ``H x W`` image; colour inputs are averaged over channels
first.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, StateError

log = logging.getLogger(__name__)

FC, CROP, PCA, MAXPOOL, AVGPOOL = "fc", "crop", "pca", "maxpool", "avgpool"
REDUCER_KINDS = (FC, CROP, PCA, MAXPOOL, AVGPOOL)


@dataclass(frozen=True)
class PCABasis:
    mean: np.ndarray          # (D,)
    components: np.ndarray    # (D, k), orthonormal columns unless zero-padded
    eigenvalues: np.ndarray   # all covariance eigenvalues, descending
    padded: int = 0

    @property
    def target_dim(self) -> int:
        return self.components.shape[1]


@dataclass(frozen=True)
class ReducerKind:
    kind: str
    target_dim: int
    hidden_dim: int = 32
    fitted_basis: PCABasis | None = None

    def __post_init__(self):
        if self.kind not in REDUCER_KINDS:
            raise ConfigError(f"unknown reducer {self.kind!r}; expected one of {REDUCER_KINDS}")
        if self.target_dim < 1:
            raise ConfigError("target_dim must be >= 1")
        if self.kind in (CROP, MAXPOOL, AVGPOOL) and math.isqrt(self.target_dim) ** 2 != self.target_dim:
            raise ConfigError(f"{self.kind} needs a square target_dim, got {self.target_dim}")

    @property
    def trainable(self) -> bool:
        return self.kind == FC


def to_grayscale(images: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, H, W) by channel averaging; (N, H, W) passes through."""
    images = np.asarray(images, dtype=float)
    if images.ndim == 4:
        return images.mean(axis=1)
    if images.ndim == 3:
        return images
    raise ShapeError(f"expected (N, C, H, W) or (N, H, W), got {images.shape}")


# ---------------------------------------------------------------------------
# Fully connected reducer
# ---------------------------------------------------------------------------

def init_fc_reducer(in_dim: int, hidden_dim: int, target_dim: int,
                    rng: np.random.Generator) -> dict[str, np.ndarray]:
    def glorot(fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=(fan_in, fan_out))

    return {
        "reducer.W1": glorot(in_dim, hidden_dim),
        "reducer.b1": np.zeros(hidden_dim),
        "reducer.W2": glorot(hidden_dim, target_dim),
        "reducer.b2": np.zeros(target_dim),
    }


def fc_forward(flat: np.ndarray, params: dict):
    """``W2 tanh(W1 x + b1) + b2`` on a ``(B, D)`` batch; returns ``(out, cache)``."""
    W1 = params["reducer.W1"]
    if flat.shape[1] != W1.shape[0]:
        raise ShapeError(f"FC reducer expects {W1.shape[0]} inputs, got {flat.shape[1]}")
    h = np.tanh(flat @ W1 + params["reducer.b1"])
    return h @ params["reducer.W2"] + params["reducer.b2"], (flat, h)


def fc_backward(params: dict, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
    flat, h = cache
    dh = (dout @ params["reducer.W2"].T) * (1.0 - h * h)
    return {
        "reducer.W1": flat.T @ dh,
        "reducer.b1": dh.sum(axis=0),
        "reducer.W2": h.T @ dout,
        "reducer.b2": dout.sum(axis=0),
    }


def reduce_fc(image, params: dict) -> np.ndarray:
    flat = np.asarray(image, dtype=float).reshape(1, -1)
    return fc_forward(flat, params)[0][0]


# ---------------------------------------------------------------------------
# Frozen reducers
# ---------------------------------------------------------------------------

def reduce_center_crop(image, side: int) -> np.ndarray:
    """Central ``side x side`` patch of the trailing two axes, row-major flattened."""
    img = np.asarray(image, dtype=float)
    h, w = img.shape[-2:]
    if side > min(h, w) or side < 1:
        raise ShapeError(f"crop side {side} does not fit a {h}x{w} image")
    top, left = (h - side) // 2, (w - side) // 2
    patch = img[..., top:top + side, left:left + side]
    return patch.reshape(*img.shape[:-2], side * side)


def _pad_to_multiple(img, n):
    h, w = img.shape[-2:]
    ph, pw = (-h) % n, (-w) % n
    pads = [(0, 0)] * (img.ndim - 2) + [(ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)]
    return np.pad(img, pads)


def reduce_pool(image, mode: str, out_side: int, pad: bool = False) -> np.ndarray:
    """Non-overlapping max/avg pooling down to an ``out_side x out_side`` grid.

    With ``pad`` the image is first zero-padded symmetrically to the next
    multiple of ``out_side`` (28x28 -> 32x32 for a 16x16 grid); otherwise a
    non-divisible size is rejected.
    """
    if mode not in ("max", "avg"):
        raise ConfigError(f"pool mode must be 'max' or 'avg', got {mode!r}")
    img = np.asarray(image, dtype=float)
    if pad:
        img = _pad_to_multiple(img, out_side)
    h, w = img.shape[-2:]
    if h % out_side or w % out_side:
        raise ShapeError(f"{h}x{w} image is not divisible into a {out_side}x{out_side} grid")
    kh, kw = h // out_side, w // out_side
    v = img.reshape(*img.shape[:-2], out_side, kh, out_side, kw)
    pooled = v.max(axis=(-3, -1)) if mode == "max" else v.mean(axis=(-3, -1))
    return pooled.reshape(*img.shape[:-2], out_side * out_side)


def pca_fit(train: np.ndarray, target_dim: int) -> PCABasis:
    """Top principal axes of ``train`` (N x D), via SVD of the centred data.

    Eigenvalues use the unbiased (N - 1) covariance. Each axis is signed so
    its largest-magnitude entry is positive.
    """
    x = np.asarray(train, dtype=float)
    x = x.reshape(x.shape[0], -1)
    n, d = x.shape
    if n <= target_dim:
        raise ConfigError(f"PCA needs more samples ({n}) than components ({target_dim})")
    if target_dim > d:
        raise ConfigError(f"cannot keep {target_dim} components of {d} features")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    eig = s**2 / (n - 1)
    comps = vt[:target_dim].T.copy()
    idx = np.argmax(np.abs(comps), axis=0)
    comps *= np.sign(comps[idx, np.arange(target_dim)])
    tol = max(eig[0], 1.0) * max(n, d) * np.finfo(float).eps
    rank = int(np.sum(eig > tol))
    padded = max(0, target_dim - rank)
    if padded:
        log.warning("covariance has rank %d < %d; padding basis with zero columns", rank, target_dim)
        comps[:, rank:] = 0.0
    full_eig = np.zeros(d)
    full_eig[:eig.size] = eig
    return PCABasis(mean, comps, full_eig, padded)


def pca_transform(image, basis: PCABasis | None) -> np.ndarray:
    if basis is None:
        raise StateError("PCA basis has not been fitted")
    x = np.asarray(image, dtype=float)
    flat = x.reshape(-1) if x.size == basis.mean.size else x.reshape(x.shape[0], -1)
    return (flat - basis.mean) @ basis.components


def pca_reconstruct(coords, basis: PCABasis) -> np.ndarray:
    return np.asarray(coords) @ basis.components.T + basis.mean


def save_pca(basis: PCABasis, cache_dir, key: str) -> str:
    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, f"pca-{key}-{basis.target_dim}.npz")
    np.savez(path, mean=basis.mean, components=basis.components,
             eigenvalues=basis.eigenvalues, padded=basis.padded)
    return path


def load_pca(cache_dir, key: str, target_dim: int) -> PCABasis | None:
    path = os.path.join(cache_dir, f"pca-{key}-{target_dim}.npz")
    if not os.path.exists(path):
        return None
    with np.load(path) as z:
        return PCABasis(z["mean"], z["components"], z["eigenvalues"], int(z["padded"]))


def apply_frozen(reducer: ReducerKind, images: np.ndarray) -> np.ndarray:
    """Run a parameter-free reducer over an image batch, giving ``(N, target_dim)``."""
    if reducer.kind == FC:
        raise ConfigError("the FC reducer is trainable; use fc_forward")
    if reducer.kind == PCA:
        if reducer.fitted_basis is None:
            raise StateError("PCA basis has not been fitted")
        flat = to_grayscale(images).reshape(len(images), -1)
        return pca_transform(flat, reducer.fitted_basis)
    gray = to_grayscale(images)
    side = math.isqrt(reducer.target_dim)
    if reducer.kind == CROP:
        return reduce_center_crop(gray, side)
    mode = "max" if reducer.kind == MAXPOOL else "avg"
    return reduce_pool(gray, mode, side, pad=True)
