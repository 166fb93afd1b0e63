"""Image-corpus ingestion: IDX/CSV loading, per-class whitening, additive noise."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import gzip
import math
from pathlib import Path
import struct
import warnings

import numpy as np

from .errors import DomainError, IDXFormatError
from .sim import Dataset, make_rng

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
RANK_WARN_FRACTION = 0.10


class RankDeficiencyWarning(RuntimeWarning):
    pass


@dataclass
class RawCorpus:
    images: np.ndarray  # N x p, entries in [0, 1]
    labels: np.ndarray
    class_filter: tuple = ()

    def __post_init__(self):
        if self.images.ndim != 2 or len(self.labels) != self.images.shape[0]:
            raise DomainError("images must be N x p with one label per row")

    @property
    def empty(self) -> bool:
        return self.images.shape[0] == 0


@dataclass
class WhitenedCorpus:
    vectors: np.ndarray  # N x p
    labels: np.ndarray
    classes: tuple  # (class 1 label, class 2 label)
    mu_hat: np.ndarray
    class_stats: dict = field(default_factory=dict)
    noise_db: float = math.inf
    noise_var: float = 0.0  # before rescaling; 0 when no noise was added

    @property
    def p(self) -> int:
        return self.vectors.shape[1]


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4 + 4 * ndim:
        raise IDXFormatError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IDXFormatError(f"{path}: magic {found:#010x}, expected {magic:#010x}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    body = raw[4 + 4 * ndim:]
    if len(body) != math.prod(dims):
        raise IDXFormatError(f"{path}: header promises {math.prod(dims)} bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (N x rows x cols) and labels in IDX layout."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", LABEL_MAGIC, labels.size))
        fh.write(labels.tobytes())


def _filter(images, labels, classes) -> RawCorpus:
    if classes:
        keep = np.isin(labels, classes)
        images, labels = images[keep], labels[keep]
        if not keep.any():
            warnings.warn(f"no records carry labels {tuple(classes)}; corpus is empty", RuntimeWarning)
    return RawCorpus(images=images, labels=labels, class_filter=tuple(classes or ()))


def load_idx(images_path, labels_path, classes=None) -> RawCorpus:
    """Read an IDX image/label pair (optionally gzipped), scaling bytes by 1/255."""
    imgs = _read_idx(images_path, IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, LABEL_MAGIC, 1)
    if imgs.shape[0] != labels.shape[0]:
        raise IDXFormatError(f"{imgs.shape[0]} images but {labels.shape[0]} labels")
    images = imgs.reshape(imgs.shape[0], -1).astype(float) / 255.0
    return _filter(images, labels.astype(int), classes)


def load_csv(path, classes=None, scale: float = 255.0) -> RawCorpus:
    """One record per row, label first; pixel values divided by `scale`."""
    table = np.loadtxt(path, delimiter=",", ndmin=2)
    return _filter(table[:, 1:] / scale, table[:, 0].astype(int), classes)


def _split(corpus, classes):
    classes = tuple(classes or corpus.class_filter or np.unique(corpus.labels))
    if len(classes) != 2:
        raise DomainError(f"need exactly two classes, got {classes}")
    groups = [corpus.images[corpus.labels == k] for k in classes] if isinstance(corpus, RawCorpus) \
        else [corpus.vectors[corpus.labels == k] for k in classes]
    for k, g in zip(classes, groups):
        if g.shape[0] < 2:
            raise DomainError(f"class {k} has {g.shape[0]} samples; at least 2 are needed")
    return classes, groups


def _inv_sqrt(cov: np.ndarray, eig_floor: float, label):
    vals, vecs = np.linalg.eigh(cov)
    floor = eig_floor * max(vals.max(), 0.0)
    floored = vals < floor
    if floored.mean() > RANK_WARN_FRACTION:
        warnings.warn(
            f"class {label}: {floored.sum()} of {vals.size} covariance eigenvalues floored",
            RankDeficiencyWarning,
        )
    vals = np.where(floored, floor, vals)
    if np.any(vals <= 0):
        raise DomainError(f"class {label}: covariance is singular; use a positive eig_floor")
    return (vecs / np.sqrt(vals)) @ vecs.T, int(floored.sum())


def whiten_and_center(corpus: RawCorpus, eig_floor: float = 1e-6, classes=None,
                      mu_before_whitening: bool = False) -> WhitenedCorpus:
    """Whiten each class with its own covariance and recenter the means to -mu_hat / +mu_hat."""
    if eig_floor < 0:
        raise DomainError("eig_floor must be >= 0")
    classes, groups = _split(corpus, classes)
    stats, centered, means_w = {}, [], []
    for k, g in zip(classes, groups):
        mean = g.mean(axis=0)
        cov = np.cov(g, rowvar=False)
        W, n_floored = _inv_sqrt(np.atleast_2d(cov), eig_floor, k)
        z = (g - mean) @ W  # W is symmetric
        dev = np.linalg.norm(np.cov(z, rowvar=False) - np.eye(z.shape[1]), 2)
        stats[k] = {"mean": mean, "cov": cov, "n": g.shape[0], "floored": n_floored, "whitening_deviation": float(dev)}
        centered.append(z)
        means_w.append(mean @ W)
    if mu_before_whitening:
        mu_hat = 0.5 * (stats[classes[1]]["mean"] - stats[classes[0]]["mean"])
    else:
        mu_hat = 0.5 * (means_w[1] - means_w[0])
    vectors = np.vstack([centered[0] - mu_hat, centered[1] + mu_hat])
    labels = np.concatenate([np.full(len(groups[0]), classes[0]), np.full(len(groups[1]), classes[1])])
    return WhitenedCorpus(vectors=vectors, labels=labels, classes=classes, mu_hat=mu_hat, class_stats=stats)


def add_noise(corpus: WhitenedCorpus, snr_db: float, seed) -> WhitenedCorpus:
    """Add white Gaussian noise at `snr_db`, then rescale so the noise has unit variance.

    snr_db = +inf leaves the corpus untouched.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return corpus
    signal_power = float(np.mean(corpus.vectors ** 2))
    var = signal_power * 10.0 ** (-snr_db / 10.0)
    if not var > 0:
        raise DomainError("noise variance is zero; corpus has no signal power")
    noise = make_rng(seed, 2).standard_normal(corpus.vectors.shape) * math.sqrt(var)
    scale = 1.0 / math.sqrt(var)
    return replace(
        corpus,
        vectors=(corpus.vectors + noise) * scale,
        mu_hat=corpus.mu_hat * scale,
        noise_db=float(snr_db),
        noise_var=var,
    )


def draw_dataset(corpus: WhitenedCorpus, n1: int, n2: int, seed):
    """Sample n1 + n2 training columns without replacement.

    Returns (Dataset, X_test, y_test); the unused records form the test set.
    """
    rng = make_rng(seed, 0)
    (k1, k2), groups = _split(corpus, corpus.classes)
    picks, rest = [], []
    for g_idx, n in ((np.flatnonzero(corpus.labels == k1), n1), (np.flatnonzero(corpus.labels == k2), n2)):
        if n > g_idx.size:
            raise DomainError(f"asked for {n} samples from a class of {g_idx.size}")
        perm = rng.permutation(g_idx)
        picks.append(perm[:n])
        rest.append(perm[n:])
    X = corpus.vectors[np.concatenate(picks)].T
    y = np.concatenate([-np.ones(n1), np.ones(n2)])
    test = np.concatenate(rest)
    y_test = np.where(corpus.labels[test] == k1, -1.0, 1.0)
    data = Dataset(X=np.ascontiguousarray(X), y=y, mu=corpus.mu_hat, n1=n1, n2=n2, seed=seed)
    return data, corpus.vectors[test].T, y_test


def synthetic_corpus(p: int, n_per_class: int, mu_norm_sq: float, seed, classes=(1, 7),
                     mixing: np.ndarray | None = None) -> RawCorpus:
    """Two Gaussian classes at -mu, +mu with covariance A A^T (identity by default).

    A stand-in for image data when the real files are unavailable.
    """
    rng = make_rng(seed, 3)
    mu = np.zeros(p)
    mu[0] = math.sqrt(mu_norm_sq)
    A = np.eye(p) if mixing is None else np.asarray(mixing, dtype=float)
    z = rng.standard_normal((2 * n_per_class, p)) @ A.T
    z[:n_per_class] -= mu @ A.T
    z[n_per_class:] += mu @ A.T
    labels = np.repeat(np.asarray(classes), n_per_class)
    return RawCorpus(images=z, labels=labels, class_filter=tuple(classes))
