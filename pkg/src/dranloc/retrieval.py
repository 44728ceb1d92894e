"""Global descriptors: GeM pooling, whitening, multiscale aggregation, ranking."""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (BadMagic, EmptyDatabase, EmptyInput, NonFiniteInput, ParseError, TooFewSamples,
                     ZeroVector)

DEFAULT_DIM = 512
WHITEN_EPS = 1e-8
MULTISCALE = (1.0, 2 ** -0.5, 0.5)


@dataclass(frozen=True)
class GemParams:
    """Pooling exponent: a scalar or one value per channel, all >= 1."""

    p: object = 3.0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if not np.all(np.isfinite(p)) or np.any(p < 1.0):
            raise ValueError("GeM exponent must be finite and >= 1")

    def exponents(self, depth):
        p = np.asarray(self.p, dtype=float)
        if p.ndim == 0:
            return np.full(depth, float(p))
        if p.shape != (depth,):
            raise ValueError(f"expected {depth} exponents, got {p.shape}")
        return p


@dataclass(frozen=True, eq=False)
class GlobalDescriptor:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1).copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class WhiteningTransform:
    mean: np.ndarray
    matrix: np.ndarray

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.mean) @ self.matrix.T


def gem_pool(fmap, params=GemParams()):
    """Per-channel power mean of the (nonnegative) activations."""
    x = np.asarray(fmap.data if hasattr(fmap, "data") else fmap, dtype=np.float64)
    x = x.reshape(-1, x.shape[-1])
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("GeM input contains non-finite activations")
    # sorted per channel so the sum, and thus the result, ignores texel order
    x = np.sort(np.maximum(x, 0.0), axis=0)
    p = params.exponents(x.shape[1])
    # factor out the channel max so large p does not overflow
    peak = x.max(axis=0)
    safe = np.where(peak > 0, peak, 1.0)
    mean = np.mean((x / safe) ** p, axis=0)
    return np.where(peak > 0, safe * mean ** (1.0 / p), 0.0)


def finalize_descriptor(raw, whitening=None):
    v = np.asarray(raw, dtype=float).reshape(-1)
    if whitening is not None:
        v = whitening.apply(v)
    n = np.linalg.norm(v)
    if not n > 0:
        raise ZeroVector("cannot normalise a zero descriptor")
    return GlobalDescriptor(v / n)


def fit_whitening(descs, eps=WHITEN_EPS):
    """PCA whitening with population covariance; eigenvalues regularised by eps."""
    X = np.asarray([np.asarray(getattr(d, "values", d), dtype=float) for d in descs])
    if X.ndim != 2 or len(X) < 2:
        raise TooFewSamples("whitening needs at least 2 descriptors")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / len(X)
    lam, E = np.linalg.eigh(cov)
    lam = np.clip(lam, 0.0, None)
    order = np.argsort(lam)[::-1]
    lam, E = lam[order], E[:, order]
    matrix = (E / np.sqrt(lam + eps)).T
    return WhiteningTransform(mean, matrix)


def unit(v):
    n = np.linalg.norm(v)
    if not n > 0:
        raise ZeroVector("cannot normalise a zero descriptor")
    return v / n


def multiscale_descriptor(pool_inputs, params=GemParams(), whitening=None):
    """GeM + L2 per scale, mean of the unit vectors, then whiten and renormalise."""
    pool_inputs = list(pool_inputs)
    if not pool_inputs:
        raise EmptyInput("multiscale descriptor needs at least one scale")
    acc = np.mean([unit(gem_pool(f, params)) for f in pool_inputs], axis=0)
    return finalize_descriptor(acc, whitening)


def rank_keyframes(query, db):
    """[(id, similarity)] by descending dot product, ties by ascending id."""
    if not db:
        raise EmptyDatabase("descriptor database is empty")
    ids = np.array(sorted(db), dtype=np.int64)
    M = np.vstack([db[i].values for i in ids])
    sims = M @ query.values
    order = np.lexsort((ids, -sims))
    return [(int(ids[k]), float(sims[k])) for k in order]


def top_k(ranking, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    return list(ranking[:k])


# ---------------------------------------------------------------------------
# GDSC / GWHT files
# ---------------------------------------------------------------------------

DESC_MAGIC = b"GDSC"
DESC_VERSION = 1
WHITEN_MAGIC = b"GWHT"


def descriptor_to_bytes(desc):
    return DESC_MAGIC + struct.pack("<II", DESC_VERSION, len(desc)) + desc.values.astype("<f4").tobytes()


def descriptor_from_bytes(blob):
    if blob[:4] != DESC_MAGIC:
        raise BadMagic("not a descriptor file")
    if len(blob) < 12:
        raise ParseError("truncated descriptor file")
    version, k = struct.unpack("<II", blob[4:12])
    if version != DESC_VERSION:
        raise ParseError(f"unsupported descriptor version {version}")
    if len(blob) != 12 + 4 * k:
        raise ParseError("descriptor length does not match header")
    return GlobalDescriptor(np.frombuffer(blob[12:], dtype="<f4").astype(np.float64))


def whitening_to_bytes(w):
    k = len(w.mean)
    return (WHITEN_MAGIC + struct.pack("<I", k) + w.mean.astype("<f4").tobytes()
            + w.matrix.astype("<f4").tobytes())


def whitening_from_bytes(blob):
    if blob[:4] != WHITEN_MAGIC:
        raise BadMagic("not a whitening file")
    if len(blob) < 8:
        raise ParseError("truncated whitening file")
    (k,) = struct.unpack("<I", blob[4:8])
    if len(blob) != 8 + 4 * (k + k * k):
        raise ParseError("whitening length does not match header")
    mean = np.frombuffer(blob[8:8 + 4 * k], dtype="<f4").astype(np.float64)
    matrix = np.frombuffer(blob[8 + 4 * k:], dtype="<f4").astype(np.float64).reshape(k, k)
    return WhiteningTransform(mean, matrix)


def save_descriptor(desc, path):
    with open(path, "wb") as fh:
        fh.write(descriptor_to_bytes(desc))


def load_descriptor(path):
    with open(path, "rb") as fh:
        return descriptor_from_bytes(fh.read())


def save_whitening(w, path):
    with open(path, "wb") as fh:
        fh.write(whitening_to_bytes(w))


def load_whitening(path):
    with open(path, "rb") as fh:
        return whitening_from_bytes(fh.read())
