"""Dense feature maps, sub-pixel sampling, upsampling and hypercolumns.

Coordinate convention: texel ``(x, y)`` of a map with stride ``s`` sits at
full-resolution pixel ``(x*s, y*s)``, so a pixel ``p`` has grid coordinate
``g = p / s``. Samples are valid for ``g`` in ``[-0.5, W-0.5] x [-0.5, H-0.5]``
and borders are clamped.
"""

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (BadMagic, BadStride, ChecksumError, EmptyInput, ExtentMismatch, LevelMissing, OutOfBounds,
                     ParseError)

CANONICAL_STRIDES = (1, 4, 16)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    data: np.ndarray   # [H, W, D] float32
    stride: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"feature data must be [H, W, D] with positive sizes, got {data.shape}")
        if int(self.stride) < 1:
            raise ValueError("stride must be >= 1")
        data = np.ascontiguousarray(data, dtype=np.float32)
        if not np.all(np.isfinite(data)):
            raise ValueError("feature map contains non-finite values")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "stride", int(self.stride))

    height = property(lambda self: self.data.shape[0])
    width = property(lambda self: self.data.shape[1])
    depth = property(lambda self: self.data.shape[2])

    @property
    def extent(self):
        """Full-resolution (width, height) covered by the grid."""
        return self.width * self.stride, self.height * self.stride


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    data: np.ndarray   # [H, W] float32, >= 0
    stride: int

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise ValueError("uncertainty must be [H, W]")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise ValueError("uncertainty must be finite and nonnegative")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def zeros_like(cls, fmap):
        return cls(np.zeros((fmap.height, fmap.width), dtype=np.float32), fmap.stride)

    def as_feature_map(self):
        return FeatureMap(self.data[:, :, None], self.stride)


class FeaturePyramid:
    """Levels ``(FeatureMap, UncertaintyMap)`` with strictly increasing strides."""

    def __init__(self, levels, has_uncertainty=None):
        levels = list(levels)
        if not levels:
            raise EmptyInput("pyramid needs at least one level")
        fixed = []
        for fmap, umap in levels:
            if umap is None:
                umap = UncertaintyMap.zeros_like(fmap)
            if umap.data.shape != (fmap.height, fmap.width) or umap.stride != fmap.stride:
                raise ValueError("uncertainty map does not match its feature map")
            fixed.append((fmap, umap))
        strides = [f.stride for f, _ in fixed]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError(f"pyramid strides must be strictly increasing, got {strides}")
        base_w, base_h = fixed[0][0].extent
        for fmap, _ in fixed[1:]:
            w, h = fmap.extent
            if abs(w - base_w) > fmap.stride or abs(h - base_h) > fmap.stride:
                raise ExtentMismatch(f"level stride {fmap.stride} covers {w}x{h}, base covers {base_w}x{base_h}")
        self.levels = fixed
        self.has_uncertainty = (list(has_uncertainty) if has_uncertainty is not None
                                else [u is not None for _, u in levels])

    @property
    def strides(self):
        return [f.stride for f, _ in self.levels]

    def level(self, stride):
        for fmap, umap in self.levels:
            if fmap.stride == stride:
                return fmap, umap
        raise LevelMissing(f"no level with stride {stride} (have {self.strides})")

    def __len__(self):
        return len(self.levels)


@dataclass(frozen=True, eq=False)
class Hypercolumn:
    fmap: FeatureMap
    blocks: tuple   # channel count of each concatenated block

    @property
    def num_blocks(self):
        return len(self.blocks)

    def block_slices(self):
        out, start = [], 0
        for b in self.blocks:
            out.append(slice(start, start + b))
            start += b
        return out


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _grid(fmap, pixels):
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    return pixels[:, 0] / fmap.stride, pixels[:, 1] / fmap.stride


def in_bounds(fmap, pixels):
    """Mask of pixels whose grid coordinate lies in the sampleable region."""
    gx, gy = _grid(fmap, pixels)
    return ((gx >= -0.5) & (gx <= fmap.width - 0.5) & (gy >= -0.5) & (gy <= fmap.height - 0.5))


def _check(fmap, pixels):
    ok = in_bounds(fmap, pixels)
    if not ok.all():
        bad = np.asarray(pixels, dtype=float).reshape(-1, 2)[int(np.argmin(ok))]
        raise OutOfBounds(f"pixel {bad} outside {fmap.width}x{fmap.height} grid at stride {fmap.stride}")


def sample_many(fmap, pixels):
    """Bilinear samples at many full-res pixels, (N, D) float64."""
    _check(fmap, pixels)
    gx, gy = _grid(fmap, pixels)
    return _kernels.bilinear_values(fmap.data, gx, gy)


def sample_many_with_gradient(fmap, pixels):
    """Samples (N, D) and their gradients w.r.t. the full-res pixel, (N, D, 2)."""
    _check(fmap, pixels)
    gx, gy = _grid(fmap, pixels)
    vals, grads = _kernels.bilinear_values_grads(fmap.data, gx, gy)
    return vals, grads / fmap.stride


def bilinear_sample(fmap, p):
    return sample_many(fmap, p)[0]


def bilinear_sample_gradient(fmap, p):
    """D x 2 matrix of d(sample)/d(pixel)."""
    return sample_many_with_gradient(fmap, p)[1][0]


# ---------------------------------------------------------------------------
# resampling and hypercolumns
# ---------------------------------------------------------------------------

def _resample(fmap, stride, width, height):
    xs = np.arange(width) * (stride / fmap.stride)
    ys = np.arange(height) * (stride / fmap.stride)
    gx, gy = np.meshgrid(xs, ys)
    vals = _kernels.bilinear_values(fmap.data, gx.ravel(), gy.ravel())
    return vals.reshape(height, width, fmap.depth)


def upsample_bilinear(fmap, target_stride):
    target_stride = int(target_stride)
    if target_stride < 1 or fmap.stride % target_stride:
        raise BadStride(f"target stride {target_stride} does not divide {fmap.stride}")
    factor = fmap.stride // target_stride
    if factor == 1:
        return fmap
    return FeatureMap(_resample(fmap, target_stride, fmap.width * factor, fmap.height * factor), target_stride)


def l2_normalize_texels(data, eps=0.0):
    norms = np.linalg.norm(data, axis=-1, keepdims=True)
    return np.where(norms > eps, data / np.where(norms > eps, norms, 1.0), 0.0)


def build_hypercolumn(maps):
    """Upsample to the finest stride, L2-normalise each map per texel, concatenate."""
    maps = list(maps)
    if not maps:
        raise EmptyInput("hypercolumn needs at least one feature map")
    target = min(maps, key=lambda m: m.stride)
    s, W, H = target.stride, target.width, target.height
    blocks = []
    for m in maps:
        if m.stride % s:
            raise BadStride(f"stride {m.stride} is not a multiple of {s}")
        w, h = m.extent
        if abs(w - W * s) > m.stride or abs(h - H * s) > m.stride:
            raise ExtentMismatch(f"map with stride {m.stride} covers {w}x{h}, expected {W * s}x{H * s}")
        if m.stride == s:
            if (m.width, m.height) != (W, H):
                raise ExtentMismatch("maps at the finest stride must share a grid size")
            data = m.data.astype(np.float64)
        else:
            data = _resample(m, s, W, H)
        blocks.append(l2_normalize_texels(data))
    data = np.concatenate(blocks, axis=-1)
    return Hypercolumn(FeatureMap(data, s), tuple(m.depth for m in maps))


# ---------------------------------------------------------------------------
# FPYR binary format
# ---------------------------------------------------------------------------

PYR_MAGIC = b"FPYR"
PYR_VERSION = 1


def pyramid_to_bytes(pyr):
    parts = [struct.pack("<II", PYR_VERSION, len(pyr.levels))]
    for (fmap, umap), has_u in zip(pyr.levels, pyr.has_uncertainty):
        parts.append(struct.pack("<IIIIB", fmap.width, fmap.height, fmap.depth, fmap.stride, int(has_u)))
        parts.append(fmap.data.astype("<f4").tobytes())
        if has_u:
            parts.append(umap.data.astype("<f4").tobytes())
    payload = b"".join(parts)
    return PYR_MAGIC + payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def pyramid_from_bytes(blob):
    if len(blob) < 4 or blob[:4] != PYR_MAGIC:
        raise BadMagic("not a feature pyramid file (bad magic)")
    if len(blob) < 4 + 8 + 4:
        raise ParseError("truncated pyramid file")
    payload, crc = blob[4:-4], struct.unpack("<I", blob[-4:])[0]
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(payload):
            raise ParseError(f"truncated pyramid file at byte {4 + pos}")
        chunk = payload[pos:pos + n]
        pos += n
        return chunk

    version, count = struct.unpack("<II", take(8))
    if version != PYR_VERSION:
        raise ParseError(f"unsupported pyramid version {version}")
    levels, flags = [], []
    for _ in range(count):
        w, h, d, stride, has_u = struct.unpack("<IIIIB", take(17))
        feats = np.frombuffer(take(4 * w * h * d), dtype="<f4").reshape(h, w, d)
        umap = None
        if has_u:
            umap = UncertaintyMap(np.frombuffer(take(4 * w * h), dtype="<f4").reshape(h, w), stride)
        levels.append((FeatureMap(feats, stride), umap))
        flags.append(bool(has_u))
    if pos != len(payload):
        raise ParseError("trailing bytes in pyramid file")
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError("pyramid checksum mismatch")
    return FeaturePyramid(levels, has_uncertainty=flags)


def save_pyramid(pyr, path):
    with open(path, "wb") as fh:
        fh.write(pyramid_to_bytes(pyr))


def load_pyramid(path):
    with open(path, "rb") as fh:
        return pyramid_from_bytes(fh.read())
