"""Deterministic quasi-random class centroids and label-map <-> field codecs.

Class k is encoded as the k-th point of a Kronecker sequence with square-root-
of-prime increments, min-max stretched to fill [-1, 1]^d. Encoding/decoding
between integer label maps and centroid-valued fields is exact lookup /
nearest-centroid argmin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# Square roots of distinct primes are linearly independent over the rationals,
# so k * sqrt(p) mod 1 never collapses onto a lower-dimensional lattice.
_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53)

MAX_DIM = len(_PRIMES)
MAX_CLASSES = 4096
DEFAULT_IGNORE = 255


def kronecker_raw(k: int, d: int) -> np.ndarray:
    """k-th Kronecker sequence point in [0,1)^d, increments sqrt(first d primes)."""
    if not 1 <= d <= MAX_DIM:
        raise ValidationError(f"dimension must be in [1, {MAX_DIM}], got {d}")
    if k < 0:
        raise ValidationError(f"class index must be >= 0, got {k}")
    incr = np.sqrt(np.array(_PRIMES[:d], dtype=np.float64))
    return np.mod(k * incr, 1.0)


@dataclass(frozen=True)
class CentroidPalette:
    """Ordered table of class centroids in [-1,1]^dim plus generation parameters.

    ``raw_points`` holds the pre-normalization sequence points in [0,1) and is
    None for hand-built palettes (see :meth:`from_centroids`).
    """

    dim: int
    count: int
    increments: tuple[float, ...]
    centroids: np.ndarray
    raw_points: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.shape != (self.count, self.dim):
            raise ValidationError(
                f"centroid table has shape {c.shape}, expected {(self.count, self.dim)}"
            )
        object.__setattr__(self, "centroids", c)
        c.flags.writeable = False
        if self.raw_points is not None:
            r = np.asarray(self.raw_points, dtype=np.float64)
            r.flags.writeable = False
            object.__setattr__(self, "raw_points", r)

    @classmethod
    def from_centroids(cls, centroids) -> "CentroidPalette":
        """Palette with explicit centroid coordinates (test fixtures, imports)."""
        c = np.asarray(centroids, dtype=np.float64)
        if c.ndim != 2:
            raise ValidationError("centroids must be a 2-D table")
        return cls(dim=c.shape[1], count=c.shape[0], increments=(), centroids=c)

    def min_pairwise_distance(self) -> float:
        """Smallest Euclidean distance between any two centroids (brute force)."""
        if self.count < 2:
            raise ValidationError("need at least two centroids")
        diff = self.centroids[:, None, :] - self.centroids[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=-1))
        iu = np.triu_indices(self.count, k=1)
        return float(dist[iu].min())

    def nearest_competitor(self, label: int) -> int:
        """Index of the centroid closest to centroid ``label``."""
        d = ((self.centroids - self.centroids[label]) ** 2).sum(axis=1)
        d[label] = np.inf
        return int(np.argmin(d))

    def to_json(self) -> str:
        return json.dumps(
            {
                "dim": self.dim,
                "count": self.count,
                "centroids": [[float(v) for v in row] for row in self.centroids],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CentroidPalette":
        doc = json.loads(text)
        try:
            dim, count, cents = doc["dim"], doc["count"], doc["centroids"]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"palette document missing key: {exc}") from exc
        pal = cls.from_centroids(np.asarray(cents, dtype=np.float64))
        if pal.dim != dim or pal.count != count:
            raise ValidationError(
                f"palette document inconsistent: header says {count}x{dim}, "
                f"table is {pal.count}x{pal.dim}"
            )
        return pal


def build_palette(count: int, dim: int) -> CentroidPalette:
    """Generate ``count`` centroids in [-1,1]^dim from the Kronecker sequence.

    Raw points are min-max normalized per dimension over the generated set and
    stretched to [-1, 1]; a dimension where all points coincide maps to 0.
    Bit-identical for identical (count, dim).
    """
    if count < 1:
        raise ValidationError(f"class count must be >= 1, got {count}")
    if count > MAX_CLASSES:
        raise ValidationError(f"class count must be <= {MAX_CLASSES}, got {count}")
    if not 1 <= dim <= MAX_DIM:
        raise ValidationError(f"dimension must be in [1, {MAX_DIM}], got {dim}")
    incr = np.sqrt(np.array(_PRIMES[:dim], dtype=np.float64))
    raw = np.mod(np.arange(count, dtype=np.float64)[:, None] * incr[None, :], 1.0)
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    span = hi - lo
    cents = np.zeros_like(raw)
    live = span > 0.0
    cents[:, live] = 2.0 * (raw[:, live] - lo[live]) / span[live] - 1.0
    return CentroidPalette(
        dim=dim,
        count=count,
        increments=tuple(float(v) for v in incr),
        centroids=cents,
        raw_points=raw,
    )


@dataclass
class LabelMap:
    """H x W grid of class indices; ``ignore_value`` marks unlabeled pixels."""

    labels: np.ndarray
    ignore_value: int = DEFAULT_IGNORE

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ValidationError(f"label grid must be 2-D, got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValidationError(f"labels must be integers, got dtype {arr.dtype}")
        self.labels = arr.astype(np.int64, copy=False)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return self.labels != self.ignore_value

    def check_range(self, count: int) -> None:
        """Raise unless every non-ignore label is < count (and >= 0)."""
        vals = self.labels[self.valid]
        if vals.size and (vals.min() < 0 or vals.max() >= count):
            bad = int(vals.min()) if vals.min() < 0 else int(vals.max())
            raise ValidationError(f"label {bad} out of range for {count} classes")
        if 0 <= self.ignore_value < count:
            raise ValidationError(
                f"ignore value {self.ignore_value} collides with class range [0, {count})"
            )


def encode_labels(labels: LabelMap, palette: CentroidPalette) -> tuple[np.ndarray, np.ndarray]:
    """Map each pixel to its class centroid.

    Returns (field, valid): field is H x W x dim with ignore pixels set to the
    zero vector, valid is the H x W boolean mask of labeled pixels. The zero
    vector is a placeholder only; it never competes in nearest-centroid
    decoding because masked pixels are excluded downstream.
    """
    labels.check_range(palette.count)
    valid = labels.valid
    field = np.zeros((labels.height, labels.width, palette.dim), dtype=np.float64)
    field[valid] = palette.centroids[labels.labels[valid]]
    return field, valid


def decode_nearest(
    field: np.ndarray, palette: CentroidPalette, ignore_value: int = DEFAULT_IGNORE
) -> tuple[LabelMap, np.ndarray]:
    """Per-pixel argmin_k ||x - mu_k|| with ties broken toward the smaller index.

    Returns (label map, H x W Euclidean distances to the winning centroid).
    """
    x = np.asarray(field, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != palette.dim:
        raise ValidationError(
            f"field must be H x W x {palette.dim}, got shape {x.shape}"
        )
    if not np.isfinite(x).all():
        raise ValidationError("field contains non-finite values")
    flat = x.reshape(-1, palette.dim)
    # chunk so the (pixels x N) distance table stays modest for large inputs
    chunk = max(1, 8_000_000 // max(palette.count, 1))
    labels = np.empty(flat.shape[0], dtype=np.int64)
    dists = np.empty(flat.shape[0], dtype=np.float64)
    for start in range(0, flat.shape[0], chunk):
        part = flat[start:start + chunk]
        d2 = ((part[:, None, :] - palette.centroids[None, :, :]) ** 2).sum(axis=-1)
        idx = np.argmin(d2, axis=1)  # first occurrence = smallest class index
        labels[start:start + part.shape[0]] = idx
        dists[start:start + part.shape[0]] = np.sqrt(d2[np.arange(part.shape[0]), idx])
    h, w = x.shape[:2]
    return (
        LabelMap(labels.reshape(h, w), ignore_value=ignore_value),
        dists.reshape(h, w),
    )


# ---------------------------------------------------------------------------
# file formats: palette JSON, label-map CSV, binary PGM (P5)

def save_palette(palette: CentroidPalette, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(palette.to_json())
        fh.write("\n")


def load_palette(path) -> CentroidPalette:
    with open(path, "r", encoding="utf-8") as fh:
        return CentroidPalette.from_json(fh.read())


def save_labels_csv(labels: LabelMap, path) -> None:
    np.savetxt(path, labels.labels, fmt="%d", delimiter=",")


def load_labels_csv(path, ignore_value: int = DEFAULT_IGNORE) -> LabelMap:
    arr = np.loadtxt(path, dtype=np.int64, delimiter=",", ndmin=2)
    return LabelMap(arr, ignore_value=ignore_value)


def save_labels_pgm(labels: LabelMap, path) -> None:
    """Binary netpbm PGM (P5); 2-byte big-endian samples above maxval 255."""
    arr = labels.labels
    if arr.min() < 0:
        raise ValidationError("PGM cannot store negative labels")
    maxval = int(max(255, arr.max()))
    if maxval > 65535:
        raise ValidationError(f"PGM maxval limit exceeded: {maxval}")
    header = f"P5\n{labels.width} {labels.height}\n{maxval}\n".encode("ascii")
    if maxval < 256:
        payload = arr.astype(">u1").tobytes()
    else:
        payload = arr.astype(">u2").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_labels_pgm(path, ignore_value: int = DEFAULT_IGNORE) -> LabelMap:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValidationError("not a binary PGM (P5) file")
    # header: magic, width, height, maxval; separated by whitespace, then one
    # whitespace byte before the raster
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    width, height, maxval = fields
    dtype = ">u1" if maxval < 256 else ">u2"
    raster = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return LabelMap(
        raster.reshape(height, width).astype(np.int64), ignore_value=ignore_value
    )
