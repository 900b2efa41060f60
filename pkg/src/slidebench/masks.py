"""Binary masks: polygon rasterization, tissue detection, label refinement.

Rasterization uses the even-odd rule evaluated at pixel centers (x+0.5,
y+0.5) with half-open scanline crossings, so results match a per-pixel
point-in-polygon test exactly. Tissue detection thresholds Rec.601 luma,
either at an Otsu split or at the fixed gray value 200; tissue is the
darker side in both cases.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netpbm
from .errors import (
    DegenerateHistogramError,
    DegeneratePolygonWarning,
    FormatError,
    GeometryError,
    ValidationError,
)
from .slide_io import AnnotationSet, SlidePyramid

ROLE_GROUND_TRUTH = "GroundTruth"
ROLE_PREDICTION = "Prediction"
ROLE_TISSUE = "Tissue"
ROLE_REFINED = "Refined"
ROLES = (ROLE_GROUND_TRUTH, ROLE_PREDICTION, ROLE_TISSUE, ROLE_REFINED)

METHOD_OTSU = "otsu"
METHOD_GRAY200 = "gray200"
TISSUE_METHODS = (METHOD_OTSU, METHOD_GRAY200)

GRAY200_THRESHOLD = 200

_LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(eq=False)
class BinaryMask:
    """Single-level 1-bit raster with a role."""

    slide_id: str
    level: int
    data: np.ndarray  # (height, width) bool
    role: str = ROLE_PREDICTION

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        """Number of set pixels."""
        return int(np.count_nonzero(self.data))

    def validate(self) -> None:
        if self.data.ndim != 2 or self.data.dtype != np.bool_:
            raise ValidationError(
                f"mask for {self.slide_id}: expected 2-D bool raster, got "
                f"{self.data.shape} ({self.data.dtype})"
            )
        if self.role not in ROLES:
            raise ValidationError(f"mask for {self.slide_id}: unknown role {self.role!r}")
        if self.level < 0:
            raise ValidationError(f"mask for {self.slide_id}: negative level {self.level}")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in level-local pixels, inclusive-exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def validate(self, width: int, height: int) -> None:
        if not (0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height):
            raise GeometryError(f"box {self} out of range for {width}x{height}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


_LUMA_CHUNK_PIXELS = 1 << 24


def luma(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 grayscale of an RGB8 raster, rounded to uint8.

    Rounding follows IEEE round-half-to-even. Large rasters are processed in
    row chunks to bound the float64 working set; chunking is invisible in the
    result (the computation is per-pixel).
    """
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise GeometryError(f"luma expects (..., 3) RGB, got shape {arr.shape}")
    h, w = arr.shape[0], arr.shape[1]
    out = np.empty((h, w), dtype=np.uint8)
    rows = max(1, _LUMA_CHUNK_PIXELS // max(1, w))
    for y in range(0, h, rows):
        chunk = arr[y : y + rows]
        g = (
            _LUMA_WEIGHTS[0] * chunk[..., 0].astype(np.float64)
            + _LUMA_WEIGHTS[1] * chunk[..., 1]
            + _LUMA_WEIGHTS[2] * chunk[..., 2]
        )
        out[y : y + rows] = np.rint(g).astype(np.uint8)
    return out


def rasterize(
    aset: AnnotationSet,
    level: int,
    width: int,
    height: int,
    role: str = ROLE_GROUND_TRUTH,
) -> BinaryMask:
    """Rasterize the union of polygons onto a level-k grid.

    Vertices are scaled by 1/2**level before filling. A pixel is set iff its
    center lies inside at least one polygon under the even-odd rule; geometry
    outside the grid is clamped by discarding.
    """
    aset.validate()
    if width < 1 or height < 1:
        raise GeometryError(f"rasterize: empty target grid {width}x{height}")
    data = np.zeros((height, width), dtype=bool)
    scale = 0.5**level
    for ann in aset.annotations:
        verts = np.asarray(ann.vertices, dtype=np.float64) * scale
        if _polygon_area(verts) == 0.0:
            warnings.warn(
                f"annotation {ann.name!r} is degenerate at level {level}; no pixels filled",
                DegeneratePolygonWarning,
                stacklevel=2,
            )
            continue
        _fill_even_odd(data, verts)
    return BinaryMask(aset.slide_id, level, data, role)


def _polygon_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _fill_even_odd(data: np.ndarray, verts: np.ndarray) -> None:
    """Scanline even-odd fill at pixel centers; mutates ``data`` in place."""
    h, w = data.shape
    x0 = verts[:, 0]
    y0 = verts[:, 1]
    x1 = np.roll(x0, -1)
    y1 = np.roll(y0, -1)
    keep = y0 != y1  # horizontal edges never cross a center scanline
    if not np.any(keep):
        return
    x0, y0, x1, y1 = x0[keep], y0[keep], x1[keep], y1[keep]

    j_lo = max(0, int(np.floor(np.min(np.minimum(y0, y1)) - 0.5)))
    j_hi = min(h - 1, int(np.ceil(np.max(np.maximum(y0, y1)))))
    for j in range(j_lo, j_hi + 1):
        yc = j + 0.5
        crossing = ((y0 <= yc) & (yc < y1)) | ((y1 <= yc) & (yc < y0))
        if not np.any(crossing):
            continue
        xs = x0[crossing] + (yc - y0[crossing]) * (x1[crossing] - x0[crossing]) / (
            y1[crossing] - y0[crossing]
        )
        xs.sort()
        for a, b in zip(xs[0::2], xs[1::2]):
            # pixel centers i + 0.5 in [a, b)
            i0 = max(0, int(np.ceil(a - 0.5)))
            i1 = min(w, int(np.ceil(b - 0.5)))
            if i0 < i1:
                data[j, i0:i1] = True


def otsu_threshold(histogram) -> int:
    """Threshold maximizing between-class variance over splits [0..t], [t+1..255].

    Comparisons use exact integer arithmetic; ties resolve to the smallest t.
    """
    counts = [int(c) for c in histogram]
    if len(counts) != 256:
        raise ValidationError(f"histogram must have 256 bins, got {len(counts)}")
    if any(c < 0 for c in counts):
        raise ValidationError("histogram counts must be non-negative")
    total = sum(counts)
    if total < 1:
        raise ValidationError("histogram is empty")

    sum_all = sum(i * c for i, c in enumerate(counts))
    best_t = -1
    best_num2 = 0
    best_den = 1
    w0 = 0
    s0 = 0
    for t in range(256):
        w0 += counts[t]
        s0 += t * counts[t]
        w1 = total - w0
        if w0 == 0 or w1 == 0:
            continue
        # between-class variance is proportional to (s0*w1 - s1*w0)^2 / (w0*w1)
        num = s0 * w1 - (sum_all - s0) * w0
        num2 = num * num
        den = w0 * w1
        if best_t < 0 or num2 * best_den > best_num2 * den:
            best_t, best_num2, best_den = t, num2, den
    if best_t < 0:
        raise DegenerateHistogramError("all histogram mass in a single bin")
    return best_t


def tissue_mask(pyramid: SlidePyramid, level: int, method: str = METHOD_OTSU) -> BinaryMask:
    """Tissue mask of one level: pixels whose luma falls on the dark side.

    Otsu thresholds at the between-class-variance argmax of the level's luma
    histogram; Gray200 uses the fixed threshold 200. Both include the
    threshold value itself (g <= t is tissue).
    """
    lvl = pyramid.level(level)
    g = luma(lvl.pixels)
    if method == METHOD_OTSU:
        hist = np.bincount(g.ravel(), minlength=256)
        t = otsu_threshold(hist)
    elif method == METHOD_GRAY200:
        t = GRAY200_THRESHOLD
    else:
        raise ValidationError(f"unknown tissue method {method!r}")
    return BinaryMask(pyramid.slide_id, level, g <= t, ROLE_TISSUE)


def refine_labels(gt: BinaryMask, tissue: BinaryMask) -> BinaryMask:
    """Intersect a noisy ground-truth mask with a tissue mask."""
    if gt.level != tissue.level or gt.data.shape != tissue.data.shape:
        raise GeometryError(
            f"refine_labels: gt is level {gt.level} {gt.data.shape}, "
            f"tissue is level {tissue.level} {tissue.data.shape}"
        )
    return BinaryMask(gt.slide_id, gt.level, gt.data & tissue.data, ROLE_REFINED)


def crop(mask: BinaryMask, box: BoundingBox) -> BinaryMask:
    """Exact sub-raster of a mask."""
    box.validate(mask.width, mask.height)
    sub = mask.data[box.y0 : box.y1, box.x0 : box.x1].copy()
    return BinaryMask(mask.slide_id, mask.level, sub, mask.role)


def bounding_box(mask: BinaryMask) -> BoundingBox | None:
    """Tight bounding box of the set pixels, or None for an empty mask."""
    ys, xs = np.nonzero(mask.data)
    if ys.size == 0:
        return None
    return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def normalize_colors(image: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Match per-channel mean/std of ``image`` to a reference tile.

    A zero-variance channel is mapped to the reference mean. Only applied
    when explicitly requested by a pipeline; no operation calls this
    implicitly.
    """
    img = np.asarray(image, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3 or ref.ndim != 3 or ref.shape[2] != 3:
        raise GeometryError("normalize_colors expects (h, w, 3) rasters")
    out = np.empty_like(img)
    for c in range(3):
        mu, sigma = img[..., c].mean(), img[..., c].std()
        mu_r, sigma_r = ref[..., c].mean(), ref[..., c].std()
        if sigma == 0.0:
            out[..., c] = mu_r
        else:
            out[..., c] = (img[..., c] - mu) / sigma * sigma_r + mu_r
    return np.rint(np.clip(out, 0, 255)).astype(np.uint8)


def write_mask(mask: BinaryMask, path: str | Path) -> None:
    """Serialize as binary PGM (0 = background, 255 = set) plus a JSON sidecar."""
    mask.validate()
    path = Path(path)
    netpbm.write_p5(path, mask.data.astype(np.uint8) * 255)
    sidecar = {"slide_id": mask.slide_id, "level": mask.level, "role": mask.role}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def read_mask(path: str | Path) -> BinaryMask:
    """Load a PGM mask and its sidecar metadata."""
    path = Path(path)
    gray = netpbm.read_p5(path)
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise FormatError(f"{path}: missing sidecar {sidecar_path}")
    try:
        meta = json.loads(sidecar_path.read_text())
        slide_id, level, role = meta["slide_id"], meta["level"], meta["role"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{sidecar_path}: malformed mask sidecar: {exc}") from exc
    mask = BinaryMask(slide_id, level, gray > 0, role)
    mask.validate()
    return mask
