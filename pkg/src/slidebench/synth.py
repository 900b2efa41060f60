"""Seeded synthetic slides, annotations, and prediction sets.

Slides are light backgrounds with one darker star-convex tissue blob and a
few star-polygon lesions inside it. The color ranges are chosen so that
every tissue or lesion pixel has Rec.601 luma <= 200 and every background
pixel has luma > 200, which makes the fixed gray-200 tissue rule recover the
analytic blob exactly. Everything is a pure function of (config seed, slide
index); team predictions derive per-slide flip fields from the corruption
seed, so teams sharing a seed have nested flip sets and their Dice order is
guaranteed by construction.
"""
from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import parallel
from .errors import ValidationError
from .masks import ROLE_GROUND_TRUTH, ROLE_PREDICTION, BinaryMask, write_mask
from .masks import _fill_even_odd  # shares the exact fill rule with rasterize
from .slide_io import (
    Annotation,
    AnnotationSet,
    SlidePyramid,
    build_pyramid,
    serialize_annotations,
    write_pyramid,
)

SUBTYPE_ORDER = ("SCC", "SCLC", "ADC")  # weights in subtype_ratio follow this order
DEFAULT_RATIO = (6.0, 3.0, 1.0)

_CHUNK_ROWS = 512
_N_HARMONICS = 4


@dataclass
class SynthConfig:
    seed: int = 0
    slides: int = 5
    level0_size: int = 2048
    n_levels: int = 3
    n_lesions: tuple[int, int] = (2, 5)
    lesion_radius: tuple[float, float] = (20.0, 60.0)
    subtype_ratio: tuple[float, float, float] = DEFAULT_RATIO
    annotation_dilation: int = 0
    label_background_inclusion: bool = False

    def validate(self) -> None:
        if self.slides < 1:
            raise ValidationError(f"slides must be >= 1, got {self.slides}")
        if self.level0_size < 64:
            raise ValidationError(f"level0_size must be >= 64, got {self.level0_size}")
        if self.n_levels < 1:
            raise ValidationError(f"n_levels must be >= 1, got {self.n_levels}")
        lo, hi = self.n_lesions
        if not 0 <= lo <= hi:
            raise ValidationError(f"bad lesion count range {self.n_lesions}")
        rlo, rhi = self.lesion_radius
        if not 0 < rlo <= rhi:
            raise ValidationError(f"bad lesion radius range {self.lesion_radius}")
        if rhi > 0.18 * self.level0_size:
            raise ValidationError(
                f"lesion radius {rhi} too large for a {self.level0_size}-pixel slide "
                f"(must fit inside the tissue blob; limit is {0.18 * self.level0_size:.0f})"
            )
        if len(self.subtype_ratio) != 3 or any(w < 0 for w in self.subtype_ratio):
            raise ValidationError(f"bad subtype ratio {self.subtype_ratio}")
        if sum(self.subtype_ratio) == 0:
            raise ValidationError("subtype ratio weights are all zero")
        if self.annotation_dilation < 0:
            raise ValidationError(f"annotation_dilation must be >= 0")


@dataclass
class CorruptionSpec:
    erode: int = 0
    dilate: int = 0
    flip_rate: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if self.erode < 0 or self.dilate < 0:
            raise ValidationError("erode/dilate radii must be >= 0")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ValidationError(f"flip_rate {self.flip_rate} outside [0, 1]")

    @property
    def is_identity(self) -> bool:
        return self.erode == 0 and self.dilate == 0 and self.flip_rate == 0.0


def slide_name(index: int) -> str:
    return f"slide_{index:03d}"


def _blob_radius(theta: np.ndarray, r0: float, amps: np.ndarray, phases: np.ndarray) -> np.ndarray:
    r = np.full_like(theta, 1.0)
    for k in range(_N_HARMONICS):
        r += amps[k] * np.cos((k + 2) * theta + phases[k])
    return r0 * r


def _star_polygon(rng: np.random.Generator, cx: float, cy: float, radius: float) -> np.ndarray:
    n = int(rng.integers(8, 17))
    angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, n))
    radii = radius * rng.uniform(0.55, 1.0, n)
    return np.column_stack((cx + radii * np.cos(angles), cy + radii * np.sin(angles)))


def _fill_polygons(shape: tuple[int, int], polygons: list[np.ndarray]) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for verts in polygons:
        _fill_even_odd(out, verts)
    return out


def generate_slide(
    cfg: SynthConfig, index: int
) -> tuple[SlidePyramid, AnnotationSet, BinaryMask, str]:
    """One deterministic synthetic slide.

    Returns the pyramid, the (possibly noise-expanded) annotations, the true
    cancer mask, and the drawn subtype. With both noise knobs off the
    annotations rasterize exactly to the true mask.
    """
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, index])
    size = cfg.level0_size
    sid = slide_name(index)

    weights = np.asarray(cfg.subtype_ratio, dtype=np.float64)
    subtype = SUBTYPE_ORDER[int(rng.choice(3, p=weights / weights.sum()))]

    cx, cy = size / 2.0 + rng.uniform(-0.05, 0.05, 2) * size
    r0 = rng.uniform(0.28, 0.34) * size
    amps = rng.uniform(-0.06, 0.06, _N_HARMONICS)
    phases = rng.uniform(0.0, 2.0 * np.pi, _N_HARMONICS)
    r_inner = r0 * (1.0 - float(np.sum(np.abs(amps))))  # disk guaranteed inside the blob

    n_lesions = int(rng.integers(cfg.n_lesions[0], cfg.n_lesions[1] + 1))
    truth_polys: list[np.ndarray] = []
    ann_polys: list[np.ndarray] = []
    centers: list[tuple[float, float]] = []
    for _ in range(n_lesions):
        radius = float(rng.uniform(*cfg.lesion_radius))
        radius = min(radius, 0.45 * r_inner)
        theta = float(rng.uniform(0.0, 2.0 * np.pi))
        if cfg.label_background_inclusion:
            # straddle the tissue boundary so the annotation covers background
            rho = float(_blob_radius(np.array([theta]), r0, amps, phases)[0])
        else:
            rho = float(rng.uniform(0.0, max(0.0, r_inner - radius - 2.0)))
        lx = float(np.clip(cx + rho * np.cos(theta), radius + 2.0, size - radius - 2.0))
        ly = float(np.clip(cy + rho * np.sin(theta), radius + 2.0, size - radius - 2.0))
        poly = _star_polygon(rng, lx, ly, radius)
        truth_polys.append(poly)
        centers.append((lx, ly))
        if cfg.annotation_dilation > 0:
            offsets = poly - (lx, ly)
            norms = np.maximum(np.hypot(offsets[:, 0], offsets[:, 1]), 1e-9)
            scale = (norms + cfg.annotation_dilation) / norms
            poly = (lx, ly) + offsets * scale[:, None]
        ann_polys.append(poly)

    blob = np.zeros((size, size), dtype=bool)
    image = np.empty((size, size, 3), dtype=np.uint8)
    jitter = int(rng.integers(-8, 9))
    bg_jitter = int(rng.integers(-2, 3))
    lesion_raster = _fill_polygons((size, size), truth_polys)
    asum = float(np.sum(np.abs(amps)))
    # the angular radius is pinched between these two circles, so the costly
    # per-angle test only runs inside the annulus where membership is ambiguous
    r_lo = r0 * (1.0 - asum) - 1e-6
    r_hi = r0 * (1.0 + asum) + 1e-6
    for y0 in range(0, size, _CHUNK_ROWS):
        y1 = min(size, y0 + _CHUNK_ROWS)
        dy = np.arange(y0, y1, dtype=np.float64)[:, None] - cy
        dx = np.arange(size, dtype=np.float64)[None, :] - cx
        rr = np.hypot(dx, dy)
        inside = rr <= r_lo
        band = (rr > r_lo) & (rr <= r_hi)
        if np.any(band):
            theta = np.arctan2(
                np.broadcast_to(dy, rr.shape)[band], np.broadcast_to(dx, rr.shape)[band]
            )
            inside[band] = rr[band] <= _blob_radius(theta, r0, amps, phases)
        blob[y0:y1] = inside

        paint = lesion_raster[y0:y1] & inside  # lesion color never leaves the blob
        chunk = rng.integers(230 + bg_jitter, 251 + bg_jitter, (y1 - y0, size, 3)).astype(np.uint8)
        n_tis = int(np.count_nonzero(inside))
        n_les = int(np.count_nonzero(paint))
        for c, (lo_t, lo_l) in enumerate(((150, 115), (90, 55), (140, 125))):
            if n_tis:
                chunk[inside, c] = rng.integers(lo_t + jitter, lo_t + jitter + 46, n_tis)
            if n_les:
                chunk[paint, c] = rng.integers(lo_l + jitter, lo_l + jitter + 51, n_les)
        image[y0:y1] = chunk

    truth = lesion_raster & blob if cfg.label_background_inclusion else lesion_raster
    pyramid = build_pyramid(sid, image, cfg.n_levels)
    annotations = AnnotationSet(
        sid,
        [
            Annotation(f"lesion_{i:02d}", "tumor", verts)
            for i, verts in enumerate(ann_polys)
        ],
    )
    annotations.validate()
    return pyramid, annotations, BinaryMask(sid, 0, truth, ROLE_GROUND_TRUTH), subtype


def _box_filter_bool(data: np.ndarray, radius: int, require_all: bool) -> np.ndarray:
    """Separable square-window erosion (require_all) or dilation over bool data."""
    if radius == 0:
        return data
    window = 2 * radius + 1
    out = data
    for axis in (0, 1):
        arr = out.astype(np.int32)
        pad = [(0, 0), (0, 0)]
        pad[axis] = (radius, radius)
        arr = np.pad(arr, pad)
        cs = np.cumsum(arr, axis=axis)
        zero = np.zeros_like(np.take(cs, [0], axis=axis))
        cs = np.concatenate([zero, cs], axis=axis)
        hi = np.take(cs, range(window, cs.shape[axis]), axis=axis)
        lo = np.take(cs, range(0, cs.shape[axis] - window), axis=axis)
        counts = hi - lo
        out = counts == window if require_all else counts > 0
    return out


def corrupt_prediction(true_mask: BinaryMask, spec: CorruptionSpec) -> BinaryMask:
    """Erode, then dilate, then flip pixels where the shared uniform field
    falls below flip_rate.

    The flip field depends only on (spec.seed, slide id), so specs sharing a
    seed flip nested pixel sets as flip_rate grows.
    """
    spec.validate()
    data = true_mask.data
    if spec.erode:
        data = _box_filter_bool(data, spec.erode, require_all=True)
    if spec.dilate:
        data = _box_filter_bool(data, spec.dilate, require_all=False)
    if spec.flip_rate > 0.0:
        field_rng = np.random.default_rng([spec.seed, zlib.crc32(true_mask.slide_id.encode())])
        flips = field_rng.random(data.shape) < spec.flip_rate
        data = data ^ flips
    elif data is true_mask.data:
        data = data.copy()
    return BinaryMask(true_mask.slide_id, true_mask.level, data, ROLE_PREDICTION)


def _tally(gt: np.ndarray, pred: np.ndarray) -> tuple[int, int, int, int]:
    tp = int(np.count_nonzero(gt & pred))
    fp = int(np.count_nonzero(~gt & pred))
    fn = int(np.count_nonzero(gt & ~pred))
    tn = gt.size - tp - fp - fn
    return tp, fp, fn, tn


def _normalize_teams(teams) -> list[tuple[str, CorruptionSpec]]:
    if not teams:
        raise ValidationError("generate_challenge: no teams")
    named = []
    for i, item in enumerate(teams):
        if isinstance(item, CorruptionSpec):
            named.append((f"team_{i + 1:02d}", item))
        else:
            name, spec = item
            named.append((str(name), spec))
    names = [n for n, _ in named]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate team names: {names}")
    for _, spec in named:
        spec.validate()
    return named


def _challenge_slide(index: int) -> tuple[str, str, list[tuple[str, int, int, int, int]]]:
    cfg: SynthConfig = parallel.shared_get("synth.cfg")
    teams: list[tuple[str, CorruptionSpec]] = parallel.shared_get("synth.teams")
    out = Path(parallel.shared_get("synth.out"))
    pyramid, annotations, truth, subtype = generate_slide(cfg, index)
    sid = pyramid.slide_id
    write_pyramid(pyramid, out / "slides" / sid)
    serialize_annotations(annotations, out / "annotations" / f"{sid}.xml")
    write_mask(truth, out / "truth" / f"{sid}.pgm")
    rows = []
    for name, spec in teams:
        pred = corrupt_prediction(truth, spec)
        write_mask(pred, out / "predictions" / name / f"{sid}.pgm")
        rows.append((name, *_tally(truth.data, pred.data)))
    return sid, subtype, rows


def generate_challenge(
    cfg: SynthConfig,
    teams,
    out_dir: str | Path,
    workers: int | None = None,
) -> dict:
    """Write a full synthetic challenge tree with a brute-force truth table.

    Layout: slides/<id>/, annotations/<id>.xml, truth/<id>.pgm,
    predictions/<team>/<id>.pgm, truth_table.csv, subtypes.csv. Slides are
    generated independently (parallelizable); all outputs are functions of
    the config alone.
    """
    cfg.validate()
    named = _normalize_teams(teams)
    out = Path(out_dir)
    (out / "slides").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(exist_ok=True)
    (out / "truth").mkdir(exist_ok=True)
    for name, _ in named:
        (out / "predictions" / name).mkdir(parents=True, exist_ok=True)

    shared = {"synth.cfg": cfg, "synth.teams": named, "synth.out": str(out)}
    results = parallel.run_chunks(
        _challenge_slide, list(range(cfg.slides)), workers=workers, shared=shared
    )

    subtype_rows = []
    table_rows = []
    for sid, subtype, rows in results:
        subtype_rows.append((sid, subtype))
        for name, tp, fp, fn, tn in rows:
            table_rows.append((sid, name, tp, fp, fn, tn))
    table_rows.sort(key=lambda r: (r[0], r[1]))
    subtype_rows.sort()

    with open(out / "truth_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slide_id", "team", "tp", "fp", "fn", "tn"])
        writer.writerows(table_rows)
    with open(out / "subtypes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slide_id", "subtype"])
        writer.writerows(subtype_rows)

    return {
        "out": str(out),
        "slides": [r[0] for r in sorted(results)],
        "teams": [n for n, _ in named],
        "truth_table": str(out / "truth_table.csv"),
        "subtypes": str(out / "subtypes.csv"),
    }


def read_truth_table(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                {
                    "slide_id": row["slide_id"],
                    "team": row["team"],
                    "tp": int(row["tp"]),
                    "fp": int(row["fp"]),
                    "fn": int(row["fn"]),
                    "tn": int(row["tn"]),
                }
            )
    return rows


def read_subtypes(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["slide_id"]] = row["subtype"]
    return out
