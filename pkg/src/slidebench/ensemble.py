"""Multi-model fusion of probability maps and binary masks.

Mean fusion accumulates in the given input order, so a fixed input list is
bit-deterministic; majority vote requires an odd number of masks. The
binarization threshold is strict (a value equal to the threshold stays
unset), one convention shared with pseudo-labeling.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netpbm
from .errors import FormatError, GeometryError, ValidationError
from .masks import ROLE_PREDICTION, BinaryMask

QUANT_RULE = "round(255*p)"


@dataclass(eq=False)
class ProbabilityMap:
    """Per-pixel tumor probabilities for one slide level."""

    slide_id: str
    level: int
    values: np.ndarray  # (height, width) float64 in [0, 1]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def validate(self) -> None:
        if self.values.ndim != 2 or self.values.dtype != np.float64:
            raise ValidationError(
                f"probability map for {self.slide_id}: expected 2-D float64, got "
                f"{self.values.shape} ({self.values.dtype})"
            )
        if self.level < 0:
            raise ValidationError(f"probability map for {self.slide_id}: negative level")
        if self.values.size and not (
            np.all(self.values >= 0.0) and np.all(self.values <= 1.0)
        ):
            raise ValidationError(
                f"probability map for {self.slide_id} has values outside [0, 1]"
            )


def _check_geometry(items, kind: str) -> None:
    if not items:
        raise ValidationError(f"fuse: no {kind}s given")
    first = items[0]
    for m in items[1:]:
        if m.level != first.level or _shape(m) != _shape(first):
            raise GeometryError(
                f"fuse: {kind} geometry mismatch: level {m.level} {_shape(m)} vs "
                f"level {first.level} {_shape(first)}"
            )
        if m.slide_id != first.slide_id:
            raise ValidationError(
                f"fuse: {kind}s belong to different slides "
                f"({m.slide_id!r} vs {first.slide_id!r})"
            )


def _shape(m) -> tuple[int, int]:
    return (m.height, m.width)


def fuse_mean(maps: list[ProbabilityMap]) -> ProbabilityMap:
    """Pixelwise arithmetic mean, summed in input order."""
    _check_geometry(maps, "map")
    for m in maps:
        m.validate()
    acc = np.zeros_like(maps[0].values)
    for m in maps:
        acc += m.values
    acc /= len(maps)
    np.clip(acc, 0.0, 1.0, out=acc)
    return ProbabilityMap(maps[0].slide_id, maps[0].level, acc)


def fuse_vote(masks: list[BinaryMask]) -> BinaryMask:
    """Strict per-pixel majority vote over an odd number of masks."""
    _check_geometry(masks, "mask")
    if len(masks) % 2 == 0:
        raise ValidationError(f"fuse_vote needs an odd count, got {len(masks)}")
    votes = np.zeros(_shape(masks[0]), dtype=np.int64)
    for m in masks:
        votes += m.data
    out = 2 * votes > len(masks)
    return BinaryMask(masks[0].slide_id, masks[0].level, out, ROLE_PREDICTION)


def binarize(pm: ProbabilityMap, threshold: float = 0.5) -> BinaryMask:
    """Mask of pixels with probability strictly above the threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold {threshold} outside [0, 1]")
    return BinaryMask(pm.slide_id, pm.level, pm.values > threshold, ROLE_PREDICTION)


def write_probability_map(pm: ProbabilityMap, path: str | Path) -> None:
    """Serialize as 8-bit PGM (value = round(255*p)) plus a quantization sidecar."""
    pm.validate()
    path = Path(path)
    netpbm.write_p5(path, np.rint(pm.values * 255.0).astype(np.uint8))
    sidecar = {
        "slide_id": pm.slide_id,
        "level": pm.level,
        "kind": "probability",
        "quantization": {"maxval": 255, "rule": QUANT_RULE},
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def read_probability_map(path: str | Path) -> ProbabilityMap:
    path = Path(path)
    gray = netpbm.read_p5(path)
    sidecar_path = path.with_suffix(".json")
    if not sidecar_path.exists():
        raise FormatError(f"{path}: missing sidecar {sidecar_path}")
    try:
        meta = json.loads(sidecar_path.read_text())
        slide_id, level = meta["slide_id"], meta["level"]
        if meta.get("kind") != "probability":
            raise KeyError("kind != probability")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{sidecar_path}: malformed probability sidecar: {exc}") from exc
    pm = ProbabilityMap(slide_id, level, gray.astype(np.float64) / 255.0)
    pm.validate()
    return pm
