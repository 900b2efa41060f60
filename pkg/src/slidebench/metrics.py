"""Segmentation scoring: confusion counts, Dice, accuracy, FNR, FPR.

All counting is exact 64-bit integer arithmetic up to the final division.
Confusion counting parallelizes over row bands and merges by integer
addition, so results are identical for any worker count.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import parallel
from .errors import FormatError, GeometryError, ValidationError
from .masks import BinaryMask

SUBTYPE_SCC = "SCC"
SUBTYPE_SCLC = "SCLC"
SUBTYPE_ADC = "ADC"
SUBTYPE_UNKNOWN = "Unknown"
SUBTYPES = (SUBTYPE_SCC, SUBTYPE_SCLC, SUBTYPE_ADC, SUBTYPE_UNKNOWN)

FLAG_EMPTY_PAIR = "empty_pair"
FLAG_UNDEFINED_FNR = "undefined_fnr"
FLAG_UNDEFINED_FPR = "undefined_fpr"
FLAG_EMPTY_REGION = "empty_region"

METRIC_FIELDS = ("dice", "accuracy", "fnr", "fpr")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ValidationError(f"confusion count {name}={v!r} must be a non-negative int")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def empty_pair(self) -> bool:
        """Both masks empty over the evaluated region."""
        return 2 * self.tp + self.fp + self.fn == 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )


@dataclass(frozen=True)
class SlideScore:
    slide_id: str
    dice: float
    accuracy: float
    fnr: float
    fpr: float
    subtype: str = SUBTYPE_UNKNOWN
    flags: tuple[str, ...] = ()
    counts: ConfusionCounts | None = None

    def validate(self) -> None:
        for name in METRIC_FIELDS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{self.slide_id}: {name}={v} outside [0, 1]")
        if self.subtype not in SUBTYPES:
            raise ValidationError(f"{self.slide_id}: unknown subtype {self.subtype!r}")


@dataclass(frozen=True)
class AggregateScore:
    key: str
    mean: float
    std: float
    n: int

    def validate(self) -> None:
        if self.n < 1:
            raise ValidationError(f"aggregate {self.key!r}: n must be >= 1")
        if self.std < 0:
            raise ValidationError(f"aggregate {self.key!r}: negative std")


@dataclass
class TeamReport:
    team: str
    scores: list[SlideScore] = field(default_factory=list)

    def slide_ids(self) -> tuple[str, ...]:
        return tuple(s.slide_id for s in self.scores)

    def mean(self, metric: str) -> float:
        if not self.scores:
            raise ValidationError(f"report for {self.team!r} has no scores")
        return float(np.mean([getattr(s, metric) for s in self.scores]))


def _band_confusion(band: tuple[int, int]) -> tuple[int, int, int, int]:
    y0, y1 = band
    gt = parallel.shared_get("metrics.gt")[y0:y1]
    pred = parallel.shared_get("metrics.pred")[y0:y1]
    region = parallel.shared_get("metrics.region")
    if region is not None:
        m = region[y0:y1]
        tp = int(np.count_nonzero(gt & pred & m))
        fp = int(np.count_nonzero(~gt & pred & m))
        fn = int(np.count_nonzero(gt & ~pred & m))
        tn = int(np.count_nonzero(m)) - tp - fp - fn
    else:
        tp = int(np.count_nonzero(gt & pred))
        fp = int(np.count_nonzero(~gt & pred))
        fn = int(np.count_nonzero(gt & ~pred))
        tn = gt.size - tp - fp - fn
    return tp, fp, fn, tn


def confusion(
    gt: BinaryMask,
    pred: BinaryMask,
    region: BinaryMask | None = None,
    workers: int | None = None,
) -> ConfusionCounts:
    """Exact pixel confusion counts, optionally restricted to a region mask."""
    if gt.level != pred.level or gt.data.shape != pred.data.shape:
        raise GeometryError(
            f"confusion: gt is level {gt.level} {gt.data.shape}, "
            f"pred is level {pred.level} {pred.data.shape}"
        )
    if region is not None and (region.level != gt.level or region.data.shape != gt.data.shape):
        raise GeometryError(
            f"confusion: region is level {region.level} {region.data.shape}, "
            f"gt is level {gt.level} {gt.data.shape}"
        )
    h = gt.height
    n_workers = parallel.resolve_workers(workers)
    n_bands = max(1, min(h, n_workers * 4))
    edges = np.linspace(0, h, n_bands + 1, dtype=int)
    bands = [(int(edges[i]), int(edges[i + 1])) for i in range(n_bands)]
    shared = {
        "metrics.gt": gt.data,
        "metrics.pred": pred.data,
        "metrics.region": region.data if region is not None else None,
    }
    parts = parallel.run_chunks(_band_confusion, bands, workers=n_workers, shared=shared)
    tp = sum(p[0] for p in parts)
    fp = sum(p[1] for p in parts)
    fn = sum(p[2] for p in parts)
    tn = sum(p[3] for p in parts)
    return ConfusionCounts(tp, fp, fn, tn)


def dice(c: ConfusionCounts) -> float:
    """2*tp / (2*tp + fp + fn); an empty pair scores 1.0 (see score flags)."""
    denom = 2 * c.tp + c.fp + c.fn
    if denom == 0:
        return 1.0
    return 2 * c.tp / denom


def accuracy_fnr_fpr(c: ConfusionCounts) -> tuple[float, float, float]:
    """(accuracy, fnr, fpr) with zero-denominator rates falling back to 0."""
    accuracy = (c.tp + c.tn) / c.total if c.total > 0 else 0.0
    fnr = c.fn / (c.fn + c.tp) if c.fn + c.tp > 0 else 0.0
    fpr = c.fp / (c.fp + c.tn) if c.fp + c.tn > 0 else 0.0
    return accuracy, fnr, fpr


def score_flags(c: ConfusionCounts) -> tuple[str, ...]:
    flags = []
    if c.total == 0:
        flags.append(FLAG_EMPTY_REGION)
    if c.empty_pair:
        flags.append(FLAG_EMPTY_PAIR)
    if c.fn + c.tp == 0:
        flags.append(FLAG_UNDEFINED_FNR)
    if c.fp + c.tn == 0:
        flags.append(FLAG_UNDEFINED_FPR)
    return tuple(flags)


def score_slide(slide_id: str, c: ConfusionCounts, subtype: str = SUBTYPE_UNKNOWN) -> SlideScore:
    accuracy, fnr, fpr = accuracy_fnr_fpr(c)
    score = SlideScore(slide_id, dice(c), accuracy, fnr, fpr, subtype, score_flags(c), c)
    score.validate()
    return score


def upsample_mask(mask: BinaryMask, to_level: int, width: int, height: int) -> BinaryMask:
    """Nearest-neighbor upsample of a coarser mask to a finer level's grid."""
    if to_level > mask.level:
        raise GeometryError(f"cannot upsample level {mask.level} to coarser level {to_level}")
    f = 2 ** (mask.level - to_level)
    if mask.height * f < height or mask.width * f < width:
        raise GeometryError(
            f"mask {mask.width}x{mask.height} at level {mask.level} cannot cover "
            f"{width}x{height} at level {to_level}"
        )
    data = np.repeat(np.repeat(mask.data, f, axis=0), f, axis=1)[:height, :width]
    return BinaryMask(mask.slide_id, to_level, np.ascontiguousarray(data), mask.role)


def aggregate(
    scores: list[SlideScore], group_by: str = "none", metric: str = "dice"
) -> list[AggregateScore]:
    """Mean and population std per group, in lexicographic group order."""
    if not scores:
        raise ValidationError("aggregate: no scores")
    if metric not in METRIC_FIELDS:
        raise ValidationError(f"unknown metric {metric!r}")
    if group_by == "none":
        groups = {"all": scores}
    elif group_by == "subtype":
        groups = {}
        for s in scores:
            groups.setdefault(s.subtype, []).append(s)
    else:
        raise ValidationError(f"unknown grouping {group_by!r} (use aggregate_teams for teams)")
    out = []
    for key in sorted(groups):
        values = np.array([getattr(s, metric) for s in groups[key]], dtype=np.float64)
        agg = AggregateScore(key, float(values.mean()), float(values.std()), len(values))
        agg.validate()
        out.append(agg)
    return out


def aggregate_teams(reports: list["TeamReport"], metric: str = "dice") -> list[AggregateScore]:
    """One aggregate per team, in lexicographic team order."""
    if not reports:
        raise ValidationError("aggregate_teams: no reports")
    out = []
    for rep in sorted(reports, key=lambda r: r.team):
        values = np.array([getattr(s, metric) for s in rep.scores], dtype=np.float64)
        if values.size == 0:
            raise ValidationError(f"report for {rep.team!r} has no scores")
        agg = AggregateScore(rep.team, float(values.mean()), float(values.std()), len(values))
        agg.validate()
        out.append(agg)
    return out


def evaluate_team(
    team: str,
    gt: dict[str, BinaryMask],
    pred: dict[str, BinaryMask],
    subtypes: dict[str, str] | None = None,
    region: dict[str, BinaryMask] | None = None,
    workers: int | None = None,
) -> TeamReport:
    """Score one team's predictions against ground truth, slide by slide.

    Predictions at a coarser level than the ground truth are upsampled by
    nearest-neighbor first. Slides are scored in sorted id order.
    """
    if not gt:
        raise ValidationError("evaluate_team: no ground-truth masks")
    missing = sorted(set(gt) - set(pred))
    if missing:
        raise ValidationError(f"team {team!r} is missing predictions for: {', '.join(missing)}")
    scores = []
    for slide_id in sorted(gt):
        g = gt[slide_id]
        p = pred[slide_id]
        if p.level > g.level:
            p = upsample_mask(p, g.level, g.width, g.height)
        elif p.level < g.level:
            raise GeometryError(
                f"{slide_id}: prediction level {p.level} finer than ground truth {g.level}"
            )
        c = confusion(g, p, region.get(slide_id) if region else None, workers=workers)
        subtype = (subtypes or {}).get(slide_id, SUBTYPE_UNKNOWN)
        scores.append(score_slide(slide_id, c, subtype))
    return TeamReport(team, scores)


def report_aggregates(report: TeamReport) -> list[AggregateScore]:
    """Overall Dice aggregate followed by per-subtype rows."""
    aggs = aggregate(report.scores, "none", "dice")
    if any(s.subtype != SUBTYPE_UNKNOWN for s in report.scores):
        aggs += aggregate(report.scores, "subtype", "dice")
    return aggs


def write_report(report: TeamReport, path: str | Path) -> None:
    """Serialize a team report as JSON (scores, counts, Dice aggregates)."""
    payload = {
        "team": report.team,
        "scores": [
            {
                "slide_id": s.slide_id,
                "subtype": s.subtype,
                "dice": s.dice,
                "accuracy": s.accuracy,
                "fnr": s.fnr,
                "fpr": s.fpr,
                "flags": list(s.flags),
                **(
                    {"tp": s.counts.tp, "fp": s.counts.fp, "fn": s.counts.fn, "tn": s.counts.tn}
                    if s.counts is not None
                    else {}
                ),
            }
            for s in report.scores
        ],
        "aggregates": [
            {"key": a.key, "mean": a.mean, "std": a.std, "n": a.n}
            for a in report_aggregates(report)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_report(path: str | Path) -> TeamReport:
    try:
        payload = json.loads(Path(path).read_text())
        team = payload["team"]
        scores = []
        for s in payload["scores"]:
            counts = None
            if "tp" in s:
                counts = ConfusionCounts(s["tp"], s["fp"], s["fn"], s["tn"])
            scores.append(
                SlideScore(
                    s["slide_id"],
                    s["dice"],
                    s["accuracy"],
                    s["fnr"],
                    s["fpr"],
                    s["subtype"],
                    tuple(s.get("flags", [])),
                    counts,
                )
            )
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed report: {exc}") from exc
    report = TeamReport(team, scores)
    for s in report.scores:
        s.validate()
    return report


def write_scores_csv(report: TeamReport, path: str | Path) -> None:
    lines = ["slide_id,subtype,dice,accuracy,fnr,fpr"]
    for s in report.scores:
        lines.append(
            f"{s.slide_id},{s.subtype},{s.dice:.6f},{s.accuracy:.6f},{s.fnr:.6f},{s.fpr:.6f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
