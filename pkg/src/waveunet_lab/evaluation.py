"""Projection SDR over one-second excerpts, pooled statistics, correlation.

The metric projects the estimate onto the reference and reports the
energy ratio between the projection and the residual, in dB. This is the
gain-only variant of the usual separation score: absolute values are not
comparable to filtered-decomposition toolchains, but orderings are, and
the score is invariant to estimate gain. Reports label it
``projection_sdr``. Excerpts whose reference is essentially silent are
excluded from the pool and counted.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import torch
from scipy import stats as sstats

from .data import DatasetSplit, STEM_NAMES, Track
from .errors import EvaluationError, ReportError, ShapeError
from .model import Separator
from .training import progressive_forward

METRIC_NAME = "projection_sdr"
SILENCE_RMS = 1e-5
SDR_CAP_DB = 120.0
_ROUND_DECIMALS = 9  # stabilizes gain-invariance and report idempotence


def sdr(reference: np.ndarray, estimate: np.ndarray, *,
        silence_rms: float = SILENCE_RMS, cap_db: float = SDR_CAP_DB) -> Optional[float]:
    """Projection SDR in dB, capped to [-cap_db, +cap_db].

    Returns ``None`` for a silent reference (the excluded-segment signal).
    Channels are flattened: the projection runs over all samples at once.
    """
    r = np.asarray(reference, dtype=np.float64).ravel()
    e = np.asarray(estimate, dtype=np.float64).ravel()
    if r.shape != e.shape:
        raise ShapeError(f"reference {r.shape} and estimate {e.shape} lengths differ")
    if r.size == 0:
        raise ShapeError("empty waveforms")
    if math.sqrt(float(np.mean(r * r))) < silence_rms:
        return None
    ref_energy = float(r @ r)
    gain = float(e @ r) / ref_energy
    target = gain * r
    residual = e - target
    p_target = float(target @ target)
    p_residual = float(residual @ residual)
    if p_target == 0.0:
        return -cap_db
    if p_residual == 0.0:
        return cap_db
    db = 10.0 * math.log10(p_target / p_residual)
    return round(min(max(db, -cap_db), cap_db), _ROUND_DECIMALS)


@dataclass
class SegmentScores:
    """Per-excerpt scores for one (track, source), with exclusions."""

    values: list[float] = field(default_factory=list)
    excluded: list[int] = field(default_factory=list)
    reason: str = "silent reference"


def segment_sdr(reference: np.ndarray, estimate: np.ndarray,
                sample_rate: int) -> SegmentScores:
    """Score non-overlapping one-second windows; silent-reference windows
    are excluded and recorded by index. A trailing partial second is ignored."""
    ref = np.atleast_2d(np.asarray(reference))
    est = np.atleast_2d(np.asarray(estimate))
    if ref.shape != est.shape:
        raise ShapeError(f"reference {ref.shape} and estimate {est.shape} differ")
    scores = SegmentScores()
    n_windows = ref.shape[-1] // sample_rate
    for w in range(n_windows):
        sl = slice(w * sample_rate, (w + 1) * sample_rate)
        value = sdr(ref[:, sl], est[:, sl])
        if value is None:
            scores.excluded.append(w)
        else:
            scores.values.append(value)
    return scores


def aggregate_stats(values: Sequence[float]) -> dict[str, float]:
    """Median, median absolute deviation, mean, population SD.

    Values are sorted before reduction so the result is exactly invariant
    under permutation of the input (float summation is order-sensitive).
    """
    arr = np.sort(np.asarray(list(values), dtype=np.float64))
    if arr.size == 0:
        raise EvaluationError("cannot aggregate an empty segment pool")
    med = float(np.median(arr))
    return {
        "median": med,
        "mad": float(np.median(np.sort(np.abs(arr - med)))),
        "mean": float(np.mean(arr)),
        "sd": float(np.std(arr)),
    }


# ----- whole-model evaluation ------------------------------------------------------


def separate_track(separator: Separator, mixture: np.ndarray, stages: int = 1,
                   window_batch: int = 64) -> np.ndarray:
    """Tile a full track into model-length windows, separate, reassemble.

    Windows do not overlap; the final window is zero-padded and trimmed.
    Returns [sources, channels, samples] float32.
    """
    spec = separator.spec
    length = spec.input_length
    channels, n = mixture.shape
    if channels != spec.audio_channels:
        raise ShapeError(f"track has {channels} channels, model expects {spec.audio_channels}")
    n_windows = max(1, math.ceil(n / length))
    padded = np.zeros((channels, n_windows * length), dtype=np.float32)
    padded[:, :n] = mixture
    windows = padded.reshape(channels, n_windows, length).transpose(1, 0, 2)
    outputs = []
    was_training = separator.training
    separator.eval()
    with torch.no_grad():
        for start in range(0, n_windows, window_batch):
            chunk = torch.from_numpy(np.ascontiguousarray(windows[start:start + window_batch]))
            staged = progressive_forward(separator, chunk, stages)
            outputs.append(staged[-1].numpy())
    if was_training:
        separator.train()
    stacked = np.concatenate(outputs, axis=0)  # [windows, K, ch, length]
    full = stacked.transpose(1, 2, 0, 3).reshape(spec.num_sources, channels, -1)
    return full[:, :, :n]


@dataclass
class EvalReport:
    """Pooled per-source statistics for one model."""

    model: str
    stages: int
    regime: str
    metric: str = METRIC_NAME
    sources: dict[str, Optional[dict[str, float]]] = field(default_factory=dict)
    segment_counts: dict[str, int] = field(default_factory=dict)
    excluded_counts: dict[str, int] = field(default_factory=dict)
    per_track: dict[str, dict[str, dict]] = field(default_factory=dict)

    def mean(self, source: str) -> Optional[float]:
        s = self.sources.get(source)
        return None if s is None else s["mean"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "model": self.model,
            "stages": self.stages,
            "regime": self.regime,
            "metric": self.metric,
            "sources": self.sources,
            "segment_counts": self.segment_counts,
            "excluded_counts": self.excluded_counts,
            "per_track": self.per_track,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvalReport":
        return cls(
            model=d["model"],
            stages=int(d["stages"]),
            regime=d.get("regime", "U"),
            metric=d.get("metric", METRIC_NAME),
            sources=d.get("sources", {}),
            segment_counts=d.get("segment_counts", {}),
            excluded_counts=d.get("excluded_counts", {}),
            per_track=d.get("per_track", {}),
        )


def evaluate_model(separator: Separator, test_split, stages: int = 1,
                   model: str = "", regime: str = "U",
                   window_batch: int = 64) -> EvalReport:
    """Separate every test track and pool one-second scores per source."""
    tracks: list[Track] = (
        list(test_split.test) if isinstance(test_split, DatasetSplit) else list(test_split)
    )
    if not tracks:
        raise EvaluationError("test split is empty")
    if stages < 1:
        raise EvaluationError(f"stages must be >= 1, got {stages}")
    pools: dict[str, list[float]] = {name: [] for name in STEM_NAMES}
    excluded: dict[str, int] = {name: 0 for name in STEM_NAMES}
    per_track: dict[str, dict[str, dict]] = {}
    for track in tracks:
        estimates = separate_track(separator, track.mixture, stages=stages,
                                   window_batch=window_batch)
        per_track[track.name] = {}
        for idx, source in enumerate(STEM_NAMES):
            scores = segment_sdr(track.stems[source], estimates[idx], track.sample_rate)
            pools[source].extend(scores.values)
            excluded[source] += len(scores.excluded)
            per_track[track.name][source] = {
                "values": scores.values,
                "excluded": scores.excluded,
            }
    report = EvalReport(model=model, stages=stages, regime=regime)
    for source in STEM_NAMES:
        report.segment_counts[source] = len(pools[source])
        report.excluded_counts[source] = excluded[source]
        report.sources[source] = aggregate_stats(pools[source]) if pools[source] else None
    report.per_track = per_track
    return report


# ----- correlation analysis --------------------------------------------------------


@dataclass
class SourceCorrelation:
    source: str
    origin: dict[str, Any]              # baseline point {name, j_mean, u_mean}
    points: list[dict[str, Any]]        # non-baseline points
    quadrants: dict[str, int]
    pearson: float
    spearman: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "source": self.source,
            "origin": self.origin,
            "points": self.points,
            "quadrants": self.quadrants,
            "pearson": self.pearson,
            "spearman": self.spearman,
        }


@dataclass
class CorrelationReport:
    """Random-encoder proxy study: J mean score vs U mean score per variant."""

    by_source: dict[str, SourceCorrelation]

    def to_dict(self) -> dict[str, Any]:
        return {src: corr.to_dict() for src, corr in self.by_source.items()}


def _variant_label(u_report: EvalReport) -> str:
    return u_report.model


def _point(name: str, j_report: EvalReport, u_report: EvalReport, source: str) -> dict:
    j_mean = j_report.mean(source)
    u_mean = u_report.mean(source)
    if j_mean is None or u_mean is None:
        raise ReportError(f"variant {name}: no pooled segments for source {source}")
    return {"name": name, "j_mean": j_mean, "u_mean": u_mean}


def quadrant_counts(points: list[dict], origin: dict) -> dict[str, int]:
    """Strict quadrant membership relative to the origin point; points on
    an axis land in 'boundary'."""
    counts = {"I": 0, "II": 0, "III": 0, "IV": 0, "boundary": 0}
    ox, oy = origin["j_mean"], origin["u_mean"]
    for p in points:
        dx, dy = p["j_mean"] - ox, p["u_mean"] - oy
        if dx == 0 or dy == 0:
            counts["boundary"] += 1
        elif dx > 0 and dy > 0:
            counts["I"] += 1
        elif dx < 0 and dy > 0:
            counts["II"] += 1
        elif dx < 0 and dy < 0:
            counts["III"] += 1
        else:
            counts["IV"] += 1
    return counts


def correlation_report(pairs: list[tuple[EvalReport, EvalReport]],
                       baseline: tuple[EvalReport, EvalReport]) -> CorrelationReport:
    """Build the J-proxy correlation study from (J, U) report pairs.

    Correlations (Pearson and Spearman over mean scores) include the
    baseline point; quadrant counts are relative to the baseline origin
    and cover the non-baseline points only.
    """
    if len(pairs) < 3:
        raise ReportError(f"need at least 3 variant pairs, got {len(pairs)}")
    names = [_variant_label(u) for _, u in pairs]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ReportError(f"duplicate variant names: {dupes}")
    by_source: dict[str, SourceCorrelation] = {}
    for source in STEM_NAMES:
        origin = _point(_variant_label(baseline[1]), baseline[0], baseline[1], source)
        points = [_point(n, j, u, source) for n, (j, u) in zip(names, pairs)]
        xs = [origin["j_mean"]] + [p["j_mean"] for p in points]
        ys = [origin["u_mean"]] + [p["u_mean"] for p in points]
        pearson = float(sstats.pearsonr(xs, ys).statistic)
        spearman = float(sstats.spearmanr(xs, ys).statistic)
        by_source[source] = SourceCorrelation(
            source=source,
            origin=origin,
            points=points,
            quadrants=quadrant_counts(points, origin),
            pearson=pearson,
            spearman=spearman,
        )
    return CorrelationReport(by_source=by_source)


# ----- serialization ---------------------------------------------------------------

_STAT_ROWS = ("median", "mad", "mean", "sd")
_SOURCE_LABELS = {"vocals": "Voc.", "accompaniment": "Acc."}
_STAT_LABELS = {"median": "Med.", "mad": "MAD", "mean": "Mean", "sd": "SD"}


def eval_report_json(report: EvalReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2)


def reports_table_csv(reports: list[EvalReport]) -> str:
    """Models as columns, Voc./Acc. Med-MAD-Mean-SD as rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["source", "stat"] + [r.model for r in reports])
    for source in STEM_NAMES:
        for stat in _STAT_ROWS:
            row = [_SOURCE_LABELS[source], _STAT_LABELS[stat]]
            for r in reports:
                s = r.sources.get(source)
                row.append("" if s is None else f"{s[stat]:.4f}")
            writer.writerow(row)
    return buf.getvalue()


def correlation_points_csv(corr: SourceCorrelation) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", "j_mean", "u_mean", "is_origin"])
    writer.writerow([corr.origin["name"], corr.origin["j_mean"], corr.origin["u_mean"], 1])
    for p in corr.points:
        writer.writerow([p["name"], p["j_mean"], p["u_mean"], 0])
    return buf.getvalue()


def scatter_plot(corr: SourceCorrelation, path: str | Path) -> Path:
    """Scatter of J mean vs U mean scores with the baseline as origin."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    ox, oy = corr.origin["j_mean"], corr.origin["u_mean"]
    ax.axvline(ox, color="grey", lw=0.8)
    ax.axhline(oy, color="grey", lw=0.8)
    ax.scatter([ox], [oy], color="red", label=corr.origin["name"], zorder=3)
    xs = [p["j_mean"] for p in corr.points]
    ys = [p["u_mean"] for p in corr.points]
    ax.scatter(xs, ys, color="tab:blue", zorder=3)
    for p in corr.points:
        ax.annotate(p["name"], (p["j_mean"], p["u_mean"]), fontsize=7,
                    xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("random-encoder (J) mean SDR [dB]")
    ax.set_ylabel("fully trained (U) mean SDR [dB]")
    ax.set_title(f"{corr.source}: Spearman {corr.spearman:.2f}, Pearson {corr.pearson:.2f}")
    ax.legend(loc="best", fontsize=7)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata={"Software": "waveunet-lab"})
    plt.close(fig)
    return path
