"""Evaluation metrics, listener-embedding analysis and report writers.

CSV files use the headers documented on each writer; floats are printed
with 6 significant digits. SVG output is hand-written SVG 1.1 so identical
input always produces identical bytes.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import DegenerateData, EmptySplit, IoFailure, OutOfRangeScore, VariantWithoutListener

N_CLASSES = 3
CLASS_NAMES = ("NO_BC", "YEAH", "UH_HUH")
N_BINS = 25


def fmt(x) -> str:
    return f"{float(x):.6g}"


# -- metrics ---------------------------------------------------------------------

@dataclass
class EvalReport:
    accuracy: float
    per_class_f1: tuple
    macro_f1: float
    confusion: np.ndarray  # rows = gold, cols = predicted
    n_instances: int

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_f1": dict(zip(CLASS_NAMES, map(float, self.per_class_f1))),
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
            "n_instances": self.n_instances,
        }


def confusion_matrix(gold, pred, n_classes: int = N_CLASSES) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(gold, dtype=np.intp), np.asarray(pred, dtype=np.intp)), 1)
    return cm


def report_from_confusion(cm: np.ndarray) -> EvalReport:
    total = int(cm.sum())
    tp = np.diag(cm).astype(np.float64)
    pred_tot = cm.sum(axis=0)
    gold_tot = cm.sum(axis=1)
    f1 = []
    for c in range(cm.shape[0]):
        # 2PR/(P+R) == 2TP/(pred + gold); zero when undefined
        denom = pred_tot[c] + gold_tot[c]
        f1.append(2.0 * tp[c] / denom if denom and tp[c] else 0.0)
    return EvalReport(float(tp.sum() / total) if total else 0.0, tuple(f1),
                      float(np.mean(f1)), cm, total)


def evaluate_predictions(gold, pred) -> EvalReport:
    gold = np.asarray(gold)
    if gold.size == 0:
        raise EmptySplit("no instances to evaluate")
    return report_from_confusion(confusion_matrix(gold, pred))


def evaluate(model, batch) -> EvalReport:
    """Argmax predictions of ``model`` on ``batch`` (with gold labels) scored."""
    if len(batch) == 0:
        raise EmptySplit("no instances to evaluate")
    return evaluate_predictions(batch.y, model.predict(batch))


# -- per-listener sweep -------------------------------------------------------------

def _require_listener(model):
    if not model.config.var.uses_listener:
        raise VariantWithoutListener(f"variant {model.config.variant} has no listener embedding")


def forced_listener_report(model, batch, listener_id: str) -> EvalReport:
    _require_listener(model)
    idx = model.ids_to_index([listener_id], "listener")[0]
    forced = batch.take(slice(None))
    forced.listener = np.full(len(batch), idx, dtype=np.intp)
    return evaluate(model, forced)


def per_listener_f1(model, batch, listener_ids: Sequence[str] | None = None) -> dict[str, float]:
    """Macro-F1 on the whole batch with the listener input forced to each id in turn.

    The speaker input keeps each instance's true speaker.
    """
    _require_listener(model)
    ids = list(listener_ids) if listener_ids is not None else model.listeners
    return {lid: forced_listener_report(model, batch, lid).macro_f1 for lid in ids}


def listener_swap_matrix(model, batch, listener_ids: Sequence[str] | None = None):
    """``M[i, j]`` = macro-F1 on instances whose true listener is ids[i], forced to ids[j]."""
    _require_listener(model)
    ids = list(listener_ids) if listener_ids is not None else model.listeners
    true_idx = model.ids_to_index(ids, "listener")
    M = np.full((len(ids), len(ids)), np.nan)
    for i, ti in enumerate(true_idx):
        sel = np.flatnonzero(batch.listener == ti)
        if sel.size == 0:
            continue
        sub = batch.take(sel)
        for j, lid in enumerate(ids):
            M[i, j] = forced_listener_report(model, sub, lid).macro_f1
    return ids, M


# -- PCA / histogram ---------------------------------------------------------------

@dataclass
class PCAResult:
    projection: np.ndarray  # (n, 2)
    components: np.ndarray  # (2, dim), orthonormal rows
    centroid: np.ndarray  # (2,)
    eigenvalues: np.ndarray  # all, descending
    explained_variance: np.ndarray  # top-2 fractions
    mean: np.ndarray


def pca_2d(table) -> PCAResult:
    """Project rows onto the top two eigenvectors of the sample covariance.

    Components are signed so their largest-magnitude loading is positive.
    """
    X = np.asarray(table, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DegenerateData("PCA needs at least two rows")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    if not np.any(cov):
        raise DegenerateData("covariance is all zero")
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order]
    comps = vecs[:, :2].T.copy()
    for r in comps:
        if r[np.argmax(np.abs(r))] < 0:
            r *= -1.0
    proj = Xc @ comps.T
    return PCAResult(proj, comps, proj.mean(axis=0), vals, vals[:2] / vals.sum(), mean)


@dataclass
class Histogram:
    counts: np.ndarray
    edges: np.ndarray
    mean: float
    median: float


def f1_histogram(scores, n_bins: int = N_BINS) -> Histogram:
    """Equal-width bins on [0, 1]; the last bin is closed at 1.0."""
    s = np.asarray(list(scores), dtype=np.float64)
    if np.any((s < 0) | (s > 1)) or np.any(~np.isfinite(s)):
        raise OutOfRangeScore("scores must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    mean = float(s.mean()) if s.size else float("nan")
    median = float(np.median(s)) if s.size else float("nan")
    return Histogram(counts, edges, mean, median)


@dataclass
class EmbeddingAnalysis:
    per_listener_f1: dict = field(default_factory=dict)
    projection: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    centroid: np.ndarray = field(default_factory=lambda: np.zeros(2))
    histogram: Histogram | None = None
    explained_variance: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def mean(self) -> float:
        return self.histogram.mean if self.histogram else float("nan")

    @property
    def median(self) -> float:
        return self.histogram.median if self.histogram else float("nan")


def analyze_listeners(model, batch, listener_ids: Sequence[str] | None = None) -> EmbeddingAnalysis:
    """Per-listener sweep plus a 2-D PCA of the swept listeners' table rows."""
    scores = per_listener_f1(model, batch, listener_ids)
    ids = list(scores)
    rows = model.params["lst.table"][model.ids_to_index(ids, "listener")]
    pca = pca_2d(rows)
    return EmbeddingAnalysis(scores, pca.projection, pca.centroid,
                             f1_histogram(scores.values()), pca.explained_variance)


# -- reports -------------------------------------------------------------------------

def _provenance_line(provenance: Mapping | None) -> str:
    if not provenance:
        return ""
    return "# " + " ".join(f"{k}={provenance[k]}" for k in sorted(provenance)) + "\n"


def _write(path, text: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


EVAL_HEADER = ["metric", "NO_BC", "YEAH", "UH_HUH", "value"]


def eval_csv(report: EvalReport, provenance: Mapping | None = None) -> str:
    """Rows: accuracy, macro_f1, n_instances, f1 per class, confusion rows per gold class."""
    buf = io.StringIO()
    buf.write(_provenance_line(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_HEADER)
    w.writerow(["accuracy", "", "", "", fmt(report.accuracy)])
    w.writerow(["macro_f1", "", "", "", fmt(report.macro_f1)])
    w.writerow(["n_instances", "", "", "", report.n_instances])
    w.writerow(["f1", *map(fmt, report.per_class_f1), ""])
    for name, row in zip(CLASS_NAMES, report.confusion):
        w.writerow([f"confusion_gold_{name}", *map(int, row), ""])
    return buf.getvalue()


LISTENER_HEADER = ["listener_id", "macro_f1", "pc1", "pc2"]


def listener_csv(analysis: EmbeddingAnalysis, provenance: Mapping | None = None) -> str:
    buf = io.StringIO()
    buf.write(_provenance_line(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LISTENER_HEADER)
    for i, (lid, f1) in enumerate(analysis.per_listener_f1.items()):
        pc = analysis.projection[i] if i < len(analysis.projection) else (np.nan, np.nan)
        w.writerow([lid, fmt(f1), fmt(pc[0]), fmt(pc[1])])
    return buf.getvalue()


HIST_HEADER = ["bin", "lower", "upper", "count"]


def histogram_csv(hist: Histogram | None, provenance: Mapping | None = None) -> str:
    buf = io.StringIO()
    buf.write(_provenance_line(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HIST_HEADER)
    if hist is not None:
        for i, c in enumerate(hist.counts):
            w.writerow([i, fmt(hist.edges[i]), fmt(hist.edges[i + 1]), int(c)])
    return buf.getvalue()


# SVG plots share one 400x300 canvas with a 50 px margin.
W_PX, H_PX, M_PX = 400, 300, 50


class _Canvas:
    def __init__(self, title: str, provenance: Mapping | None = None):
        self.items = []
        self.title = title
        self.provenance = provenance

    def add(self, s: str):
        self.items.append(s)

    def axes(self, xlabel: str, ylabel: str, xr=(0.0, 1.0), yr=(0.0, 1.0)):
        x0, y0, x1, y1 = M_PX, H_PX - M_PX, W_PX - M_PX, M_PX
        self.add(f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
        self.add(f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
        self.add(f'<text x="{(x0 + x1) // 2}" y="{H_PX - 15}" text-anchor="middle">{escape(xlabel)}</text>')
        self.add(f'<text x="15" y="{(y0 + y1) // 2}" text-anchor="middle" '
                 f'transform="rotate(-90 15 {(y0 + y1) // 2})">{escape(ylabel)}</text>')
        self.add(f'<text x="{x0}" y="{y0 + 15}" text-anchor="middle">{fmt(xr[0])}</text>')
        self.add(f'<text x="{x1}" y="{y0 + 15}" text-anchor="middle">{fmt(xr[1])}</text>')
        self.add(f'<text x="{x0 - 5}" y="{y0}" text-anchor="end">{fmt(yr[0])}</text>')
        self.add(f'<text x="{x0 - 5}" y="{y1}" text-anchor="end">{fmt(yr[1])}</text>')
        self.xr, self.yr = xr, yr

    def px(self, x, y):
        (a, b), (c, d) = self.xr, self.yr
        fx = 0.5 if b == a else (x - a) / (b - a)
        fy = 0.5 if d == c else (y - c) / (d - c)
        return M_PX + fx * (W_PX - 2 * M_PX), H_PX - M_PX - fy * (H_PX - 2 * M_PX)

    def render(self) -> str:
        head = ['<?xml version="1.0" encoding="UTF-8"?>',
                f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W_PX}" height="{H_PX}">']
        if self.provenance:
            meta = " ".join(f"{k}={self.provenance[k]}" for k in sorted(self.provenance))
            head.append(f"<!-- {escape(meta)} -->")
        head.append(f'<title>{escape(self.title)}</title>')
        return "\n".join(head + self.items + ["</svg>", ""])


def _range(v):
    if len(v) == 0:
        return (0.0, 1.0)
    lo, hi = float(np.min(v)), float(np.max(v))
    pad = 0.05 * (hi - lo) if hi > lo else 0.5
    return (lo - pad, hi + pad)


def _color(f1: float) -> str:
    # low F1 blue -> high F1 red
    t = min(max(f1, 0.0), 1.0)
    return f"rgb({int(round(255 * t))},0,{int(round(255 * (1 - t)))})"


def scatter_svg(analysis: EmbeddingAnalysis, provenance: Mapping | None = None) -> str:
    """PCA scatter of listener embeddings colored by F1, centroid drawn as a cross."""
    cv = _Canvas("listener embeddings (PCA)", provenance)
    P = np.asarray(analysis.projection).reshape(-1, 2)
    cv.axes("PC1", "PC2", _range(P[:, 0]), _range(P[:, 1]))
    for (lid, f1), (x, y) in zip(analysis.per_listener_f1.items(), P):
        px, py = cv.px(x, y)
        cv.add(f'<circle class="marker" cx="{fmt(px)}" cy="{fmt(py)}" r="4" '
               f'fill="{_color(f1)}"><title>{escape(str(lid))} F1={fmt(f1)}</title></circle>')
    if len(P):
        cx, cy = cv.px(*analysis.centroid)
        cv.add(f'<path class="centroid" d="M{fmt(cx - 6)},{fmt(cy)} H{fmt(cx + 6)} '
               f'M{fmt(cx)},{fmt(cy - 6)} V{fmt(cy + 6)}" stroke="black" stroke-width="2"/>')
    return cv.render()


def histogram_svg(hist: Histogram | None, provenance: Mapping | None = None) -> str:
    cv = _Canvas("F1 distribution", provenance)
    top = float(hist.counts.max()) if hist is not None and hist.counts.size and hist.counts.max() else 1.0
    cv.axes("F1-score", "listeners", (0.0, 1.0), (0.0, top))
    if hist is not None:
        for i, c in enumerate(hist.counts):
            if not c:
                continue
            x0, y0 = cv.px(hist.edges[i], c)
            x1, y1 = cv.px(hist.edges[i + 1], 0)
            cv.add(f'<rect class="bar" x="{fmt(x0)}" y="{fmt(y0)}" width="{fmt(x1 - x0)}" '
                   f'height="{fmt(y1 - y0)}" fill="steelblue"/>')
    return cv.render()


def boxplot_svg(groups: Mapping[str, Sequence[float]], provenance: Mapping | None = None) -> str:
    """One box (quartiles, median, min/max whiskers) per named F1 distribution."""
    cv = _Canvas("F1 distributions", provenance)
    cv.axes("model", "F1-score", (0.0, max(len(groups), 1)), (0.0, 1.0))
    for i, (name, vals) in enumerate(groups.items()):
        v = np.asarray(list(vals), dtype=np.float64)
        xc = i + 0.5
        lx, _ = cv.px(xc, 0)
        cv.add(f'<text x="{fmt(lx)}" y="{H_PX - M_PX + 30}" text-anchor="middle">{escape(str(name))}</text>')
        if v.size == 0:
            continue
        q0, q1, q2, q3, q4 = np.percentile(v, [0, 25, 50, 75, 100])
        xl, _ = cv.px(xc - 0.25, 0)
        xr, _ = cv.px(xc + 0.25, 0)
        _, y0 = cv.px(0, q0)
        _, y1 = cv.px(0, q1)
        _, y2 = cv.px(0, q2)
        _, y3 = cv.px(0, q3)
        _, y4 = cv.px(0, q4)
        cv.add(f'<line class="whisker" x1="{fmt(lx)}" y1="{fmt(y0)}" x2="{fmt(lx)}" y2="{fmt(y4)}" stroke="black"/>')
        cv.add(f'<rect class="box" x="{fmt(xl)}" y="{fmt(y3)}" width="{fmt(xr - xl)}" '
               f'height="{fmt(y1 - y3)}" fill="lightgreen" stroke="black"/>')
        cv.add(f'<line class="median" x1="{fmt(xl)}" y1="{fmt(y2)}" x2="{fmt(xr)}" y2="{fmt(y2)}" stroke="black"/>')
    return cv.render()


def emit_reports(result, out_dir, prefix: str = "", provenance: Mapping | None = None,
                 box_groups: Mapping[str, Sequence[float]] | None = None) -> list[Path]:
    """Write CSV (and for embedding analyses, SVG) reports; returns the paths written."""
    out = Path(out_dir)
    written = []

    def put(name, text):
        p = out / (prefix + name)
        _write(p, text)
        written.append(p)

    if isinstance(result, EvalReport):
        put("eval.csv", eval_csv(result, provenance))
    elif isinstance(result, EmbeddingAnalysis):
        put("listeners.csv", listener_csv(result, provenance))
        put("histogram.csv", histogram_csv(result.histogram, provenance))
        put("scatter.svg", scatter_svg(result, provenance))
        put("histogram.svg", histogram_svg(result.histogram, provenance))
        groups = box_groups if box_groups is not None else {"listeners": list(result.per_listener_f1.values())}
        put("boxplot.svg", boxplot_svg(groups, provenance))
    else:
        raise TypeError(f"cannot report on {type(result).__name__}")
    return written
