"""ROC analysis, low-FPR operating points and dataset diagnostics."""

from __future__ import annotations

import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .records import BENIGN, MALICIOUS, CommandRecord

DEFAULT_FPR_TARGETS = (1e-4, 1e-5, 1e-6)


def fpr_key(target: float) -> str:
    """Compact key for an FPR budget: 1e-05 -> "1e-5"."""
    mantissa, exponent = f"{target:e}".split("e")
    mantissa = mantissa.rstrip("0").rstrip(".")
    return f"{mantissa}e{int(exponent)}"


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be 1-d and aligned")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if not (y == 1).any() or not (y == 0).any():
        raise ValueError("both classes must be present")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return s, y.astype(np.int64)


@dataclass(frozen=True)
class RocCurve:
    """Operating points ordered by decreasing threshold.

    Point ``i`` flags every score ``>= thresholds[i]``; the first point uses
    an infinite threshold so that it flags nothing.
    """

    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_pos: int
    n_neg: int

    @property
    def tpr(self) -> np.ndarray:
        return self.tp / self.n_pos

    @property
    def fpr(self) -> np.ndarray:
        return self.fp / self.n_neg

    @property
    def auc(self) -> float:
        # trapezoids on integer counts, divided once at the end
        dfp = np.diff(self.fp)
        area2 = int(np.sum(dfp * (self.tp[1:] + self.tp[:-1])))
        return area2 / (2 * self.n_pos * self.n_neg)

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of tied scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    return RocCurve(
        thresholds=np.r_[np.inf, s[ends]],
        tp=np.r_[0, tp].astype(np.int64),
        fp=np.r_[0, fp].astype(np.int64),
        n_pos=int(y.sum()),
        n_neg=int(len(y) - y.sum()),
    )


def tpr_at_fpr(curve: RocCurve, target_fpr: float) -> tuple[float, float]:
    """Best TPR whose FPR stays within ``target_fpr`` and its threshold.

    The budget is applied to integer false-positive counts, so it is never
    exceeded and never interpolated.
    """
    if not 0.0 <= target_fpr <= 1.0:
        raise ValueError(f"target_fpr must be in [0, 1], got {target_fpr}")
    max_fp = math.floor(target_fpr * curve.n_neg * (1 + 1e-12))
    idx = int(np.flatnonzero(curve.fp <= max_fp)[-1])
    return float(curve.tp[idx] / curve.n_pos), float(curve.thresholds[idx])


def recall_at(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    """Fraction of malicious samples scoring at or above ``threshold``."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos = y == MALICIOUS
    if not pos.any():
        raise ValueError("no malicious samples")
    return float(np.mean(s[pos] >= threshold))


@dataclass
class EvalReport:
    auc: float
    f1: float
    accuracy: float
    tpr_at_fpr: dict[str, float]
    thresholds: dict[str, float | None]
    confusion: dict[str, int]
    model: str = ""
    dataset: str = ""
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "dataset": self.dataset,
            "auc": self.auc,
            "f1": self.f1,
            "accuracy": self.accuracy,
            "tpr_at_fpr": dict(self.tpr_at_fpr),
            "thresholds": dict(self.thresholds),
            "threshold_policy": "f1_scan",
            "confusion": dict(self.confusion),
            "diagnostics": self.diagnostics,
        }


def _finite_or_none(t: float) -> float | None:
    return t if math.isfinite(t) else None


def summary_metrics(scores: Sequence[float], labels: Sequence[int],
                    fpr_targets: Iterable[float] = DEFAULT_FPR_TARGETS) -> EvalReport:
    """AUC, TPR at each FPR budget, and F1/accuracy at the F1-maximizing threshold."""
    curve = roc_curve(scores, labels)
    P, N = curve.n_pos, curve.n_neg
    tp, fp = curve.tp, curve.fp
    fn, tn = P - tp, N - fp
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(tp > 0, 2 * tp / (2 * tp + fp + fn), 0.0)
    best = int(np.argmax(f1))
    tprs, thresholds = {}, {"f1": _finite_or_none(float(curve.thresholds[best]))}
    for t in fpr_targets:
        rate, thr = tpr_at_fpr(curve, t)
        tprs[fpr_key(t)] = rate
        thresholds[f"fpr_{fpr_key(t)}"] = _finite_or_none(thr)
    return EvalReport(
        auc=curve.auc,
        f1=float(f1[best]),
        accuracy=float((tp[best] + tn[best]) / (P + N)),
        tpr_at_fpr=tprs,
        thresholds=thresholds,
        confusion={"tp": int(tp[best]), "fp": int(fp[best]), "tn": int(tn[best]), "fn": int(fn[best])},
    )


def roc_csv(curve: RocCurve, meta: dict | None = None) -> str:
    """ROC points as CSV; ``meta`` goes into a leading ``#`` comment line."""
    buf = io.StringIO()
    if meta:
        buf.write("# " + " ".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n")
    buf.write("threshold,fpr,tpr\n")
    for thr, f, t in curve.points():
        buf.write(f"{thr!r},{f!r},{t!r}\n")
    return buf.getvalue()


# --------------------------------------------------------------------------
# dataset diagnostics
# --------------------------------------------------------------------------

def length_histogram(lengths: Iterable[int]) -> list[dict]:
    """Counts per power-of-two bin ``[2**k, 2**(k+1))``; empty commands land in ``[0, 1)``."""
    counts: Counter = Counter()
    for n in lengths:
        counts[-1 if n == 0 else int(n).bit_length() - 1] += 1
    if not counts:
        return []
    out = []
    for k in range(min(counts), max(counts) + 1):
        lo, hi = (0, 1) if k < 0 else (2**k, 2 ** (k + 1))
        out.append({"lo": lo, "hi": hi, "count": counts.get(k, 0)})
    return out


def distribution_report(records: Sequence[CommandRecord], tokenizer: Callable[[str], list[str]]) -> dict:
    """Token overlap between classes and the token-length distribution."""
    if not records:
        raise ValueError("dataset is empty")
    benign: set[str] = set()
    evil: set[str] = set()
    lengths = []
    for r in records:
        toks = tokenizer(r.cmd)
        lengths.append(len(toks))
        (evil if r.label == MALICIOUS else benign).update(toks)
    return {
        "venn": {
            "benign_only": len(benign - evil),
            "malicious_only": len(evil - benign),
            "shared": len(benign & evil),
        },
        "length_histogram": length_histogram(lengths),
        "counts": {
            "benign": sum(r.label == BENIGN for r in records),
            "malicious": sum(r.label == MALICIOUS for r in records),
        },
    }
