"""Grouped k-fold cross-validation, confusion metrics, AUC, report tables.

Male is the positive class throughout. Precision/recall/F1 zero-division
cases return 0 and are flagged degenerate rather than raising. AUC is the
rank statistic with tie credit (equal to trapezoidal ROC integration).
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .classifier import ClassifierConfig, TrainingSample, train_classifier
from .dataset import DatasetManifest, FoldPlan
from .errors import ChickfaceError, ProtocolError, RejectedInputError, UndefinedMetricError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    tn: int
    fp: int
    fn: int
    tp: int

    def __post_init__(self):
        if min(self.tn, self.fp, self.fn, self.tp) < 0:
            raise RejectedInputError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tn + self.fp + self.fn + self.tp


@dataclass
class MetricsReport:
    per_fold: list[dict]
    averages: dict

    @classmethod
    def from_folds(cls, per_fold: list[dict]) -> "MetricsReport":
        keys = ("accuracy", "precision", "recall", "f1", "auc")
        averages = {k: float(np.mean([f[k] for f in per_fold])) for k in keys}
        return cls(per_fold=per_fold, averages=averages)


@dataclass
class CVResult:
    config: ClassifierConfig
    fold_plan: FoldPlan
    report: MetricsReport
    averaged_cm: np.ndarray
    histories: list[list[dict]] = field(default_factory=list)
    crop_kind: str = "none"

    def to_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "crop_kind": self.crop_kind,
            "fold_plan": self.fold_plan.to_dict(),
            "report": {"per_fold": self.report.per_fold, "averages": self.report.averages},
            "averaged_cm": np.asarray(self.averaged_cm).tolist(),
            "histories": self.histories,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CVResult":
        d = json.loads(Path(path).read_text())
        cfg = dict(d["config"])
        cfg["head_dims"] = tuple(cfg["head_dims"])
        return cls(
            config=ClassifierConfig(**cfg),
            fold_plan=FoldPlan.from_dict(d["fold_plan"]),
            report=MetricsReport(per_fold=d["report"]["per_fold"], averages=d["report"]["averages"]),
            averaged_cm=np.asarray(d["averaged_cm"], dtype=np.float64),
            histories=d.get("histories", []),
            crop_kind=d.get("crop_kind", "none"),
        )


def confusion(preds: list[str], labels: list[str]) -> ConfusionMatrix:
    """Counts with male as the positive class."""
    if len(preds) != len(labels):
        raise RejectedInputError(f"length mismatch: {len(preds)} preds vs {len(labels)} labels")
    tn = fp = fn = tp = 0
    for p, y in zip(preds, labels):
        if y == "male":
            tp += p == "male"
            fn += p == "female"
        else:
            tn += p == "female"
            fp += p == "male"
    return ConfusionMatrix(tn=tn, fp=fp, fn=fn, tp=tp)


def metrics(cm: ConfusionMatrix) -> dict:
    """Accuracy, precision, recall, F1 (male-positive).

    F1 uses tp / (tp + 0.5*(fp + fn)). Zero denominators give 0 and the
    metric name lands in the returned `degenerate` set.
    """
    degenerate: set[str] = set()

    def ratio(num: float, den: float, name: str) -> float:
        if den == 0:
            degenerate.add(name)
            return 0.0
        return num / den

    out = {
        "accuracy": ratio(cm.tp + cm.tn, cm.total, "accuracy"),
        "precision": ratio(cm.tp, cm.tp + cm.fp, "precision"),
        "recall": ratio(cm.tp, cm.tp + cm.fn, "recall"),
        "f1": ratio(cm.tp, cm.tp + 0.5 * (cm.fp + cm.fn), "f1"),
    }
    out["degenerate"] = sorted(degenerate)
    return out


def metrics_macro(cm: ConfusionMatrix) -> dict:
    """Macro-averaged precision/recall/F1 over both class orientations."""
    male = metrics(cm)
    female = metrics(ConfusionMatrix(tn=cm.tp, fp=cm.fn, fn=cm.fp, tp=cm.tn))
    return {
        "precision": (male["precision"] + female["precision"]) / 2.0,
        "recall": (male["recall"] + female["recall"]) / 2.0,
        "f1": (male["f1"] + female["f1"]) / 2.0,
    }


def auc(scores: list[float], labels: list[str]) -> float:
    """Tie-adjusted rank AUC: P(score_male > score_female) + 0.5 P(tie).

    Raises when only one class is present.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray([1 if g == "male" else 0 for g in labels])
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC undefined: need both classes present")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum_pos = float(ranks[y == 1].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def average_confusion(cms: list[ConfusionMatrix]) -> np.ndarray:
    """Row-normalize each matrix to rates, then element-wise mean.

    Output rows are (actual female, actual male), columns (predicted female,
    predicted male); each output row sums to 1.
    """
    if not cms:
        raise RejectedInputError("no confusion matrices to average")
    rates = []
    for cm in cms:
        neg = cm.tn + cm.fp
        pos = cm.fn + cm.tp
        if neg == 0 or pos == 0:
            raise RejectedInputError("cannot row-normalize a confusion matrix with an empty class")
        rates.append(np.array([[cm.tn / neg, cm.fp / neg], [cm.fn / pos, cm.tp / pos]]))
    return np.mean(rates, axis=0)


# --- cross-validation driver ----------------------------------------------------


def samples_from_manifest(manifest: DatasetManifest, data_root: str | Path) -> list[TrainingSample]:
    """Accepted frames -> training samples (images loaded lazily by the caller)."""
    from PIL import Image

    root = Path(data_root)
    samples = []
    for frame in manifest.accepted_frames():
        image = np.asarray(Image.open(root / frame.image_ref).convert("RGB"))
        samples.append(
            TrainingSample(
                x=image,
                gender=manifest.gender_of(frame.chick_id),
                chick_id=frame.chick_id,
                frame_id=frame.frame_id,
            )
        )
    return samples


def run_cross_validation(
    samples: list[TrainingSample],
    fold_plan: FoldPlan,
    cfg: ClassifierConfig,
    crop_kind: str = "none",
) -> CVResult:
    """Train on folds != i, validate on fold i, score the best epoch, average.

    Validation chicks are asserted disjoint from training chicks inside the
    driver as well as by train_classifier itself.
    """
    if not samples:
        raise RejectedInputError("no samples for cross-validation")
    unknown = {s.chick_id for s in samples} - set(fold_plan.assignment)
    if unknown:
        raise ProtocolError(f"samples reference chicks missing from the fold plan: {sorted(unknown)[:5]}")

    per_fold: list[dict] = []
    cms: list[ConfusionMatrix] = []
    histories: list[list[dict]] = []
    for fold in range(fold_plan.k):
        val_ids = fold_plan.chicks_in_fold(fold)
        train_samples = [s for s in samples if s.chick_id not in val_ids]
        val_samples = [s for s in samples if s.chick_id in val_ids]
        if not train_samples or not val_samples:
            raise ProtocolError(f"fold {fold} has an empty split")
        assert not ({s.chick_id for s in train_samples} & {s.chick_id for s in val_samples})

        fold_cfg = ClassifierConfig(**{**asdict(cfg), "seed": cfg.seed + fold})
        try:
            result = train_classifier(train_samples, val_samples, fold_cfg)
        except ChickfaceError as exc:
            raise type(exc)(f"fold {fold}: {exc}") from exc
        scores = result.best["val_scores"]
        labels = [s.gender for s in val_samples]
        preds = ["male" if p > cfg.threshold else "female" for p in scores]
        cm = confusion(preds, labels)
        m = metrics(cm)
        try:
            fold_auc = auc(list(scores), labels)
        except UndefinedMetricError:
            # single-gender validation fold (e.g. one chick per fold)
            log.warning("fold %d: AUC undefined (single-class validation)", fold)
            fold_auc = float("nan")
        per_fold.append(
            {
                "fold": fold,
                "accuracy": m["accuracy"],
                "precision": m["precision"],
                "recall": m["recall"],
                "f1": m["f1"],
                "auc": fold_auc,
                "macro": metrics_macro(cm),
                "cm": {"tn": cm.tn, "fp": cm.fp, "fn": cm.fn, "tp": cm.tp},
                "best_epoch": result.best["epoch"],
            }
        )
        cms.append(cm)
        histories.append(result.history)
        log.info("fold %d: acc=%.4f auc=%.4f (best epoch %s)", fold, m["accuracy"], fold_auc, result.best["epoch"])

    report = MetricsReport.from_folds(per_fold)
    try:
        averaged_cm = average_confusion(cms)
    except RejectedInputError:
        log.warning("averaged confusion undefined (a fold has an empty class)")
        averaged_cm = np.full((2, 2), float("nan"))
    return CVResult(
        config=cfg,
        fold_plan=fold_plan,
        report=report,
        averaged_cm=averaged_cm,
        histories=histories,
        crop_kind=crop_kind,
    )


# --- report rendering -----------------------------------------------------------

_METRIC_COLS = ("accuracy", "precision", "recall", "f1", "auc")


def render_report(cv_results: list[CVResult]) -> dict[str, str]:
    """Per-fold and averaged tables as CSV and aligned text.

    Returns {"per_fold.csv", "averages.csv", "report.txt"}. Averaged rows are
    sorted by accuracy descending; text values show 2 decimals, CSV keeps
    full precision (repr round-trips exactly).
    """
    per_fold_buf = io.StringIO()
    w = csv.writer(per_fold_buf)
    w.writerow(["backbone", "crop_kind", "fold"] + list(_METRIC_COLS) + ["precision_macro", "recall_macro", "f1_macro"])
    for r in cv_results:
        for f in r.report.per_fold:
            w.writerow(
                [r.config.backbone, r.crop_kind, f["fold"]]
                + [repr(float(f[c])) for c in _METRIC_COLS]
                + [repr(float(f["macro"][c])) for c in ("precision", "recall", "f1")]
            )

    ordered = sorted(cv_results, key=lambda r: -r.report.averages["accuracy"])
    avg_buf = io.StringIO()
    w = csv.writer(avg_buf)
    w.writerow(["backbone", "crop_kind"] + list(_METRIC_COLS))
    for r in ordered:
        w.writerow(
            [r.config.backbone, r.crop_kind] + [repr(float(r.report.averages[c])) for c in _METRIC_COLS]
        )

    lines = ["Average performance per backbone (sorted by accuracy)", ""]
    header = f"{'backbone':<16} {'crop':<7} " + " ".join(f"{c:>9}" for c in _METRIC_COLS)
    lines.append(header)
    lines.append("-" * len(header))
    for r in ordered:
        lines.append(
            f"{r.config.backbone:<16} {r.crop_kind:<7} "
            + " ".join(f"{100 * r.report.averages[c]:>9.2f}" for c in _METRIC_COLS)
        )
    lines.append("")
    lines.append("Per-fold results")
    lines.append("")
    header2 = f"{'backbone':<16} {'crop':<7} {'fold':>4} " + " ".join(f"{c:>9}" for c in _METRIC_COLS)
    lines.append(header2)
    lines.append("-" * len(header2))
    for r in cv_results:
        for f in r.report.per_fold:
            lines.append(
                f"{r.config.backbone:<16} {r.crop_kind:<7} {f['fold']:>4} "
                + " ".join(f"{100 * f[c]:>9.2f}" for c in _METRIC_COLS)
            )
    return {
        "per_fold.csv": per_fold_buf.getvalue(),
        "averages.csv": avg_buf.getvalue(),
        "report.txt": "\n".join(lines) + "\n",
    }


def write_report(cv_results: list[CVResult], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, content in render_report(cv_results).items():
        path = out_dir / name
        path.write_text(content)
        written.append(path)
    return written
