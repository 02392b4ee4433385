"""Scoring trained models over subject-disjoint folds, plus a synthetic data generator."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import model as M
from .errors import EmptyDataError
from .estimator import MIResNetClassifier
from .ptb import LabeledSegment, make_splits, stack_segments, subject_classes
from .seeding import derive_rng, derive_seed
from .trainer import TrainConfig


def confusion_matrix(y_true, y_pred, n_classes=M.N_CLASSES):
    """Counts with rows = true class, columns = predicted class."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def accuracy_from_confusion(cm):
    total = cm.sum()
    if total == 0:
        raise EmptyDataError("empty confusion matrix")
    return float(100.0 * np.trace(cm) / total)


def evaluate(model, X, y):
    """Segment-level accuracy (percent) and confusion matrix.

    ``model`` is a fitted :class:`MIResNetClassifier` or a ``ModelParams``.
    Batch norm runs in inference mode.
    """
    if len(X) == 0:
        raise EmptyDataError("nothing to evaluate")
    if isinstance(model, M.ModelParams):
        pred = M.predict(model, X)
    else:
        pred = model.predict(X)
    cm = confusion_matrix(y, pred)
    return accuracy_from_confusion(cm), cm


def confidence_interval(accuracies, level=0.95):
    """Mean and Student-t half-width with ``n - 1`` degrees of freedom."""
    acc = np.asarray(accuracies, dtype=np.float64)
    if acc.size < 2:
        raise ValueError("a confidence interval needs at least two values")
    t = stats.t.ppf(0.5 + level / 2, df=acc.size - 1)
    return float(acc.mean()), float(t * acc.std(ddof=1) / np.sqrt(acc.size))


@dataclass
class FoldReport:
    fold: int
    accuracy: float
    confusion: np.ndarray
    n_train: int
    n_val: int
    n_test: int
    seed: int
    history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "fold": self.fold,
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "seed": self.seed,
            "history": self.history,
        }


@dataclass
class CvSummary:
    fold_accuracies: list
    mean_accuracy: float
    ci95_half_width: float
    seed: int
    config: dict

    def to_dict(self, reports=()):
        return {
            "folds": [r.to_dict() for r in reports] or [{"accuracy": a} for a in self.fold_accuracies],
            "mean_accuracy": self.mean_accuracy,
            "ci95_half_width": self.ci95_half_width,
            "seed": self.seed,
            "config": self.config,
        }


def run_cross_validation(segments, cfg: TrainConfig = TrainConfig(), seed=None, fold_count=5, log=None):
    """Train and test on ``fold_count`` independent subject-disjoint splits.

    Returns ``(summary, reports)``. ``seed`` defaults to ``cfg.seed``; fold
    ``k`` uses split seed ``derive(seed, "folds", k)`` and model seed
    ``derive(seed, "init", k)``.
    """
    if not segments:
        raise EmptyDataError("no segments to cross-validate")
    seed = cfg.seed if seed is None else seed
    X, y, subjects = stack_segments(segments)
    plans = make_splits(subject_classes(segments), fold_count=fold_count, seed=seed)
    reports = []
    for plan in plans:
        train = np.isin(subjects, plan.train)
        val = np.isin(subjects, plan.val)
        test = np.isin(subjects, plan.test)
        if set(subjects[test]) & set(subjects[train]):
            raise AssertionError(f"fold {plan.fold}: test subjects leaked into training data")
        if not train.any() or not test.any():
            raise EmptyDataError(f"fold {plan.fold} has an empty training or test set")
        fold_seed = derive_seed(seed, "init", plan.fold)
        est = MIResNetClassifier(
            epochs=cfg.epochs, batch_size=cfg.batch_size, learning_rate=cfg.lr,
            beta_1=cfg.beta1, beta_2=cfg.beta2, epsilon=cfg.epsilon, random_state=fold_seed,
        )
        est.fit(X[train], y[train], X[val] if val.any() else None, y[val] if val.any() else None)
        acc, cm = evaluate(est, X[test], y[test])
        report = FoldReport(plan.fold, acc, cm, int(train.sum()), int(val.sum()), int(test.sum()),
                            fold_seed, est.history_)
        reports.append(report)
        if log is not None:
            log(f"fold {plan.fold + 1}/{fold_count}: accuracy {acc:.2f}% "
                f"({report.n_train} train / {report.n_val} val / {report.n_test} test segments)")
    accs = [r.accuracy for r in reports]
    mean, half = confidence_interval(accs)
    return CvSummary(accs, mean, half, seed, cfg.to_dict()), reports


def confusion_csv(cm) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["true\\predicted", *M.CLASS_NAMES])
    for name, row in zip(M.CLASS_NAMES, np.asarray(cm)):
        writer.writerow([name, *(int(v) for v in row)])
    return buf.getvalue()


def write_reports(out_dir, summary: CvSummary, reports):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in reports:
        (out_dir / f"confusion_fold{r.fold + 1}.csv").write_text(confusion_csv(r.confusion))
    (out_dir / "summary.json").write_text(json.dumps(summary.to_dict(reports), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def synth_template(label, length=500, fs=100.0, n_leads=12):
    """Noise-free window for class ``label``.

    Every lead carries a ``(1 + label)`` Hz sinusoid whose amplitude
    (0.5 to 1.0 mV) follows a class-specific pattern across leads.
    """
    t = np.arange(length) / fs
    leads = np.arange(n_leads)
    amp = 0.75 + 0.25 * np.cos(2 * np.pi * (label + 1) * (leads + 1) / n_leads)
    return amp[None, :] * np.sin(2 * np.pi * (1 + label) * t[:, None])


def synth_dataset(num_per_class, seed=0, noise=0.05):
    """``7 * num_per_class`` labeled windows, one synthetic subject each."""
    rng = derive_rng(seed, "synth")
    segments = []
    for c in range(M.N_CLASSES):
        template = synth_template(c)
        for i in range(num_per_class):
            window = template + rng.normal(0.0, noise, template.shape) if noise else template.copy()
            segments.append(LabeledSegment(window, c, f"synth-{c}-{i:04d}"))
    return segments
