"""Inference orchestration over a trained model.

Per head, an input is mapped to gated activations, rectified by the
chosen detector, and reduced to a scalar in-distribution score; the
head with the highest score wins the task-id, and the class inside the
winning task comes from the head's original (unrectified) logits, which
makes within-task accuracy identical across detectors. Replay heads
carry an extra OOD logit that is excluded from both scoring and class
prediction, so scores stay comparable across the buffer-free and replay
paths.

Closed-world evaluation at step k restricts inference to the first k
heads over the test sets of tasks 1..k; open-world evaluation scores
every test sample and splits them into seen (tasks 1..k) and unseen
(later tasks) populations. The system-level score of a sample is the
maximum per-head score, the value realized at the task-id argmax.

Everything here is read-only over the model; per-sample work items are
independent and safe to parallelize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .detectors import Detector, _nearest_rank_index, build_dice_mask
from .errors import ModelError
from .model import ModelState, activations
from .scorers import Scorer

__all__ = [
    "Prediction",
    "ScoreTable",
    "ClosedWorldResult",
    "head_score",
    "predict_task",
    "predict_class",
    "predict",
    "score_table",
    "evaluate_closed",
    "evaluate_open",
    "mixed_scores",
    "run_sweep",
]


@dataclass(frozen=True)
class Prediction:
    """Task id, global class id, and the winning head's score."""

    predicted_task: int
    predicted_class: int
    ind_score: float


@dataclass(frozen=True)
class ScoreTable:
    """Per-sample, per-head scores for one detector-scorer pair."""

    scores: np.ndarray  # (n, trained_tasks)
    labels: np.ndarray  # (n,) global class ids
    tasks: np.ndarray  # (n,) true task ids
    detector: str
    scorer: str


@dataclass(frozen=True)
class ClosedWorldResult:
    """Step accuracy over all seen classes plus per-task accuracies."""

    accuracy: float
    per_task: tuple[float, ...]


def _as_detector(detector) -> Detector:
    return detector if isinstance(detector, Detector) else Detector(str(detector))


def _as_scorer(scorer) -> Scorer:
    return scorer if isinstance(scorer, Scorer) else Scorer(str(scorer))


def _detector_logits_batch(model: ModelState, task: int, z: np.ndarray,
                           detector: Detector) -> np.ndarray:
    head = model.heads[task]
    kind = detector.kind
    if kind == "base":
        return z @ head.weights + head.bias
    if kind == "react":
        threshold = model.stats[task].react_threshold
        return np.minimum(z, threshold) @ head.weights + head.bias
    if kind == "scale":
        return (z * _scale_factors(z, detector.percentile)[:, None]) @ head.weights + head.bias
    if kind == "dice":
        stats = model.stats[task]
        mask = build_dice_mask(head.weights.T, stats.mean_activations, detector.percentile)
        return z @ (head.weights * mask.T) + head.bias
    raise ValueError(f"unknown detector {kind!r}")


def _scale_factors(z: np.ndarray, p: float) -> np.ndarray:
    """Per-row exp(total / top-percentile mass); all-zero rows stay unscaled."""
    n, width = z.shape
    k = _nearest_rank_index(p, width)
    thresholds = np.sort(z, axis=1)[:, k - 1]
    totals = z.sum(axis=1)
    tops = np.where(z >= thresholds[:, None], z, 0.0).sum(axis=1)
    ratios = np.ones(n)
    live = totals > 0
    ratios[live] = totals[live] / tops[live]
    factors = np.exp(ratios)
    factors[~live] = 1.0
    return factors


def _strip_ood(head, logits: np.ndarray) -> np.ndarray:
    return logits[..., :-1] if head.ood_logit_present else logits


def _scores_batch(model: ModelState, task: int, z: np.ndarray,
                  detector: Detector, scorer: Scorer) -> np.ndarray:
    logits = _strip_ood(model.heads[task], _detector_logits_batch(model, task, z, detector))
    return _scores_from_logits(model, task, logits, z, scorer)


def _head_scores_matrix(model: ModelState, x: np.ndarray, detector: Detector,
                        scorer: Scorer, upto: int) -> np.ndarray:
    columns = [
        _scores_batch(model, t, activations(model, t, x), detector, scorer)
        for t in range(upto)
    ]
    return np.column_stack(columns)


def head_score(model: ModelState, task: int, detector, scorer, x: np.ndarray) -> float:
    """In-distribution score of one input under one head."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ModelError(f"expected a single input vector, got shape {x.shape}")
    z = activations(model, task, x[None, :])
    return float(_scores_batch(model, task, z, _as_detector(detector), _as_scorer(scorer))[0])


def predict_task(model: ModelState, detector, scorer, x: np.ndarray,
                 upto: int | None = None) -> int:
    """Head with the highest score; ties break toward the lower task id."""
    upto = model.trained_tasks if upto is None else upto
    if upto < 1:
        raise ModelError("task prediction needs at least one trained head")
    x = np.asarray(x, dtype=np.float64)
    scores = _head_scores_matrix(model, x[None, :], _as_detector(detector),
                                 _as_scorer(scorer), upto)
    return int(scores[0].argmax())


def predict_class(model: ModelState, x: np.ndarray, task: int,
                  ind_score: float = float("nan")) -> Prediction:
    """Class inside ``task`` from the head's original unrectified logits.

    The argmax over softmax probabilities equals the argmax over logits;
    any OOD logit is excluded. The global class id offsets the local
    argmax by the task's label base.
    """
    z = activations(model, task, np.asarray(x, dtype=np.float64)[None, :])
    head = model.heads[task]
    logits = _strip_ood(head, z @ head.weights + head.bias)
    local = int(logits[0].argmax())
    return Prediction(task, task * model.classes_per_task + local, ind_score)


def predict(model: ModelState, detector, scorer, x: np.ndarray) -> Prediction:
    """Full open-world prediction: task-id, class, and system score."""
    detector = _as_detector(detector)
    scorer = _as_scorer(scorer)
    x = np.asarray(x, dtype=np.float64)
    scores = _head_scores_matrix(model, x[None, :], detector, scorer,
                                 model.trained_tasks)[0]
    task = int(scores.argmax())
    return predict_class(model, x, task, ind_score=float(scores[task]))


def _stack_tests(stream, upto: int | None = None):
    upto = stream.num_tasks if upto is None else upto
    parts = [stream.tasks[t][1] for t in range(upto)]
    features = np.concatenate([p.features for p in parts])
    labels = np.concatenate([p.labels for p in parts])
    tasks = np.concatenate([np.full(len(p), t, dtype=np.int64)
                            for t, p in enumerate(parts)])
    return features, labels, tasks


def _check_compatible(model: ModelState, stream) -> None:
    if model.trained_tasks == 0:
        raise ModelError("model has no trained heads")
    if stream.tasks[0][0].dim != model.trunk.dim_in:
        raise ModelError(
            f"stream dim {stream.tasks[0][0].dim} does not match model input "
            f"dim {model.trunk.dim_in}"
        )
    if model.classes_per_task != stream.classes_per_task:
        raise ModelError(
            f"stream has {stream.classes_per_task} classes per task; model "
            f"was trained with {model.classes_per_task}"
        )


def score_table(model: ModelState, stream, detector, scorer) -> ScoreTable:
    """Per-head scores of every test sample in the stream."""
    detector = _as_detector(detector)
    scorer = _as_scorer(scorer)
    _check_compatible(model, stream)
    features, labels, tasks = _stack_tests(stream)
    scores = _head_scores_matrix(model, features, detector, scorer, model.trained_tasks)
    return ScoreTable(scores, labels, tasks, detector.kind, scorer.kind)


def _class_predictions_by_head(model: ModelState, features: np.ndarray,
                               upto: int) -> np.ndarray:
    """(upto, n) global class predictions of each head over all samples."""
    rows = []
    for t in range(upto):
        z = activations(model, t, features)
        head = model.heads[t]
        logits = _strip_ood(head, z @ head.weights + head.bias)
        rows.append(logits.argmax(axis=1) + t * model.classes_per_task)
    return np.stack(rows)


def evaluate_closed(model: ModelState, stream, upto: int, detector, scorer,
                    oracle_task: bool = False) -> ClosedWorldResult:
    """Accuracy over the test sets of tasks 1..upto with the first upto heads.

    A sample counts as correct only when its predicted global class
    matches the true label, which requires the task-id to be right.
    ``oracle_task`` routes each sample to its true head instead of the
    score argmax (task-incremental mode, used to check non-forgetting).
    """
    detector = _as_detector(detector)
    scorer = _as_scorer(scorer)
    _check_compatible(model, stream)
    if not 1 <= upto <= model.trained_tasks:
        raise ModelError(f"step {upto} outside 1..{model.trained_tasks}")
    features, labels, tasks = _stack_tests(stream, upto)
    if oracle_task:
        chosen = tasks
    else:
        scores = _head_scores_matrix(model, features, detector, scorer, upto)
        chosen = scores.argmax(axis=1)
    by_head = _class_predictions_by_head(model, features, upto)
    predicted = by_head[chosen, np.arange(len(labels))]
    correct = predicted == labels
    per_task = tuple(float(correct[tasks == t].mean()) for t in range(upto))
    return ClosedWorldResult(float(correct.mean()), per_task)


def evaluate_open(model: ModelState, stream, upto: int, detector, scorer):
    """System scores split into seen (tasks 1..upto) and unseen populations."""
    detector = _as_detector(detector)
    scorer = _as_scorer(scorer)
    _check_compatible(model, stream)
    if not 1 <= upto <= stream.num_tasks - 1:
        raise ModelError(
            f"open-world step must lie in 1..{stream.num_tasks - 1} "
            f"(no unseen classes remain at step {stream.num_tasks}); got {upto}"
        )
    features, _labels, tasks = _stack_tests(stream)
    system = _head_scores_matrix(model, features, detector, scorer, upto).max(axis=1)
    return system[tasks < upto], system[tasks >= upto]


def mixed_scores(model: ModelState, stream, upto: int, detector, scorer):
    """System scores and correctness flags over the full mixed test set.

    Samples of unseen tasks carry a False flag; seen samples are flagged
    by the correctness of their closed-world class prediction at this
    step. Feeds the accuracy-rejection curve.
    """
    detector = _as_detector(detector)
    scorer = _as_scorer(scorer)
    _check_compatible(model, stream)
    if not 1 <= upto <= model.trained_tasks:
        raise ModelError(f"step {upto} outside 1..{model.trained_tasks}")
    features, labels, tasks = _stack_tests(stream)
    scores = _head_scores_matrix(model, features, detector, scorer, upto)
    system = scores.max(axis=1)
    chosen = scores.argmax(axis=1)
    by_head = _class_predictions_by_head(model, features, upto)
    predicted = by_head[chosen, np.arange(len(labels))]
    correct = (predicted == labels) & (tasks < upto)
    return system, correct


def run_sweep(model: ModelState, stream, detectors, scorers) -> metrics.EvalReport:
    """All closed- and open-world metrics for every detector-scorer pair.

    Closed-world metrics aggregate the per-step accuracies at every step
    k; open-world ROC and precision-recall areas average over steps
    1..T-1, after which no unseen classes remain. Rows come out detector
    -major in the given order.
    """
    _check_compatible(model, stream)
    num_tasks = stream.num_tasks
    if model.trained_tasks != num_tasks:
        raise ModelError(
            f"model has {model.trained_tasks} trained tasks; stream has {num_tasks}"
        )
    detectors = [_as_detector(d) for d in detectors]
    scorers = [_as_scorer(s) for s in scorers]

    features, labels, tasks = _stack_tests(stream)
    acts = [activations(model, t, features) for t in range(num_tasks)]
    by_head = _class_predictions_by_head(model, features, num_tasks)

    report = metrics.EvalReport()
    for detector in detectors:
        logits = [
            _strip_ood(model.heads[t], _detector_logits_batch(model, t, acts[t], detector))
            for t in range(num_tasks)
        ]
        for scorer in scorers:
            scores = np.column_stack([
                _scores_from_logits(model, t, logits[t], acts[t], scorer)
                for t in range(num_tasks)
            ])
            report.rows.append(
                _sweep_row(model, detector, scorer, scores, by_head,
                           labels, tasks, num_tasks)
            )
    return report


def _scores_from_logits(model: ModelState, task: int, logits: np.ndarray,
                        z: np.ndarray, scorer: Scorer) -> np.ndarray:
    kind = scorer.kind
    if kind in ("sm", "smmd"):
        shifted = logits - logits.max(axis=1, keepdims=True)
        exps = np.exp(shifted)
        base = exps.max(axis=1) / exps.sum(axis=1)
    else:
        scaled = logits / scorer.temperature
        m = scaled.max(axis=1)
        base = scorer.temperature * (m + np.log(np.exp(scaled - m[:, None]).sum(axis=1)))
    if kind in ("sm", "en"):
        return base
    stats = model.stats[task]
    quad = np.full(len(z), np.inf)
    for mean in stats.class_means:
        diff = z - mean
        np.minimum(quad, ((diff @ stats.covariance_inv) * diff).sum(axis=1), out=quad)
    coefficient = 1.0 / (1.0 + quad)
    return base * coefficient if kind == "smmd" else base + np.log(coefficient)


def _sweep_row(model, detector, scorer, scores, by_head, labels, tasks,
               num_tasks) -> metrics.ReportRow:
    sample_index = np.arange(len(labels))
    step_accuracies = []
    per_task_accuracies = []
    for k in range(1, num_tasks + 1):
        seen = tasks < k
        chosen = scores[seen, :k].argmax(axis=1)
        predicted = by_head[chosen, sample_index[seen]]
        correct = predicted == labels[seen]
        step_accuracies.append(float(correct.mean()))
        seen_tasks = tasks[seen]
        per_task_accuracies.append(
            [float(correct[seen_tasks == t].mean()) for t in range(k)]
        )

    step_auc, step_aupr = [], []
    for k in range(1, num_tasks):
        system = scores[:, :k].max(axis=1)
        ind, ood = system[tasks < k], system[tasks >= k]
        step_auc.append(metrics.auc(ind, ood))
        step_aupr.append(metrics.aupr(ind, ood))

    return metrics.ReportRow(
        detector=detector.kind,
        scorer=scorer.kind,
        lca=metrics.lca(step_accuracies),
        aia=metrics.aia(step_accuracies),
        af=metrics.af(per_task_accuracies),
        auc=float(np.mean(step_auc)),
        aupr=float(np.mean(step_aupr)),
        step_accuracies=step_accuracies,
        per_task_accuracies=per_task_accuracies,
        step_auc=step_auc,
        step_aupr=step_aupr,
    )
