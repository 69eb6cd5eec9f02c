"""Accuracy, per-class accuracy and the confusion matrix."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from sklearn.metrics import confusion_matrix  # noqa: E402

logger = logging.getLogger(__name__)


@dataclass
class Metrics:
    confusion: np.ndarray
    loss_history: List[float] = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.confusion))

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def class_counts(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def per_class_accuracy(self) -> np.ndarray:
        counts = self.class_counts
        hits = np.diag(self.confusion)
        return np.divide(hits, counts, out=np.zeros(len(counts)), where=counts > 0)

    def as_dict(self, labels: Sequence[str], prefix: str = "") -> Dict[str, object]:
        items: Dict[str, object] = {f"{prefix}accuracy": self.accuracy, f"{prefix}total": self.total}
        for label, value in zip(labels, self.per_class_accuracy):
            items[f"{prefix}class.{label}.accuracy"] = float(value)
        return items


def compute_metrics(targets, predictions, classes: int) -> Metrics:
    """Rows are ground truth, columns predictions."""
    matrix = confusion_matrix(np.asarray(targets), np.asarray(predictions), labels=np.arange(classes))
    return Metrics(confusion=matrix.astype(np.int64))


def write_confusion_csv(metrics: Metrics, path, digest: str) -> Path:
    path = Path(path)
    lines = [f"# digest={digest}"] + [",".join(str(int(v)) for v in row) for row in metrics.confusion]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_confusion_csv(path) -> np.ndarray:
    rows = [line for line in Path(path).read_text(encoding="utf-8").splitlines() if line and not line.startswith("#")]
    return np.array([[int(v) for v in row.split(",")] for row in rows], dtype=np.int64)


def plot_confusion_matrix(metrics: Metrics, labels: Sequence[str], path, title: str = "Confusion matrix") -> Path:
    """Heat map with the count printed in every cell."""
    path = Path(path)
    matrix = metrics.confusion
    size = max(3.0, 0.6 * len(labels) + 2.0)
    fig, ax = plt.subplots(figsize=(size, size))
    image = ax.imshow(matrix, cmap="Blues")
    fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)
    ax.set_xticks(range(len(labels)))
    ax.set_yticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_yticklabels(labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("ground truth")
    ax.set_title(title)
    threshold = matrix.max() / 2.0 if matrix.size else 0
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            ax.text(j, i, str(matrix[i, j]), ha="center", va="center",
                    color="white" if matrix[i, j] > threshold else "black")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    logger.debug("confusion matrix plot written to %s", path)
    return path
