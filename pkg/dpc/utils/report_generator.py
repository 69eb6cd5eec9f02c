"""Run artifacts: ``key=value`` files keyed by the config digest, plus a readable summary."""
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

from dpc.errors import ContractViolation
from dpc.graph.gradcheck import GradCheckReport
from dpc.training.metrics import Metrics


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_key_values(path, digest: str, items: Mapping[str, Any]) -> Path:
    """One ``key=value`` per line, ``digest=<hex>`` first."""
    path = Path(path)
    lines = [f"digest={digest}"] + [f"{key}={_format(value)}" for key, value in items.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_key_values(path) -> Dict[str, str]:
    items = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        key, sep, value = line.partition("=")
        if sep:
            items[key] = value
    return items


def metrics_items(history: Sequence, metrics: Optional[Metrics], labels: Sequence[str]) -> Dict[str, Any]:
    items: Dict[str, Any] = {"epochs": len(history)}
    for record in history:
        items[f"epoch.{record.epoch}.lr"] = record.lr
        items[f"epoch.{record.epoch}.train_loss"] = record.train_loss
        items[f"epoch.{record.epoch}.train_accuracy"] = record.train_accuracy
        items[f"epoch.{record.epoch}.test_accuracy"] = record.test_accuracy
    if metrics is not None:
        items.update(metrics.as_dict(labels, prefix="test."))
    return items


def ablation_items(report) -> Dict[str, Any]:
    items: Dict[str, Any] = {"rows": len(report.rows), "baseline.accuracy": report.baseline_accuracy}
    for i, row in enumerate(report.rows):
        items[f"row.{i}.flags"] = row.flags.label
        items[f"row.{i}.instance_specific"] = row.flags.instance_specific
        items[f"row.{i}.class_specific"] = row.flags.class_specific
        items[f"row.{i}.accuracy"] = row.accuracy
    return items


def sensitivity_items(report) -> Dict[str, Any]:
    items: Dict[str, Any] = {"templates": len(report.templates)}
    for i, (template, accuracy) in enumerate(zip(report.templates, report.accuracies)):
        items[f"template.{i}.text"] = template
        items[f"template.{i}.accuracy"] = accuracy
    items["mean"] = report.mean
    items["std"] = report.std
    return items


def gradcheck_items(report: GradCheckReport) -> Dict[str, Any]:
    items: Dict[str, Any] = {
        "passed": report.passed,
        "max_rel_error": report.max_rel_error,
        "tolerance": report.tolerance,
        "step": report.step,
        "coordinates": report.coordinates,
    }
    for check in report.checks:
        items[f"{check.name}.max_rel_error"] = check.max_rel_error
        items[f"{check.name}.indices"] = ";".join(",".join(map(str, index)) for index in check.indices)
    return items


def generate_txt_report(
    title: str,
    digest: str,
    sections: Mapping[str, Mapping[str, Any]],
    output_path: str,
    additional_notes: Optional[str] = None,
):
    """
    Generate a human-readable summary of a run.

    Args:
        title: Report title
        digest: Config digest of the run
        sections: Section name -> (label -> value) rows
        output_path: Path to save the text report
        additional_notes: Free text appended at the end
    """
    with open(output_path, "w", encoding="utf-8") as f:
        # Title
        f.write(f"{title.upper()}\n")
        f.write("=" * 40 + "\n\n")
        f.write(f"Config digest: {digest}\n\n")

        for name, rows in sections.items():
            f.write(f"{name.upper()}\n")
            f.write("-" * 40 + "\n")
            if rows:
                for label, value in rows.items():
                    f.write(f"{label}: {_format(value)}\n")
            else:
                f.write("No data available\n")
            f.write("\n")

        if additional_notes:
            f.write("ADDITIONAL NOTES\n")
            f.write("-" * 40 + "\n")
            f.write(f"{additional_notes}\n")

    return output_path


class RunDirectory:
    """``<out>/<digest>/`` guarded by an exclusive ``.lock`` file."""

    LOCK = ".lock"

    def __init__(self, output_dir, digest: str):
        self.digest = digest
        self.path = Path(output_dir) / digest
        self._fd: Optional[int] = None

    def __enter__(self) -> "RunDirectory":
        self.path.mkdir(parents=True, exist_ok=True)
        lock = self.path / self.LOCK
        try:
            self._fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ContractViolation(f"run directory {self.path} is locked by another run ({lock})") from None
        os.write(self._fd, str(os.getpid()).encode("ascii"))
        return self

    def __exit__(self, *exc_info) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
        (self.path / self.LOCK).unlink(missing_ok=True)

    def file(self, name: str) -> Path:
        return self.path / name

    def listing(self) -> List[str]:
        return sorted(p.name for p in self.path.iterdir() if p.name != self.LOCK)
