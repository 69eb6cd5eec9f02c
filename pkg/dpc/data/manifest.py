"""Labeled image manifests.

File layout::

    dpc-manifest v1
    #labels=amusement,anger,awe        (optional declaration, fixes label order)
    images/0001.jpg,amusement,train
    ...

Synthetic datasets use ``synthetic:<id>`` paths and keep their pixels in
memory.
"""
import csv
import hashlib
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from dpc.errors import ManifestError

logger = logging.getLogger(__name__)

HEADER = "dpc-manifest v1"
LABELS_PREFIX = "#labels="
SPLITS = ("train", "test")
SYNTHETIC_PREFIX = "synthetic:"


@dataclass(frozen=True)
class Record:
    path: str
    label: str
    split: Optional[str] = None

    @property
    def synthetic(self) -> bool:
        return self.path.startswith(SYNTHETIC_PREFIX)


@dataclass
class DatasetManifest:
    records: List[Record]
    labels: List[str]
    images: Dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    certificate: Optional[float] = None
    root: Optional[Path] = None

    def __post_init__(self):
        problems = validate(self.records, self.labels)
        if problems:
            raise ManifestError(problems)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def classes(self) -> int:
        return len(self.labels)

    @property
    def targets(self) -> np.ndarray:
        index = {label: i for i, label in enumerate(self.labels)}
        return np.array([index[r.label] for r in self.records], dtype=np.int64)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.targets, minlength=self.classes)

    @property
    def has_splits(self) -> bool:
        return all(r.split is not None for r in self.records)

    def subset(self, indices: Sequence[int], split: Optional[str] = None) -> "DatasetManifest":
        """Records at ``indices`` in the given order, label set unchanged."""
        records = [self.records[i] for i in indices]
        if split is not None:
            records = [replace(r, split=split) for r in records]
        images = {r.path: self.images[r.path] for r in records if r.path in self.images}
        return DatasetManifest(records, list(self.labels), images, self.certificate, self.root)

    def split_part(self, split: str) -> "DatasetManifest":
        return self.subset([i for i, r in enumerate(self.records) if r.split == split])

    def resolve(self, record: Record):
        """Pixels for synthetic records, a filesystem path otherwise."""
        if record.synthetic:
            return self.images[record.path]
        path = Path(record.path)
        return path if path.is_absolute() or self.root is None else self.root / path

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(",".join(self.labels).encode("utf-8"))
        for record in self.records:
            digest.update(f"\n{record.path},{record.label},{record.split}".encode("utf-8"))
            if record.synthetic:
                digest.update(np.ascontiguousarray(self.images[record.path]).tobytes())
        return digest.hexdigest()


def validate(records: Sequence[Record], labels: Sequence[str]) -> List[str]:
    problems = []
    if len(labels) < 2:
        problems.append(f"need at least 2 labels, got {len(labels)}")
    if len(set(labels)) != len(labels):
        problems.append("duplicate labels in label set")
    seen = set()
    used = set()
    for record in records:
        if record.path in seen:
            problems.append(f"duplicate path {record.path}")
        seen.add(record.path)
        if record.label not in labels:
            problems.append(f"{record.path}: label {record.label!r} not in label set")
        used.add(record.label)
        if record.split is not None and record.split not in SPLITS:
            problems.append(f"{record.path}: unknown split tag {record.split!r}")
    problems.extend(f"label {label!r} has no records" for label in labels if label not in used)
    tagged = sum(record.split is not None for record in records)
    if 0 < tagged < len(records):
        problems.append(f"split tags on {tagged} of {len(records)} records; tag every record or none")
    return problems


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ManifestError([f"cannot read {path}: {exc}"]) from None
    if not lines or lines[0].strip() != HEADER:
        raise ManifestError([f"{path}: first line must be {HEADER!r}"])

    body = lines[1:]
    declared: Optional[List[str]] = None
    if body and body[0].startswith(LABELS_PREFIX):
        declared = [label.strip() for label in body[0][len(LABELS_PREFIX):].split(",") if label.strip()]
        body = body[1:]

    records, problems = [], []
    for number, row in enumerate(csv.reader(body), start=2 + (declared is not None)):
        if not row or not "".join(row).strip():
            continue
        if len(row) != 3:
            problems.append(f"line {number}: expected path,label,split, got {len(row)} fields")
            continue
        record_path, label, split_tag = (value.strip() for value in row)
        records.append(Record(record_path, label, split_tag or None))

    labels = declared if declared is not None else list(dict.fromkeys(r.label for r in records))
    problems.extend(validate(records, labels))
    if problems:
        raise ManifestError(problems)
    logger.info("loaded manifest %s: %d records, %d labels", path, len(records), len(labels))
    return DatasetManifest(records, labels, root=path.parent)


def write_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(HEADER + "\n")
        handle.write(LABELS_PREFIX + ",".join(manifest.labels) + "\n")
        writer = csv.writer(handle, lineterminator="\n")
        for record in manifest.records:
            writer.writerow([record.path, record.label, record.split or ""])
    return path


def group_labels(manifest: DatasetManifest, groups: Mapping[str, Sequence[str]]) -> DatasetManifest:
    """Collapse fine labels into coarse groups, e.g. emotion categories into polarity."""
    owner = {}
    problems = []
    for group, members in groups.items():
        for member in members:
            if member in owner:
                problems.append(f"label {member!r} assigned to both {owner[member]!r} and {group!r}")
            owner[member] = group
    problems.extend(f"label {label!r} belongs to no group" for label in manifest.labels if label not in owner)
    if problems:
        raise ManifestError(problems)
    records = [replace(r, label=owner[r.label]) for r in manifest.records]
    labels = [group for group in groups if any(r.label == group for r in records)]
    return DatasetManifest(records, labels, dict(manifest.images), manifest.certificate, manifest.root)
