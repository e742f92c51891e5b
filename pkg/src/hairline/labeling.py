"""Clean-shaven / facial-hair labeling from attribute confidences.

An attribute counts as predicted when its confidence is >= the threshold.
CS requires both "no beard" and "no mustache"; FH requires that none of
"no beard", "no mustache" and "5 o'clock shadow" is predicted. Anything else
is excluded from the analysis.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping

from .errors import OutOfRangeScore, ParseError
from .ingest import AttributeScores, DatasetManifest

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.7


class HairLabel(str, Enum):
    CS = "CS"
    FH = "FH"
    EXCLUDED = "Excluded"


def classify_hair(scores: AttributeScores, threshold: float = DEFAULT_THRESHOLD) -> HairLabel:
    if not 0.0 < threshold < 1.0:
        raise OutOfRangeScore(f"threshold {threshold!r} must lie strictly inside (0, 1)")
    for v in scores.as_tuple():
        # AttributeScores validates on construction; guard objects built around it
        if not 0.0 <= v <= 1.0:
            raise OutOfRangeScore(f"attribute score {v!r} outside [0, 1]")

    no_beard = scores.no_beard >= threshold
    no_mustache = scores.no_mustache >= threshold
    stubble = scores.five_oclock_shadow >= threshold
    if no_beard and no_mustache:
        return HairLabel.CS
    if not (no_beard or no_mustache or stubble):
        return HairLabel.FH
    return HairLabel.EXCLUDED


@dataclass
class LabelSummary:
    counts: dict[str, Counter] = field(default_factory=dict)
    missing_attributes: int = 0

    def total(self) -> Counter:
        out: Counter = Counter()
        for c in self.counts.values():
            out.update(c)
        return out


def label_dataset(
    manifest: DatasetManifest, threshold: float = DEFAULT_THRESHOLD
) -> tuple[dict[str, HairLabel], LabelSummary]:
    """Label every record; records without attributes become Excluded.

    Returns the per-image labels and a summary with counts per cohort.
    """
    labels: dict[str, HairLabel] = {}
    summary = LabelSummary()
    for rec in manifest:
        if rec.attributes is None:
            label = HairLabel.EXCLUDED
            summary.missing_attributes += 1
        else:
            label = classify_hair(rec.attributes, threshold)
        labels[rec.image_id] = label
        summary.counts.setdefault(rec.cohort, Counter())[label.value] += 1
    if summary.missing_attributes:
        log.warning("%d images have no attribute scores; labeled Excluded", summary.missing_attributes)
    for cohort in sorted(summary.counts):
        c = summary.counts[cohort]
        log.info("cohort %s: CS=%d FH=%d Excluded=%d", cohort, c["CS"], c["FH"], c["Excluded"])
    return labels, summary


def write_labels(path, labels: Mapping[str, HairLabel]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("image_id", "label"))
        for iid, lab in labels.items():
            w.writerow((iid, lab.value))


def load_labels(path) -> dict[str, HairLabel]:
    path = Path(path)
    out: dict[str, HairLabel] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return out
        if not {"image_id", "label"} <= set(reader.fieldnames):
            raise ParseError(f"{path}: expected header image_id,label")
        for lineno, row in enumerate(reader, start=2):
            try:
                out[row["image_id"]] = HairLabel(row["label"])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: unknown label {row['label']!r}") from None
    return out
