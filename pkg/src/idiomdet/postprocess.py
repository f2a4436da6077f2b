"""Prediction containers and the single-label MWE override rule."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Sequence

TIE_LABEL = 1


def normalize_mwe(mwe: str) -> str:
    return " ".join(mwe.casefold().split())


def argmax_label(probs: Sequence[float], tie_label: int = TIE_LABEL) -> int:
    if probs[0] == probs[1]:
        return tie_label
    return 0 if probs[0] > probs[1] else 1


@dataclass(frozen=True)
class Prediction:
    id: str
    mwe: str
    probabilities: tuple[float, float]
    label: int
    overridden: bool = False
    language: str = ""
    setting: str = ""


@dataclass(frozen=True)
class PredictionSet:
    predictions: tuple[Prediction, ...]

    def __len__(self) -> int:
        return len(self.predictions)

    def __iter__(self) -> Iterator[Prediction]:
        return iter(self.predictions)

    @property
    def labels(self) -> list[int]:
        return [p.label for p in self.predictions]

    @classmethod
    def from_probabilities(cls, dataset, probs, tie_label: int = TIE_LABEL) -> "PredictionSet":
        preds = []
        for inst, pr in zip(dataset, probs, strict=True):
            pr = (float(pr[0]), float(pr[1]))
            preds.append(Prediction(inst.id, inst.mwe, pr, argmax_label(pr, tie_label), False, inst.language, inst.setting))
        return cls(tuple(preds))

    def write_submission(self, path) -> None:
        """``ID,Language,Setting,Label`` CSV."""
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["ID", "Language", "Setting", "Label"])
            for p in self.predictions:
                w.writerow([p.id, p.language, p.setting, p.label])

    def write_sidecar(self, path) -> None:
        """One JSON record per prediction with probabilities and override flag."""
        with open(path, "w", encoding="utf-8") as f:
            for p in self.predictions:
                rec = {
                    "id": p.id,
                    "mwe": p.mwe,
                    "p_idiomatic": p.probabilities[0],
                    "p_literal": p.probabilities[1],
                    "label": p.label,
                    "overridden": p.overridden,
                }
                f.write(json.dumps(rec) + "\n")


def read_submission(path) -> PredictionSet:
    preds = []
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            label = int(row["Label"])
            preds.append(Prediction(row["ID"], "", (float(label == 0), float(label == 1)), label, False,
                                    row.get("Language", ""), row.get("Setting", "")))
    return PredictionSet(tuple(preds))


def build_override_table(train) -> dict[str, int]:
    """Map each MWE whose training labels are unanimous to that label."""
    seen: dict[str, set] = {}
    for inst in train:
        if inst.label is None:
            raise ValueError(f"row {inst.id!r} has no label")
        seen.setdefault(normalize_mwe(inst.mwe), set()).add(inst.label)
    return {m: next(iter(labels)) for m, labels in sorted(seen.items()) if len(labels) == 1}


def apply_overrides(preds: PredictionSet, table: dict[str, int]) -> PredictionSet:
    out = []
    for p in preds:
        key = normalize_mwe(p.mwe)
        if key in table:
            p = replace(p, label=table[key], overridden=True)
        out.append(p)
    return PredictionSet(tuple(out))


def save_override_table(table: dict[str, int], path) -> None:
    Path(path).write_text("".join(f"{m}\t{y}\n" for m, y in sorted(table.items())), encoding="utf-8")


def load_override_table(path) -> dict[str, int]:
    table = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line:
            m, y = line.rsplit("\t", 1)
            table[m] = int(y)
    return table
