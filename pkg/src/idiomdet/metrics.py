"""Macro F1 and per-class precision/recall reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

CLASSES = (0, 1)


@dataclass(frozen=True)
class EvalReport:
    precision: tuple[float, float]
    recall: tuple[float, float]
    f1: tuple[float, float]
    support: tuple[int, int]
    confusion: tuple[tuple[int, int], tuple[int, int]]  # confusion[gold][pred]
    macro_f1: float
    group: str = "overall"

    @property
    def n(self) -> int:
        return sum(map(sum, self.confusion))

    def to_text(self) -> str:
        lines = [f"[{self.group}] n={self.n} macro_f1={self.macro_f1:.4f}"]
        lines.append(f"{'class':>7} {'precision':>9} {'recall':>9} {'f1':>9} {'support':>8}")
        for c in CLASSES:
            lines.append(
                f"{c:>7} {self.precision[c]:>9.4f} {self.recall[c]:>9.4f} {self.f1[c]:>9.4f} {self.support[c]:>8}"
            )
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _check(gold: Sequence[int], pred: Sequence[int]) -> None:
    if len(gold) != len(pred):
        raise ValueError(f"length mismatch: {len(gold)} gold vs {len(pred)} predicted")
    if not gold:
        raise ValueError("nothing to score")
    for y in list(gold) + list(pred):
        if y not in CLASSES:
            raise ValueError(f"label {y!r} outside {{0, 1}}")


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def classification_report(gold: Sequence[int], pred: Sequence[int], group: str = "overall") -> EvalReport:
    _check(gold, pred)
    conf = [[0, 0], [0, 0]]
    for g, p in zip(gold, pred):
        conf[g][p] += 1
    prec, rec, f1 = [], [], []
    for c in CLASSES:
        tp = conf[c][c]
        p = _ratio(tp, conf[0][c] + conf[1][c])
        r = _ratio(tp, conf[c][0] + conf[c][1])
        prec.append(p)
        rec.append(r)
        f1.append(_ratio(2 * p * r, p + r) if p + r else 0.0)
    return EvalReport(
        precision=tuple(prec),
        recall=tuple(rec),
        f1=tuple(f1),
        support=(sum(conf[0]), sum(conf[1])),
        confusion=(tuple(conf[0]), tuple(conf[1])),
        macro_f1=(f1[0] + f1[1]) / 2,
        group=group,
    )


def macro_f1(gold: Sequence[int], pred: Sequence[int]) -> float:
    """Unweighted mean of the two per-class F1 scores.

    Empty precision/recall denominators count as 0, so a class with neither
    gold nor predicted members contributes F1 = 0.
    """
    return classification_report(gold, pred).macro_f1


def evaluate(preds, gold, group_by: Optional[str] = None) -> dict[str, EvalReport]:
    """Score a PredictionSet against a labeled Dataset, joined on id.

    Returns ``{"overall": report}`` plus one entry per value of ``group_by``
    (``"language"`` or ``"setting"``) when grouping is requested.
    """
    by_id = {inst.id: inst for inst in gold}
    missing = [p.id for p in preds if p.id not in by_id or by_id[p.id].label is None]
    if missing:
        raise KeyError(f"predictions without gold labels: {', '.join(missing)}")
    groups: dict[str, tuple[list, list]] = {"overall": ([], [])}
    for p in preds:
        inst = by_id[p.id]
        keys = ["overall"]
        if group_by:
            keys.append(str(getattr(inst, group_by)))
        for k in keys:
            g, q = groups.setdefault(k, ([], []))
            g.append(inst.label)
            q.append(p.label)
    return {k: classification_report(g, q, k) for k, (g, q) in groups.items()}
