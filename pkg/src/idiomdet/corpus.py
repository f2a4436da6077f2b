"""Task-format datasets: loading, validation, splitting, length statistics and
a deterministic synthetic corpus generator for small-scale experiments."""

from __future__ import annotations

import csv
import io
import math
import random
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

LANGUAGES = ("EN", "PT", "GL")
SETTINGS = ("zero_shot", "one_shot")
COLUMNS = ("DataID", "Language", "MWE", "Setting", "Previous", "Target", "Next", "Label")
REQUIRED_COLUMNS = COLUMNS[:-1]

IDIOMATIC = 0
LITERAL = 1


class SchemaError(ValueError):
    """Header is missing a required column."""


class ValidationError(ValueError):
    """A row violates the Instance invariants."""


@dataclass(frozen=True)
class Instance:
    id: str
    language: str
    mwe: str
    setting: str
    previous: str
    target: str
    next: str
    label: Optional[int] = None

    def __post_init__(self):
        if not self.target:
            raise ValidationError(f"row {self.id!r}: empty target")
        if self.language not in LANGUAGES:
            raise ValidationError(f"row {self.id!r}: unknown language {self.language!r}")
        if self.setting not in SETTINGS:
            raise ValidationError(f"row {self.id!r}: unknown setting {self.setting!r}")
        if self.label is not None and self.label not in (0, 1):
            raise ValidationError(f"row {self.id!r}: non-binary label {self.label!r}")


@dataclass(frozen=True)
class Dataset:
    instances: tuple[Instance, ...]
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        seen = set()
        for inst in self.instances:
            if inst.id in seen:
                raise ValidationError(f"duplicate id {inst.id!r}")
            seen.add(inst.id)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[Instance]:
        return iter(self.instances)

    def __getitem__(self, i):
        return self.instances[i]

    @property
    def labeled(self) -> bool:
        return all(inst.label is not None for inst in self.instances)

    def subset(self, keep, provenance: Optional[str] = None) -> "Dataset":
        return Dataset(tuple(i for i in self.instances if keep(i)), provenance or self.provenance)

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(self.instances + other.instances, f"{self.provenance}+{other.provenance}")


@dataclass(frozen=True)
class LengthStats:
    mean: float
    median: float
    max: int
    p90: int
    mwe_position_mean: float
    mwe_position_median: float
    mwe_position_max: int
    mwe_position_p90: int
    count: int = 0
    mwe_found: int = 0


def _sniff_delimiter(header: str) -> str:
    return "\t" if header.count("\t") > header.count(",") else ","


def _parse_label(raw: str, row_id: str) -> Optional[int]:
    raw = raw.strip()
    if raw == "":
        return None
    if raw not in ("0", "1"):
        raise ValidationError(f"row {row_id!r}: non-binary label {raw!r}")
    return int(raw)


def parse_dataset(text: str, expect_labels: bool = True, provenance: str = "") -> Dataset:
    header = text.split("\n", 1)[0]
    reader = csv.DictReader(io.StringIO(text, newline=""), delimiter=_sniff_delimiter(header))
    fields = reader.fieldnames or []
    required = COLUMNS if expect_labels else REQUIRED_COLUMNS
    for col in required:
        if col not in fields:
            raise SchemaError(f"missing required column {col!r}")
    rows = []
    for row in reader:
        row_id = row["DataID"]
        label = _parse_label(row.get("Label") or "", row_id)
        if expect_labels and label is None:
            raise ValidationError(f"row {row_id!r}: missing label")
        rows.append(
            Instance(
                id=row_id,
                language=row["Language"],
                mwe=row["MWE"],
                setting=row["Setting"],
                previous=row["Previous"] or "",
                target=row["Target"] or "",
                next=row["Next"] or "",
                label=label,
            )
        )
    return Dataset(tuple(rows), provenance)


def load_dataset(path, expect_labels: bool = True) -> Dataset:
    """Read a CSV or TSV file in the eight-column task format.

    The delimiter is sniffed from the header line. ``Label`` may be omitted
    (or left blank) when ``expect_labels`` is false; absent labels are ``None``.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as f:
        text = f.read()
    return parse_dataset(text, expect_labels, str(path))


def dumps_dataset(d: Dataset, delimiter: str = ",", include_label: Optional[bool] = None) -> str:
    if include_label is None:
        include_label = any(i.label is not None for i in d)
    cols = COLUMNS if include_label else REQUIRED_COLUMNS
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    writer.writerow(cols)
    for i in d:
        row = [i.id, i.language, i.mwe, i.setting, i.previous, i.target, i.next]
        if include_label:
            row.append("" if i.label is None else str(i.label))
        writer.writerow(row)
    return buf.getvalue()


def save_dataset(d: Dataset, path, delimiter: str = ",", include_label: Optional[bool] = None) -> None:
    Path(path).write_text(dumps_dataset(d, delimiter, include_label), encoding="utf-8", newline="")


def split_by_setting(d: Dataset) -> tuple[Dataset, Dataset]:
    zero = d.subset(lambda i: i.setting == "zero_shot")
    one = d.subset(lambda i: i.setting == "one_shot")
    return zero, one


def nearest_rank(values: Sequence[int], q: float) -> int:
    """Smallest value with at least ``q`` of the data at or below it."""
    ordered = sorted(values)
    rank = max(1, math.ceil(q * len(ordered)))
    return ordered[rank - 1]


def length_statistics(d: Dataset, tokenizer) -> LengthStats:
    """Token-length statistics of target sentences and of first-MWE-token positions.

    Lengths count content tokens only (no special tokens, no truncation).
    MWE positions are 0-based indices of the first MWE token; rows where the
    MWE cannot be found even case-insensitively are skipped for the position
    statistics.
    """
    from .preprocess import find_mwe_span

    if len(d) == 0:
        raise ValueError("length_statistics of an empty dataset")
    lengths = []
    positions = []
    for inst in d:
        lengths.append(len(tokenizer.tokens(inst.target)))
        span = find_mwe_span(inst.target, inst.mwe)
        if span.start is not None:
            positions.append(len(tokenizer.tokens(inst.target[: span.start])))

    def describe(vals):
        if not vals:
            return 0.0, 0.0, 0, 0
        return statistics.fmean(vals), float(statistics.median(vals)), max(vals), nearest_rank(vals, 0.9)

    mean, median, mx, p90 = describe(lengths)
    pmean, pmedian, pmax, pp90 = describe(positions)
    return LengthStats(mean, median, mx, p90, pmean, pmedian, pmax, pp90, len(lengths), len(positions))


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

_ADJ = [
    "big", "red", "cold", "silver", "open", "dark", "golden", "broken", "green", "wild",
    "sweet", "heavy", "white", "black", "hot", "sharp", "grey", "blue", "high", "low",
    "old", "young", "deep", "soft", "bright", "quiet", "rough", "smooth", "hard", "thin",
]
_NOUN = [
    "fish", "tape", "feet", "lining", "book", "horse", "goose", "hand", "light", "card",
    "tooth", "shoulder", "water", "ground", "sheep", "apple", "heart", "cat", "bridge", "stone",
    "wolf", "door", "fire", "bird", "road", "glass", "rock", "tree", "ice", "wall",
]
_SUBJECTS = ["the man", "my friend", "a teacher", "the team", "our neighbour", "the writer", "she", "he"]
_VERBS = ["saw", "found", "mentioned", "described", "noticed", "discussed", "met", "remembered"]
_TAILS = [
    "near the station", "after the meeting", "during the summer", "in the morning",
    "before dinner", "at the market", "last year", "on the way home",
]
# Cue vocabularies: words whose class determines the label at cue_strength=1.
_CUES = {
    IDIOMATIC: ["figuratively", "metaphorically", "so to speak", "in a sense", "as they say", "ironically"],
    LITERAL: ["literally", "physically", "actually", "really", "in person", "with hands"],
}
_TEMPLATES = [
    "{subj} {verb} the {mwe} {cue} {tail} .",
    "{cue} , {subj} {verb} a {mwe} {tail} .",
    "{tail} {subj} {cue} {verb} the {mwe} .",
]


def _mwe_inventory() -> list[str]:
    rng = random.Random(0)
    pairs = [f"{a} {n}" for a in _ADJ for n in _NOUN]
    rng.shuffle(pairs)
    return pairs


def _sentence(rng: random.Random, mwe: str, cue_class: int) -> str:
    return rng.choice(_TEMPLATES).format(
        subj=rng.choice(_SUBJECTS),
        verb=rng.choice(_VERBS),
        mwe=mwe,
        cue=rng.choice(_CUES[cue_class]),
        tail=rng.choice(_TAILS),
    )


def cue_class_of(sentence: str) -> Optional[int]:
    """Class of the cue phrase embedded in a synthetic sentence (None if absent)."""
    padded = f" {sentence} "
    for cls, cues in _CUES.items():
        if any(f" {c} " in padded for c in cues):
            return cls
    return None


@dataclass(frozen=True)
class SyntheticSplits:
    zero_train: Dataset
    zero_dev: Dataset
    one_train: Dataset
    one_dev: Dataset
    single_label_mwes: dict = field(default_factory=dict)

    @property
    def one_shot_train(self) -> Dataset:
        """Training data allowed in the one-shot setting (zero + one shot)."""
        return self.zero_train.concat(self.one_train)


def generate_synthetic_corpus(
    n: int,
    cue_strength: float,
    seed: int,
    zero_shot_fraction: float = 0.6,
    single_label_fraction: float = 0.3,
    n_zero_mwes: int = 40,
    n_one_mwes: int = 20,
) -> Dataset:
    """Deterministic synthetic corpus in the task format.

    Every row embeds an adjective-noun MWE into a template sentence together
    with a cue phrase. The label agrees with the cue class with probability
    ``cue_strength`` and takes the opposite class otherwise, so
    ``cue_strength=1`` is noise free.

    Row ids encode the split: ``syn-{zs|os}-{train|dev}-NNNNN``. Zero-shot
    train and dev use disjoint MWE inventories; one-shot train and dev share
    theirs. A ``single_label_fraction`` of the one-shot MWEs carry one fixed
    label in both train and dev, and every other one-shot MWE is guaranteed
    both labels in train.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0.0 <= cue_strength <= 1.0:
        raise ValueError("cue_strength must lie in [0, 1]")
    rng = random.Random(seed)
    inventory = _mwe_inventory()
    zs_train_mwes = inventory[:n_zero_mwes]
    zs_dev_mwes = inventory[n_zero_mwes : n_zero_mwes + n_zero_mwes // 4 + 1]
    os_mwes = inventory[len(inventory) - n_one_mwes :]
    n_single = round(single_label_fraction * len(os_mwes))
    single = {m: rng.randrange(2) for m in os_mwes[:n_single]}

    n_zero = round(n * zero_shot_fraction)
    n_one = n - n_zero
    n_zero_train = round(n_zero * 0.8)
    n_one_train = n_one // 2

    rows: list[Instance] = []

    def emit(tag, idx, mwe, setting, label):
        if rng.random() < cue_strength:
            cue = label
        else:
            cue = 1 - label
        rows.append(
            Instance(
                id=f"syn-{tag}-{idx:05d}",
                language="EN",
                mwe=mwe,
                setting=setting,
                previous="",
                target=_sentence(rng, mwe, cue),
                next="",
                label=label,
            )
        )

    for k in range(n_zero):
        tag, mwes, idx = ("zs-train", zs_train_mwes, k) if k < n_zero_train else ("zs-dev", zs_dev_mwes, k - n_zero_train)
        emit(tag, idx, rng.choice(mwes), "zero_shot", rng.randrange(2))

    # one-shot train: walk the inventory so mixed MWEs see both labels first
    seen_labels: dict[str, list[int]] = {m: [] for m in os_mwes}
    for k in range(n_one):
        is_train = k < n_one_train
        mwe = os_mwes[k % len(os_mwes)] if k < 2 * len(os_mwes) else rng.choice(os_mwes)
        if mwe in single:
            label = single[mwe]
        elif is_train and len(seen_labels[mwe]) < 2:
            label = len(seen_labels[mwe]) if not seen_labels[mwe] else 1 - seen_labels[mwe][0]
        else:
            label = rng.randrange(2)
        if is_train:
            seen_labels[mwe].append(label)
        tag, idx = ("os-train", k) if is_train else ("os-dev", k - n_one_train)
        emit(tag, idx, mwe, "one_shot", label)

    return Dataset(tuple(rows), f"synthetic:{seed}")


def synthetic_splits(d: Dataset) -> SyntheticSplits:
    """Recover the four splits of a corpus made by :func:`generate_synthetic_corpus`."""

    def part(tag):
        return d.subset(lambda i: i.id.startswith(f"syn-{tag}-"), f"{d.provenance}/{tag}")

    one_train = part("os-train")
    labels: dict[str, set] = {}
    for inst in one_train:
        labels.setdefault(inst.mwe, set()).add(inst.label)
    single = {m: next(iter(v)) for m, v in labels.items() if len(v) == 1}
    return SyntheticSplits(part("zs-train"), part("zs-dev"), one_train, part("os-dev"), single)
