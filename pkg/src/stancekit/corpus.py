"""FNC-1 format corpus ingestion, validation, and leakage-safe fold planning.

Input files are UTF-8 CSV per RFC 4180 (quoted fields may embed commas and
newlines, which the bodies file uses). Fold planning splits by body id so
that no article body ever lands on both sides of a train/test boundary.
"""

from __future__ import annotations

import csv
import enum
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .errors import DataFormatError, IntegrityError


class Stance(enum.Enum):
    """The four stance classes, in canonical order."""

    AGREE = "agree"
    DISAGREE = "disagree"
    DISCUSS = "discuss"
    UNRELATED = "unrelated"

    @property
    def index(self) -> int:
        return _STANCE_INDEX[self]

    @classmethod
    def parse(cls, text: str) -> "Stance":
        """Case-insensitive parse; raises ValueError for anything else."""
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown stance {text!r}") from None

    def __str__(self) -> str:
        return self.value


#: Canonical class order: agree=0, disagree=1, discuss=2, unrelated=3.
STANCES: tuple[Stance, ...] = (Stance.AGREE, Stance.DISAGREE, Stance.DISCUSS, Stance.UNRELATED)
_STANCE_INDEX = {s: i for i, s in enumerate(STANCES)}


@dataclass(frozen=True)
class Instance:
    """One (headline, body) example; stance is None for unlabeled input."""

    headline: str
    body_id: int
    stance: Stance | None = None


@dataclass(frozen=True)
class Corpus:
    """Instances plus the body store they reference."""

    instances: tuple[Instance, ...]
    bodies: Mapping[int, str]
    origin: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def body_ids(self) -> tuple[int, ...]:
        return tuple(self.bodies)

    def body_text(self, body_id: int) -> str:
        try:
            return self.bodies[body_id]
        except KeyError:
            raise IntegrityError(f"body id {body_id} not in corpus") from None

    def restrict(self, body_ids: Iterable[int]) -> "Corpus":
        """Sub-corpus containing only the given bodies and their instances."""
        keep = set(body_ids)
        return Corpus(
            instances=tuple(i for i in self.instances if i.body_id in keep),
            bodies={b: t for b, t in self.bodies.items() if b in keep},
            origin=self.origin,
        )


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of every body id to one of k folds."""

    k: int
    assignments: Mapping[int, int]

    def fold_of(self, body_id: int) -> int:
        return self.assignments[body_id]

    def bodies_in(self, fold: int) -> frozenset[int]:
        return frozenset(b for b, f in self.assignments.items() if f == fold)

    def split(self, corpus: Corpus, fold: int) -> tuple[Corpus, Corpus]:
        """(train, heldout) sub-corpora for one fold."""
        held = self.bodies_in(fold)
        rest = set(self.assignments) - held
        return corpus.restrict(rest), corpus.restrict(held)


def _reader(path: Path):
    return csv.DictReader(path.open("r", encoding="utf-8", newline=""))


def _require_columns(reader: csv.DictReader, required: Iterable[str], path: Path) -> None:
    have = set(reader.fieldnames or ())
    for col in required:
        if col not in have:
            raise DataFormatError(f"{path}: missing required column {col!r}")


def load_stances(path: str | Path) -> list[Instance]:
    """Read a stances CSV (Headline, Body ID, optional Stance).

    Rows become Instances in file order. The Stance column may be absent
    entirely (unlabeled test input) but may not be blank row-by-row when
    present.
    """
    path = Path(path)
    reader = _reader(path)
    _require_columns(reader, ("Headline", "Body ID"), path)
    labeled = "Stance" in (reader.fieldnames or ())

    instances: list[Instance] = []
    for row_no, row in enumerate(reader, start=2):  # header is line 1
        headline = (row["Headline"] or "").strip()
        if not headline:
            raise DataFormatError(f"{path}: row {row_no}: empty headline")
        try:
            body_id = int(row["Body ID"])
        except (TypeError, ValueError):
            raise DataFormatError(
                f"{path}: row {row_no}: unparseable body id {row['Body ID']!r}"
            ) from None
        stance = None
        if labeled:
            try:
                stance = Stance.parse(row["Stance"] or "")
            except ValueError as exc:
                raise DataFormatError(f"{path}: row {row_no}: {exc}") from None
        instances.append(Instance(headline=headline, body_id=body_id, stance=stance))
    return instances


def load_bodies(path: str | Path) -> dict[int, str]:
    """Read a bodies CSV (Body ID, articleBody) into an id -> text map."""
    path = Path(path)
    reader = _reader(path)
    _require_columns(reader, ("Body ID", "articleBody"), path)

    bodies: dict[int, str] = {}
    for row_no, row in enumerate(reader, start=2):
        try:
            body_id = int(row["Body ID"])
        except (TypeError, ValueError):
            raise DataFormatError(
                f"{path}: row {row_no}: unparseable body id {row['Body ID']!r}"
            ) from None
        if body_id in bodies:
            raise DataFormatError(f"{path}: duplicate body id {body_id}")
        bodies[body_id] = row["articleBody"] or ""
    return bodies


def make_corpus(
    instances: Iterable[Instance],
    bodies: Mapping[int, str],
    origin: tuple[str, ...] = (),
) -> Corpus:
    """Assemble and validate a Corpus; every instance body id must resolve."""
    instances = tuple(instances)
    missing = sorted({i.body_id for i in instances} - set(bodies))
    if missing:
        raise IntegrityError(f"instances reference absent body ids: {missing}")
    return Corpus(instances=instances, bodies=dict(bodies), origin=origin)


def load_corpus(stances_path: str | Path, bodies_path: str | Path) -> Corpus:
    """Load and cross-validate a stances/bodies file pair."""
    return make_corpus(
        load_stances(stances_path),
        load_bodies(bodies_path),
        origin=(str(stances_path), str(bodies_path)),
    )


def plan_folds(corpus: Corpus, k: int, seed: int) -> FoldPlan:
    """Deal body ids into k folds, shuffled deterministically by seed.

    Bodies (not instances) are dealt round-robin, so all instances sharing a
    body land in the same fold and fold sizes differ by at most one body.
    """
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    ids = sorted(corpus.bodies)
    if len(ids) < k:
        raise ValueError(f"need at least {k} bodies for {k} folds, have {len(ids)}")
    random.Random(seed).shuffle(ids)
    return FoldPlan(k=k, assignments={b: i % k for i, b in enumerate(ids)})


def validation_split(corpus: Corpus, fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Hold out roughly `fraction` of bodies as a validation sub-corpus."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"validation fraction must be in (0,1), got {fraction}")
    k = max(2, round(1.0 / fraction))
    plan = plan_folds(corpus, k=k, seed=seed)
    train, val = plan.split(corpus, fold=0)
    return train, val
