"""Per-category exclusion lists built from dated news events, and temporal splits."""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable

from .hin_store import RecordError

CATEGORIES = (
    "Product/Service", "Regulatory", "Financial", "Fraud", "Workforce", "Management",
    "Anti-Competitive", "Information", "Workplace", "Discrimination-Workforce",
    "Environmental", "Ownership", "Production-Supply", "Corruption", "Human",
    "Sanctions", "Association",
)


@dataclass(frozen=True)
class NewsEvent:
    firm: str
    category: str
    date: date


@dataclass
class CategoryList:
    category: str
    entries: dict[str, tuple[date, date]] = field(default_factory=dict)

    def add(self, firm: str, when: date) -> None:
        prev = self.entries.get(firm)
        if prev is None:
            self.entries[firm] = (when, when)
        else:
            self.entries[firm] = (min(prev[0], when), max(prev[1], when))

    def first_date(self, firm: str) -> date | None:
        entry = self.entries.get(firm)
        return None if entry is None else entry[0]


@dataclass(frozen=True)
class SplitSpec:
    """``cutoff`` is the last date of training data; targets fall in ``(cutoff - delta, cutoff]``
    and positives in ``(cutoff, horizon_end]``."""

    cutoff: date
    delta_days: int
    horizon_end: date

    def __post_init__(self):
        if self.delta_days <= 0:
            raise ValueError("delta_days must be positive")
        if not self.cutoff < self.horizon_end:
            raise ValueError("cutoff must precede horizon_end")

    @property
    def window_start(self) -> date:
        return self.cutoff - timedelta(days=self.delta_days)


def parse_event_lines(lines: Iterable[str], source: str = "<stream>"):
    """Yield ``NewsEvent`` or ``RecordError`` per non-blank line of ``date firm category``."""
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.rstrip("\r\n").split("\t")
        try:
            if len(parts) != 3:
                raise ValueError(f"expected 3 tab-separated fields, got {len(parts)}")
            when, firm, category = (p.strip() for p in parts)
            yield NewsEvent(firm, category, date.fromisoformat(when))
        except ValueError as exc:
            yield RecordError(source, lineno, str(exc))


def build_lists(events: Iterable, categories: Iterable[str] | None = CATEGORIES):
    """Return ``({category: CategoryList}, errors)``.

    ``categories=None`` accepts any tag.  ``RecordError`` items in the stream
    are passed through to the error list.
    """
    allowed = None if categories is None else set(categories)
    lists: dict[str, CategoryList] = {}
    errors: list[RecordError] = []
    for i, ev in enumerate(events, start=1):
        if isinstance(ev, RecordError):
            errors.append(ev)
            continue
        if allowed is not None and ev.category not in allowed:
            errors.append(RecordError("<events>", i, f"unknown category {ev.category!r}"))
            continue
        lists.setdefault(ev.category, CategoryList(ev.category)).add(ev.firm, ev.date)
    return lists, errors


def split_source_target(cl: CategoryList, spec: SplitSpec) -> tuple[set[str], set[str]]:
    source, target = set(), set()
    for firm, (first, _) in cl.entries.items():
        if first <= spec.window_start:
            source.add(firm)
        elif first <= spec.cutoff:
            target.add(firm)
    return source, target


def prediction_targets(cl: CategoryList, universe: Iterable[str], spec: SplitSpec):
    """Return ``(candidates, positives)``: universe firms with no event up to the cutoff,
    and those among them first reported in ``(cutoff, horizon_end]``."""
    candidates, positives = set(), set()
    for firm in universe:
        first = cl.first_date(firm)
        if first is not None and first <= spec.cutoff:
            continue
        candidates.add(firm)
        if first is not None and first <= spec.horizon_end:
            positives.add(firm)
    return candidates, positives


def choose_delta(cl: CategoryList, cutoff: date, floor: int = 500,
                 short: int = 31, long: int = 182) -> int:
    """Use the long window when the short one leaves fewer than ``floor`` source firms."""
    window_start = cutoff - timedelta(days=short)
    n_source = sum(1 for first, _ in cl.entries.values() if first <= window_start)
    return short if n_source >= floor else long


@dataclass
class Split:
    source: set[str]
    target: set[str]
    candidates: set[str]
    positives: set[str]

    @property
    def known(self) -> set[str]:
        return self.source | self.target


def make_split(cl: CategoryList, universe: Iterable[str], spec: SplitSpec) -> Split:
    universe = set(universe)
    source, target = split_source_target(cl, spec)
    candidates, positives = prediction_targets(cl, universe, spec)
    return Split(source & universe, target & universe, candidates, positives)


def save_split(split: Split, path: str) -> None:
    rows = [(f, "source", 0) for f in split.source]
    rows += [(f, "target", 0) for f in split.target]
    rows += [(f, "candidate", int(f in split.positives)) for f in split.candidates]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("firm\trole\tpositive\n")
        for firm, role, pos in sorted(rows):
            fh.write(f"{firm}\t{role}\t{pos}\n")


def load_split(path: str) -> Split:
    split = Split(set(), set(), set(), set())
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            firm, role, pos = line.rstrip("\n").split("\t")
            if role == "source":
                split.source.add(firm)
            elif role == "target":
                split.target.add(firm)
            elif role == "candidate":
                split.candidates.add(firm)
                if pos == "1":
                    split.positives.add(firm)
            else:
                raise ValueError(f"unknown role {role!r} in {path}")
    return split
