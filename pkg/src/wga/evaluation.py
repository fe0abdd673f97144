"""Benchmark scoring formulas, taxonomy-weighted aggregation, judge-driven
manifest scoring and report emission."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import templates as T
from .backends import Backend, BackendError, BackendUnavailable, ChatRequest, ChatTurn, chat_complete
from .pipeline import run_many
from .protocol import EvalScores, ProtocolError, parse_eval_scores
from .records import ImageStore, atomic_write_text

log = logging.getLogger(__name__)

CATEGORIES = ("Character", "Object", "Scene")
FACTIP_DIMENSIONS = ("clarity", "content_quality", "aesthetics", "text_relevance_ip")
DIMENSION_LABELS = {"clarity": "Clarity", "content_quality": "Content", "aesthetics": "Aesthetics",
                    "text_relevance_ip": "Relevance"}


class WeightError(ValueError):
    pass


class TaxonomyError(ValueError):
    pass


def _check_weights(values: Sequence[float]) -> None:
    if any(v < 0 for v in values):
        raise WeightError(f"weights must be non-negative: {tuple(values)}")
    if abs(math.fsum(values) - 1.0) > 1e-9:
        raise WeightError(f"weights must sum to 1, got {math.fsum(values)!r}")


@dataclass(frozen=True)
class FactIpWeights:
    clarity: float = 0.05
    content: float = 0.10
    aesthetics: float = 0.10
    relevance: float = 0.75

    def __post_init__(self):
        _check_weights(self.values())

    def values(self) -> tuple[float, float, float, float]:
        return (self.clarity, self.content, self.aesthetics, self.relevance)


@dataclass(frozen=True)
class WiseWeights:
    consistency: float = 0.7
    realism: float = 0.2
    aesthetic: float = 0.1

    def __post_init__(self):
        _check_weights(self.values())

    def values(self) -> tuple[float, float, float]:
        return (self.consistency, self.realism, self.aesthetic)


def _score_tuple(scores) -> tuple[float, float, float, float]:
    if isinstance(scores, EvalScores):
        return scores.as_tuple()[:4]
    t = tuple(scores)
    if len(t) != 4:
        raise ValueError(f"expected 4 scores, got {len(t)}")
    return t


def factip_item_score(scores, weights: FactIpWeights = FactIpWeights()) -> float:
    """Weighted sum of the four 0-10 judge scores, scaled to 0-100."""
    s = _score_tuple(scores)
    return 10.0 * math.fsum(a * x for a, x in zip(weights.values(), s))


def wiscore(consistency: int, realism: int, aesthetic: int, weights: WiseWeights = WiseWeights()) -> float:
    for name, v in (("consistency", consistency), ("realism", realism), ("aesthetic", aesthetic)):
        if v not in (0, 1, 2):
            raise ValueError(f"{name}={v!r} must be 0, 1 or 2")
    a1, a2, a3 = weights.values()
    return a1 * consistency + a2 * realism + a3 * aesthetic


def _binary(v) -> int:
    if v not in (0, 1):
        raise ValueError(f"expected a binary score, got {v!r}")
    return int(v)


def concept_factuality(per_concept: Sequence[Sequence[int]]) -> float:
    """Mean over concepts of (shape + color + texture + feature) / 4."""
    if not per_concept:
        raise ValueError("need at least one concept")
    total = 0.0
    for row in per_concept:
        if len(row) != 4:
            raise ValueError(f"expected 4 binary scores per concept, got {len(row)}")
        total += sum(_binary(v) for v in row) / 4
    return total / len(per_concept)


def instantiation_score(concept_present: bool, phrase_realized: bool) -> int:
    return int(bool(concept_present) and bool(phrase_realized))


def composition_factuality(s: int, v: int, a: int, p: int) -> float:
    return (_binary(s) + _binary(v) + _binary(a) + _binary(p)) / 4


def kitten_aggregate(per_category: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Unweighted means over categories of the text and entity alignment
    scores, and their mean as the combined column."""
    if not per_category:
        raise ValueError("need at least one category")
    text = sum(t for t, _ in per_category) / len(per_category)
    entity = sum(e for _, e in per_category) / len(per_category)
    return text, entity, (text + entity) / 2


# ---------------------------------------------------------------------------
# taxonomy

FULL_COUNTS = {
    "Animation": ("Character", 438),
    "Comic": ("Character", 363),
    "Celebrity": ("Character", 300),
    "Game": ("Character", 272),
    "Mascot": ("Character", 77),
    "Mythology": ("Character", 50),
    "Food": ("Object", 316),
    "Cultural Relic / Art": ("Object", 126),
    "Toy": ("Object", 123),
    "Animal / Plant": ("Object", 50),
    "Landmark": ("Scene", 297),
    "Festival / Celebration": ("Scene", 50),
}

_ALIASES = {
    "art": "Cultural Relic / Art",
    "cultural relic": "Cultural Relic / Art",
    "animal": "Animal / Plant",
    "animals/plants": "Animal / Plant",
    "plant": "Animal / Plant",
    "festival": "Festival / Celebration",
    "celebration": "Festival / Celebration",
}


@dataclass(frozen=True)
class CategoryTaxonomy:
    entries: tuple[tuple[str, str, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(tuple(e) for e in self.entries))
        for sub, cat, count in self.entries:
            if count <= 0:
                raise TaxonomyError(f"subcategory {sub!r} has non-positive count {count}")

    @classmethod
    def from_counts(cls, counts: dict[str, tuple[str, int]]) -> "CategoryTaxonomy":
        return cls(tuple((sub, cat, n) for sub, (cat, n) in counts.items()))

    @classmethod
    def full(cls) -> "CategoryTaxonomy":
        return cls.from_counts(FULL_COUNTS)

    @property
    def total(self) -> int:
        return sum(n for _, _, n in self.entries)

    def subcategories(self) -> list[str]:
        return [s for s, _, _ in self.entries]

    def categories(self) -> list[str]:
        out = []
        for _, c, _ in self.entries:
            if c not in out:
                out.append(c)
        return out

    def category_of(self, sub: str) -> str:
        return self._entry(sub)[1]

    def count_of(self, sub: str) -> int:
        return self._entry(sub)[2]

    def canonical(self, name: str) -> str:
        return self._entry(name)[0]

    def _entry(self, name: str) -> tuple[str, str, int]:
        key = name.strip().casefold()
        key = _ALIASES.get(key, key).casefold()
        for e in self.entries:
            if e[0].casefold() == key:
                return e
        raise TaxonomyError(f"unknown subcategory {name!r}")

    def category_total(self, category: str) -> int:
        return sum(n for _, c, n in self.entries if c == category)

    def scaled(self, size: int) -> "CategoryTaxonomy":
        """Proportional allocation of ``size`` items by largest remainder;
        ties in remainder go to the larger, then earlier, subcategory."""
        total = self.total
        quotas = [(size * n) / total for _, _, n in self.entries]
        alloc = [math.floor(q) for q in quotas]
        short = size - sum(alloc)
        order = sorted(range(len(quotas)), key=lambda k: (-(quotas[k] - alloc[k]), -self.entries[k][2], k))
        for k in order[:short]:
            alloc[k] += 1
        return CategoryTaxonomy(tuple((s, c, a) for (s, c, _), a in zip(self.entries, alloc) if a > 0))

    def mini(self, size: int = 500) -> "CategoryTaxonomy":
        return self.scaled(size)


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class Aggregate:
    subcategory: dict[str, float]
    category: dict[str, float]
    overall: float | None
    n_items: int


def weighted_means(per_item: Iterable[tuple[str, float]], taxonomy: CategoryTaxonomy) -> Aggregate:
    """Subcategory arithmetic means, then count-weighted means per category
    and overall.  Subcategories with no items are left out of the weighting."""
    buckets: dict[str, list[float]] = defaultdict(list)
    n = 0
    for sub, score in per_item:
        buckets[taxonomy.canonical(sub)].append(float(score))
        n += 1
    subs = {s: math.fsum(v) / len(v) for s, v in buckets.items()}
    subs = {s: subs[s] for s in taxonomy.subcategories() if s in subs}
    cats: dict[str, float] = {}
    for cat in taxonomy.categories():
        members = [(taxonomy.count_of(s), m) for s, m in subs.items() if taxonomy.category_of(s) == cat]
        if members:
            cats[cat] = math.fsum(c * m for c, m in members) / sum(c for c, _ in members)
    overall = None
    if subs:
        overall = math.fsum(taxonomy.count_of(s) * m for s, m in subs.items()) / sum(taxonomy.count_of(s) for s in subs)
    return Aggregate(subs, cats, overall, n)


def factip_aggregate(per_item: Iterable[tuple[str, float]], taxonomy: CategoryTaxonomy | None = None) -> Aggregate:
    return weighted_means(per_item, taxonomy or CategoryTaxonomy.full())


@dataclass(frozen=True)
class ItemResult:
    item_id: str
    subcategory: str
    scores: EvalScores | None
    score: float | None
    error: str | None = None
    unavailable: bool = False


@dataclass(frozen=True)
class FactIpReport:
    overall: Aggregate
    dimensions: dict[str, Aggregate]


def factip_report(results: Sequence[ItemResult], taxonomy: CategoryTaxonomy | None = None) -> FactIpReport:
    """Overall item scores plus each judge dimension (on the 0-100 scale)
    aggregated per category, the layout of the main results table."""
    tax = taxonomy or CategoryTaxonomy.full()
    ok = [r for r in results if r.scores is not None]
    overall = weighted_means(((r.subcategory, r.score) for r in ok), tax)
    dims = {
        d: weighted_means(((r.subcategory, 10.0 * getattr(r.scores, d)) for r in ok), tax)
        for d in FACTIP_DIMENSIONS
    }
    return FactIpReport(overall, dims)


# ---------------------------------------------------------------------------
# judge-driven scoring


@dataclass(frozen=True)
class ManifestItem:
    item_id: str
    subcategory: str
    prompt: str
    gt1: str
    gt2: str
    generated: str

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestItem":
        missing = [k for k in ("item_id", "subcategory", "prompt", "gt1", "gt2", "generated") if k not in d]
        if missing:
            raise ValueError(f"manifest item lacks {missing}")
        return cls(str(d["item_id"]), d["subcategory"], d["prompt"], d["gt1"], d["gt2"], d["generated"])


def read_manifest(path: str | os.PathLike) -> list[ManifestItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                items.append(ManifestItem.from_dict(json.loads(line)))
            except (ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return items


def _load_image(store: ImageStore, ref: str, base: Path | None) -> str:
    if ref.startswith("sha256:"):
        return ref
    p = Path(ref)
    if not p.is_absolute() and base is not None:
        p = base / p
    return store.put(p.read_bytes())


def score_item(item: ManifestItem, judge: Backend, store: ImageStore, weights: FactIpWeights = FactIpWeights(),
               base: Path | None = None, strict_json: bool = False, seed: int = 0,
               taxonomy: CategoryTaxonomy | None = None) -> ItemResult:
    tax = taxonomy or CategoryTaxonomy.full()
    sub = tax.canonical(item.subcategory)
    try:
        handles = tuple(_load_image(store, r, base) for r in (item.gt1, item.gt2, item.generated))
    except OSError as exc:
        return ItemResult(item.item_id, sub, None, None, f"image unreadable: {exc}")
    req = ChatRequest(T.EVALUATION_PROMPT, (ChatTurn("user", T.EVALUATION_USER.format(prompt=item.prompt), handles),),
                      seed=seed)
    try:
        scores = parse_eval_scores(chat_complete(judge, req), strict_json)
    except (BackendError, ProtocolError) as exc:
        return ItemResult(item.item_id, sub, None, None, str(exc), isinstance(exc, BackendUnavailable))
    return ItemResult(item.item_id, sub, scores, factip_item_score(scores, weights))


def score_manifest(items: Sequence[ManifestItem], judge: Backend, store: ImageStore | None = None,
                   weights: FactIpWeights = FactIpWeights(), base: Path | None = None, strict_json: bool = False,
                   seed: int = 0, parallelism: int = 4) -> list[ItemResult]:
    store = store or judge.store
    return run_many(lambda it: score_item(it, judge, store, weights, base, strict_json, seed), items, parallelism)


# ---------------------------------------------------------------------------
# reports

CSV_FIELDS = ("item_id", "subcategory", "category", "clarity", "content_quality", "aesthetics",
              "text_relevance_ip", "score", "error")


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def results_csv(results: Sequence[ItemResult], taxonomy: CategoryTaxonomy) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in results:
        dims = r.scores.as_tuple()[:4] if r.scores else (None,) * 4
        w.writerow([r.item_id, r.subcategory, taxonomy.category_of(r.subcategory), *("" if d is None else str(d) for d in dims),
                    _fmt(r.score), r.error or ""])
    return buf.getvalue()


def read_results_csv(text: str) -> list[ItemResult]:
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        if row["score"] == "":
            out.append(ItemResult(row["item_id"], row["subcategory"], None, None, row["error"] or None))
            continue
        dims = [int(row[k]) for k in FACTIP_DIMENSIONS]
        out.append(ItemResult(row["item_id"], row["subcategory"], EvalScores(*dims, "-"), float(row["score"])))
    return out


def _agg_dict(a: Aggregate) -> dict:
    return {"subcategory": a.subcategory, "category": a.category, "overall": a.overall, "n_items": a.n_items}


def summary_json(report: FactIpReport, mini: FactIpReport | None = None) -> str:
    doc = {
        "overall": _agg_dict(report.overall),
        "dimensions": {d: _agg_dict(a) for d, a in report.dimensions.items()},
    }
    if mini is not None:
        doc["mini"] = {
            "overall": _agg_dict(mini.overall),
            "dimensions": {d: _agg_dict(a) for d, a in mini.dimensions.items()},
        }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def render_table(report: FactIpReport, label: str = "model", categories: Sequence[str] = CATEGORIES) -> str:
    """Fixed-width text table: each dimension by category, then Overall."""
    head1 = [f"{'':<16}"]
    head2 = [f"{'Model':<16}"]
    row = [f"{label:<16}"]
    for d in FACTIP_DIMENSIONS:
        head1.append(f"{DIMENSION_LABELS[d]:^29}")
        head2.append(" ".join(f"{c:>9}" for c in categories))
        row.append(" ".join(f"{_cell(report.dimensions[d].category.get(c)):>9}" for c in categories))
    head1.append(f"{'':>9}")
    head2.append(f"{'Overall':>9}")
    row.append(f"{_cell(report.overall.overall):>9}")
    return "\n".join(" | ".join(parts) for parts in (head1, head2, row)) + "\n"


def _cell(x: float | None) -> str:
    return "-" if x is None else f"{x:.1f}"


def emit_report(results: Sequence[ItemResult], out_dir: str | os.PathLike, taxonomy: CategoryTaxonomy | None = None,
                label: str = "model", mini_size: int | None = 500) -> dict[str, Path]:
    """Write ``items.csv``, ``summary.json`` and ``table.txt`` atomically."""
    tax = taxonomy or CategoryTaxonomy.full()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = factip_report(results, tax)
    mini = factip_report(results, tax.scaled(mini_size)) if mini_size else None
    paths = {"csv": out / "items.csv", "json": out / "summary.json", "table": out / "table.txt"}
    atomic_write_text(paths["csv"], results_csv(results, tax))
    atomic_write_text(paths["json"], summary_json(report, mini))
    atomic_write_text(paths["table"], render_table(report, label))
    return paths
