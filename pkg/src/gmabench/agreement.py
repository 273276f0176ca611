"""Cohen's kappa with confidence intervals and rater agreement reports.

Pairs of ratings are filtered so that a snippet counts only when both
raters found it assessable; the surviving FM+/FM- pairs form a 2x2
contingency table. Kappa's confidence interval uses the asymptotic
standard error sqrt(p_o(1-p_o) / (n (1-p_e)^2)); a seeded bootstrap mode
exists to cross-check that choice.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

import numpy as np
from scipy import stats

from .errors import DegenerateMarginals, EmptyOverlap, InvalidLabel

NOT_ASSESSABLE_REASONS = (
    "fussy/crying",
    "drowsy",
    "yawning",
    "refluxing",
    "over-excited",
    "self-soothing",
    "distracted",
)


class Rating(str, Enum):
    FM_PLUS = "FM+"
    FM_MINUS = "FM-"
    NOT_ASSESSABLE = "not_assessable"


@dataclass(frozen=True)
class RatingLabel:
    value: Rating
    reason: str | None = None

    def __post_init__(self):
        if not isinstance(self.value, Rating):
            object.__setattr__(self, "value", Rating(self.value))
        if self.reason is not None:
            if self.value is not Rating.NOT_ASSESSABLE:
                raise InvalidLabel("a reason is only valid on not-assessable labels")
            if self.reason not in NOT_ASSESSABLE_REASONS:
                raise InvalidLabel(f"unknown reason {self.reason!r}")

    @property
    def assessable(self) -> bool:
        return self.value is not Rating.NOT_ASSESSABLE


LabelSet = Mapping[str, RatingLabel]


def filter_assessable(a: LabelSet, b: LabelSet) -> list[tuple[Rating, Rating]]:
    """Paired FM labels for snippets both raters saw and found assessable."""
    pairs = []
    for snippet_id in a.keys() & b.keys():
        la, lb = a[snippet_id], b[snippet_id]
        if la.assessable and lb.assessable:
            pairs.append((la.value, lb.value))
    if not pairs:
        raise EmptyOverlap("no snippet is assessable by both raters")
    return pairs


@dataclass
class ContingencyTable:
    """2x2 counts over (rater A class, rater B class), FM+ first."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (2, 2) or np.any(self.counts < 0):
            raise ValueError("contingency table must be 2x2 with non-negative counts")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Rating, Rating]]) -> "ContingencyTable":
        order = {Rating.FM_PLUS: 0, Rating.FM_MINUS: 1}
        counts = np.zeros((2, 2), dtype=np.int64)
        for la, lb in pairs:
            counts[order[la], order[lb]] += 1
        return cls(counts)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def observed_agreement(self) -> float:
        return float(np.trace(self.counts)) / self.n

    def chance_agreement(self) -> float:
        row = self.counts.sum(axis=1) / self.n
        col = self.counts.sum(axis=0) / self.n
        return float(np.dot(row, col))


def cohens_kappa(table: ContingencyTable) -> float:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e)."""
    if table.n < 1:
        raise ValueError("empty table")
    p_o = table.observed_agreement()
    p_e = table.chance_agreement()
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        raise DegenerateMarginals("chance agreement is 1 with imperfect agreement")
    return (p_o - p_e) / (1.0 - p_e)


@dataclass
class KappaResult:
    kappa: float
    lower: float
    upper: float
    n: int

    def format(self) -> str:
        return f"{self.kappa:.2f} [{self.lower:.2f}, {self.upper:.2f}]"


def kappa_ci(
    table: ContingencyTable,
    level: float = 0.95,
    method: str = "asymptotic",
    n_boot: int = 10000,
    seed: int = 0,
) -> KappaResult:
    """Kappa with a confidence interval, clipped to [-1, 1]."""
    if table.n < 2:
        raise ValueError("need at least two rated snippets")
    kappa = cohens_kappa(table)
    if method == "asymptotic":
        p_o = table.observed_agreement()
        p_e = table.chance_agreement()
        se = np.sqrt(p_o * (1.0 - p_o) / (table.n * (1.0 - p_e) ** 2))
        z = stats.norm.ppf(0.5 + level / 2.0)
        lower, upper = kappa - z * se, kappa + z * se
    elif method == "bootstrap":
        lower, upper = _bootstrap_ci(table, level, n_boot, seed)
    else:
        raise ValueError(f"unknown CI method {method!r}")
    return KappaResult(
        kappa=kappa,
        lower=float(max(-1.0, lower)),
        upper=float(min(1.0, upper)),
        n=table.n,
    )


def _bootstrap_ci(
    table: ContingencyTable, level: float, n_boot: int, seed: int
) -> tuple[float, float]:
    rng = np.random.default_rng(seed)
    probs = table.counts.ravel() / table.n
    draws = rng.multinomial(table.n, probs, size=n_boot).astype(np.float64)
    n = float(table.n)
    p_o = (draws[:, 0] + draws[:, 3]) / n
    row0 = (draws[:, 0] + draws[:, 1]) / n
    col0 = (draws[:, 0] + draws[:, 2]) / n
    p_e = row0 * col0 + (1.0 - row0) * (1.0 - col0)
    with np.errstate(divide="ignore", invalid="ignore"):
        kappas = (p_o - p_e) / (1.0 - p_e)
    degenerate = p_e == 1.0
    kappas[degenerate & (p_o == 1.0)] = 1.0
    kappas = kappas[~(degenerate & (p_o < 1.0))]
    alpha = (1.0 - level) / 2.0
    return float(np.quantile(kappas, alpha)), float(np.quantile(kappas, 1.0 - alpha))


# --- study-level reports ----------------------------------------------------

LABEL_CSV_HEADER = ["snippet_id", "assessor", "condition", "subset", "label", "reason", "timestamp"]


@dataclass(frozen=True)
class LabelRow:
    snippet_id: str
    assessor: str
    condition: str
    subset: int
    label: RatingLabel
    timestamp: str = ""


def parse_label_csv(text: str) -> list[LabelRow]:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows or rows[0] != LABEL_CSV_HEADER:
        raise InvalidLabel("label CSV must start with the canonical header")
    out = []
    for row in rows[1:]:
        snippet_id, assessor, condition, subset, label, reason, timestamp = row
        out.append(
            LabelRow(
                snippet_id=snippet_id,
                assessor=assessor,
                condition=condition,
                subset=int(subset),
                label=RatingLabel(Rating(label), reason or None),
                timestamp=timestamp,
            )
        )
    return out


@dataclass
class AgreementCell:
    """One report cell; ``result`` is None when no pair survived filtering."""

    description: str
    subset: int | None  # None means combined
    result: KappaResult | None


@dataclass
class AgreementReport:
    intra_rater: dict[str, list[AgreementCell]]
    inter_rater: dict[str, list[AgreementCell]]
    not_assessable_counts: dict[tuple[str, str], int]  # (assessor, condition)

    def to_text(self) -> str:
        lines = ["Intra-rater agreement (face-visible vs face-blurred)"]
        for assessor, cells in sorted(self.intra_rater.items()):
            parts = [self._cell_text(c) for c in cells]
            lines.append(f"  {assessor}: " + "  ".join(parts))
        lines.append("")
        lines.append("Inter-rater agreement (between assessors)")
        for condition, cells in sorted(self.inter_rater.items()):
            parts = [self._cell_text(c) for c in cells]
            lines.append(f"  {condition}: " + "  ".join(parts))
        lines.append("")
        lines.append("Not-assessable counts")
        for (assessor, condition), count in sorted(self.not_assessable_counts.items()):
            lines.append(f"  {assessor} / {condition}: {count}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def _cell_text(cell: AgreementCell) -> str:
        label = "combined" if cell.subset is None else f"subset {cell.subset}"
        if cell.result is None:
            return f"{label}: n/a"
        return f"{label}: {cell.result.format()} (n={cell.result.n})"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["kind", "who", "subset", "kappa", "lower", "upper", "n"])
        for kind, groups in (("intra", self.intra_rater), ("inter", self.inter_rater)):
            for who, cells in sorted(groups.items()):
                for cell in cells:
                    subset = "combined" if cell.subset is None else str(cell.subset)
                    if cell.result is None:
                        writer.writerow([kind, who, subset, "", "", "", 0])
                    else:
                        r = cell.result
                        writer.writerow(
                            [kind, who, subset, repr(r.kappa), repr(r.lower), repr(r.upper), r.n]
                        )
        return buf.getvalue()


def _kappa_cell(description, subset, a: dict, b: dict) -> AgreementCell:
    try:
        pairs = filter_assessable(a, b)
    except EmptyOverlap:
        return AgreementCell(description, subset, None)
    table = ContingencyTable.from_pairs(pairs)
    try:
        return AgreementCell(description, subset, kappa_ci(table))
    except (DegenerateMarginals, ValueError):
        return AgreementCell(description, subset, None)


def agreement_report(rows: Iterable[LabelRow]) -> AgreementReport:
    """Per-subset and combined kappas per assessor and between assessors."""
    rows = list(rows)
    by_assessor_condition: dict[tuple[str, str], dict[int, dict[str, RatingLabel]]] = defaultdict(
        lambda: defaultdict(dict)
    )
    subsets: set[int] = set()
    for row in rows:
        by_assessor_condition[(row.assessor, row.condition)][row.subset][row.snippet_id] = row.label
        subsets.add(row.subset)
    assessors = sorted({r.assessor for r in rows})
    conditions = sorted({r.condition for r in rows})
    subset_list = sorted(subsets)

    def merged(assessor: str, condition: str) -> dict[str, RatingLabel]:
        out: dict[str, RatingLabel] = {}
        for labels in by_assessor_condition[(assessor, condition)].values():
            out.update(labels)
        return out

    intra: dict[str, list[AgreementCell]] = {}
    if len(conditions) == 2:
        cond_a, cond_b = conditions
        for assessor in assessors:
            cells = []
            for subset in subset_list:
                cells.append(
                    _kappa_cell(
                        f"{assessor} {cond_a} vs {cond_b}",
                        subset,
                        by_assessor_condition[(assessor, cond_a)].get(subset, {}),
                        by_assessor_condition[(assessor, cond_b)].get(subset, {}),
                    )
                )
            cells.append(
                _kappa_cell(
                    f"{assessor} {cond_a} vs {cond_b}",
                    None,
                    merged(assessor, cond_a),
                    merged(assessor, cond_b),
                )
            )
            intra[assessor] = cells

    inter: dict[str, list[AgreementCell]] = {}
    if len(assessors) == 2:
        rater_a, rater_b = assessors
        for condition in conditions:
            cells = []
            for subset in subset_list:
                cells.append(
                    _kappa_cell(
                        f"{rater_a} vs {rater_b} ({condition})",
                        subset,
                        by_assessor_condition[(rater_a, condition)].get(subset, {}),
                        by_assessor_condition[(rater_b, condition)].get(subset, {}),
                    )
                )
            cells.append(
                _kappa_cell(
                    f"{rater_a} vs {rater_b} ({condition})",
                    None,
                    merged(rater_a, condition),
                    merged(rater_b, condition),
                )
            )
            inter[condition] = cells

    na_counts: dict[tuple[str, str], int] = defaultdict(int)
    for row in rows:
        if not row.label.assessable:
            na_counts[(row.assessor, row.condition)] += 1

    return AgreementReport(
        intra_rater=intra, inter_rater=inter, not_assessable_counts=dict(na_counts)
    )
