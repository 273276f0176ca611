"""Cross-validation, repeat selection, ablation grids and statistics.

The protocol: 5-fold cross-validation where each fold trains ten times
(internally re-splitting 7/8 train, 1/8 validation), keeps the run with the
best validation accuracy, and evaluates it once on the held-out fold. Fold
accuracies aggregate as mean plus a 95% confidence interval of the mean
using Student's t with k-1 degrees of freedom; condition comparisons use a
two-sample t-test.
"""

from __future__ import annotations

import csv
import io
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import TooFewSamples
from .neural import NetworkSpec, TemporalConvNet, TrainConfig, accuracy, train


@dataclass
class FoldPlan:
    n: int
    k: int
    folds: list[np.ndarray]

    def train_indices(self, fold: int) -> np.ndarray:
        return np.concatenate([f for j, f in enumerate(self.folds) if j != fold])


def kfold_split(n: int, k: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded shuffle then contiguous slicing into k nearly equal folds."""
    if n < k:
        raise TooFewSamples(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    base, rem = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < rem else 0)
        folds.append(np.sort(perm[start : start + size]))
        start += size
    return FoldPlan(n=n, k=k, folds=folds)


@dataclass
class CvResult:
    fold_accuracies: list[float]  # percent
    mean: float
    ci95: float  # half-width

    @classmethod
    def from_accuracies(cls, accs: Sequence[float]) -> "CvResult":
        accs = [float(a) for a in accs]
        mean = float(np.mean(accs))
        if len(accs) < 2:
            return cls(accs, mean, 0.0)
        sd = float(np.std(accs, ddof=1))
        half = float(stats.t.ppf(0.975, len(accs) - 1) * sd / np.sqrt(len(accs)))
        return cls(accs, mean, half)

    def format_row(self) -> str:
        return f"{self.mean:.4f} ±{self.ci95:.4f}"


@dataclass
class RepeatSelection:
    chosen: int  # 1-based run ordinal
    val_accuracies: list[float]


def best_of_repeats(
    train_run: Callable[[int], tuple[TemporalConvNet, float]],
    repeats: int = 10,
    seed: int = 0,
) -> tuple[TemporalConvNet, RepeatSelection]:
    """Run training ``repeats`` times with seeds seed+1..seed+repeats.

    Returns the run with the highest validation accuracy; ties go to the
    lowest run ordinal. Selection never sees test data.
    """
    if repeats < 1:
        raise ValueError("need at least one repeat")
    best_net = None
    best_acc = float("-inf")
    best_run = 0
    accs = []
    for r in range(1, repeats + 1):
        net, val_acc = train_run(seed + r)
        accs.append(val_acc)
        if val_acc > best_acc:
            best_net, best_acc, best_run = net, val_acc, r
    return best_net, RepeatSelection(chosen=best_run, val_accuracies=accs)


def _train_repeat(args) -> tuple[dict, float]:
    x_tr, y_tr, spec, config, run_seed = args
    try:
        from threadpoolctl import threadpool_limits
        ctx = threadpool_limits(limits=1)
    except ImportError:  # pragma: no cover - threadpoolctl ships with numpy
        ctx = None
    try:
        net, history = train(x_tr, y_tr, spec, replace(config, seed=run_seed))
        return net.copy_params(), history.best_val_acc
    finally:
        if ctx is not None:
            ctx.unregister()


def _parallel_best_of_repeats(
    pool: ProcessPoolExecutor,
    x_tr: np.ndarray,
    y_tr: np.ndarray,
    spec: NetworkSpec,
    config: TrainConfig,
    repeats: int,
    seed: int,
) -> tuple[TemporalConvNet, RepeatSelection]:
    jobs = [(x_tr, y_tr, spec, config, seed + r) for r in range(1, repeats + 1)]
    results = list(pool.map(_train_repeat, jobs))
    accs = [acc for _, acc in results]
    best_run = int(np.argmax(accs)) + 1
    net = TemporalConvNet(spec, seed=0)
    net.load_params(results[best_run - 1][0])
    return net, RepeatSelection(chosen=best_run, val_accuracies=accs)


def run_cv(
    x: np.ndarray,
    y: np.ndarray,
    spec: NetworkSpec,
    config: TrainConfig,
    k: int = 5,
    repeats: int = 10,
    seed: int = 0,
    fold_hook: Callable[[int, float], None] | None = None,
    jobs: int = 1,
) -> CvResult:
    """K-fold cross-validation with best-of-repeats model selection.

    ``jobs`` > 1 runs the training repeats of each fold on worker processes;
    results are identical to serial execution (each repeat is independently
    seeded and selection is a pure argmax).
    """
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y)
    plan = kfold_split(len(y), k, seed)
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None
    fold_accs = []
    try:
        for i in range(k):
            test_idx = plan.folds[i]
            train_idx = plan.train_indices(i)
            x_tr, y_tr = x[train_idx], y[train_idx]

            def train_run(run_seed: int) -> tuple[TemporalConvNet, float]:
                net, history = train(x_tr, y_tr, spec, replace(config, seed=run_seed))
                return net, history.best_val_acc

            if pool is None:
                net, _ = best_of_repeats(train_run, repeats, seed + 100 * i)
            else:
                net, _ = _parallel_best_of_repeats(
                    pool, x_tr, y_tr, spec, config, repeats, seed + 100 * i
                )
            acc = 100.0 * accuracy(net, x[test_idx], y[test_idx])
            fold_accs.append(acc)
            if fold_hook is not None:
                fold_hook(i, acc)
    finally:
        if pool is not None:
            pool.shutdown()
    return CvResult.from_accuracies(fold_accs)


@dataclass
class TTestResult:
    t: float
    df: float
    p: float


def ttest_two_sample(
    a: Sequence[float], b: Sequence[float], welch: bool = False
) -> TTestResult:
    """Two-sided two-sample Student's t-test (pooled variance by default)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise TooFewSamples("each sample needs at least two observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    diff = a.mean() - b.mean()
    if welch:
        se2 = va / a.size + vb / b.size
        if se2 == 0.0:
            return _degenerate_ttest(diff, float(a.size + b.size - 2))
        df = se2**2 / (
            (va / a.size) ** 2 / (a.size - 1) + (vb / b.size) ** 2 / (b.size - 1)
        )
        t = diff / np.sqrt(se2)
    else:
        df = float(a.size + b.size - 2)
        pooled = ((a.size - 1) * va + (b.size - 1) * vb) / df
        se2 = pooled * (1.0 / a.size + 1.0 / b.size)
        if se2 == 0.0:
            return _degenerate_ttest(diff, df)
        t = diff / np.sqrt(se2)
    p = 2.0 * float(stats.t.sf(abs(t), df))
    return TTestResult(float(t), float(df), min(1.0, p))


def _degenerate_ttest(diff: float, df: float) -> TTestResult:
    if diff == 0.0:
        return TTestResult(0.0, df, 1.0)
    return TTestResult(float(np.copysign(np.inf, diff)), df, 0.0)


# --- ablation grids -------------------------------------------------------

CONDITIONS = ("without_head", "with_head")


@dataclass(frozen=True)
class AblationGrid:
    """Grid axes: FC layouts at a fixed conv stage, then conv sweeps."""

    one_fc_sizes: tuple[int, ...] = (50, 100, 150, 200, 300, 500)
    two_fc_sizes: tuple[tuple[int, int], ...] = (
        (50, 25), (100, 50), (150, 100), (200, 100),
        (300, 150), (300, 200), (500, 250), (500, 300),
    )
    filter_lens: tuple[int, ...] = (5, 7, 9, 15, 21, 31)
    filter_counts: tuple[int, ...] = (16, 32, 64, 128, 256, 512)
    base_filters: int = 64
    base_filter_len: int = 7
    conv_sweep_fc: tuple[int, int] = (200, 100)


@dataclass(frozen=True)
class CellKey:
    condition: str
    fc_sizes: tuple[int, ...]
    filters: int
    filter_len: int

    def as_strings(self) -> tuple[str, str, str, str]:
        return (
            self.condition,
            "+".join(str(s) for s in self.fc_sizes),
            str(self.filters),
            str(self.filter_len),
        )

    @classmethod
    def from_strings(cls, condition: str, fc: str, filters: str, filter_len: str) -> "CellKey":
        return cls(
            condition,
            tuple(int(s) for s in fc.split("+")),
            int(filters),
            int(filter_len),
        )


@dataclass
class AblationCell:
    key: CellKey
    result: CvResult


def grid_cells(grid: AblationGrid) -> list[CellKey]:
    """Unique cells across both tables; duplicated configs appear once."""
    keys: list[CellKey] = []
    for condition in CONDITIONS:
        for n in grid.one_fc_sizes:
            keys.append(CellKey(condition, (n,), grid.base_filters, grid.base_filter_len))
        for pair in grid.two_fc_sizes:
            keys.append(CellKey(condition, pair, grid.base_filters, grid.base_filter_len))
        for flen in grid.filter_lens:
            keys.append(CellKey(condition, grid.conv_sweep_fc, grid.base_filters, flen))
        for count in grid.filter_counts:
            keys.append(CellKey(condition, grid.conv_sweep_fc, count, grid.base_filter_len))
    seen = set()
    unique = []
    for key in keys:
        if key not in seen:
            seen.add(key)
            unique.append(key)
    return unique


class ResultStore:
    """CSV-backed cell results; one appended row per completed cell."""

    def __init__(self, path: str | Path, k: int = 5):
        self.path = Path(path)
        self.k = k
        self.results: dict[CellKey, CvResult] = {}
        if self.path.exists():
            self._load()

    def _header(self) -> list[str]:
        return (
            ["condition", "fc_sizes", "filters", "filter_len"]
            + [f"acc{i + 1}" for i in range(self.k)]
            + ["mean", "ci95"]
        )

    def _load(self) -> None:
        with open(self.path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
        if not rows:
            return
        for row in rows[1:]:
            if len(row) != len(self._header()):
                continue  # torn tail from an interrupted run
            key = CellKey.from_strings(*row[:4])
            accs = [float(v) for v in row[4 : 4 + self.k]]
            self.results[key] = CvResult(accs, float(row[-2]), float(row[-1]))

    def add(self, key: CellKey, result: CvResult) -> None:
        new_file = not self.path.exists()
        with open(self.path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if new_file:
                writer.writerow(self._header())
            writer.writerow(
                list(key.as_strings())
                + [repr(a) for a in result.fold_accuracies]
                + [repr(result.mean), repr(result.ci95)]
            )
            fh.flush()
        self.results[key] = result


def cell_seed(base_seed: int, key: CellKey) -> int:
    """Per-cell seed, stable across execution order and resumption."""
    tag = "|".join(key.as_strings()).encode("utf-8")
    return int(base_seed) + (zlib.crc32(tag) & 0xFFFF)


def _run_cell(args) -> tuple[CellKey, CvResult]:
    key, x, y, base_spec, config, k, repeats, seed = args
    spec = replace(
        base_spec,
        channels=x.shape[2],
        filters=key.filters,
        filter_len=key.filter_len,
        fc_sizes=key.fc_sizes,
    )
    result = run_cv(x, y, spec, config, k=k, repeats=repeats, seed=cell_seed(seed, key))
    return key, result


def ablation_run(
    features: Mapping[str, np.ndarray],
    y: np.ndarray,
    config: TrainConfig,
    grid: AblationGrid,
    store_path: str | Path,
    k: int = 5,
    repeats: int = 10,
    seed: int = 0,
    jobs: int = 1,
    base_spec: NetworkSpec | None = None,
    cell_hook: Callable[[CellKey, CvResult], None] | None = None,
) -> list[AblationCell]:
    """Evaluate every grid cell for both conditions, resumably.

    ``features`` maps each condition name to its (n, 250, channels) tensor.
    Completed cells found in the on-disk store are not recomputed.
    """
    store = ResultStore(store_path, k=k)
    keys = grid_cells(grid)
    missing = [key for key in keys if key not in store.results]
    base = base_spec or NetworkSpec(channels=1)

    def args_for(key: CellKey):
        return (key, features[key.condition], y, base, config, k, repeats, seed)

    if jobs <= 1:
        for key in missing:
            key, result = _run_cell(args_for(key))
            store.add(key, result)
            if cell_hook is not None:
                cell_hook(key, result)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for key, result in pool.map(_run_cell, [args_for(k_) for k_ in missing]):
                store.add(key, result)
                if cell_hook is not None:
                    cell_hook(key, result)
    return [AblationCell(key, store.results[key]) for key in keys]


def _render_group(
    lines: list[str],
    title: str,
    row_labels: list[str],
    cells: dict[str, list[AblationCell]],
) -> None:
    lines.append(title)
    lines.append(f"{'':>12}  {'Without head':>22}  {'With head':>22}")
    best = {
        cond: max(range(len(rows)), key=lambda i: rows[i].result.mean)
        for cond, rows in cells.items()
    }
    for i, label in enumerate(row_labels):
        row = f"{label:>12}"
        for cond in CONDITIONS:
            cell = cells[cond][i]
            mark = "*" if best[cond] == i else " "
            row += f"  {cell.result.format_row():>21}{mark}"
        lines.append(row)
    lines.append("")


def format_ablation_report(cells: list[AblationCell], grid: AblationGrid) -> str:
    """Text tables mirroring the published layout, best-in-group starred."""
    by_key = {c.key: c for c in cells}

    def pick(condition, fc, filters, flen):
        return by_key[CellKey(condition, tuple(fc), filters, flen)]

    lines: list[str] = []
    one_fc = {
        cond: [pick(cond, (n,), grid.base_filters, grid.base_filter_len) for n in grid.one_fc_sizes]
        for cond in CONDITIONS
    }
    _render_group(
        lines,
        f"One fully connected layer ({grid.base_filters} filters of size {grid.base_filter_len}x1)",
        [str(n) for n in grid.one_fc_sizes],
        one_fc,
    )
    two_fc = {
        cond: [pick(cond, pair, grid.base_filters, grid.base_filter_len) for pair in grid.two_fc_sizes]
        for cond in CONDITIONS
    }
    _render_group(
        lines,
        f"Two fully connected layers ({grid.base_filters} filters of size {grid.base_filter_len}x1)",
        [f"{a}, {b}" for a, b in grid.two_fc_sizes],
        two_fc,
    )
    fc_label = ", ".join(str(s) for s in grid.conv_sweep_fc)
    flen_cells = {
        cond: [pick(cond, grid.conv_sweep_fc, grid.base_filters, fl) for fl in grid.filter_lens]
        for cond in CONDITIONS
    }
    _render_group(
        lines,
        f"Filter size sweep ({grid.base_filters} filters, FC {fc_label})",
        [f"{fl}x1" for fl in grid.filter_lens],
        flen_cells,
    )
    count_cells = {
        cond: [pick(cond, grid.conv_sweep_fc, fc_, grid.base_filter_len) for fc_ in grid.filter_counts]
        for cond in CONDITIONS
    }
    _render_group(
        lines,
        f"Filter count sweep (size {grid.base_filter_len}x1, FC {fc_label})",
        [str(c) for c in grid.filter_counts],
        count_cells,
    )
    return "\n".join(lines)


def cv_report_csv(results: Mapping[str, CvResult]) -> str:
    """One row per condition: fold accuracies, mean, CI half-width."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    k = max((len(r.fold_accuracies) for r in results.values()), default=0)
    writer.writerow(["condition"] + [f"acc{i + 1}" for i in range(k)] + ["mean", "ci95"])
    for name, result in results.items():
        writer.writerow(
            [name]
            + [repr(a) for a in result.fold_accuracies]
            + [repr(result.mean), repr(result.ci95)]
        )
    return buf.getvalue()
