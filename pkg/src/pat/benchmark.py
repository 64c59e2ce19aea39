"""Size-graded benchmark: train per subset size, score AUC on a held-out test set."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .data import (
    SplitSpec,
    as_matrix,
    labels_of,
    load_csv,
    smooth_records,
    standardize_per_minute,
    stratified_subsets,
)
from .finetune import FinetuneConfig, attach_head, finetune, predict_batch
from .metrics import auc
from .model import ModelConfig, count_parameters


@dataclass
class ModelRecipe:
    """What to train for each subset: starting weights, fine-tuning mode, smoothing."""

    name: str = "PAT-S"
    model_cfg: ModelConfig = field(default_factory=ModelConfig)
    checkpoint: object = None  # Checkpoint, pretrained model, or None for scratch
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    smooth: bool = False
    standardize_separately: bool = True

    @property
    def label(self):
        start = "pretrained" if self.checkpoint is not None else "scratch"
        return f"{start}-{self.finetune.mode}-{'smooth' if self.smooth else 'raw'}"


@dataclass
class SizeResult:
    size: str
    auc: float
    seconds: float
    n_train: int
    n_val: int


@dataclass
class BenchmarkReport:
    model: str
    recipe: str
    params: int
    seed: int
    results: list
    config: dict = field(default_factory=dict)

    @property
    def sizes(self):
        return [r.size for r in self.results]

    @property
    def avg_auc(self):
        return float(np.mean([r.auc for r in self.results]))


class BenchmarkError(RuntimeError):
    pass


def _prepare(records, recipe, stats=None):
    if recipe.smooth:
        records = smooth_records(records)
    records, stats = standardize_per_minute(records, stats=stats)
    return as_matrix(records), labels_of(records), stats


def run_benchmark(dataset, recipe: ModelRecipe, spec: SplitSpec, progress=None):
    """Train ``recipe`` on each stratified subset and score it on the test set.

    ``dataset`` is a CSV path or a list of labeled records. Each split is
    standardized with its own statistics unless the recipe asks for train
    statistics to be reused.
    """
    records = load_csv(dataset, require_labels=True) if not isinstance(dataset, list) else dataset
    splits = stratified_subsets(records, spec)
    results = []
    test_separate = None
    if recipe.standardize_separately:
        test_separate = _prepare(splits.test, recipe)
    for i, (size, (train, val)) in enumerate(splits.subsets.items()):
        start = time.perf_counter()
        try:
            Xtr, ytr, stats = _prepare(train, recipe)
            if recipe.standardize_separately:
                Xva, yva, _ = _prepare(val, recipe)
                Xte, yte, _ = test_separate
            else:
                Xva, yva, _ = _prepare(val, recipe, stats)
                Xte, yte, _ = _prepare(splits.test, recipe, stats)
            ft_cfg = recipe.finetune
            model = attach_head(
                recipe.checkpoint, recipe.model_cfg, rng=ft_cfg.seed + i, pooling=ft_cfg.pooling
            )
            model, _ = finetune(model, (Xtr, ytr), (Xva, yva), ft_cfg)
            score = auc(predict_batch(model, Xte), yte)
        except Exception as exc:
            raise BenchmarkError(f"subset size {size}: {exc}") from exc
        results.append(SizeResult(size, score, time.perf_counter() - start, len(Xtr), len(Xva)))
        if progress is not None:
            progress(results[-1])
    return BenchmarkReport(
        model=recipe.name,
        recipe=recipe.label,
        params=count_parameters(recipe.model_cfg),
        seed=spec.seed,
        results=results,
        config={
            "model": recipe.model_cfg.to_dict(),
            "finetune": recipe.finetune.to_dict(),
            "test_size": spec.test_size,
            "val_fraction": spec.val_fraction,
        },
    )


REPORT_COLUMNS = ["model", "recipe", "size", "auc", "avg_auc", "params", "seed", "seconds"]


def report_csv(report: BenchmarkReport, timing=False):
    """Rows per size plus an ``avg`` row. ``seconds`` is left empty unless ``timing``
    is set, so reports from equal seeds compare byte for byte."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    avg = f"{report.avg_auc:.6f}"
    for r in report.results:
        secs = f"{r.seconds:.2f}" if timing else ""
        w.writerow([report.model, report.recipe, r.size, f"{r.auc:.6f}", avg,
                    report.params, report.seed, secs])
    total = f"{sum(r.seconds for r in report.results):.2f}" if timing else ""
    w.writerow([report.model, report.recipe, "avg", avg, avg, report.params, report.seed, total])
    return buf.getvalue()


def _fmt_params(n):
    if n >= 1_000_000:
        return f"{n / 1e6:.2f} M"
    if n >= 1_000:
        return f"{n / 1e3:.0f} K"
    return str(n)


def render_report(reports, fmt="text"):
    """Table-style summary: model, avg AUC, one column per size, params.

    ``reports`` is one BenchmarkReport or a list sharing the same sizes.
    """
    if isinstance(reports, BenchmarkReport):
        reports = [reports]
    sizes = reports[0].sizes
    header = ["Model", "Avg AUC"] + [f"n={s}" for s in sizes] + ["Params"]
    rows = []
    for rep in reports:
        if rep.sizes != sizes:
            raise ValueError("reports cover different subset sizes")
        rows.append(
            [rep.model, f"{rep.avg_auc:.3f}"]
            + [f"{r.auc:.3f}" for r in rep.results]
            + [_fmt_params(rep.params)]
        )
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return buf.getvalue()
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = ["  ".join(str(c).ljust(wd) for c, wd in zip(line, widths)).rstrip()
             for line in [header] + rows]
    return "\n".join(lines) + "\n"
