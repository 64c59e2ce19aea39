"""
A miniature size-graded benchmark
=================================

The benchmark holds out a stratified test set, trains one model per training
subset size and reports AUC per size and their mean. The same run is
available from the shell as ``pat benchmark``.
"""

from pat.benchmark import ModelRecipe, render_report, report_csv, run_benchmark
from pat.data import SplitSpec, synth_generate
from pat.finetune import FinetuneConfig
from pat.model import ModelConfig

records = synth_generate(400, seed=5, effect=1.0)
recipe = ModelRecipe(
    name="PAT-S (2 heads)",
    model_cfg=ModelConfig.from_size("S", num_heads=2, head_dim=16),
    finetune=FinetuneConfig(epochs=6, lr=1e-3, early_stop_patience=3),
)
spec = SplitSpec(test_size=200, subset_sizes=[50, 100, 200], seed=0)
report = run_benchmark(records, recipe, spec, progress=lambda r: print(f"n={r.size}: AUC {r.auc:.3f}"))

print()
print(render_report(report))
print(report_csv(report))
