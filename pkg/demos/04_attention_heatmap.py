"""
Which minutes does the model look at?
=====================================

The last encoder layer's attention is summed down each key column (how much
attention each patch receives), averaged over heads, and painted back onto
the week. The result goes to ``heatmap_demo.csv`` and ``heatmap_demo.svg``.
"""

import numpy as np

from pat.data import as_matrix, standardize_per_minute, synth_generate
from pat.explain import aggregate_importance, expand_to_minutes, export_heatmap, extract_attention
from pat.finetune import attach_head
from pat.model import ModelConfig

raw = synth_generate(8, seed=4)
records, _ = standardize_per_minute(raw)
model = attach_head(None, ModelConfig.from_size("S"), rng=0)

bundle = extract_attention(model, records[0].series)
print("attention layers:", bundle.num_layers, "shape:", bundle.last().shape)

scores = aggregate_importance(bundle)
print("patch importance sums to", round(scores.sum(), 12))
print("top patches:", np.argsort(scores)[::-1][:5])

# summing rows instead of columns gives a flat map: every row already sums to 1
flat = aggregate_importance(bundle, mode="row")
print("row-sum mode is constant:", np.allclose(flat, 1 / len(flat)))

csv_path, svg_path = export_heatmap(raw[0].series, expand_to_minutes(scores, 18), "heatmap_demo")
print("wrote", csv_path, "and", svg_path)
