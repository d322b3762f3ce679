"""Classification, embedding regression and their combination on a small
synthetic task, scored on held-out identities.

Run: python3 demos/training_strategies.py   (about half a minute)
"""

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from synthid.config import ExperimentConfig
from synthid.experiment import run_experiment

cfg = ExperimentConfig(
    classes=40, per_class=20, synth_per_class=20, subsets=(5, 20), link_subset=5,
    id_per_class=5, heldout_classes=40, teacher_epochs=16, teacher_milestones=(10, 14),
    student_epochs=24, student_milestones=(16, 20),
)

# %% one run per master seed; cells share student seeds, so columns are paired
accs = {}
with tempfile.TemporaryDirectory() as tmp:
    for seed in range(2):
        res = run_experiment(replace(cfg, seed=seed), Path(tmp) / f"seed{seed}")
        for row in res.summary:
            accs.setdefault((row.dataset, row.strategy), []).append(row.verify_acc)

for (dataset, strategy), v in accs.items():
    print(f"{dataset:10s} {strategy:10s} held-out acc {100 * np.mean(v):.2f}%")
