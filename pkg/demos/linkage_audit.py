"""Does a synthetic dataset leak the identities it was fitted on?

Fits a generator to an authentic set, trains a small reference model on
the authentic data and compares authentic-vs-authentic,
synthetic-vs-synthetic and authentic-vs-synthetic score distributions.

Run: python3 demos/linkage_audit.py
"""

from synthid.bioeval import linkage_lines, linkage_report
from synthid.datagen import derive_subset, fit_generator, make_authentic, sample_synthetic
from synthid.embedder import ModelConfig, init_head, init_model
from synthid.trainer import OptimizerConfig, Strategy, train

# %% authentic source and a reference model trained on it
auth = make_authentic(30, 20, 32, 0.2, seed=0, identity_dim=8, nuisance=0.4)
model = init_model(ModelConfig(32, (64,), 32, "relu", init_seed=1))
head = init_head(32, auth.num_classes, seed=2)
train(model, head, auth, Strategy("CLS"), OptimizerConfig(epochs=12, milestones=(8,), seed=3))

# %% leakage is the weight on the authentic class mean inside each synthetic prototype
for leakage in (0.0, 0.5, 0.9):
    gen = fit_generator(auth, leakage, 0.2, seed=4, fresh="fitted", reproduce_variation=1.0)
    syn = derive_subset(sample_synthetic(gen, 20, seed=5), 10)
    r = linkage_report(auth, syn, model)
    print(f"--- leakage {leakage}")
    for line in linkage_lines(r):
        if ".eer =" in line or line.startswith("expected"):
            print(line)
