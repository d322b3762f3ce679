"""Verification metrics on a hand-built score set.

Run: python3 demos/metrics_walkthrough.py
"""

import numpy as np

from synthid.bioeval import ScoreSet, candidate_thresholds, compute_eer, compute_fmr_point, verification_accuracy

# %% a small score set with one overlapping genuine score
s = ScoreSet(genuine=[0.9, 0.8, 0.35, 0.7], imposter=[0.1, 0.4, 0.2, 0.3, 0.05])
print("candidate thresholds:", np.round(candidate_thresholds(s), 3))

# %% score >= t is a match; EER picks the threshold where FMR and FNMR are closest
eer, t = compute_eer(s)
print(f"EER {eer:.3f} at t={t:.3f}")

# %% lowest FNMR with FMR under a bound
for bound in (0.25, 0.01):
    fnmr, t = compute_fmr_point(s, bound)
    print(f"FNMR at FMR<={bound}: {fnmr:.3f} (t={t:.3f})")

# %% best accuracy over all thresholds
acc, t = verification_accuracy(s)
print(f"accuracy {acc:.3f} at t={t:.3f}")
