"""
Rank-1 and VR@FAR
=================

The verification threshold is an observed impostor score: the smallest one
that lets through at most the allowed fraction of impostors.  Genuine pairs
are accepted when strictly above it.
"""

import numpy as np

from hsstlab.evaluation import EvalReport, format_table, kfold_report, rank1_from_scores, vr_at_far

genuine = [0.9, 0.35, 0.2]
impostor = [0.7, 0.3, 0.2, 0.1]
# at FAR 25% one impostor may pass, so the threshold is 0.3 and two genuine scores clear it
print("VR@FAR=25%:", vr_at_far(genuine, impostor, 0.25))

# rank-1 from a probe x gallery cosine table; ties go to the lower gallery index
table = np.array([[0.9, 0.2, 0.1],
                  [0.3, 0.8, 0.4],
                  [0.7, 0.1, 0.5]])
print("rank-1:", rank1_from_scores(table, [0, 1, 2], [0, 1, 2]))

# folds aggregate with mean and population standard deviation
folds = [EvalReport(rank1=r, vr_at_far={0.01: v}, fold=i) for i, (r, v) in enumerate([(0.8, 0.6), (1.0, 0.7)])]
print(format_table(kfold_report(folds)))
