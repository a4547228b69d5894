"""
Checking the hand-written gradients
===================================

Every layer kind is compared against central finite differences.
"""

# %%
from obslearn import neuralnet as nn

reports = nn.gradcheck_suite(range(3), 1e-4)
for name, runs in reports.items():
    print(f"{name:12s} worst relative error {max(r.max_rel_error for r in runs):.2e}")
