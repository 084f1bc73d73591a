"""
Prototype softmax losses
========================

The four training heads on hand-made unit vectors: how the margin heads bend
the positive logit, how the loss falls as the positive cosine rises, and a
finite-difference check of the analytic gradient.
"""

import numpy as np

from hsstlab.losses import LossConfig, margin_adjust, proto_softmax_loss, triplet_loss

# positive logit after each margin, at a few cosines
for c in (0.9, 0.5, 0.0):
    print(f"cos={c:4.1f}  am={margin_adjust(c, 0.35, 'am_softmax'):+.3f}  "
          f"arc={margin_adjust(c, 0.5, 'arc_softmax'):+.3f}")

# a feature, a positive prototype and a few queue negatives
rng = np.random.default_rng(0)
d = 8
x = rng.normal(size=d)
x /= np.linalg.norm(x)
negs = rng.normal(size=(6, d))
negs /= np.linalg.norm(negs, axis=1, keepdims=True)


def positive_at(c):
    """Unit vector with cosine c to x."""
    ortho = rng.normal(size=d)
    ortho -= ortho @ x * x
    ortho /= np.linalg.norm(ortho)
    return c * x + np.sqrt(1 - c**2) * ortho


for head in ("softmax", "am_softmax", "arc_softmax"):
    cfg = LossConfig(head=head)
    values = [proto_softmax_loss(x, positive_at(c), negs, cfg).value for c in (0.2, 0.5, 0.8)]
    print(head, " ".join(f"{v:7.3f}" for v in values))

# triplet: hinge on the hardest negative
pos = positive_at(0.6)
print("triplet", triplet_loss(x, pos, negs, 0.3).value)

# the analytic gradient against central differences
cfg = LossConfig(head="arc_softmax")
out = proto_softmax_loss(x, pos, negs, cfg)
eps = 1e-5
fd = np.array([(proto_softmax_loss(x + eps * e, pos, negs, cfg).value
                - proto_softmax_loss(x - eps * e, pos, negs, cfg).value) / (2 * eps) for e in np.eye(d)])
print("max |analytic - numeric| =", np.abs(out.grad_feature - fd).max())
