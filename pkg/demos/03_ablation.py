# %% [markdown]
# Which components help?
#
# The disambiguation corpus puts two instances of one object class in every
# image (two horses, or two dogs). Only the relation tells them apart: one
# is ridden and the other is fed. We train three cumulative variants:
#
# * basic: raw word vectors, a single detection head, no re-ranker
# * iterative: phrasal context plus 3 refinement rounds
# * final: iterative plus the recurrent re-ranker
#
# We then compare training-set recall at K=10, which is still well below
# saturation on this corpus.

# %%
import numpy as np

from wssgg.synthetic import ablate

K = 10
rows = []
for seed in range(10):
    r = ablate(seed, ks=(K,))
    rows.append([r[m][K] for m in ("basic", "iterative", "final")])
    b, i, f = rows[-1]
    print(f"seed {seed}: basic {b:.3f}  iterative {i:.3f}  final {f:.3f}  ordered={f >= i >= b}")

rows = np.array(rows)
print("mean  ", "  ".join(f"{v:.3f}" for v in rows.mean(axis=0)))
print("ordered on", int(((rows[:, 2] >= rows[:, 1]) & (rows[:, 1] >= rows[:, 0])).sum()), "of 10 seeds")

# %% [markdown]
# The re-ranker gives the largest and most reliable gain. Grounding and
# detection score regions one at a time, so they cannot tell the two
# horses apart. The sequential model reads both regions and can learn
# that a man rides and a child feeds. The step from basic to iterative is
# small and noisy. The grounding loss is a class-level objective and
# never rewards picking the right instance of a repeated class.
