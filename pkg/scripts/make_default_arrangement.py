"""Regenerate src/latch/data/latch_default.arr from the surrogate training set."""

import sys
from pathlib import Path

from latch import learning, synthetic

out = Path(sys.argv[1] if len(sys.argv) > 1 else "src/latch/data/latch_default.arr")
train, _ = synthetic.brown_like(synthetic.photos(synthetic.TRAIN_PHOTOS), 20000,
                                points_per_image=500, strength=2.0, seed=1)
res = learning.learn(train, "combined", n_candidates=5000, T=512, tau=0.2, seed=0)
learning.write_learned(out, None, res)
print(out, "relaxed" if res.selection.relaxed else "ok", res.selection.n_decorrelated)
