"""Run the three ablation suites at desk scale.

Run: python demos/05_ablation.py [epochs] [seeds]   (defaults 100 and 1; about 8 minutes per seed)
"""
import sys

from cmfnet.core import ManifestEntry, SplitSpec, make_splits
from cmfnet.datagen import default_recipes, make_pair
from cmfnet.model import ModelConfig
from cmfnet.trainer import TrainConfig, pairs_to_tensors, run_ablation

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 100
seeds = tuple(range(int(sys.argv[2]) if len(sys.argv) > 2 else 1))

# Keep everything in memory: 200 pairs of 32x32 targets, split 8:1:1 per scene.
recipes = default_recipes(34, (32, 32), seed=0)[:200]
pairs = [make_pair(r) for r in recipes]
entries = [ManifestEntry(f"a{i:03d}", "", "", "", r.satellite, r.kind) for i, r in enumerate(recipes)]
m = make_splits(entries, SplitSpec(seed=0, stratify_by=("scene",)))
index = {e.sample_id: i for i, e in enumerate(entries)}
subset = lambda s: pairs_to_tensors(m.split(s), [pairs[index[e.sample_id]] for e in m.split(s)])
data = subset("train"), subset("val")

# Arms shared between suites (the default L=3, injection-on, pansharpen model)
# are trained once thanks to the cache.
cache = {}
for suite in ("cascade", "injection", "scalability"):
    table = run_ablation(suite, ModelConfig(base_channels=8), TrainConfig(max_epochs=epochs), data,
                         seeds=seeds, cache=cache)
    print(table.format())
