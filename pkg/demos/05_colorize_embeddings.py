"""Project trained item embeddings to RGB and check the planted communities
come out color-coherent.

The projector is a small perceptron trained under two pulls: an item-id
classifier reads the 3-d codes (so items stay distinguishable) and a
penalty drags every color toward the nearest palette entry (so the picture
uses a few readable hues). Items from the same planted block should land
nearer each other in color space than items from different blocks.

Run from the repository root:  python3 demos/05_colorize_embeddings.py
"""

import os
import tempfile

import numpy as np

from hypercf import Config, embedding_to_color, split, synthetic_blocks, \
    train_on_split, write_colors_csv

dataset = synthetic_blocks(seed=0)
splits = split(dataset, seed=0)
run = train_on_split(splits, Config(seed=0, hyperedges=16))
_, item_emb = run.model.embedding_tables(run.adj)

blocks = np.arange(dataset.num_items) % 8
norm = item_emb / np.linalg.norm(item_emb, axis=1, keepdims=True)
sim = norm @ norm.T
off_diag = ~np.eye(dataset.num_items, dtype=bool)
same = (blocks[:, None] == blocks[None, :]) & off_diag
print(f"embedding cosine, same block {sim[same].mean():+.3f} "
      f"vs different {sim[~same & off_diag].mean():+.3f}")

# one palette color per planted block
palette = np.array([
    [0.90, 0.20, 0.20], [0.20, 0.80, 0.30], [0.20, 0.40, 0.90],
    [0.95, 0.80, 0.20], [0.80, 0.30, 0.80], [0.30, 0.80, 0.85],
    [0.95, 0.55, 0.15], [0.45, 0.30, 0.15]])
colors = embedding_to_color(item_emb, palette, steps=400, mu=2.0, seed=0)

nearest = np.argmin(((colors[:, None, :] - palette[None, :, :]) ** 2).sum(2),
                    axis=1)
print("block -> modal palette color (fraction of the block on it):")
for b in range(8):
    counts = np.bincount(nearest[blocks == b], minlength=8)
    modal = counts.argmax()
    print(f"  block {b}: palette {modal} "
          f"rgb({palette[modal][0]:.2f}, {palette[modal][1]:.2f}, "
          f"{palette[modal][2]:.2f})  {counts[modal] / counts.sum():.0%}")

dist = np.sqrt(((colors[:, None, :] - colors[None, :, :]) ** 2).sum(2))
print(f"mean color distance, same block {dist[same].mean():.3f} "
      f"vs different {dist[~same & off_diag].mean():.3f}")

with tempfile.TemporaryDirectory() as tmp:
    path = os.path.join(tmp, "colors.csv")
    write_colors_csv(path, colors)
    print(f"wrote {dataset.num_items} rows to {path}")
    with open(path) as fh:
        for line in [next(fh) for _ in range(3)]:
            print("  " + line.rstrip())
