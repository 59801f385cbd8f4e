#!/usr/bin/env python3
"""Feature grids and normalized correlation.

Builds descriptor grids from a synthetic image, correlates an image with
a warped copy of itself, and inspects the correlation volume: column
normalization, empty cells, and where the per-column argmax lands.
"""

import numpy as np

from softalign.features import extract_descriptors, render_warped, synthetic_image
from softalign.geometry import Transform
from softalign.matching import correlate

img = synthetic_image(seed=5, h=64, w=64)
print(f"synthetic image: {img.h}x{img.w}, intensities "
      f"[{img.data.min():.3f}, {img.data.max():.3f}]")

for kind in ("patch", "gradhist"):
    grid = extract_descriptors(img, kind, 8, 8)
    n_empty = int(grid.empty_mask().sum())
    print(f"{kind:9s} descriptors: {grid.h}x{grid.w}x{grid.d}, "
          f"{n_empty} empty cells, normalized={grid.is_normalized()}")

# Correlate the image with a slightly rotated/shifted copy of itself.
T = Transform.affine([0.98, -0.10, 0.06, 0.10, 0.98, -0.04])
warped = render_warped(img, T)
f_s = extract_descriptors(img, "gradhist", 8, 8)
f_t = extract_descriptors(warped, "gradhist", 8, 8)
s = correlate(f_s, f_t)

norms = s.column_norms()
live = norms > 0
print(f"\ncorrelation tensor {s.data.shape}: {live.sum()} live columns, "
      f"norms in [{norms[live].min():.9f}, {norms[live].max():.9f}]")

# For a small warp the argmax source cell should sit near the target
# cell: measure the offset distribution.
h, w = s.target_shape
offsets = []
for k in range(h):
    for l in range(w):
        col = s.data[:, :, k, l]
        if col.max() <= 0:
            continue
        i, j = np.unravel_index(np.argmax(col), col.shape)
        offsets.append(np.hypot(i - k, j - l))
offsets = np.array(offsets)
print(f"argmax offset from the diagonal: median {np.median(offsets):.2f} "
      f"cells, 90th pct {np.percentile(offsets, 90):.2f} cells")
print("on smooth textures the per-column argmax is noisy even for a "
      "small warp; the aligner therefore scores whole correlation "
      "columns under a mask instead of committing to argmax matches")
