"""SNIC-style superpixels: priority-queue region growing from grid seeds.

Distance between a pixel and a growing segment combines intensity (scaled
to 0..100, like an L channel) and position normalised by the seed spacing::

    d^2 = (100 * dI)^2 + (compactness * ds / S)^2
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

INTENSITY_SCALE = 100.0


@dataclass(frozen=True, eq=False)
class SuperpixelMap:
    labels: np.ndarray  # (h, w) int, contiguous 0..count-1
    count: int
    centroids: tuple[tuple[int, int], ...]  # (x, y) pixel inside each segment

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.count)


def _seed_grid(h: int, w: int, target: int) -> list[tuple[int, int]]:
    """Roughly ``target`` seeds on a regular grid matching the frame aspect."""
    cols = max(1, int(round(math.sqrt(target * w / h))))
    rows = max(1, int(math.ceil(target / cols)))
    cols = max(1, int(math.ceil(target / rows)))
    seeds = []
    for r in range(rows):
        for c in range(cols):
            if len(seeds) == target:
                break
            y = int((r + 0.5) * h / rows)
            x = int((c + 0.5) * w / cols)
            seeds.append((min(x, w - 1), min(y, h - 1)))
    return list(dict.fromkeys(seeds))


def superpixels(intensity: np.ndarray, target: int, compactness: float = 10.0) -> SuperpixelMap:
    """Segment a [0, 1] intensity image into about ``target`` connected superpixels."""
    if target < 1:
        raise ValueError("target segment count must be >= 1")
    img = np.asarray(intensity, dtype=np.float64)
    h, w = img.shape
    target = min(target, h * w)
    seeds = _seed_grid(h, w, target)
    spacing = math.sqrt(h * w / len(seeds))
    ws = (compactness / spacing) ** 2
    wi = INTENSITY_SCALE**2

    labels = np.full((h, w), -1, dtype=np.int64)
    # running sums per segment: x, y, intensity, n
    sums = np.zeros((len(seeds), 4))
    heap: list[tuple[float, int, int, int, int]] = []
    order = 0  # tie-breaker keeps popping deterministic
    for k, (x, y) in enumerate(seeds):
        heapq.heappush(heap, (0.0, order, x, y, k))
        order += 1

    while heap:
        _, _, x, y, k = heapq.heappop(heap)
        if labels[y, x] >= 0:
            continue
        labels[y, x] = k
        sums[k] += (x, y, img[y, x], 1.0)
        cx, cy, ci = sums[k, :3] / sums[k, 3]
        for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
            if 0 <= nx < w and 0 <= ny < h and labels[ny, nx] < 0:
                d = wi * (img[ny, nx] - ci) ** 2 + ws * ((nx - cx) ** 2 + (ny - cy) ** 2)
                heapq.heappush(heap, (d, order, nx, ny, k))
                order += 1

    _, labels = np.unique(labels, return_inverse=True)
    labels = labels.reshape(h, w)
    count = int(labels.max()) + 1
    return SuperpixelMap(labels, count, _centroid_pixels(labels, count))


def _centroid_pixels(labels: np.ndarray, count: int) -> tuple[tuple[int, int], ...]:
    """Member pixel closest to each segment's mean position (ties: raster order)."""
    ys, xs = np.indices(labels.shape)
    flat = labels.ravel()
    n = np.bincount(flat, minlength=count)
    mx = np.bincount(flat, weights=xs.ravel(), minlength=count) / n
    my = np.bincount(flat, weights=ys.ravel(), minlength=count) / n
    out = []
    for k in range(count):
        yy, xx = np.nonzero(labels == k)
        i = int(np.argmin((xx - mx[k]) ** 2 + (yy - my[k]) ** 2))
        out.append((int(xx[i]), int(yy[i])))
    return tuple(out)
