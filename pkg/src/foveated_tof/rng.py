"""Per-pixel random streams.

Every stream is keyed by (master seed, purpose, frame, y, x), hashed through
``SeedSequence`` into a Philox counter-based generator. Results therefore do
not depend on the order in which pixels are evaluated.
"""

from __future__ import annotations

import numpy as np

# Purposes keep independent draws for the same pixel apart.
CAPTURE = 0
RECAPTURE = 1
INTENSITY = 2
PRIOR = 3
SELECTION = 4
CALIBRATION = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def pixel_stream(seed: int, x: int, y: int, frame: int = 0, purpose: int = CAPTURE) -> np.random.Generator:
    return stream(seed, purpose, frame, y, x)
