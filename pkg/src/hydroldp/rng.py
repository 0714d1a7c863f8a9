"""Counter-based random numbers for reproducible, schedule-independent ensembles.

Every Gaussian draw is addressed by (seed, path, step); the per-mode values are
consecutive positions in that stream.  Parallel workers therefore produce
bit-identical increments regardless of execution order or thread count.
"""

import numpy as np

__all__ = ["noise_increments", "path_generator"]


def _philox(seed: int, path: int, step: int) -> np.random.Generator:
    bg = np.random.Philox(
        key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
        counter=[0, 0, np.uint64(path), np.uint64(step)],
    )
    return np.random.Generator(bg)


def noise_increments(seed: int, path: int, step: int, n_modes: int) -> np.ndarray:
    """Standard normals xi_n, one per noise mode, for the given (seed, path, step)."""
    return _philox(seed, path, step).standard_normal(n_modes)


def path_generator(seed: int, path: int) -> np.random.Generator:
    """Generator for per-path needs that are not step-addressed (e.g. random fields)."""
    return _philox(seed, path, step=0xFFFFFFFF)
