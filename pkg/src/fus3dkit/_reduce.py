"""Fixed-order reductions.

numpy's ``sum`` picks its blocking from memory layout and SIMD width, so two
arrays holding the same numbers can reduce to different last bits. The pairwise
tree here always pairs neighbours in enumeration order.
"""

import numpy as np


def tree_sum(values) -> float:
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        return 0.0
    x = x.copy()
    while x.size > 1:
        if x.size % 2:
            x = np.append(x, 0.0)
        x = x[0::2] + x[1::2]
    return float(x[0])


def tree_mean(values) -> tuple[float, int]:
    """Mean via :func:`tree_sum`; returns ``(0.0, 0)`` for empty input."""
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        return 0.0, 0
    return tree_sum(x) / x.size, int(x.size)
