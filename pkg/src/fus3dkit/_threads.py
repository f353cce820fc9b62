import os


def workers() -> int:
    """Worker count for parallel kd-tree queries; ``FUS3DKIT_THREADS`` caps it."""
    cap = os.environ.get("FUS3DKIT_THREADS")
    if cap:
        try:
            return max(1, int(cap))
        except ValueError:
            pass
    return -1
