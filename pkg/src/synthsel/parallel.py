"""Thread-count policy for the embarrassingly parallel inner loops.

``SYNTHSEL_THREADS`` caps worker threads package-wide; ``0`` (or unset)
means automatic, anything else is used literally (floored at 1).
"""

import os


def thread_count() -> int:
    raw = os.environ.get("SYNTHSEL_THREADS", "0")
    try:
        requested = int(raw)
    except ValueError:
        requested = 0
    if requested <= 0:
        return min(4, os.cpu_count() or 1)
    return requested
