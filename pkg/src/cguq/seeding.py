"""Counter-based RNG stream splitting.

Every stochastic unit of work (a path, a bootstrap replicate, a coverage
trial, a Monte Carlo chain) draws from a stream keyed by ``(seed, index)``
so results do not depend on execution order or worker count.
"""

import secrets

import numpy as np


def stream(seed, *index):
    """Return a Generator for the sub-stream ``index`` of ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.PCG64(ss))


def fresh_seed():
    """Draw a new 63-bit master seed from the OS entropy pool."""
    return secrets.randbits(63)


def run_indexed(func, n, threads=1):
    """Evaluate ``func(i)`` for ``i in range(n)`` and return results in index order.

    With ``threads > 1`` work is spread over a thread pool; the returned list
    is identical either way because each call is keyed by its index.
    """
    if threads is None or threads <= 1 or n <= 1:
        return [func(i) for i in range(n)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, range(n)))


def tree_sum(items):
    """Pairwise reduction in fixed order; reproducible for any chunking upstream."""
    items = list(items)
    if not items:
        raise ValueError("tree_sum of empty sequence")
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]
