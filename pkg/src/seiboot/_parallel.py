"""Order-stable parallel map used by bootstrap consumers and experiments."""

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, workers=1):
    """Map ``fn`` over ``items``, optionally on a thread pool.

    Results come back in input order regardless of worker count, so callers
    that derive each item's randomness from its index are deterministic for
    any ``workers`` value.
    """
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        return list(pool.map(fn, items))
