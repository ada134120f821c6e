"""Ordered task execution over a process pool.

Tasks are ``fn(context, index)`` calls. The shared ``context`` is shipped to
each worker once (pool initializer) and results always come back in index
order, so reductions are identical for any worker count.
"""

from concurrent.futures import ProcessPoolExecutor

_CONTEXT = None


def _init(context):
    global _CONTEXT
    _CONTEXT = context


def _call(args):
    fn, index = args
    return fn(_CONTEXT, index)


def run_ordered(fn, context, indices, workers=1):
    indices = list(indices)
    if workers is None or workers <= 1 or len(indices) <= 1:
        return [fn(context, i) for i in indices]
    chunk = max(1, len(indices) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers, initializer=_init, initargs=(context,)) as ex:
        return list(ex.map(_call, [(fn, i) for i in indices], chunksize=chunk))
