"""Registry behind the one-line-per-criterion acceptance summary."""

import functools
import time

RESULTS = {}


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                RESULTS[number] = f"criterion {number:>2} FAIL  {title}: {type(exc).__name__}: {exc}".splitlines()[0]
                print(RESULTS[number])
                raise
            took = time.perf_counter() - start
            RESULTS[number] = f"criterion {number:>2} PASS  {title} ({detail}; {took:.2f}s)"
            print(RESULTS[number])

        return run

    return wrap
