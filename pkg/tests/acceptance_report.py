"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

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
                RESULTS[number] = (False, title, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}",
                                   time.perf_counter() - start)
                raise
            RESULTS[number] = (True, title, detail or "", time.perf_counter() - start)

        return run

    return wrap


def lines():
    out = []
    for n in sorted(RESULTS):
        ok, title, detail, secs = RESULTS[n]
        out.append(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title} ({secs:.1f}s) {detail}".rstrip())
    return out
