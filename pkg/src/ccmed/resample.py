"""Resampling engine shared by the bootstrap, covariance and simulation code.

Replicate ``r`` of a bootstrap draws its rows from
``rng.replicate_generator(key, r)`` only, so the index matrix, and every
statistic computed from it, is the same whatever the chunking or thread
count.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import rng
from .ols import resample_coefficients

CHUNK = 128


def resample_indices(d, key, start, stop, stratified=False):
    """Index matrix for replicates ``start .. stop-1`` (shape ``(stop-start, n)``)."""
    n = d.n
    out = np.empty((stop - start, n), dtype=np.intp)
    if stratified:
        groups = [np.flatnonzero(d.arm == code) for code in range(3)]
        groups = [g for g in groups if g.size]
    for row, r in enumerate(range(start, stop)):
        gen = rng.replicate_generator(key, r)
        if stratified:
            pos = 0
            for g in groups:
                out[row, pos:pos + g.size] = g[gen.integers(0, g.size, g.size)]
                pos += g.size
        else:
            out[row] = gen.integers(0, n, n)
    return out


def resample_table(d, b, key, stratified=False, robust=False, threads=None):
    """Coefficient arrays for ``b`` bootstrap resamples of ``d``.

    Returns the dict produced by :func:`ccmed.ols.resample_coefficients`
    with every array of length ``b`` in replicate order.
    """
    threads = threads or rng.default_threads()
    bounds = [(s, min(s + CHUNK, b)) for s in range(0, b, CHUNK)]

    def work(bound):
        idx = resample_indices(d, key, bound[0], bound[1], stratified)
        return resample_coefficients(d, idx, robust=robust)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(bd) for bd in bounds]
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
