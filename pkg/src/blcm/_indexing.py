"""Binary configuration indexing.

A configuration ``h`` in {0,1}^K is stored at index ``sum_k h_k 2^k``
(0-based ``k``), so ``h_1`` is the least significant bit.  Every module
uses this ordering.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def _configurations(k):
    idx = np.arange(1 << k)
    out = ((idx[:, None] >> np.arange(k)[None, :]) & 1).astype(np.int8)
    out.setflags(write=False)
    return out


def configurations(k):
    """(2^k, k) array whose row ``i`` is the bit vector of configuration ``i``."""
    return _configurations(int(k))


def config_index(h):
    """Index of a configuration (or of each row of a stack of them)."""
    h = np.asarray(h, dtype=np.int64)
    idx = (h << np.arange(h.shape[-1])).sum(axis=-1)
    return int(idx) if h.ndim == 1 else idx


def parent_config_index(k, parents):
    """Map each full configuration to the index of its parent sub-configuration."""
    h = configurations(k)
    parents = list(parents)
    if not parents:
        return np.zeros(1 << k, dtype=np.int64)
    sub = h[:, parents].astype(np.int64)
    return (sub << np.arange(len(parents))).sum(axis=1)


def broadcast_parent_table(values, k, parents):
    """Expand a length-2^|parents| table to a length-2^k table."""
    values = np.asarray(values)
    return values[parent_config_index(k, parents)]


def compress_to_parents(full, k, parents):
    """Inverse of :func:`broadcast_parent_table` (first occurrence wins)."""
    full = np.asarray(full)
    pidx = parent_config_index(k, parents)
    out = np.empty(1 << len(list(parents)), dtype=full.dtype)
    # the first full configuration with parent index p is the one with
    # all non-parent bits zero; assignment order makes it win.
    out[pidx[::-1]] = full[::-1]
    return out
