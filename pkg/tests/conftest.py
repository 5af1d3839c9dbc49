"""Shared fixtures and independent oracle implementations.

The oracles deliberately avoid the package's kernel and blocking strategy:
plain per-pair loops with their own normalization, so agreement with them is
evidence, not tautology.
"""

from __future__ import annotations

import math
import sys

import numpy as np
import pytest

from nubblematch.tensorio import BinaryMask, FeatureGrid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_grid(rng, h, w, c, normalized=False, source_id="test"):
    vals = rng.standard_normal((h, w, c))
    grid = FeatureGrid(vals, normalized=False, source_id=source_id)
    if normalized:
        from nubblematch.tensorio import normalize_grid

        grid = normalize_grid(grid)
    return grid


def random_mask(rng, h, w, min_true=1, max_true=None):
    n = h * w
    max_true = n - 1 if max_true is None else max_true
    k = int(rng.integers(min_true, max_true + 1))
    bits = np.zeros(n, dtype=bool)
    bits[rng.permutation(n)[:k]] = True
    return BinaryMask(bits.reshape(h, w))


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def oracle_cosine(u, v, dropped=frozenset()):
    num = nu = nv = 0.0
    for c in range(len(u)):
        if c in dropped:
            continue
        num += float(u[c]) * float(v[c])
        nu += float(u[c]) ** 2
        nv += float(v[c]) ** 2
    if nu == 0.0 or nv == 0.0:
        return 0.0
    s = num / (math.sqrt(nu) * math.sqrt(nv))
    return min(1.0, max(-1.0, s))


def oracle_best_match(tgt_vals, ref_vals, exclude_self=False, dropped=frozenset()):
    """Naive loops over every target/reference pair; first max wins ties."""
    th, tw, _ = tgt_vals.shape
    rh, rw, _ = ref_vals.shape
    t_flat = tgt_vals.reshape(th * tw, -1)
    r_flat = ref_vals.reshape(rh * rw, -1)
    rows = np.zeros((th, tw), dtype=np.int64)
    cols = np.zeros((th, tw), dtype=np.int64)
    scores = np.zeros((th, tw))
    for ti in range(t_flat.shape[0]):
        best = -math.inf
        best_j = -1
        for rj in range(r_flat.shape[0]):
            if exclude_self and rj == ti:
                continue
            s = oracle_cosine(t_flat[ti], r_flat[rj], dropped)
            if s > best:
                best, best_j = s, rj
        rows[ti // tw, ti % tw] = best_j // rw
        cols[ti // tw, ti % tw] = best_j % rw
        scores[ti // tw, ti % tw] = best
    return rows, cols, scores


def oracle_fg_map(ref_vals, fg_bits, tgt_vals, aggregator, dropped=frozenset()):
    th, tw, _ = tgt_vals.shape
    t_flat = tgt_vals.reshape(th * tw, -1)
    fg_list = [ref_vals.reshape(-1, ref_vals.shape[2])[i]
               for i in np.flatnonzero(fg_bits.ravel())]
    out = np.zeros(th * tw)
    for ti in range(t_flat.shape[0]):
        sims = [oracle_cosine(t_flat[ti], f, dropped) for f in fg_list]
        out[ti] = max(sims) if aggregator == "max" else sum(sims) / len(sims)
    return out.reshape(th, tw)


def oracle_interaction(mats, wy, indices, aggregator):
    """Direct elementwise evaluation of the aggregated-weight chain."""
    z = [abs(float(x)) for x in wy]
    for w in reversed(mats[1:]):
        w = np.asarray(w, dtype=float)
        nxt = []
        for j in range(w.shape[1]):
            nxt.append(sum(z[i] * abs(float(w[i, j])) for i in range(w.shape[0])))
        z = nxt
    first = np.asarray(mats[0], dtype=float)
    out = []
    for i in range(first.shape[0]):
        vals = [abs(float(first[i, j])) for j in indices]
        agg = sum(vals) / len(vals) if aggregator == "mean" else min(vals)
        out.append(z[i] * agg)
    return np.array(out)


def run_cli(args, cwd):
    """Run the CLI in a subprocess; returns (exit code, stdout, stderr)."""
    import subprocess

    proc = subprocess.run(
        [sys.executable, "-m", "nubblematch.cli", *args],
        cwd=cwd, capture_output=True, text=True, timeout=600,
    )
    return proc.returncode, proc.stdout, proc.stderr
