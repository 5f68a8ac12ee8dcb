"""Slow, obviously-correct reference implementations used by the unit and acceptance tests."""
import numpy as np

from hiercrop.taxonomy import OTHERS, TaxonomyTree


def _median(sorted_vals):
    m = len(sorted_vals)
    return sorted_vals[m // 2] if m % 2 else 0.5 * (sorted_vals[m // 2 - 1] + sorted_vals[m // 2])


def hampel_oracle(x, hw, k):
    """Two-sided flags from a brute-force sorted median and MAD over each clipped window."""
    n = len(x)
    out = np.zeros(n, bool)
    for i in range(n):
        win = list(x[max(0, i - hw) : min(n, i + hw + 1)])
        med = _median(sorted(win))
        mad = _median(sorted(abs(v - med) for v in win))
        out[i] = abs(x[i] - med) > k * 1.4826 * mad
    return out


def dense_whittaker(y, w, lam, d):
    n = len(y)
    D = np.diff(np.eye(n), d, axis=0)
    return np.linalg.solve(np.diag(w) + lam * D.T @ D, w * y)


def quantile_oracle(x, q):
    """Linear interpolation between order statistics at position (n - 1) q."""
    s = sorted(x)
    h = (len(s) - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def cd_oracle(xy, area, crop, n_codes, radius=10.0):
    """Per-parcel area shares of every code within ``radius`` km, as integers out of 10000."""
    out = []
    for i in range(len(xy)):
        tot = np.zeros(n_codes)
        for j in range(len(xy)):
            if (xy[i][0] - xy[j][0]) ** 2 + (xy[i][1] - xy[j][1]) ** 2 <= radius * radius:
                tot[crop[j]] += area[j]
        out.append([int(round(v / tot.sum() * 10000)) for v in tot])
    return out


def tree_with(counts, permanent=()):
    t = TaxonomyTree()
    for c in permanent:
        t.add(c, permanent=True)
    for c in counts:
        t.add(c)
    t.set_counts(counts)
    return t


def merge_oracle(children, counts, th):
    """Recursive hand simulation of the bottom-up merge; returns group -> count."""
    def visit(node):
        pending = counts.get(node, 0)
        groups = {}
        for ch in children.get(node, []):
            g, up = visit(ch)
            groups.update(g)
            pending += up
        if node == "root":
            if pending:
                groups[OTHERS] = pending
            return groups, 0
        if pending >= th:
            groups[node] = pending
            return groups, 0
        return groups, pending

    return visit("root")[0]
