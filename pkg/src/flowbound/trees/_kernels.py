"""Compiled kernels for weighted-tree enumeration.

Trees are stored as arrays of split masks. Label ``j >= 1`` maps to bit
``j - 1``; label 0 is never stored, so every mask is the side of its
bipartition that does not contain label 0. Vertex ``k < n_lines`` is the far
end of line ``k``; vertex ``n_lines`` is the vertex carrying label 0.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def popcount(x):
    c = 0
    while x:
        x &= x - 1
        c += 1
    return c


@njit(cache=True)
def tree_structure(masks, n_lines, n_leaves, parent, degree):
    """Fill ``parent`` (line -> upper vertex) and ``degree`` (vertex -> coordination)."""
    for k in range(n_lines):
        best = n_leaves + 1
        par = n_lines
        mk = masks[k]
        for j in range(n_lines):
            mj = masks[j]
            if j != k and (mj & mk) == mk and mj != mk:
                pc = popcount(mj)
                if pc < best:
                    best = pc
                    par = j
        parent[k] = par
    covered = np.zeros(n_lines + 1, dtype=np.int64)
    nchild = np.zeros(n_lines + 1, dtype=np.int64)
    for k in range(n_lines):
        covered[parent[k]] += popcount(masks[k])
        nchild[parent[k]] += 1
    for v in range(n_lines):
        degree[v] = 1 + popcount(masks[v]) - covered[v] + nchild[v]
    degree[n_lines] = n_leaves - covered[n_lines] + nchild[n_lines]


@njit(cache=True)
def _insert(src, nl, k_line, bit, out):
    """Copy ``src`` into ``out`` adding ``bit`` to every superset of ``src[k_line]``."""
    base = src[k_line]
    for j in range(nl):
        m = src[j]
        if (m & base) == base:
            m |= bit
        out[j] = m


@njit(cache=True)
def _children(masks, nl, n, max_lines, out, out_nl, write):
    """Trees with leaf ``n`` attached to the tree ``masks[:nl]`` on labels ``0..n-1``.

    When ``write`` is False only the number of children is returned.
    """
    bit = 1 << (n - 1)
    parent = np.empty(max(nl, 1), dtype=np.int64)
    degree = np.empty(nl + 1, dtype=np.int64)
    tree_structure(masks, nl, n, parent, degree)
    cnt = 0
    if nl < max_lines:
        # leaf on an internal line
        for k in range(nl):
            if write:
                _insert(masks, nl, k, bit, out[cnt])
                out[cnt, nl] = masks[k]
                out_nl[cnt] = nl + 1
            cnt += 1
        # leaf on the external line of label j >= 1
        for j in range(1, n):
            bj = 1 << (j - 1)
            if write:
                for i in range(nl):
                    m = masks[i]
                    if m & bj:
                        m |= bit
                    out[cnt, i] = m
                out[cnt, nl] = bj | bit
                out_nl[cnt] = nl + 1
            cnt += 1
        # leaf on the external line of label 0
        if n - 1 >= 2:
            if write:
                for i in range(nl):
                    out[cnt, i] = masks[i]
                out[cnt, nl] = (1 << (n - 1)) - 1
                out_nl[cnt] = nl + 1
            cnt += 1
    # leaf on a coordination-3 vertex
    for k in range(nl):
        if degree[k] == 3:
            if write:
                _insert(masks, nl, k, bit, out[cnt])
                out_nl[cnt] = nl
            cnt += 1
    if degree[nl] == 3:
        if write:
            for i in range(nl):
                out[cnt, i] = masks[i]
            out_nl[cnt] = nl
        cnt += 1
    return cnt


@njit(cache=True)
def grow(masks, nls, n, max_lines):
    """All one-leaf extensions (new label ``n``) of a population of trees."""
    m = masks.shape[0]
    dummy = np.zeros((1, max_lines + 1), dtype=np.int64)
    dummy_nl = np.zeros(1, dtype=np.int64)
    counts = np.empty(m, dtype=np.int64)
    for t in range(m):
        counts[t] = _children(masks[t], nls[t], n, max_lines, dummy, dummy_nl, False)
    total = counts.sum()
    out = np.zeros((total, max_lines + 1), dtype=np.int64)
    out_nl = np.zeros(total, dtype=np.int64)
    pos = 0
    for t in range(m):
        c = counts[t]
        _children(masks[t], nls[t], n, max_lines, out[pos:pos + c], out_nl[pos:pos + c], True)
        pos += c
    return out, out_nl


@njit(cache=True)
def _find(uf, a):
    while uf[a] != a:
        uf[a] = uf[uf[a]]
        a = uf[a]
    return a


@njit(cache=True)
def incidence_ok(parent, degree, n_lines, rho1):
    """Each component of the rho=1 forest holds exactly one coordination-4 vertex.

    Given equal counts of coordination-3 vertices and rho=1 lines this is
    equivalent to an incidence-respecting bijection between the two.
    """
    uf = np.arange(n_lines + 1)
    for k in range(n_lines):
        if (rho1 >> k) & 1:
            a = _find(uf, k)
            b = _find(uf, parent[k])
            if a != b:
                uf[a] = b
    fours = np.zeros(n_lines + 1, dtype=np.int64)
    for v in range(n_lines + 1):
        if degree[v] == 4:
            fours[_find(uf, v)] += 1
    for v in range(n_lines + 1):
        if _find(uf, v) == v and fours[v] != 1:
            return False
    return True


@njit(cache=True)
def encode(masks, n_lines, rho1, bits):
    entries = np.empty(n_lines, dtype=np.int64)
    for k in range(n_lines):
        rho = 1 if (rho1 >> k) & 1 else 2
        entries[k] = (masks[k] << 1) | (rho - 1)
    entries.sort()
    code = 0
    for k in range(n_lines):
        code |= entries[k] << (bits * k)
    return code


@njit(cache=True)
def weight_assignments(masks, nls, n_ext, r_max, strict):
    """Weighted codes and coordination-3 counts for every valid weighting."""
    m = masks.shape[0]
    width = masks.shape[1]
    parent = np.empty(max(width, 1), dtype=np.int64)
    degree = np.empty(width + 1, dtype=np.int64)
    codes = []
    n3s = []
    for t in range(m):
        nl = nls[t]
        tree_structure(masks[t], nl, n_ext, parent, degree)
        n3 = 0
        for v in range(nl + 1):
            if degree[v] == 3:
                n3 += 1
        if n3 > r_max or n3 > nl:
            continue
        if 2 * nl - n_ext + 4 != n3:
            continue
        for rho1 in range(1 << nl):
            if popcount(rho1) != n3:
                continue
            if strict and not incidence_ok(parent, degree, nl, rho1):
                continue
            codes.append(encode(masks[t], nl, rho1, n_ext))
            n3s.append(n3)
    out_codes = np.empty(len(codes), dtype=np.int64)
    out_n3 = np.empty(len(codes), dtype=np.int64)
    for i in range(len(codes)):
        out_codes[i] = codes[i]
        out_n3[i] = n3s[i]
    return out_codes, out_n3
