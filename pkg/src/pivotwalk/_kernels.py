"""Compiled loops over the trie of vertices visited by a tree walk."""

from __future__ import annotations

import numpy as np
from numba import njit

RESET = 127  # code that sends the walker back to the root


@njit(cache=True)
def build_trie(codes, rank):
    n = codes.shape[0]
    width = 2 * rank + 1
    child = np.full((n + 1, width), -1, dtype=np.int64)
    parent = np.zeros(n + 1, dtype=np.int64)
    letter = np.zeros(n + 1, dtype=np.int8)
    depth = np.zeros(n + 1, dtype=np.int64)
    node = np.zeros(n + 1, dtype=np.int64)
    size = 1
    cur = 0
    for t in range(n):
        c = codes[t]
        if c == RESET:
            cur = 0
        elif c != 0:
            if cur != 0 and letter[cur] == -c:
                cur = parent[cur]
            else:
                nxt = child[cur, c + rank]
                if nxt < 0:
                    nxt = size
                    size += 1
                    child[cur, c + rank] = nxt
                    parent[nxt] = cur
                    letter[nxt] = c
                    depth[nxt] = depth[cur] + 1
                cur = nxt
        node[t + 1] = cur
    return node, parent[:size].copy(), letter[:size].copy(), depth[:size].copy(), child[:size].copy()


@njit(cache=True)
def lifting_table(parent, depth):
    levels = 1
    top = depth.max() if depth.shape[0] else 0
    while (1 << levels) <= top:
        levels += 1
    up = np.empty((levels, parent.shape[0]), dtype=np.int64)
    up[0] = parent
    for j in range(1, levels):
        for v in range(parent.shape[0]):
            up[j, v] = up[j - 1, up[j - 1, v]]
    return up


@njit(cache=True)
def lca(up, depth, u, v):
    if depth[u] < depth[v]:
        u, v = v, u
    diff = depth[u] - depth[v]
    j = 0
    while diff:
        if diff & 1:
            u = up[j, u]
        diff >>= 1
        j += 1
    if u == v:
        return u
    for j in range(up.shape[0] - 1, -1, -1):
        if up[j, u] != up[j, v]:
            u = up[j, u]
            v = up[j, v]
    return up[0, u]


@njit(cache=True)
def distances_from(up, depth, u, vs):
    out = np.empty(vs.shape[0], dtype=np.int64)
    for i in range(vs.shape[0]):
        w = lca(up, depth, u, vs[i])
        out[i] = depth[u] + depth[vs[i]] - 2 * depth[w]
    return out


@njit(cache=True)
def mark_path(up, depth, parent, marked, u, v):
    top = lca(up, depth, u, v)
    x = u
    while x != top:
        marked[x] = True
        x = parent[x]
    x = v
    while x != top:
        marked[x] = True
        x = parent[x]
    marked[top] = True


@njit(cache=True)
def subtree_distance(parent, marked):
    out = np.zeros(parent.shape[0], dtype=np.int64)
    # parents are created before their children
    for v in range(1, parent.shape[0]):
        out[v] = 0 if marked[v] else out[parent[v]] + 1
    return out


@njit(cache=True)
def locate(child, codes, rank):
    """Deepest trie vertex on the ray spelled by ``codes`` and its depth."""
    cur = 0
    for t in range(codes.shape[0]):
        nxt = child[cur, codes[t] + rank]
        if nxt < 0:
            return cur, t
        cur = nxt
    return cur, codes.shape[0]
