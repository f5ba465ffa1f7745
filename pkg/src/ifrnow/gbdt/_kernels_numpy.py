"""Vectorised numpy versions of the loop kernels (same contracts)."""
from math import factorial

import numpy as np

# gains this close to the best count as ties (same value as the loop kernel)
TIE_RTOL = 1e-12


def node_stats(node_of, g, h, n_nodes):
    live = node_of >= 0
    k = node_of[live]
    G = np.bincount(k, weights=g[live], minlength=n_nodes).astype(np.float64)
    H = np.bincount(k, weights=h[live], minlength=n_nodes).astype(np.float64)
    C = np.bincount(k, minlength=n_nodes).astype(np.float64)
    return G, H, C


def missing_stats(X, node_of, g, h, n_nodes):
    m = X.shape[1]
    live = node_of >= 0
    Xl, k, gl, hl = X[live], node_of[live], g[live], h[live]
    miss = np.isnan(Xl)
    Gm = np.zeros((n_nodes, m))
    Hm = np.zeros((n_nodes, m))
    Cm = np.zeros((n_nodes, m), dtype=np.int64)
    for f in range(m):
        sel = miss[:, f]
        Gm[:, f] = np.bincount(k[sel], weights=gl[sel], minlength=n_nodes)
        Hm[:, f] = np.bincount(k[sel], weights=hl[sel], minlength=n_nodes)
        Cm[:, f] = np.bincount(k[sel], minlength=n_nodes)
    return Gm, Hm, Cm


def _gain(GL, HL, GR, HR, parent, lam, gamma):
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma


def best_splits(X, sorted_idx, n_sorted, node_of, g, h, G, H, Gm, Hm, Cm, lam, gamma, mcw):
    n_nodes = G.shape[0]
    m = X.shape[1]
    best_gain = np.full(n_nodes, -np.inf)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    best_left = np.zeros(n_nodes, dtype=np.uint8)
    parent = G * G / (H + lam)
    all_node, all_gain, all_thr, all_left, all_feat, all_rank = [], [], [], [], [], []
    for f in range(m):
        idx = sorted_idx[f, : n_sorted[f]]
        idx = idx[node_of[idx] >= 0]
        if idx.size == 0:
            continue
        nodes = node_of[idx]
        order = np.argsort(nodes, kind="stable")
        idx, nodes = idx[order], nodes[order]
        v = X[idx, f]
        starts = np.flatnonzero(np.r_[True, nodes[1:] != nodes[:-1]])
        ends = np.r_[starts[1:], idx.size] - 1
        # per-node running sums, accumulated in the same order as the loop kernel
        cg = np.empty(idx.size)
        ch = np.empty(idx.size)
        for a, b in zip(starts, ends + 1):
            cg[a:b] = np.cumsum(g[idx[a:b]])
            ch[a:b] = np.cumsum(h[idx[a:b]])
        first = np.zeros(idx.size, dtype=bool)
        first[starts] = True
        # left sums of non-missing rows strictly before position j
        gl_before = np.where(first, 0.0, np.r_[0.0, cg[:-1]])
        hl_before = np.where(first, 0.0, np.r_[0.0, ch[:-1]])
        cand = np.flatnonzero(np.r_[False, (nodes[1:] == nodes[:-1]) & (v[1:] != v[:-1])])

        k = nodes[cand]
        thr = v[cand]
        GLn, HLn = gl_before[cand], hl_before[cand]
        has_miss = Cm[k, f] > 0
        gl_a = GLn + np.where(has_miss, Gm[k, f], 0.0)
        hl_a = HLn + np.where(has_miss, Hm[k, f], 0.0)
        ok_a = (hl_a >= mcw) & (H[k] - hl_a >= mcw)
        gain_a = np.where(ok_a, _gain(gl_a, hl_a, G[k] - gl_a, H[k] - hl_a, parent[k], lam, gamma), -np.inf)
        ok_b = has_miss & (HLn >= mcw) & (H[k] - HLn >= mcw)
        gain_b = np.where(ok_b, _gain(GLn, HLn, G[k] - GLn, H[k] - HLn, parent[k], lam, gamma), -np.inf)

        # candidate list in search order: (threshold, default-left) then (threshold, right)
        c_node = np.repeat(k, 2)
        c_gain = np.column_stack([gain_a, gain_b]).ravel()
        c_thr = np.repeat(thr, 2)
        c_left = np.tile(np.array([1, 0], dtype=np.uint8), k.size)

        # present-vs-missing candidate, last for its node
        seg_nodes = nodes[starts]
        gl_all = cg[ends]
        hl_all = ch[ends]
        ok_c = (Cm[seg_nodes, f] > 0) & (hl_all >= mcw) & (H[seg_nodes] - hl_all >= mcw)
        gain_c = np.where(
            ok_c,
            _gain(gl_all, hl_all, G[seg_nodes] - gl_all, H[seg_nodes] - hl_all, parent[seg_nodes], lam, gamma),
            -np.inf,
        )
        c_node = np.r_[c_node, seg_nodes]
        c_gain = np.r_[c_gain, gain_c]
        c_thr = np.r_[c_thr, np.full(seg_nodes.size, np.inf)]
        c_left = np.r_[c_left, np.zeros(seg_nodes.size, dtype=np.uint8)]
        c_rank = np.r_[np.arange(2 * k.size), 2 * k.size + np.arange(seg_nodes.size)]

        all_node.append(c_node)
        all_gain.append(c_gain)
        all_thr.append(c_thr)
        all_left.append(c_left)
        all_feat.append(np.full(c_node.size, f))
        all_rank.append(c_rank)
    if not all_node:
        return best_gain, best_feat, best_thr, best_left
    c_node, c_gain, c_thr = np.concatenate(all_node), np.concatenate(all_gain), np.concatenate(all_thr)
    c_left, c_feat, c_rank = np.concatenate(all_left), np.concatenate(all_feat), np.concatenate(all_rank)
    # best gain per node, then the earliest candidate (feature, rank) within tolerance of it
    top = np.full(n_nodes, -np.inf)
    np.maximum.at(top, c_node, c_gain)
    with np.errstate(invalid="ignore"):
        target = top - TIE_RTOL * np.maximum(1.0, np.abs(top))
        ok = c_gain >= target[c_node]
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return best_gain, best_feat, best_thr, best_left
    idx = idx[np.lexsort((c_rank[idx], c_feat[idx], c_node[idx]))]
    idx = idx[np.r_[True, c_node[idx][1:] != c_node[idx][:-1]]]
    kk = c_node[idx]
    best_gain[kk] = c_gain[idx]
    best_feat[kk] = c_feat[idx]
    best_thr[kk] = c_thr[idx]
    best_left[kk] = c_left[idx]
    return best_gain, best_feat, best_thr, best_left


def _go_left(x, thr, dl):
    with np.errstate(invalid="ignore"):
        return np.where(np.isnan(x), dl == 1, x < thr)


def apply_splits(X, node_of, split_feat, split_thr, split_left, child_of):
    out = np.full(node_of.shape[0], -1, dtype=np.int64)
    live = np.flatnonzero(node_of >= 0)
    k = node_of[live]
    splits = split_feat[k] >= 0
    live, k = live[splits], k[splits]
    x = X[live, split_feat[k]]
    left = _go_left(x, split_thr[k], split_left[k])
    out[live] = np.where(left, child_of[k], child_of[k] + 1)
    return out


def leaf_index(X, feature, threshold, default_left, left, right):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = feature[node] >= 0
    while active.any():
        rows = np.flatnonzero(active)
        nd = node[rows]
        x = X[rows, feature[nd]]
        go = _go_left(x, threshold[nd], default_left[nd])
        node[rows] = np.where(go, left[nd], right[nd])
        active = feature[node] >= 0
    return node


def predict_margin(X, feature, threshold, default_left, left, right, value, offsets, base):
    out = np.full(X.shape[0], base, dtype=np.float64)
    for t in range(offsets.shape[0] - 1):
        a, b = offsets[t], offsets[t + 1]
        leaf = leaf_index(X, feature[a:b], threshold[a:b], default_left[a:b], left[a:b], right[a:b])
        out += value[a:b][leaf]
    return out


def node_counts(X, feature, threshold, default_left, left, right):
    n = X.shape[0]
    counts = np.zeros(feature.shape[0])
    node = np.zeros(n, dtype=np.int64)
    counts[0] = n
    active = np.full(n, feature[0] >= 0)
    while active.any():
        rows = np.flatnonzero(active)
        nd = node[rows]
        go = _go_left(X[rows, feature[nd]], threshold[nd], default_left[nd])
        node[rows] = np.where(go, left[nd], right[nd])
        counts += np.bincount(node[rows], minlength=feature.shape[0])
        active[rows] = feature[node[rows]] >= 0
    return counts


# --- path-dependent TreeSHAP -----------------------------------------------------
#
# Leaf-wise form of the same attribution, vectorised over rows. For a leaf
# with value v whose path tests the distinct features D (|D| = d), let z_j be
# the product of cover fractions along the path's splits on j and o_j(x) in
# {0, 1} whether x follows all of them. Then
#   phi_i += v (o_i - z_i) sum_s w(s, d) [t^s] prod_{j != i} (z_j + o_j t)
# with w(s, d) = s! (d-1-s)! / d!.


def _leaf_paths(feature, left, right, cover):
    """(value node, [(feature, z, [(node, goes_left)])]) for every leaf."""
    out = []
    stack = [(0, [])]
    while stack:
        node, path = stack.pop()
        f = feature[node]
        if f < 0:
            by_feat: dict[int, list] = {}
            for nd, go_left in path:
                by_feat.setdefault(int(feature[nd]), []).append((nd, go_left))
            groups = []
            for j, steps in by_feat.items():
                z = 1.0
                for nd, go_left in steps:
                    child = left[nd] if go_left else right[nd]
                    z *= cover[child] / cover[nd] if cover[nd] > 0 else 0.0
                groups.append((j, z, steps))
            out.append((node, groups))
            continue
        stack.append((right[node], path + [(node, False)]))
        stack.append((left[node], path + [(node, True)]))
    return out


def _shapley_weights(d):
    return np.array([factorial(s) * factorial(d - 1 - s) / factorial(d) for s in range(d)])


def shap_values(X, feature, threshold, default_left, left, right, value, cover, offsets, max_depth):
    n, m = X.shape
    phi = np.zeros((n, m))
    for t in range(offsets.shape[0] - 1):
        a, b = offsets[t], offsets[t + 1]
        feat, thr, dl = feature[a:b], threshold[a:b], default_left[a:b]
        internal = np.flatnonzero(feat >= 0)
        if internal.size == 0:
            continue
        goes_left = np.zeros((n, b - a), dtype=bool)
        goes_left[:, internal] = _go_left(X[:, feat[internal]], thr[internal], dl[internal])
        for leaf, groups in _leaf_paths(feat, left[a:b], right[a:b], cover[a:b]):
            d = len(groups)
            z = np.array([g[1] for g in groups])
            o = np.ones((n, d))
            for k, (_, _, steps) in enumerate(groups):
                for nd, go_left in steps:
                    o[:, k] *= goes_left[:, nd] == go_left
            w = _shapley_weights(d)
            for i in range(d):
                # coefficients of prod_{j != i} (z_j + o_j t), one row per sample
                poly = np.zeros((n, d))
                poly[:, 0] = 1.0
                for j in range(d):
                    if j == i:
                        continue
                    poly[:, 1:] = poly[:, 1:] * z[j] + poly[:, :-1] * o[:, j : j + 1]
                    poly[:, 0] *= z[j]
                phi[:, groups[i][0]] += value[a + leaf] * (o[:, i] - z[i]) * (poly @ w)
    return phi
