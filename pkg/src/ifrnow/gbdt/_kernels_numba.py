"""Loop kernels compiled with numba."""
import numba
import numpy as np

njit = numba.njit(cache=True)

# gains this close to the best count as ties
TIE_RTOL = 1e-12


@njit
def node_stats(node_of, g, h, n_nodes):
    G = np.zeros(n_nodes)
    H = np.zeros(n_nodes)
    C = np.zeros(n_nodes)
    for i in range(node_of.shape[0]):
        k = node_of[i]
        if k >= 0:
            G[k] += g[i]
            H[k] += h[i]
            C[k] += 1.0
    return G, H, C


@njit
def missing_stats(X, node_of, g, h, n_nodes):
    n, m = X.shape
    Gm = np.zeros((n_nodes, m))
    Hm = np.zeros((n_nodes, m))
    Cm = np.zeros((n_nodes, m), dtype=np.int64)
    for i in range(n):
        k = node_of[i]
        if k < 0:
            continue
        for f in range(m):
            if np.isnan(X[i, f]):
                Gm[k, f] += g[i]
                Hm[k, f] += h[i]
                Cm[k, f] += 1
    return Gm, Hm, Cm


@njit
def _gain(GL, HL, GR, HR, parent, lam, gamma):
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent) - gamma


@njit
def _visit(k, gain, f, thr, left, mode, best_gain, target, found, best_feat, best_thr, best_left):
    if mode == 0:
        if gain > best_gain[k]:
            best_gain[k] = gain
    elif found[k] == 0 and gain >= target[k]:
        found[k] = 1
        best_gain[k] = gain
        best_feat[k] = f
        best_thr[k] = thr
        best_left[k] = left


@njit
def _scan(X, sorted_idx, n_sorted, node_of, g, h, G, H, Gm, Hm, Cm, lam, gamma, mcw, parent,
          mode, best_gain, target, found, best_feat, best_thr, best_left):
    n_nodes = G.shape[0]
    GL = np.zeros(n_nodes)
    HL = np.zeros(n_nodes)
    last = np.zeros(n_nodes)
    seen = np.zeros(n_nodes, dtype=np.uint8)
    for f in range(X.shape[1]):
        GL[:] = 0.0
        HL[:] = 0.0
        seen[:] = 0
        for j in range(n_sorted[f]):
            i = sorted_idx[f, j]
            k = node_of[i]
            if k < 0:
                continue
            v = X[i, f]
            if seen[k] == 1 and v != last[k]:
                if Cm[k, f] > 0:
                    gl = GL[k] + Gm[k, f]
                    hl = HL[k] + Hm[k, f]
                    hr = H[k] - hl
                    if hl >= mcw and hr >= mcw:
                        gain = _gain(gl, hl, G[k] - gl, hr, parent[k], lam, gamma)
                        _visit(k, gain, f, v, 1, mode, best_gain, target, found, best_feat, best_thr, best_left)
                    hr = H[k] - HL[k]
                    if HL[k] >= mcw and hr >= mcw:
                        gain = _gain(GL[k], HL[k], G[k] - GL[k], hr, parent[k], lam, gamma)
                        _visit(k, gain, f, v, 0, mode, best_gain, target, found, best_feat, best_thr, best_left)
                else:
                    hr = H[k] - HL[k]
                    if HL[k] >= mcw and hr >= mcw:
                        gain = _gain(GL[k], HL[k], G[k] - GL[k], hr, parent[k], lam, gamma)
                        _visit(k, gain, f, v, 1, mode, best_gain, target, found, best_feat, best_thr, best_left)
            GL[k] += g[i]
            HL[k] += h[i]
            last[k] = v
            seen[k] = 1
        # present-vs-missing split: every non-missing row left
        for k in range(n_nodes):
            if seen[k] == 1 and Cm[k, f] > 0:
                hr = H[k] - HL[k]
                if HL[k] >= mcw and hr >= mcw:
                    gain = _gain(GL[k], HL[k], G[k] - GL[k], hr, parent[k], lam, gamma)
                    _visit(k, gain, f, np.inf, 0, mode, best_gain, target, found, best_feat, best_thr, best_left)


@njit
def best_splits(X, sorted_idx, n_sorted, node_of, g, h, G, H, Gm, Hm, Cm, lam, gamma, mcw):
    """Exact greedy search over presorted columns.

    Candidates run over (feature asc, threshold asc, default-left first). The
    first pass finds each node's best gain; the second picks the earliest
    candidate within TIE_RTOL of it, so float noise cannot break a tie.
    """
    n_nodes = G.shape[0]
    best_gain = np.full(n_nodes, -np.inf)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    best_left = np.zeros(n_nodes, dtype=np.uint8)
    found = np.zeros(n_nodes, dtype=np.uint8)
    parent = np.empty(n_nodes)
    for k in range(n_nodes):
        parent[k] = G[k] * G[k] / (H[k] + lam)
    target = np.empty(n_nodes)
    _scan(X, sorted_idx, n_sorted, node_of, g, h, G, H, Gm, Hm, Cm, lam, gamma, mcw, parent,
          0, best_gain, target, found, best_feat, best_thr, best_left)
    for k in range(n_nodes):
        target[k] = best_gain[k] - TIE_RTOL * max(1.0, abs(best_gain[k]))
    _scan(X, sorted_idx, n_sorted, node_of, g, h, G, H, Gm, Hm, Cm, lam, gamma, mcw, parent,
          1, best_gain, target, found, best_feat, best_thr, best_left)
    return best_gain, best_feat, best_thr, best_left


@njit
def apply_splits(X, node_of, split_feat, split_thr, split_left, child_of):
    """Route rows one level down; rows in leaves get -1."""
    out = np.full(node_of.shape[0], -1, dtype=np.int64)
    for i in range(node_of.shape[0]):
        k = node_of[i]
        if k < 0 or split_feat[k] < 0:
            continue
        x = X[i, split_feat[k]]
        if np.isnan(x):
            go_left = split_left[k] == 1
        else:
            go_left = x < split_thr[k]
        out[i] = child_of[k] if go_left else child_of[k] + 1
    return out


@njit
def predict_margin(X, feature, threshold, default_left, left, right, value, offsets, base):
    n = X.shape[0]
    out = np.full(n, base)
    n_trees = offsets.shape[0] - 1
    for i in range(n):
        acc = base
        for t in range(n_trees):
            node = offsets[t]
            while feature[node] >= 0:
                x = X[i, feature[node]]
                if np.isnan(x):
                    go_left = default_left[node] == 1
                else:
                    go_left = x < threshold[node]
                node = offsets[t] + (left[node] if go_left else right[node])
            acc += value[node]
        out[i] = acc
    return out


@njit
def leaf_index(X, feature, threshold, default_left, left, right):
    """Local leaf id reached by each row in a single tree."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            x = X[i, feature[node]]
            if np.isnan(x):
                go_left = default_left[node] == 1
            else:
                go_left = x < threshold[node]
            node = left[node] if go_left else right[node]
        out[i] = node
    return out


@njit
def node_counts(X, feature, threshold, default_left, left, right):
    """Number of rows passing through every node of one tree."""
    counts = np.zeros(feature.shape[0])
    for i in range(X.shape[0]):
        node = 0
        counts[0] += 1.0
        while feature[node] >= 0:
            x = X[i, feature[node]]
            if np.isnan(x):
                go_left = default_left[node] == 1
            else:
                go_left = x < threshold[node]
            node = left[node] if go_left else right[node]
            counts[node] += 1.0
    return counts


# --- path-dependent TreeSHAP ---------------------------------------------------

# Path elements live in 2-d scratch arrays indexed [tree level, slot];
# each level copies its parent's path before extending it.


@njit
def _extend(feat, zf, of, pw, lvl, depth, zero_fraction, one_fraction, feature):
    feat[lvl, depth] = feature
    zf[lvl, depth] = zero_fraction
    of[lvl, depth] = one_fraction
    pw[lvl, depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[lvl, i + 1] += one_fraction * pw[lvl, i] * (i + 1) / (depth + 1)
        pw[lvl, i] = zero_fraction * pw[lvl, i] * (depth - i) / (depth + 1)


@njit
def _unwind(feat, zf, of, pw, lvl, depth, idx):
    one_fraction = of[lvl, idx]
    zero_fraction = zf[lvl, idx]
    nxt = pw[lvl, depth]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = pw[lvl, i]
            pw[lvl, i] = nxt * (depth + 1) / ((i + 1) * one_fraction)
            nxt = tmp - pw[lvl, i] * zero_fraction * (depth - i) / (depth + 1)
        else:
            pw[lvl, i] = pw[lvl, i] * (depth + 1) / (zero_fraction * (depth - i))
    for i in range(idx, depth):
        feat[lvl, i] = feat[lvl, i + 1]
        zf[lvl, i] = zf[lvl, i + 1]
        of[lvl, i] = of[lvl, i + 1]


@njit
def _unwound_sum(zf, of, pw, lvl, depth, idx):
    one_fraction = of[lvl, idx]
    zero_fraction = zf[lvl, idx]
    nxt = pw[lvl, depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0.0:
            tmp = nxt * (depth + 1) / ((i + 1) * one_fraction)
            total += tmp
            nxt = pw[lvl, i] - tmp * zero_fraction * (depth - i) / (depth + 1)
        else:
            total += pw[lvl, i] / (zero_fraction * (depth - i) / (depth + 1))
    return total


@njit
def _tree_shap(x, phi, feature, threshold, default_left, left, right, value, cover,
               feat, zf, of, pw):
    """Depth-first walk with an explicit stack (numba cannot cache recursion).

    Popping a frame at level L copies the path of level L-1, which is still
    the parent's path because only deeper levels are written in between.
    """
    cap = 2 * feat.shape[0] + 2
    s_node = np.empty(cap, dtype=np.int64)
    s_lvl = np.empty(cap, dtype=np.int64)
    s_depth = np.empty(cap, dtype=np.int64)
    s_zero = np.empty(cap)
    s_one = np.empty(cap)
    s_feat = np.empty(cap, dtype=np.int64)
    s_node[0] = 0
    s_lvl[0] = 0
    s_depth[0] = 0
    s_zero[0] = 1.0
    s_one[0] = 1.0
    s_feat[0] = -1
    top = 1
    while top > 0:
        top -= 1
        node = s_node[top]
        lvl = s_lvl[top]
        depth = s_depth[top]
        if lvl > 0:
            for j in range(depth):
                feat[lvl, j] = feat[lvl - 1, j]
                zf[lvl, j] = zf[lvl - 1, j]
                of[lvl, j] = of[lvl - 1, j]
                pw[lvl, j] = pw[lvl - 1, j]
        _extend(feat, zf, of, pw, lvl, depth, s_zero[top], s_one[top], s_feat[top])

        f = feature[node]
        if f < 0:
            for i in range(1, depth + 1):
                if of[lvl, i] == zf[lvl, i]:
                    continue
                w = _unwound_sum(zf, of, pw, lvl, depth, i)
                phi[feat[lvl, i]] += w * (of[lvl, i] - zf[lvl, i]) * value[node]
            continue

        v = x[f]
        if np.isnan(v):
            go_left = default_left[node] == 1
        else:
            go_left = v < threshold[node]
        hot = left[node] if go_left else right[node]
        cold = right[node] if go_left else left[node]
        c = cover[node]
        hot_zero = cover[hot] / c if c > 0 else 0.0
        cold_zero = cover[cold] / c if c > 0 else 0.0

        incoming_zero = 1.0
        incoming_one = 1.0
        k = 0
        while k <= depth:
            if feat[lvl, k] == f:
                break
            k += 1
        if k <= depth:
            incoming_zero = zf[lvl, k]
            incoming_one = of[lvl, k]
            _unwind(feat, zf, of, pw, lvl, depth, k)
            depth -= 1

        # push cold first so the hot branch is walked first; a branch whose
        # zero and one fractions are both 0 contributes nothing
        if cold_zero * incoming_zero > 0.0:
            s_node[top] = cold
            s_lvl[top] = lvl + 1
            s_depth[top] = depth + 1
            s_zero[top] = cold_zero * incoming_zero
            s_one[top] = 0.0
            s_feat[top] = f
            top += 1
        if hot_zero * incoming_zero > 0.0 or incoming_one > 0.0:
            s_node[top] = hot
            s_lvl[top] = lvl + 1
            s_depth[top] = depth + 1
            s_zero[top] = hot_zero * incoming_zero
            s_one[top] = incoming_one
            s_feat[top] = f
            top += 1


@njit
def shap_values(X, feature, threshold, default_left, left, right, value, cover, offsets, max_depth):
    n, m = X.shape
    phi = np.zeros((n, m))
    size = max_depth + 3
    feat = np.full((size, size), -1, dtype=np.int64)
    zf = np.zeros((size, size))
    of = np.zeros((size, size))
    pw = np.zeros((size, size))
    for r in range(n):
        for t in range(offsets.shape[0] - 1):
            a = offsets[t]
            b = offsets[t + 1]
            _tree_shap(X[r], phi[r], feature[a:b], threshold[a:b], default_left[a:b], left[a:b],
                       right[a:b], value[a:b], cover[a:b], feat, zf, of, pw)
    return phi
