"""Pure-Python (numpy) twin of the compiled tree kernels.

Node numbering, feature sampling (splitmix64 partial Fisher-Yates) and
strict-improvement tie-breaking match ``_kernels.pyx`` so both backends grow
the same trees.
"""
import numpy as np

_MASK = (1 << 64) - 1


class _SplitMix:
    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)


def _sample_features(feats, m, rng):
    n_features = len(feats)
    if m >= n_features:
        return
    for i in range(m):
        j = i + rng.next() % (n_features - i)
        feats[i], feats[j] = feats[j], feats[i]


def _midpoints(xl, xr):
    t = 0.5 * xl + 0.5 * xr
    bad = (t >= xr) | (t < xl)
    t[bad] = xl[bad]
    return t


class _Nodes:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.count = [], []

    def add(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(None)
        self.count.append(0)
        return len(self.feature) - 1

    def finish(self, n_out):
        return {
            "feature": np.asarray(self.feature, dtype=np.int64),
            "threshold": np.asarray(self.threshold, dtype=np.float64),
            "left": np.asarray(self.left, dtype=np.int64),
            "right": np.asarray(self.right, dtype=np.int64),
            "value": np.asarray(self.value, dtype=np.float64).reshape(-1, n_out),
            "n_samples": np.asarray(self.count, dtype=np.int64),
        }


def _split_node(nodes, X, samples, start, end, node, feat, thr, stack, depth):
    seg = samples[start:end]
    mask = X[seg, feat] <= thr
    nl = int(mask.sum())
    samples[start:end] = np.concatenate([seg[mask], seg[~mask]])
    left, right = nodes.add(), nodes.add()
    nodes.feature[node] = int(feat)
    nodes.threshold[node] = float(thr)
    nodes.left[node] = left
    nodes.right[node] = right
    stack.append((right, start + nl, end, depth + 1))
    stack.append((left, start, start + nl, depth + 1))


def build_classifier_tree(X, y, samples, n_classes, max_depth, min_samples_split,
                          min_samples_leaf, max_features, seed):
    n_features = X.shape[1]
    rng = _SplitMix(seed)
    feats = list(range(n_features))
    m = max_features if 0 < max_features < n_features else n_features
    onehot = np.eye(n_classes)[y]
    nodes = _Nodes()
    stack = [(nodes.add(), 0, len(samples), 0)]
    while stack:
        node, start, end, depth = stack.pop()
        n = end - start
        seg = samples[start:end]
        total = np.bincount(y[seg], minlength=n_classes).astype(np.float64)
        nodes.value[node] = total.tolist()
        nodes.count[node] = n
        sq = float(np.sum(total * total))
        if depth >= max_depth or n < min_samples_split or n < 2 * min_samples_leaf:
            continue
        if sq == float(n) * float(n):
            continue
        best = (sq / n) * (1.0 + 1e-12)
        best_feat, best_thr = -1, 0.0
        _sample_features(feats, m, rng)
        counts_left = np.arange(1, n, dtype=np.float64)
        for feat in feats[:m]:
            order = np.argsort(X[seg, feat], kind="stable")
            xs = X[seg[order], feat]
            if xs[0] >= xs[-1]:
                continue
            lc = np.cumsum(onehot[seg[order]][:-1], axis=0)
            rc = total - lc
            sql = np.sum(lc * lc, axis=1)
            sqr = np.sum(rc * rc, axis=1)
            proxy = sql / counts_left + sqr / (n - counts_left)
            valid = xs[1:] > xs[:-1]
            valid &= (counts_left >= min_samples_leaf) & (n - counts_left >= min_samples_leaf)
            if not valid.any():
                continue
            proxy = np.where(valid, proxy, -np.inf)
            i = int(np.argmax(proxy))
            if proxy[i] > best:
                best = proxy[i]
                best_feat = feat
                best_thr = float(_midpoints(xs[i:i + 1], xs[i + 1:i + 2])[0])
        if best_feat < 0:
            continue
        _split_node(nodes, X, samples, start, end, node, best_feat, best_thr, stack, depth)
    return nodes.finish(n_classes)


def build_gradient_tree(X, grad, hess, samples, max_depth, min_samples_split,
                        min_samples_leaf, min_child_weight, max_features,
                        reg_lambda, min_gain, seed):
    n_features = X.shape[1]
    rng = _SplitMix(seed)
    feats = list(range(n_features))
    m = max_features if 0 < max_features < n_features else n_features
    nodes = _Nodes()
    stack = [(nodes.add(), 0, len(samples), 0)]
    while stack:
        node, start, end, depth = stack.pop()
        n = end - start
        seg = samples[start:end]
        G = float(np.cumsum(grad[seg])[-1]) if n else 0.0
        H = float(np.cumsum(hess[seg])[-1]) if n else 0.0
        nodes.value[node] = [-G / (H + reg_lambda)]
        nodes.count[node] = n
        if depth >= max_depth or n < min_samples_split or n < 2 * min_samples_leaf:
            continue
        parent = G * G / (H + reg_lambda)
        best = min_gain + 1e-12
        best_feat, best_thr = -1, 0.0
        _sample_features(feats, m, rng)
        counts_left = np.arange(1, n)
        for feat in feats[:m]:
            order = np.argsort(X[seg, feat], kind="stable")
            so = seg[order]
            xs = X[so, feat]
            if xs[0] >= xs[-1]:
                continue
            GL = np.cumsum(grad[so])[:-1]
            HL = np.cumsum(hess[so])[:-1]
            GR = G - GL
            HR = H - HL
            with np.errstate(divide="ignore", invalid="ignore"):
                gain = 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda) - parent)
            valid = xs[1:] > xs[:-1]
            valid &= (counts_left >= min_samples_leaf) & (n - counts_left >= min_samples_leaf)
            valid &= (HL >= min_child_weight) & (HR >= min_child_weight)
            if not valid.any():
                continue
            gain = np.where(valid, gain, -np.inf)
            i = int(np.argmax(gain))
            if gain[i] > best:
                best = gain[i]
                best_feat = feat
                best_thr = float(_midpoints(xs[i:i + 1], xs[i + 1:i + 2])[0])
        if best_feat < 0:
            continue
        _split_node(nodes, X, samples, start, end, node, best_feat, best_thr, stack, depth)
    return nodes.finish(1)


def apply_tree(X, feature, threshold, left, right):
    """Leaf index reached by every row of ``X``."""
    X = np.asarray(X)
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = left[node] >= 0
    while active.any():
        idx = np.nonzero(active)[0]
        cur = node[idx]
        go_left = X[idx, feature[cur]] <= threshold[cur]
        node[idx] = np.where(go_left, left[cur], right[cur])
        active = left[node] >= 0
    return node
