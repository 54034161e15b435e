# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CART kernels: greedy tree growth and batch traversal.

Both builders grow a tree depth-first over a caller-owned ``samples`` array
(bootstrap duplicates allowed) and return flat node arrays. The node layout,
feature sampling and tie-breaking are identical to ``_kernels_py``.
"""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free, qsort
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()

ctypedef struct Pair:
    double value
    int64_t sample


cdef int _cmp_pair(const void* a, const void* b) noexcept nogil:
    cdef double va = (<Pair*>a).value
    cdef double vb = (<Pair*>b).value
    if va < vb:
        return -1
    if va > vb:
        return 1
    return 0


cdef inline uint64_t _splitmix(uint64_t* state) noexcept nogil:
    state[0] += <uint64_t>0x9E3779B97F4A7C15
    cdef uint64_t z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline void _sample_features(int64_t* feats, int n_features, int m,
                                  uint64_t* state) noexcept nogil:
    cdef int i, j
    cdef int64_t tmp
    if m >= n_features:
        return
    for i in range(m):
        j = i + <int>(_splitmix(state) % <uint64_t>(n_features - i))
        tmp = feats[i]
        feats[i] = feats[j]
        feats[j] = tmp


cdef inline double _midpoint(double a, double b) noexcept nogil:
    cdef double t = 0.5 * a + 0.5 * b
    if t >= b or t < a:
        t = a
    return t


cdef class _Nodes:
    cdef public list feature, threshold, left, right, value, count

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []
        self.count = []

    cdef int add(self, int n_out):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(None)
        self.count.append(0)
        return len(self.feature) - 1

    def finish(self, int n_out):
        return {
            "feature": np.asarray(self.feature, dtype=np.int64),
            "threshold": np.asarray(self.threshold, dtype=np.float64),
            "left": np.asarray(self.left, dtype=np.int64),
            "right": np.asarray(self.right, dtype=np.int64),
            "value": np.asarray(self.value, dtype=np.float64).reshape(-1, n_out),
            "n_samples": np.asarray(self.count, dtype=np.int64),
        }


cdef void _partition(const double[::1, :] X, int64_t[::1] samples, int64_t* tmp,
                     int start, int end, int feat, double thr, int* n_left) noexcept nogil:
    cdef int i, nl = 0, nr = 0
    cdef int64_t s
    for i in range(start, end):
        s = samples[i]
        if X[s, feat] <= thr:
            samples[start + nl] = s
            nl += 1
        else:
            tmp[nr] = s
            nr += 1
    for i in range(nr):
        samples[start + nl + i] = tmp[i]
    n_left[0] = nl


def build_classifier_tree(const double[::1, :] X, const int64_t[::1] y,
                          int64_t[::1] samples, int n_classes, int max_depth,
                          int min_samples_split, int min_samples_leaf,
                          int max_features, uint64_t seed):
    cdef int n_features = X.shape[1]
    cdef int n_total = samples.shape[0]
    cdef uint64_t state = seed
    cdef _Nodes nodes = _Nodes()
    cdef int64_t* feats = <int64_t*>malloc(n_features * sizeof(int64_t))
    cdef Pair* pairs = <Pair*>malloc((n_total + 1) * sizeof(Pair))
    cdef int64_t* tmp = <int64_t*>malloc((n_total + 1) * sizeof(int64_t))
    cdef double* total = <double*>malloc(n_classes * sizeof(double))
    cdef double* lcount = <double*>malloc(n_classes * sizeof(double))
    cdef int i, k, fi, feat, start, end, depth, n, node, nl, c, m
    cdef int best_feat
    cdef double best_thr, best_proxy, sq, sql, sqr, proxy, xl, xr, parent_proxy
    cdef list stack
    try:
        for i in range(n_features):
            feats[i] = i
        m = max_features if 0 < max_features < n_features else n_features
        root = nodes.add(n_classes)
        stack = [(root, 0, n_total, 0)]
        while stack:
            node, start, end, depth = stack.pop()
            n = end - start
            for k in range(n_classes):
                total[k] = 0.0
            for i in range(start, end):
                total[y[samples[i]]] += 1.0
            nodes.value[node] = [total[k] for k in range(n_classes)]
            nodes.count[node] = n
            sq = 0.0
            for k in range(n_classes):
                sq += total[k] * total[k]
            if depth >= max_depth or n < min_samples_split or n < 2 * min_samples_leaf:
                continue
            if sq == <double>n * <double>n:
                continue
            parent_proxy = sq / n
            best_proxy = parent_proxy * (1.0 + 1e-12)
            best_feat = -1
            best_thr = 0.0
            _sample_features(feats, n_features, m, &state)
            for fi in range(m):
                feat = feats[fi]
                with nogil:
                    for i in range(n):
                        pairs[i].sample = samples[start + i]
                        pairs[i].value = X[pairs[i].sample, feat]
                    qsort(pairs, n, sizeof(Pair), _cmp_pair)
                if pairs[0].value >= pairs[n - 1].value:
                    continue
                with nogil:
                    for k in range(n_classes):
                        lcount[k] = 0.0
                    sql = 0.0
                    sqr = sq
                    for i in range(n - 1):
                        c = y[pairs[i].sample]
                        sql += 2.0 * lcount[c] + 1.0
                        sqr -= 2.0 * (total[c] - lcount[c]) - 1.0
                        lcount[c] += 1.0
                        xl = pairs[i].value
                        xr = pairs[i + 1].value
                        if xr <= xl:
                            continue
                        if i + 1 < min_samples_leaf or n - i - 1 < min_samples_leaf:
                            continue
                        proxy = sql / (i + 1) + sqr / (n - i - 1)
                        if proxy > best_proxy:
                            best_proxy = proxy
                            best_feat = feat
                            best_thr = _midpoint(xl, xr)
            if best_feat < 0:
                continue
            _partition(X, samples, tmp, start, end, best_feat, best_thr, &nl)
            left = nodes.add(n_classes)
            right = nodes.add(n_classes)
            nodes.feature[node] = best_feat
            nodes.threshold[node] = best_thr
            nodes.left[node] = left
            nodes.right[node] = right
            stack.append((right, start + nl, end, depth + 1))
            stack.append((left, start, start + nl, depth + 1))
    finally:
        free(feats)
        free(pairs)
        free(tmp)
        free(total)
        free(lcount)
    return nodes.finish(n_classes)


def build_gradient_tree(const double[::1, :] X, const double[::1] grad,
                        const double[::1] hess, int64_t[::1] samples, int max_depth,
                        int min_samples_split, int min_samples_leaf,
                        double min_child_weight, int max_features,
                        double reg_lambda, double min_gain, uint64_t seed):
    cdef int n_features = X.shape[1]
    cdef int n_total = samples.shape[0]
    cdef uint64_t state = seed
    cdef _Nodes nodes = _Nodes()
    cdef int64_t* feats = <int64_t*>malloc(n_features * sizeof(int64_t))
    cdef Pair* pairs = <Pair*>malloc((n_total + 1) * sizeof(Pair))
    cdef int64_t* tmp = <int64_t*>malloc((n_total + 1) * sizeof(int64_t))
    cdef int i, fi, feat, start, end, depth, n, node, nl, m, best_feat
    cdef double G, H, GL, HL, GR, HR, gain, best_gain, best_thr, parent, xl, xr
    cdef int64_t s
    cdef list stack
    try:
        for i in range(n_features):
            feats[i] = i
        m = max_features if 0 < max_features < n_features else n_features
        root = nodes.add(1)
        stack = [(root, 0, n_total, 0)]
        while stack:
            node, start, end, depth = stack.pop()
            n = end - start
            G = 0.0
            H = 0.0
            for i in range(start, end):
                s = samples[i]
                G += grad[s]
                H += hess[s]
            nodes.value[node] = [-G / (H + reg_lambda)]
            nodes.count[node] = n
            if depth >= max_depth or n < min_samples_split or n < 2 * min_samples_leaf:
                continue
            parent = G * G / (H + reg_lambda)
            best_gain = min_gain + 1e-12
            best_feat = -1
            best_thr = 0.0
            _sample_features(feats, n_features, m, &state)
            for fi in range(m):
                feat = feats[fi]
                with nogil:
                    for i in range(n):
                        pairs[i].sample = samples[start + i]
                        pairs[i].value = X[pairs[i].sample, feat]
                    qsort(pairs, n, sizeof(Pair), _cmp_pair)
                if pairs[0].value >= pairs[n - 1].value:
                    continue
                with nogil:
                    GL = 0.0
                    HL = 0.0
                    for i in range(n - 1):
                        s = pairs[i].sample
                        GL = GL + grad[s]
                        HL = HL + hess[s]
                        xl = pairs[i].value
                        xr = pairs[i + 1].value
                        if xr <= xl:
                            continue
                        if i + 1 < min_samples_leaf or n - i - 1 < min_samples_leaf:
                            continue
                        GR = G - GL
                        HR = H - HL
                        if HL < min_child_weight or HR < min_child_weight:
                            continue
                        gain = 0.5 * (GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda) - parent)
                        if gain > best_gain:
                            best_gain = gain
                            best_feat = feat
                            best_thr = _midpoint(xl, xr)
            if best_feat < 0:
                continue
            _partition(X, samples, tmp, start, end, best_feat, best_thr, &nl)
            left = nodes.add(1)
            right = nodes.add(1)
            nodes.feature[node] = best_feat
            nodes.threshold[node] = best_thr
            nodes.left[node] = left
            nodes.right[node] = right
            stack.append((right, start + nl, end, depth + 1))
            stack.append((left, start, start + nl, depth + 1))
    finally:
        free(feats)
        free(pairs)
        free(tmp)
    return nodes.finish(1)


def apply_tree(const double[:, :] X, const int64_t[::1] feature,
               const double[::1] threshold, const int64_t[::1] left,
               const int64_t[::1] right):
    """Leaf index reached by every row of ``X``."""
    cdef Py_ssize_t n = X.shape[0], i
    cdef int64_t node
    out = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] leaves = out
    with nogil:
        for i in range(n):
            node = 0
            while left[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            leaves[i] = node
    return out
