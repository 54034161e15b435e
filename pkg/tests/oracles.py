"""Brute-force references for count-window operators.

Windows are materialised by index arithmetic over the whole input instead of
being maintained incrementally: a window closes at event i when
i >= W - 1 and (i - W + 1) % S == 0, and it holds events i - W + 1 .. i.
"""
from statistics import fmean


def closing_indices(n, W, S):
    return [i for i in range(W - 1, n) if (i - (W - 1)) % S == 0]


def brute_windows(values, W, S):
    return [(i, values[i - W + 1:i + 1]) for i in closing_indices(len(values), W, S)]


def brute_aggregate(kind, values, W, S):
    out = []
    for _, win in brute_windows(values, W, S):
        if kind == "Max":
            out.append(max(win))
        elif kind == "Count":
            out.append(len(win))
        else:
            out.append(fmean(win))
    return out


def brute_partitioned(values, keys, W, S):
    """(key, mean) per closing window of each key's own subsequence, in input order."""
    per_key = {}
    for i, k in enumerate(keys):
        per_key.setdefault(k, []).append(i)
    events = []
    for k, idx in per_key.items():
        vals = [values[i] for i in idx]
        for j, win in brute_windows(vals, W, S):
            events.append((idx[j], k, fmean(win)))
    return [(k, m) for _, k, m in sorted(events)]


def brute_join(arrivals, W, S):
    """Key-equal pairs emitted by a two-sided count-window join.

    ``arrivals`` is a list of (port, key, ident) in arrival order and the
    result lists (left ident, right ident) pairs. Each side's window
    is the suffix ``side[start:]`` of its arrivals; a full side drops its
    oldest S before taking a new arrival; when both sides are full every
    left-major key-equal pair is emitted and both sides drop S.
    """
    sides = ([], [])
    start = [0, 0]
    out = []
    for port, key, ident in arrivals:
        if len(sides[port]) - start[port] == W:
            start[port] += S
        sides[port].append((key, ident))
        if all(len(sides[p]) - start[p] == W for p in (0, 1)):
            left = sides[0][start[0]:]
            right = sides[1][start[1]:]
            out.extend((a[1], b[1]) for a in left for b in right if a[0] == b[0])
            start[0] += S
            start[1] += S
    return out
