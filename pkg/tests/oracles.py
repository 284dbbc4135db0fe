"""Slow, loop-based reference implementations shared by the unit and acceptance tests."""

import math


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _norm(a):
    return math.sqrt(_dot(a, a))


def _softmax(a):
    m = max(a)
    e = [math.exp(x - m) for x in a]
    s = sum(e)
    return [x / s for x in e]


def _cos(q, p):
    return _dot(q, p) / (_norm(q) * _norm(p))


def _centered(a):
    m = sum(a) / len(a)
    return [x - m for x in a]


SIMILARITY = {
    "cosine": _cos,
    "angular": lambda q, p: 1 - math.acos(max(-1.0, min(1.0, _cos(q, p)))) / math.pi,
    "dot": _dot,
    "euclidean": lambda q, p: -math.sqrt(sum((x - y) ** 2 for x, y in zip(q, p))),
    "l2": lambda q, p: -sum((x - y) ** 2 for x, y in zip(q, p)),
    "manhattan": lambda q, p: -sum(abs(x - y) for x, y in zip(q, p)),
    "chebyshev": lambda q, p: -max(abs(x - y) for x, y in zip(q, p)),
    "pearson": lambda q, p: _cos(_centered(q), _centered(p)),
    "dice": lambda q, p: 2 * _dot(q, p) / (_dot(q, q) + _dot(p, p)),
    "jaccard": lambda q, p: _dot(q, p) / (_dot(q, q) + _dot(p, p) - _dot(q, p)),
    "hamming": lambda q, p: -float(sum((x >= 0) != (y >= 0) for x, y in zip(q, p))),
    "kl": lambda q, p: -sum(a * math.log(a / b) for a, b in zip(_softmax(q), _softmax(p))),
    "bhattacharyya": lambda q, p: math.log(
        sum(math.sqrt(a * b) for a, b in zip(_softmax(q), _softmax(p)))),
}


def weighted_scores(confusion):
    """Support-weighted precision, recall and F1 from a list-of-lists confusion matrix.

    Rows are true classes and columns predictions. Classes with an undefined
    precision or recall (zero denominator) contribute zero. F1 is the harmonic
    mean of the two weighted averages.
    """
    c = len(confusion)
    total = sum(sum(row) for row in confusion)
    wp = wr = 0.0
    for i in range(c):
        tp = confusion[i][i]
        support = sum(confusion[i])
        predicted = sum(confusion[r][i] for r in range(c))
        p = tp / predicted if predicted else 0.0
        r = tp / support if support else 0.0
        w = support / total
        wp, wr = wp + w * p, wr + w * r
    wf = 2 * wp * wr / (wp + wr) if wp + wr else 0.0
    acc = sum(confusion[i][i] for i in range(c)) / total
    return acc, wp, wr, wf
