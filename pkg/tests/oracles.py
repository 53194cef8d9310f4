"""Independent brute-force oracles shared by the test suite.

Pure-Python re-derivations of the metric and loss definitions; kept free of
the library's own helpers so they can vouch for them.
"""

import math


def counts(probs, targets, threshold=0.5):
    n, c = len(probs), len(probs[0])
    m_c, m_p, m_g = [0] * c, [0] * c, [0] * c
    for i in range(n):
        for j in range(c):
            predicted = probs[i][j] > threshold
            if predicted:
                m_p[j] += 1
            if targets[i][j] == 1:
                m_g[j] += 1
                if predicted:
                    m_c[j] += 1
    return m_c, m_p, m_g


def prf1(m_c, m_p, m_g):
    c = len(m_c)
    c_p = 0.0
    for j in range(c):
        c_p += m_c[j] / m_p[j] if m_p[j] > 0 else 0.0
    c_p /= c
    c_r = 0.0
    for j in range(c):
        c_r += m_c[j] / m_g[j] if m_g[j] > 0 else 0.0
    c_r /= c
    sum_c, sum_p, sum_g = sum(m_c), sum(m_p), sum(m_g)
    o_p = sum_c / sum_p if sum_p > 0 else 0.0
    o_r = sum_c / sum_g if sum_g > 0 else 0.0

    def f1(p, r):
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    return c_p, c_r, f1(c_p, c_r), o_p, o_r, f1(o_p, o_r)


def ap_single(scores, positives):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if positives[idx]:
            hits += 1
            total += hits / rank
    return total / hits if hits else 0.0


def average_precision(scores, targets):
    n, c = len(scores), len(scores[0])
    per_class = []
    for j in range(c):
        col_pos = [targets[i][j] == 1 for i in range(n)]
        if any(col_pos):
            per_class.append(ap_single([scores[i][j] for i in range(n)], col_pos))
    c_ap = sum(per_class) / len(per_class)
    flat_scores = [scores[i][j] for i in range(n) for j in range(c)]
    flat_pos = [targets[i][j] == 1 for i in range(n) for j in range(c)]
    return c_ap, ap_single(flat_scores, flat_pos)


def full_bce(logits, targets):
    """Mean-over-samples two-term BCE from raw logits, scalar arithmetic only."""
    n = len(logits)
    total = 0.0
    for i in range(n):
        for z, y in zip(logits[i], targets[i]):
            p = 1.0 / (1.0 + math.exp(-z))
            total -= y * math.log(p) + (1 - y) * math.log(1.0 - p)
    return total / n
