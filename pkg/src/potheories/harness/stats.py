"""Goodness-of-fit helpers: KS, chi-square (one- and two-sample), TV distance, cell CDFs."""
from __future__ import annotations

import numpy as np
from scipy import stats

from ..errors import DegenerateInput

MIN_EXPECTED = 5.0


def ks_test(samples, cdf):
    """One-sample Kolmogorov-Smirnov test, asymptotic/exact p-value as chosen by scipy."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DegenerateInput("no samples")
    res = stats.kstest(x, cdf)
    return float(res.statistic), float(res.pvalue)


def merge_bins(counts, expected, min_expected=MIN_EXPECTED):
    """Merge neighbouring bins (in the given order) until every expected count >= min_expected."""
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(expected, dtype=float)
    oc, ec = [], []
    c_acc = e_acc = 0.0
    for c, e in zip(counts, expected):
        c_acc += c
        e_acc += e
        if e_acc >= min_expected:
            oc.append(c_acc)
            ec.append(e_acc)
            c_acc = e_acc = 0.0
    if e_acc > 0 or c_acc > 0:
        if oc:
            oc[-1] += c_acc
            ec[-1] += e_acc
        else:
            oc.append(c_acc)
            ec.append(e_acc)
    return np.array(oc), np.array(ec)


def chi2_test(counts, expected, ddof=0):
    """Pearson chi-square of observed counts against expected counts (same total)."""
    counts = np.asarray(counts, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if counts.size == 0 or counts.shape != expected.shape or expected.sum() <= 0:
        raise DegenerateInput("empty or mismatched count arrays")
    expected = expected * counts.sum() / expected.sum()
    if np.any((expected == 0) & (counts > 0)):
        return float("inf"), 0.0
    keep = expected > 0
    oc, ec = merge_bins(counts[keep], expected[keep])
    if len(oc) < 2:
        return 0.0, 1.0
    res = stats.chisquare(oc, ec, ddof=ddof)
    return float(res.statistic), float(res.pvalue)


def chi2_two_sample(counts_a, counts_b):
    """Homogeneity chi-square for two count vectors over the same categories."""
    a = np.asarray(counts_a, dtype=float)
    b = np.asarray(counts_b, dtype=float)
    if a.shape != b.shape or a.size == 0 or a.sum() == 0 or b.sum() == 0:
        raise DegenerateInput("two-sample test needs matching, non-empty count vectors")
    keep = (a + b) > 0
    a, b = a[keep], b[keep]
    pooled = (a + b) / (a.sum() + b.sum())
    exp_min = np.minimum(pooled * a.sum(), pooled * b.sum())
    order = np.argsort(-exp_min, kind="stable")
    a, b, exp_min = a[order], b[order], exp_min[order]
    ga, gb = [], []
    ca = cb = ce = 0.0
    for x, y, e in zip(a, b, exp_min):
        ca, cb, ce = ca + x, cb + y, ce + e
        if ce >= MIN_EXPECTED:
            ga.append(ca)
            gb.append(cb)
            ca = cb = ce = 0.0
    if ca or cb:
        if ga:
            ga[-1] += ca
            gb[-1] += cb
        else:
            ga.append(ca)
            gb.append(cb)
    if len(ga) < 2:
        return 0.0, 1.0
    res = stats.chi2_contingency(np.array([ga, gb]), correction=False)
    return float(res.statistic), float(res.pvalue)


def tv_distance(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.size == 0 or p.shape != q.shape:
        raise DegenerateInput("TV distance needs two non-empty vectors of equal shape")
    return float(0.5 * np.sum(np.abs(p / p.sum() - q / q.sum())))


def fisher_combine(pvalues) -> float:
    pv = np.asarray(pvalues, dtype=float)
    if pv.size == 0:
        raise DegenerateInput("no p-values to combine")
    return float(stats.combine_pvalues(np.clip(pv, 1e-300, 1.0), method="fisher").pvalue)


def cell_cdf(prob, spacing):
    """CDF on [0, L a) of the density spreading mass prob[j] uniformly over the cell
    [(j - 1/2) a, (j + 1/2) a), with cell 0 wrapped across the box edge."""
    prob = np.asarray(prob, dtype=float)
    prob = prob / prob.sum()
    n = len(prob)
    breaks = np.concatenate([[0.0], (np.arange(n) + 0.5) * spacing, [n * spacing]])
    mass = np.concatenate([[prob[0] / 2], prob[1:], [prob[0] / 2]])
    cum = np.concatenate([[0.0], np.cumsum(mass)])

    def cdf(y):
        return np.interp(np.mod(np.asarray(y, dtype=float), n * spacing), breaks, cum)

    return cdf


def label_counts(labels, categories):
    labels = list(labels)
    return np.array([labels.count(c) for c in categories], dtype=float)
