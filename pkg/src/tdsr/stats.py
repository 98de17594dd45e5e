"""Kruskal-Wallis H test, Dunn post hoc z-tests and Benjamini-Hochberg adjustment."""
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm

from .errors import ContractError

STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))
ALPHA = 0.05


def _groups(groups):
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(groups) < 2:
        raise ContractError("need at least two groups")
    if any(len(g) == 0 for g in groups):
        raise ContractError("empty group")
    return groups


def average_ranks(values):
    """1-based ranks with ties sharing their mean rank."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    sorted_v = values[order]
    ranks = np.empty(len(values))
    start = 0
    while start < len(values):
        stop = start
        while stop + 1 < len(values) and sorted_v[stop + 1] == sorted_v[start]:
            stop += 1
        ranks[order[start:stop + 1]] = (start + stop) / 2.0 + 1.0
        start = stop + 1
    return ranks


def tie_sum(values):
    """Sum of t^3 - t over tie groups."""
    _, counts = np.unique(np.asarray(values, dtype=np.float64), return_counts=True)
    return float(np.sum(counts.astype(np.float64) ** 3 - counts))


@dataclass
class KruskalResult:
    statistic: float
    pvalue: float


def kruskal_wallis(groups):
    """Tie-corrected H with a chi-squared(k-1) p-value.

    When every observation is tied the statistic is undefined; H=0 and p=1.
    """
    groups = _groups(groups)
    pooled = np.concatenate(groups)
    n = len(pooled)
    ranks = average_ranks(pooled)
    h, start = 0.0, 0
    for g in groups:
        r = ranks[start:start + len(g)]
        h += r.sum() ** 2 / len(g)
        start += len(g)
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    correction = 1.0 - tie_sum(pooled) / (n ** 3 - n)
    if correction <= 0:
        return KruskalResult(0.0, 1.0)
    h /= correction
    return KruskalResult(float(h), float(chi2.sf(h, len(groups) - 1)))


def bh_adjust(pvalues):
    """Benjamini-Hochberg step-up adjusted p-values, in the input order."""
    p = np.asarray(pvalues, dtype=np.float64).ravel()
    m = len(p)
    if m == 0:
        return p
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adjusted, 1.0)
    return out


def stars(p):
    for level, mark in STAR_LEVELS:
        if p < level:
            return mark
    return "NS"


@dataclass
class DunnResult:
    z: np.ndarray          # (k, k), z[i, j] > 0 when group i ranks higher than j
    p_raw: np.ndarray      # (k, k) two-sided
    p_adj: np.ndarray      # (k, k) BH-adjusted over the k(k-1)/2 pairs
    mean_ranks: np.ndarray

    def stars(self):
        k = len(self.mean_ranks)
        return [["" if i == j else stars(self.p_adj[i, j]) for j in range(k)] for i in range(k)]


def dunn_bh(groups):
    """Pairwise Dunn z-tests on pooled ranks with tie correction, BH-adjusted."""
    groups = _groups(groups)
    sizes = np.array([len(g) for g in groups], dtype=np.float64)
    pooled = np.concatenate(groups)
    n = len(pooled)
    ranks = average_ranks(pooled)
    bounds = np.concatenate([[0], np.cumsum(sizes).astype(int)])
    mean_ranks = np.array([ranks[bounds[i]:bounds[i + 1]].mean() for i in range(len(groups))])
    k = len(groups)
    sigma2 = n * (n + 1) / 12.0 - tie_sum(pooled) / (12.0 * (n - 1)) if n > 1 else 0.0
    z = np.zeros((k, k))
    p_raw = np.ones((k, k))
    iu = np.triu_indices(k, 1)
    for i, j in zip(*iu):
        se = np.sqrt(sigma2 * (1 / sizes[i] + 1 / sizes[j]))
        diff = mean_ranks[i] - mean_ranks[j]
        z[i, j] = diff / se if se > 0 else 0.0
        z[j, i] = -z[i, j]
        p_raw[i, j] = p_raw[j, i] = 2.0 * norm.sf(abs(z[i, j]))
    p_adj = np.ones((k, k))
    adj = bh_adjust(p_raw[iu])
    p_adj[iu] = adj
    p_adj[(iu[1], iu[0])] = adj
    return DunnResult(z, p_raw, p_adj, mean_ranks)


@dataclass
class SignificanceMatrix:
    labels: list
    cells: list            # cells[i][j] in {"", "NS", "+*", "-**", ...}
    outperformed: list     # Σ column: how many models row i significantly beats
    kruskal: KruskalResult

    def to_rows(self):
        return [[lab, *row, n] for lab, row, n in zip(self.labels, self.cells, self.outperformed)]


def significance_matrix(labels, groups, higher_is_better=True, alpha=ALPHA):
    """Signed star matrix: '+' when row beats column, '-' when it is beaten.

    Post hoc tests are only consulted when the omnibus H test rejects at ``alpha``.
    """
    kw = kruskal_wallis(groups)
    k = len(groups)
    cells = [["" for _ in range(k)] for _ in range(k)]
    wins = [0] * k
    dunn = dunn_bh(groups) if kw.pvalue < alpha else None
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if dunn is None or dunn.p_adj[i, j] >= alpha:
                cells[i][j] = "NS"
                continue
            better = (dunn.z[i, j] > 0) == higher_is_better
            cells[i][j] = ("+" if better else "-") + stars(dunn.p_adj[i, j])
            wins[i] += better
    return SignificanceMatrix(list(labels), cells, wins, kw)
