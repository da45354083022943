"""Independent reference implementations used only by the tests.

Everything here re-derives results from the documented rules with
deliberately different code paths than the package: pure-Python
distance loops, union-find clustering instead of BFS expansion, and
high-precision mpmath arithmetic for the closed-form bounds.  Nothing
imports from the modules under test, so agreement is evidence and not
tautology.
"""

from __future__ import annotations

import math

import mpmath as mp

OUTLIER = -1
TIE_TOL = 1e-12


# ------------------------------------------------------------ geometry


def dot(a, b) -> float:
    total = 0.0
    for x, y in zip(a, b):
        total += float(x) * float(y)
    return total


def cosine_dist(a, b) -> float:
    d = 1.0 - dot(a, b)
    if d < 0.0:
        return 0.0
    if d > 2.0:
        return 2.0
    return d


# ------------------------------------------------------------ dbscan


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def reference_dbscan(embeddings, eps: float, min_pts: int) -> list[int]:
    """Brute-force O(K^2) DBSCAN with the deterministic numbering rule.

    Core components are found with union-find over all core-core pairs
    within eps; components are numbered by their smallest core point;
    border points join the lowest-numbered cluster among the core
    points that reach them.
    """
    n = len(embeddings)
    within = [
        [cosine_dist(embeddings[i], embeddings[j]) <= eps for j in range(n)] for i in range(n)
    ]
    core = [sum(within[i]) >= min_pts for i in range(n)]

    uf = _UnionFind(n)
    for i in range(n):
        for j in range(i + 1, n):
            if core[i] and core[j] and within[i][j]:
                uf.union(i, j)

    roots = sorted({uf.find(i) for i in range(n) if core[i]})
    cluster_of_root = {root: num for num, root in enumerate(roots)}
    labels = [OUTLIER] * n
    for i in range(n):
        if core[i]:
            labels[i] = cluster_of_root[uf.find(i)]
    for i in range(n):
        if core[i]:
            continue
        claims = [labels[j] for j in range(n) if core[j] and within[i][j]]
        if claims:
            labels[i] = min(claims)
    return labels


# ------------------------------------------------------------ consensus


def _avg_pairwise(members, embeddings) -> float:
    if len(members) < 2:
        return 0.0
    total = 0.0
    count = 0
    for a in range(len(members)):
        for b in range(a + 1, len(members)):
            total += cosine_dist(embeddings[members[a]], embeddings[members[b]])
            count += 1
    return total / count


def _best_by_distance(members, embeddings, texts, score_fn):
    """Scan members in order: score (tol ties), byte length, then index."""
    best = None
    best_score = 0.0
    best_len = 0
    for m in members:
        score = score_fn(m)
        blen = len(texts[m].encode("utf-8"))
        if best is None or score < best_score - TIE_TOL:
            best, best_score, best_len = m, score, blen
        elif abs(score - best_score) <= TIE_TOL and blen < best_len:
            best, best_score, best_len = m, score, blen
    return best


def reference_consensus(clients, texts, embeddings, eps: float, min_pts: int):
    """Full consensus pipeline, re-derived: returns a result dict.

    clients are the ids parallel to texts/embeddings; output members
    and representative are client ids.
    """
    n = len(embeddings)
    labels = reference_dbscan(embeddings, eps, min_pts)
    num_clusters = len({lab for lab in labels if lab != OUTLIER})
    fallback = num_clusters == 0

    if fallback:
        members = list(range(n))
    else:
        members = None
        best_size = -1
        best_spread = 0.0
        for cluster in range(num_clusters):
            cluster_members = [i for i in range(n) if labels[i] == cluster]
            spread = _avg_pairwise(cluster_members, embeddings)
            if members is None or len(cluster_members) > best_size:
                members, best_size, best_spread = cluster_members, len(cluster_members), spread
            elif len(cluster_members) == best_size:
                if spread < best_spread - TIE_TOL:
                    members, best_spread = cluster_members, spread
                elif abs(spread - best_spread) <= TIE_TOL and cluster_members[0] < members[0]:
                    members, best_spread = cluster_members, spread

    dim = len(embeddings[0])
    sums = [0.0] * dim
    for m in members:
        for c in range(dim):
            sums[c] = sums[c] + float(embeddings[m][c])
    norm = math.sqrt(sum(s * s for s in sums))
    if norm < 1e-12:
        rep = _best_by_distance(
            members,
            embeddings,
            texts,
            lambda m: (
                sum(cosine_dist(embeddings[m], embeddings[o]) for o in members if o != m)
                / (len(members) - 1)
                if len(members) > 1
                else 0.0
            ),
        )
    else:
        centroid = [s / norm for s in sums]
        rep = _best_by_distance(
            members, embeddings, texts, lambda m: cosine_dist(embeddings[m], centroid)
        )

    return {
        "labels": labels,
        "members": [clients[m] for m in members],
        "representative": clients[rep],
        "pseudo_label": texts[rep],
        "fallback": fallback,
    }


def reference_global_medoid(clients, texts, embeddings):
    """Representative minimizing mean distance to every other response."""
    n = len(embeddings)
    members = list(range(n))
    rep = _best_by_distance(
        members,
        embeddings,
        texts,
        lambda m: (
            sum(cosine_dist(embeddings[m], embeddings[o]) for o in members if o != m) / (n - 1)
            if n > 1
            else 0.0
        ),
    )
    return clients[rep], texts[rep]


# ------------------------------------------------------------ bounds


def mp_delta(grad_bound, kl_shift, label_noise, public_batch, param_dim, total_steps, confidence):
    """delta bound at 60 decimal digits."""
    with mp.workdps(60):
        g = mp.mpf(grad_bound)
        shift = g * mp.sqrt(2 * mp.mpf(kl_shift))
        noise = 2 * g * mp.mpf(label_noise)
        log_term = param_dim * mp.log(5) + mp.log(2 * mp.mpf(total_steps) / mp.mpf(confidence))
        conc = 4 * g * mp.sqrt((mp.mpf(2) / public_batch) * log_term)
        return shift + noise + conc


def mp_stationarity(
    grad_bound,
    kl_shift,
    label_noise,
    public_batch,
    param_dim,
    total_steps,
    confidence,
    smoothness,
    step_size,
    noise_var,
    heterogeneity,
    init_gap,
):
    """Stationarity bound total at 60 decimal digits."""
    with mp.workdps(60):
        delta = mp_delta(
            grad_bound, kl_shift, label_noise, public_batch, param_dim, total_steps, confidence
        )
        descent = 4 * mp.mpf(init_gap) / (mp.mpf(step_size) * total_steps)
        noise = 2 * mp.mpf(smoothness) * mp.mpf(step_size) * (
            mp.mpf(noise_var) + mp.mpf(heterogeneity) / 4
        )
        bias = mp.mpf(3) / 4 * delta * delta
        return descent + noise + bias
