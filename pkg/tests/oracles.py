"""Independent brute-force references: explicit enumeration of renewal paths."""
import itertools
import math


def enumerate_paths(M, N):
    """Every renewal configuration on (M, N] that contains N, as a tuple of points."""
    inner = range(M + 1, N)
    for r in range(len(inner) + 1):
        for sub in itertools.combinations(inner, r):
            yield sub + (N,)


def brute_log_Z(K, omega, beta, h, log_M, M, N):
    """log Z_{M,N} by summing path weights; omega[n-1] is the charge at site n."""
    terms = []
    for pts in enumerate_paths(M, N):
        w, prev = 0.0, M
        for p in pts:
            w += math.log(K[p - prev]) + beta * omega[p - 1] + h - log_M
            prev = p
        terms.append(w)
    mx = max(terms)
    return mx + math.log(sum(math.exp(t - mx) for t in terms))


def visited_blocks(pts, k):
    return frozenset((p - 1) // k + 1 for p in pts)


def brute_hatZ(K, omega, beta, h, log_M, k, m):
    """Map from visited-block set I to Zhat^I for N = k m."""
    out = {}
    N = k * m
    for pts in enumerate_paths(0, N):
        w, prev = 0.0, 0
        for p in pts:
            w += math.log(K[p - prev]) + beta * omega[p - 1] + h - log_M
            prev = p
        I = tuple(sorted(visited_blocks(pts, k)))
        out[I] = out.get(I, 0.0) + math.exp(w)
    return out
