"""Pure-Python kernels, used when the compiled extension is unavailable.

Keep these in lockstep with ``_ckernels.pyx``: same update order, same
floating-point operations.
"""
import math

INF = math.inf


def _eikonal_update(a, b, c, h):
    if a > b:
        a, b = b, a
    if b > c:
        b, c = c, b
    if a > b:
        a, b = b, a
    if a == INF:
        return INF
    u = a + h
    if u <= b:
        return u
    u = 0.5 * (a + b + math.sqrt(2.0 * h * h - (a - b) * (a - b)))
    if u <= c:
        return u
    s = a + b + c
    ss = a * a + b * b + c * c
    return (s + math.sqrt(s * s - 3.0 * (ss - h * h))) / 3.0


def fast_sweep(phi, frozen, h, max_iter, tol):
    n0, n1, n2 = phi.shape
    # nested lists are several times faster than ndarray indexing here
    grid = phi.tolist()
    fixed = frozen.astype(bool).tolist()
    iters = 0
    for it in range(max_iter):
        change = 0.0
        for s in range(8):
            if (s & 1 and n0 == 1) or (s & 2 and n1 == 1) or (s & 4 and n2 == 1):
                continue
            irange = range(n0 - 1, -1, -1) if s & 1 else range(n0)
            jrange = range(n1 - 1, -1, -1) if s & 2 else range(n1)
            krange = range(n2 - 1, -1, -1) if s & 4 else range(n2)
            for i in irange:
                plane = grid[i]
                prev = grid[i - 1] if i > 0 else None
                nxt = grid[i + 1] if i < n0 - 1 else None
                fplane = fixed[i]
                for j in jrange:
                    row = plane[j]
                    frow = fplane[j]
                    for k in krange:
                        if frow[k]:
                            continue
                        lo = prev[j][k] if prev is not None else INF
                        hi = nxt[j][k] if nxt is not None else INF
                        a = lo if lo < hi else hi
                        lo = plane[j - 1][k] if j > 0 else INF
                        hi = plane[j + 1][k] if j < n1 - 1 else INF
                        b = lo if lo < hi else hi
                        lo = row[k - 1] if k > 0 else INF
                        hi = row[k + 1] if k < n2 - 1 else INF
                        c = lo if lo < hi else hi
                        new = _eikonal_update(a, b, c, h)
                        old = row[k]
                        if new < old:
                            row[k] = new
                            diff = INF if old == INF else old - new
                            if diff > change:
                                change = diff
        iters = it + 1
        if change < tol:
            break
    phi[...] = grid
    return iters


def greedy_fill(order, cost, capacity, xi):
    marginal = -1
    for pos in range(len(order)):
        idx = order[pos]
        c = cost[idx]
        if c <= capacity:
            xi[idx] = 1.0
            capacity = capacity - c
        else:
            xi[idx] = capacity / c
            capacity = 0.0
            marginal = pos
            break
    return marginal, float(capacity)
