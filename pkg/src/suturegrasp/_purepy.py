"""Pure-Python/numpy implementations of the hot kernels.

These mirror ``_speedups.pyx`` operation for operation so both backends
return bit-identical results; keep the two files in lock-step.
"""
import heapq
import math

import numpy as np

BACKEND = "python"


def zhang_suen(img, min_neighbours=2):
    """Zhang-Suen two-subiteration thinning of a binary image.

    ``min_neighbours=3`` is the Lu-Wang correction that keeps 2-pixel-thick
    diagonal strokes from being erased. Returns a new uint8 array (0/1).
    """
    a = np.pad((np.asarray(img) != 0).astype(np.uint8), 1)
    c = a[1:-1, 1:-1]
    while True:
        changed = False
        for step in (0, 1):
            p2 = a[:-2, 1:-1]
            p3 = a[:-2, 2:]
            p4 = a[1:-1, 2:]
            p5 = a[2:, 2:]
            p6 = a[2:, 1:-1]
            p7 = a[2:, :-2]
            p8 = a[1:-1, :-2]
            p9 = a[:-2, :-2]
            ring = (p2, p3, p4, p5, p6, p7, p8, p9, p2)
            b = p2.astype(np.int8) + p3 + p4 + p5 + p6 + p7 + p8 + p9
            trans = np.zeros(c.shape, dtype=np.int8)
            for x, y in zip(ring[:-1], ring[1:]):
                trans += (x == 0) & (y == 1)
            if step == 0:
                m1 = p2 & p4 & p6
                m2 = p4 & p6 & p8
            else:
                m1 = p2 & p4 & p8
                m2 = p2 & p6 & p8
            rm = (c == 1) & (b >= min_neighbours) & (b <= 6) & (trans == 1) & (m1 == 0) & (m2 == 0)
            if rm.any():
                c[rm] = 0
                changed = True
        if not changed:
            break
    return c.copy()


def out_of_zone(zone, u0, v0, u1, v1):
    """Count Bresenham pixels strictly between (u0, v0) and (u1, v1) outside ``zone``."""
    if u0 == u1 and v0 == v1:
        return 0
    h, w = zone.shape
    du = abs(u1 - u0)
    dv = -abs(v1 - v0)
    su = 1 if u0 < u1 else -1
    sv = 1 if v0 < v1 else -1
    err = du + dv
    u, v = u0, v0
    count = 0
    while True:
        e2 = 2 * err
        if e2 >= dv:
            err += dv
            u += su
        if e2 <= du:
            err += du
            v += sv
        if u == u1 and v == v1:
            return count
        if u < 0 or v < 0 or u >= w or v >= h or not zone[v, u]:
            count += 1


def trace(label, us, vs, zone, tip, radius, mu, e1, e2, e3, tau_o, tau_v):
    """Greedy minimum-cost walk over skeleton pixels starting at index ``tip``.

    ``label[v, u]`` holds the skeleton index of pixel (u, v) or -1.
    Returns the accepted indices in order as an int64 array.
    """
    h, w = label.shape
    n = len(us)
    detected = np.zeros(n, dtype=bool)
    seq = [tip]
    detected[tip] = True
    r = int(math.floor(radius))
    r2 = radius * radius
    while True:
        cur = seq[-1]
        cu = int(us[cur])
        cv = int(vs[cur])
        has_prev = len(seq) > 1
        if has_prev:
            prev = seq[-2]
            hu = cu - int(us[prev])
            hv = cv - int(vs[prev])
            hn = math.sqrt(hu * hu + hv * hv)
        best = math.inf
        best_j = -1
        best_o = 0
        best_delta = 0.0
        for dv in range(-r, r + 1):
            v = cv + dv
            if v < 0 or v >= h:
                continue
            for du in range(-r, r + 1):
                dd = du * du + dv * dv
                if dd == 0 or dd > r2:
                    continue
                u = cu + du
                if u < 0 or u >= w:
                    continue
                j = label[v, u]
                if j < 0 or detected[j] or not zone[v, u]:
                    continue
                o = out_of_zone(zone, cu, cv, u, v)
                d = math.sqrt(dd)
                if has_prev:
                    c = (du * hu + dv * hv) / (d * hn)
                    if c > 1.0:
                        c = 1.0
                    elif c < -1.0:
                        c = -1.0
                    delta = math.acos(c)
                else:
                    delta = 0.0
                cost = math.log(e1 * o + mu) + e2 * d * math.exp(e3 * math.sin(delta / 2.0))
                if cost < best:
                    best = cost
                    best_j = j
                    best_o = o
                    best_delta = delta
        if best_j < 0:
            break
        if not (best_o < tau_o and best_delta < tau_v):
            break
        detected[best_j] = True
        seq.append(int(best_j))
    return np.asarray(seq, dtype=np.int64)


def dijkstra(g, s, e):
    """Binary-heap Dijkstra over a dense weight matrix (``inf`` = no edge).

    Returns ``(path, length)``; ``([], inf)`` when ``e`` is unreachable.
    """
    n = g.shape[0]
    dist = [math.inf] * n
    pred = [-1] * n
    done = [False] * n
    dist[s] = 0.0
    heap = [(0.0, s)]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == e:
            break
        row = g[u]
        for v in range(n):
            if done[v]:
                continue
            wt = float(row[v])
            if wt == math.inf:
                continue
            nd = d + wt
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    if not done[e]:
        return [], math.inf
    path = [e]
    while path[-1] != s:
        path.append(pred[path[-1]])
    path.reverse()
    return path, dist[e]


_SQRT2 = math.sqrt(2.0)


def _heading_origin(us, vs, seq, min_dist):
    """Most recent accepted pixel at least ``min_dist`` from the last one."""
    cu, cv = us[seq[-1]], vs[seq[-1]]
    m2 = min_dist * min_dist
    for k in range(len(seq) - 2, -1, -1):
        p = seq[k]
        du = cu - us[p]
        dv = cv - vs[p]
        if du * du + dv * dv >= m2:
            return p
    return seq[0] if len(seq) > 1 else -1


def _rim_path(label, detected, cu, cv, tu, tv, r, r2):
    """Shortest 8-connected path of undetected skeleton pixels inside the RoI
    from (cu, cv) to (tu, tv); returns the labels after the start, or []."""
    h, w = label.shape
    size = 2 * r + 1
    parent = [-2] * (size * size)
    start = r * size + r
    parent[start] = -1
    queue = [start]
    head = 0
    goal = (tv - cv + r) * size + (tu - cu + r)
    while head < len(queue):
        cell = queue[head]
        head += 1
        if cell == goal:
            break
        y, x = divmod(cell, size)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                ny = y + dy
                nx = x + dx
                if ny < 0 or nx < 0 or ny >= size or nx >= size:
                    continue
                nc = ny * size + nx
                if parent[nc] != -2:
                    continue
                ry = ny - r
                rx = nx - r
                if rx * rx + ry * ry > r2:
                    continue
                v = cv + ry
                u = cu + rx
                if v < 0 or u < 0 or v >= h or u >= w:
                    continue
                j = label[v, u]
                if j < 0 or detected[j]:
                    continue
                parent[nc] = cell
                queue.append(nc)
    if parent[goal] == -2:
        return []
    out = []
    cell = goal
    while cell != start:
        y, x = divmod(cell, size)
        out.append(int(label[cv + y - r, cu + x - r]))
        cell = parent[cell]
    out.reverse()
    return out


def _route_turn(us, vs, path, hu, hv, hn, min_dist):
    """Sharpest turn the filled path takes: the largest angle between the
    heading and (end - p) over path pixels p at least ``min_dist`` short of
    the end."""
    au, av = us[path[-1]], vs[path[-1]]
    m2 = min_dist * min_dist
    worst = 0.0
    for p in path[:-1]:
        du = au - us[p]
        dv = av - vs[p]
        dd = du * du + dv * dv
        if dd < m2:
            continue
        c = (du * hu + dv * hv) / (math.sqrt(dd) * hn)
        if c > 1.0:
            c = 1.0
        elif c < -1.0:
            c = -1.0
        worst = max(worst, math.acos(c))
    return worst


def trace_rim(label, us, vs, zone, tip, radius, mu, e1, e2, e3, tau_o, tau_v):
    """Search whose candidates sit on the RoI rim.

    Active pixels farther than ``radius - sqrt(2)`` are scored as if they lay
    exactly on the rim, so distance no longer separates them and the
    turning-angle and out-of-zone terms decide. The skeleton path to the
    winner is accepted pixel by pixel. The turning limit applies both to
    the chord and to the path itself, so a path that doubles back through a
    curve end is refused even when its chord looks straight enough. When no
    admissible rim candidate exists the step falls back to the plain
    pixel-level rule.
    """
    h, w = label.shape
    n = len(us)
    us = [int(x) for x in us]
    vs = [int(x) for x in vs]
    detected = np.zeros(n, dtype=bool)
    seq = [tip]
    detected[tip] = True
    r = int(math.floor(radius))
    r2 = radius * radius
    inner = radius - _SQRT2
    inner2 = inner * inner if inner > 0 else 0.0
    back = radius
    half = radius / 2.0
    while True:
        cur = seq[-1]
        cu = us[cur]
        cv = vs[cur]
        origin = _heading_origin(us, vs, seq, back)
        has_h = origin >= 0
        if has_h:
            hu = cu - us[origin]
            hv = cv - vs[origin]
            hn = math.sqrt(hu * hu + hv * hv)
        for rim in (True, False):
            best = math.inf
            best_j = -1
            best_o = 0
            best_delta = 0.0
            for dv in range(-r, r + 1):
                v = cv + dv
                if v < 0 or v >= h:
                    continue
                for du in range(-r, r + 1):
                    dd = du * du + dv * dv
                    if dd == 0 or dd > r2 or (rim and dd <= inner2):
                        continue
                    u = cu + du
                    if u < 0 or u >= w:
                        continue
                    j = label[v, u]
                    if j < 0 or detected[j] or not zone[v, u]:
                        continue
                    o = out_of_zone(zone, cu, cv, u, v)
                    d = math.sqrt(dd)
                    if has_h:
                        c = (du * hu + dv * hv) / (d * hn)
                        if c > 1.0:
                            c = 1.0
                        elif c < -1.0:
                            c = -1.0
                        delta = math.acos(c)
                    else:
                        delta = 0.0
                    dist = radius if rim else d
                    cost = math.log(e1 * o + mu) + e2 * dist * math.exp(e3 * math.sin(delta / 2.0))
                    if cost < best:
                        best = cost
                        best_j = j
                        best_o = o
                        best_delta = delta
            if best_j >= 0 and best_o < tau_o and best_delta < tau_v:
                if not rim:
                    path = [best_j]
                    break
                path = _rim_path(label, detected, cu, cv, us[best_j], vs[best_j], r, r2)
                if not path:
                    path = [best_j]
                if not has_h or _route_turn(us, vs, path, hu, hv, hn, half) < tau_v:
                    break
            best_j = -1
        if best_j < 0:
            break
        for j in path:
            detected[j] = True
            seq.append(int(j))
    return np.asarray(seq, dtype=np.int64)
