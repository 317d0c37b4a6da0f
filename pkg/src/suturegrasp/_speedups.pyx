# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; semantics identical to ``_purepy``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, exp, sin, acos, floor, INFINITY
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"


def zhang_suen(img, int min_neighbours=2):
    cdef cnp.uint8_t[:, ::1] a = np.pad((np.asarray(img) != 0).astype(np.uint8), 1)
    cdef Py_ssize_t h = a.shape[0] - 2, w = a.shape[1] - 2
    cdef cnp.uint8_t[:, ::1] rm = np.zeros((h + 2, w + 2), dtype=np.uint8)
    cdef Py_ssize_t i, j
    cdef int step, b, t, m1, m2
    cdef int p2, p3, p4, p5, p6, p7, p8, p9
    cdef bint changed, any_rm
    while True:
        changed = False
        for step in range(2):
            any_rm = False
            for i in range(1, h + 1):
                for j in range(1, w + 1):
                    if a[i, j] == 0:
                        continue
                    p2 = a[i - 1, j]
                    p3 = a[i - 1, j + 1]
                    p4 = a[i, j + 1]
                    p5 = a[i + 1, j + 1]
                    p6 = a[i + 1, j]
                    p7 = a[i + 1, j - 1]
                    p8 = a[i, j - 1]
                    p9 = a[i - 1, j - 1]
                    b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9
                    if b < min_neighbours or b > 6:
                        continue
                    t = ((p2 == 0 and p3 == 1) + (p3 == 0 and p4 == 1)
                         + (p4 == 0 and p5 == 1) + (p5 == 0 and p6 == 1)
                         + (p6 == 0 and p7 == 1) + (p7 == 0 and p8 == 1)
                         + (p8 == 0 and p9 == 1) + (p9 == 0 and p2 == 1))
                    if t != 1:
                        continue
                    if step == 0:
                        m1 = p2 & p4 & p6
                        m2 = p4 & p6 & p8
                    else:
                        m1 = p2 & p4 & p8
                        m2 = p2 & p6 & p8
                    if m1 == 0 and m2 == 0:
                        rm[i, j] = 1
                        any_rm = True
            if any_rm:
                changed = True
                for i in range(1, h + 1):
                    for j in range(1, w + 1):
                        if rm[i, j]:
                            a[i, j] = 0
                            rm[i, j] = 0
        if not changed:
            break
    return np.asarray(a)[1:-1, 1:-1].copy()


cdef inline int _out_of_zone(const cnp.uint8_t[:, ::1] zone, int u0, int v0,
                             int u1, int v1) nogil:
    cdef int h = zone.shape[0], w = zone.shape[1]
    cdef int du = u1 - u0 if u1 > u0 else u0 - u1
    cdef int dv = -(v1 - v0 if v1 > v0 else v0 - v1)
    cdef int su = 1 if u0 < u1 else -1
    cdef int sv = 1 if v0 < v1 else -1
    cdef int err = du + dv, e2
    cdef int u = u0, v = v0, count = 0
    if u0 == u1 and v0 == v1:
        return 0
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
        if u < 0 or v < 0 or u >= w or v >= h or zone[v, u] == 0:
            count += 1


def out_of_zone(zone, int u0, int v0, int u1, int v1):
    cdef const cnp.uint8_t[:, ::1] z = np.ascontiguousarray(zone, dtype=np.uint8)
    return _out_of_zone(z, u0, v0, u1, v1)


def trace(label, us, vs, zone, Py_ssize_t tip, double radius, double mu,
          double e1, double e2, double e3, double tau_o, double tau_v):
    cdef const cnp.int32_t[:, ::1] lab = np.ascontiguousarray(label, dtype=np.int32)
    cdef const cnp.int64_t[::1] pu = np.ascontiguousarray(us, dtype=np.int64)
    cdef const cnp.int64_t[::1] pv = np.ascontiguousarray(vs, dtype=np.int64)
    cdef const cnp.uint8_t[:, ::1] z = np.ascontiguousarray(zone, dtype=np.uint8)
    cdef Py_ssize_t n = pu.shape[0]
    cdef int h = lab.shape[0], w = lab.shape[1]
    cdef cnp.uint8_t[::1] detected = np.zeros(n, dtype=np.uint8)
    cdef cnp.int64_t[::1] seq = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t length = 1, cur, prev, best_j
    cdef int r = <int>floor(radius)
    cdef double r2 = radius * radius
    cdef int cu, cv, hu = 0, hv = 0, du, dv, dd, u, v, o, best_o
    cdef double hn = 0.0, best, best_delta, d, c, delta, cost
    cdef bint has_prev
    cdef int j
    seq[0] = tip
    detected[tip] = 1
    with nogil:
        while True:
            cur = seq[length - 1]
            cu = <int>pu[cur]
            cv = <int>pv[cur]
            has_prev = length > 1
            if has_prev:
                prev = seq[length - 2]
                hu = cu - <int>pu[prev]
                hv = cv - <int>pv[prev]
                hn = sqrt(<double>(hu * hu + hv * hv))
            best = INFINITY
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
                    j = lab[v, u]
                    if j < 0 or detected[j] or z[v, u] == 0:
                        continue
                    o = _out_of_zone(z, cu, cv, u, v)
                    d = sqrt(<double>dd)
                    if has_prev:
                        c = (du * hu + dv * hv) / (d * hn)
                        if c > 1.0:
                            c = 1.0
                        elif c < -1.0:
                            c = -1.0
                        delta = acos(c)
                    else:
                        delta = 0.0
                    cost = log(e1 * o + mu) + e2 * d * exp(e3 * sin(delta / 2.0))
                    if cost < best:
                        best = cost
                        best_j = j
                        best_o = o
                        best_delta = delta
            if best_j < 0:
                break
            if not (best_o < tau_o and best_delta < tau_v):
                break
            detected[best_j] = 1
            seq[length] = best_j
            length += 1
    return np.asarray(seq)[:length].copy()


cdef Py_ssize_t _rim_path(const cnp.int32_t[:, ::1] lab, const cnp.uint8_t[::1] detected,
                          int cu, int cv, int tu, int tv, int r, double r2,
                          int* parent, int* queue, Py_ssize_t* out) noexcept nogil:
    # BFS over undetected skeleton pixels inside the RoI window; writes the
    # path labels (start excluded) into ``out`` and returns its length.
    cdef int h = lab.shape[0], w = lab.shape[1]
    cdef int size = 2 * r + 1
    cdef int start = r * size + r
    cdef int goal = (tv - cv + r) * size + (tu - cu + r)
    cdef int head = 0, tail = 0, cell, y, x, dy, dx, ny, nx, nc, ry, rx, u, v, j
    cdef Py_ssize_t k, n = 0
    for k in range(size * size):
        parent[k] = -2
    parent[start] = -1
    queue[tail] = start
    tail += 1
    while head < tail:
        cell = queue[head]
        head += 1
        if cell == goal:
            break
        y = cell // size
        x = cell % size
        for dy in range(-1, 2):
            for dx in range(-1, 2):
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
                j = lab[v, u]
                if j < 0 or detected[j]:
                    continue
                parent[nc] = cell
                queue[tail] = nc
                tail += 1
    if parent[goal] == -2:
        return 0
    cell = goal
    while cell != start:
        out[n] = lab[cv + cell // size - r, cu + cell % size - r]
        n += 1
        cell = parent[cell]
    # reverse in place
    for k in range(n // 2):
        out[k], out[n - 1 - k] = out[n - 1 - k], out[k]
    return n


cdef double _route_turn(const cnp.int64_t[::1] pu, const cnp.int64_t[::1] pv,
                        Py_ssize_t* path, Py_ssize_t m, int hu, int hv, double hn,
                        double min_dist) noexcept nogil:
    # largest angle between the heading and (end - p) over path pixels p at
    # least min_dist short of the end
    cdef int au = <int>pu[path[m - 1]], av = <int>pv[path[m - 1]], du, dv, dd
    cdef double m2 = min_dist * min_dist, worst = 0.0, c, a
    cdef Py_ssize_t k
    for k in range(m - 1):
        du = au - <int>pu[path[k]]
        dv = av - <int>pv[path[k]]
        dd = du * du + dv * dv
        if dd < m2:
            continue
        c = (du * hu + dv * hv) / (sqrt(<double>dd) * hn)
        if c > 1.0:
            c = 1.0
        elif c < -1.0:
            c = -1.0
        a = acos(c)
        if a > worst:
            worst = a
    return worst


def trace_rim(label, us, vs, zone, Py_ssize_t tip, double radius, double mu,
              double e1, double e2, double e3, double tau_o, double tau_v):
    cdef const cnp.int32_t[:, ::1] lab = np.ascontiguousarray(label, dtype=np.int32)
    cdef const cnp.int64_t[::1] pu = np.ascontiguousarray(us, dtype=np.int64)
    cdef const cnp.int64_t[::1] pv = np.ascontiguousarray(vs, dtype=np.int64)
    cdef const cnp.uint8_t[:, ::1] z = np.ascontiguousarray(zone, dtype=np.uint8)
    cdef Py_ssize_t n = pu.shape[0]
    cdef int h = lab.shape[0], w = lab.shape[1]
    cdef cnp.uint8_t[::1] detected = np.zeros(n, dtype=np.uint8)
    cdef cnp.int64_t[::1] seq = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t length = 1, cur, origin, best_j, k, m
    cdef int r = <int>floor(radius)
    cdef double r2 = radius * radius
    cdef double inner = radius - sqrt(2.0)
    cdef double inner2 = inner * inner if inner > 0 else 0.0
    cdef double back2 = radius * radius
    cdef int cu, cv, hu = 0, hv = 0, du, dv, dd, u, v, o, best_o, pass_
    cdef double hn = 0.0, best, best_delta, d, c, delta, cost, dist
    cdef bint has_h, rim
    cdef int j
    cdef int size = 2 * r + 1
    cdef int* parent = <int*>malloc(size * size * sizeof(int))
    cdef int* queue = <int*>malloc(size * size * sizeof(int))
    cdef Py_ssize_t* path = <Py_ssize_t*>malloc(size * size * sizeof(Py_ssize_t))
    if parent == NULL or queue == NULL or path == NULL:
        free(parent)
        free(queue)
        free(path)
        raise MemoryError()
    seq[0] = tip
    detected[tip] = 1
    try:
        with nogil:
            while True:
                cur = seq[length - 1]
                cu = <int>pu[cur]
                cv = <int>pv[cur]
                origin = -1
                for k in range(length - 2, -1, -1):
                    du = cu - <int>pu[seq[k]]
                    dv = cv - <int>pv[seq[k]]
                    if du * du + dv * dv >= back2:
                        origin = seq[k]
                        break
                if origin < 0 and length > 1:
                    origin = seq[0]
                has_h = origin >= 0
                if has_h:
                    hu = cu - <int>pu[origin]
                    hv = cv - <int>pv[origin]
                    hn = sqrt(<double>(hu * hu + hv * hv))
                best_j = -1
                rim = True
                for pass_ in range(2):
                    rim = pass_ == 0
                    best = INFINITY
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
                            j = lab[v, u]
                            if j < 0 or detected[j] or z[v, u] == 0:
                                continue
                            o = _out_of_zone(z, cu, cv, u, v)
                            d = sqrt(<double>dd)
                            if has_h:
                                c = (du * hu + dv * hv) / (d * hn)
                                if c > 1.0:
                                    c = 1.0
                                elif c < -1.0:
                                    c = -1.0
                                delta = acos(c)
                            else:
                                delta = 0.0
                            dist = radius if rim else d
                            cost = log(e1 * o + mu) + e2 * dist * exp(e3 * sin(delta / 2.0))
                            if cost < best:
                                best = cost
                                best_j = j
                                best_o = o
                                best_delta = delta
                    if best_j >= 0 and best_o < tau_o and best_delta < tau_v:
                        m = 0
                        if rim:
                            m = _rim_path(lab, detected, cu, cv, <int>pu[best_j],
                                          <int>pv[best_j], r, r2, parent, queue, path)
                        if m == 0:
                            path[0] = best_j
                            m = 1
                        if not rim or not has_h:
                            break
                        if _route_turn(pu, pv, path, m, hu, hv, hn, radius / 2.0) < tau_v:
                            break
                    best_j = -1
                if best_j < 0:
                    break
                for k in range(m):
                    detected[path[k]] = 1
                    seq[length] = path[k]
                    length += 1
    finally:
        free(parent)
        free(queue)
        free(path)
    return np.asarray(seq)[:length].copy()


cdef inline bint _less(double ka, Py_ssize_t va, double kb, Py_ssize_t vb) nogil:
    return ka < kb or (ka == kb and va < vb)


def dijkstra(g, Py_ssize_t s, Py_ssize_t e):
    cdef const double[:, ::1] G = np.ascontiguousarray(g, dtype=np.float64)
    cdef Py_ssize_t n = G.shape[0]
    cdef double[::1] dist = np.full(n, INFINITY)
    cdef cnp.int64_t[::1] pred = np.full(n, -1, dtype=np.int64)
    cdef cnp.uint8_t[::1] done = np.zeros(n, dtype=np.uint8)
    # lazy-deletion heap; at most one push per relaxation
    cdef Py_ssize_t cap = n * n + 1
    cdef double* hk = <double*>malloc(cap * sizeof(double))
    cdef Py_ssize_t* hv = <Py_ssize_t*>malloc(cap * sizeof(Py_ssize_t))
    cdef Py_ssize_t size = 0, i, p, c, u, v
    cdef double d, wt, nd, tk
    cdef Py_ssize_t tv
    if hk == NULL or hv == NULL:
        free(hk)
        free(hv)
        raise MemoryError()
    try:
        with nogil:
            dist[s] = 0.0
            hk[0] = 0.0
            hv[0] = s
            size = 1
            while size > 0:
                d = hk[0]
                u = hv[0]
                size -= 1
                if size > 0:
                    hk[0] = hk[size]
                    hv[0] = hv[size]
                    p = 0
                    while True:
                        c = 2 * p + 1
                        if c >= size:
                            break
                        if c + 1 < size and _less(hk[c + 1], hv[c + 1], hk[c], hv[c]):
                            c += 1
                        if _less(hk[c], hv[c], hk[p], hv[p]):
                            tk = hk[c]; hk[c] = hk[p]; hk[p] = tk
                            tv = hv[c]; hv[c] = hv[p]; hv[p] = tv
                            p = c
                        else:
                            break
                if done[u]:
                    continue
                done[u] = 1
                if u == e:
                    break
                for v in range(n):
                    if done[v]:
                        continue
                    wt = G[u, v]
                    if wt == INFINITY:
                        continue
                    nd = d + wt
                    if nd < dist[v]:
                        dist[v] = nd
                        pred[v] = u
                        i = size
                        hk[i] = nd
                        hv[i] = v
                        size += 1
                        while i > 0:
                            p = (i - 1) // 2
                            if _less(hk[i], hv[i], hk[p], hv[p]):
                                tk = hk[i]; hk[i] = hk[p]; hk[p] = tk
                                tv = hv[i]; hv[i] = hv[p]; hv[p] = tv
                                i = p
                            else:
                                break
    finally:
        free(hk)
        free(hv)
    if not done[e]:
        return [], float("inf")
    cdef list path = []
    cdef Py_ssize_t k = e
    while k != -1:
        path.append(k)
        if k == s:
            break
        k = pred[k]
    path.reverse()
    return path, dist[e]
