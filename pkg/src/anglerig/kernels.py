"""Hot numerical kernels.

Every kernel exists twice: ``*_loop`` is scalar-loop code compiled with numba,
``*_np`` is a vectorized numpy version with identical semantics. The unsuffixed
names dispatch to one of them according to :mod:`anglerig._backend`. Tests
check both twins against each other; ``benchmarks/bench_kernels.py`` times them.

Conventions: positions ``p`` are (N, d), rotations ``R`` are (N, d, d) with the
camera axis in column 0, index arrays are int64 and zero-based. ``triples``
rows are (i, j, k) with j < k, ``edges`` rows are (i, j).
"""
import numpy as np

from ._backend import USE_NUMBA, njit

__all__ = [
    "angle_values", "angle_matrix", "bearing_matrix", "weighted_gram",
    "sensing_mask", "triples_from_mask", "angle_weights", "rigidity_gradient",
    "localization_flow", "collision_flow", "mission_flow", "right_exp", "dexpinv",
    "sigma", "dsigma",
]


# --------------------------------------------------------------------------
# smooth step
# --------------------------------------------------------------------------

@njit
def _sigma_s(x, a, b):
    if x < a:
        return 0.0
    if x > b:
        return 1.0
    return 0.5 * (1.0 - np.cos(np.pi * (x - a) / (b - a)))


@njit
def _dsigma_s(x, a, b):
    if x < a or x > b:
        return 0.0
    return 0.5 * np.pi / (b - a) * np.sin(np.pi * (x - a) / (b - a))


def sigma(x, a, b):
    """Cosine ramp from 0 at ``a`` to 1 at ``b`` with continuous derivative."""
    x = np.asarray(x, dtype=float)
    s = np.clip((x - a) / (b - a), 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * s))


def dsigma(x, a, b):
    x = np.asarray(x, dtype=float)
    inside = (x >= a) & (x <= b)
    s = np.clip((x - a) / (b - a), 0.0, 1.0)
    return np.where(inside, 0.5 * np.pi / (b - a) * np.sin(np.pi * s), 0.0)


# --------------------------------------------------------------------------
# angle function and angle rigidity matrix
# --------------------------------------------------------------------------

@njit
def angle_values_loop(p, triples):
    T = triples.shape[0]
    d = p.shape[1]
    out = np.empty(T)
    for t in range(T):
        i, j, k = triples[t, 0], triples[t, 1], triples[t, 2]
        nij = 0.0
        nik = 0.0
        dot = 0.0
        for a in range(d):
            x = p[j, a] - p[i, a]
            y = p[k, a] - p[i, a]
            nij += x * x
            nik += y * y
            dot += x * y
        out[t] = dot / np.sqrt(nij * nik)
    return out


def _pair_geometry(p, triples):
    i, j, k = triples[:, 0], triples[:, 1], triples[:, 2]
    xij = p[j] - p[i]
    xik = p[k] - p[i]
    dij = np.linalg.norm(xij, axis=1)
    dik = np.linalg.norm(xik, axis=1)
    bij = xij / dij[:, None]
    bik = xik / dik[:, None]
    cos = np.einsum("ta,ta->t", bij, bik)
    return i, j, k, bij, bik, dij, dik, cos


def angle_values_np(p, triples):
    if triples.shape[0] == 0:
        return np.zeros(0)
    return _pair_geometry(p, triples)[-1]


@njit
def angle_matrix_loop(p, triples):
    T = triples.shape[0]
    n, d = p.shape
    A = np.zeros((T, n * d))
    bij = np.empty(d)
    bik = np.empty(d)
    for t in range(T):
        i, j, k = triples[t, 0], triples[t, 1], triples[t, 2]
        dij = 0.0
        dik = 0.0
        for a in range(d):
            bij[a] = p[j, a] - p[i, a]
            bik[a] = p[k, a] - p[i, a]
            dij += bij[a] * bij[a]
            dik += bik[a] * bik[a]
        dij = np.sqrt(dij)
        dik = np.sqrt(dik)
        c = 0.0
        for a in range(d):
            bij[a] /= dij
            bik[a] /= dik
            c += bij[a] * bik[a]
        for a in range(d):
            e_jk = (bik[a] - c * bij[a]) / dij
            e_kj = (bij[a] - c * bik[a]) / dik
            A[t, j * d + a] = e_jk
            A[t, k * d + a] = e_kj
            A[t, i * d + a] = -(e_jk + e_kj)
    return A


def angle_matrix_np(p, triples):
    n, d = p.shape
    T = triples.shape[0]
    A = np.zeros((T, n, d))
    if T:
        i, j, k, bij, bik, dij, dik, c = _pair_geometry(p, triples)
        e_jk = (bik - c[:, None] * bij) / dij[:, None]
        e_kj = (bij - c[:, None] * bik) / dik[:, None]
        rows = np.arange(T)
        A[rows, j] = e_jk
        A[rows, k] = e_kj
        A[rows, i] = -(e_jk + e_kj)
    return A.reshape(T, n * d)


# --------------------------------------------------------------------------
# SE(d) bearing rigidity matrix
# --------------------------------------------------------------------------

@njit
def bearing_matrix_loop(p, R, edges):
    E = edges.shape[0]
    n, d = p.shape
    dr = d * (d - 1) // 2
    B = np.zeros((d * E, (d + dr) * n))
    beta = np.empty(d)
    M = np.empty((d, dr))
    for e in range(E):
        i, j = edges[e, 0], edges[e, 1]
        dist = 0.0
        for a in range(d):
            beta[a] = p[j, a] - p[i, a]
            dist += beta[a] * beta[a]
        dist = np.sqrt(dist)
        for a in range(d):
            beta[a] /= dist
        # M omega = S(omega) beta
        if d == 2:
            M[0, 0] = -beta[1]
            M[1, 0] = beta[0]
        else:
            M[0, 0] = 0.0
            M[0, 1] = beta[2]
            M[0, 2] = -beta[1]
            M[1, 0] = -beta[2]
            M[1, 1] = 0.0
            M[1, 2] = beta[0]
            M[2, 0] = beta[1]
            M[2, 1] = -beta[0]
            M[2, 2] = 0.0
        for r in range(d):
            for c in range(d):
                # (R_i^T P / dist)[r, c]
                acc = 0.0
                for a in range(d):
                    pac = (1.0 if a == c else 0.0) - beta[a] * beta[c]
                    acc += R[i, a, r] * pac
                acc /= dist
                B[d * e + r, d * j + c] += acc
                B[d * e + r, d * i + c] -= acc
            for c in range(dr):
                acc = 0.0
                for a in range(d):
                    acc += R[i, a, r] * M[a, c]
                B[d * e + r, d * n + dr * i + c] = -acc
    return B


def bearing_matrix_np(p, R, edges):
    n, d = p.shape
    dr = d * (d - 1) // 2
    E = edges.shape[0]
    B = np.zeros((E, d, n * (d + dr)))
    if E:
        i, j = edges[:, 0], edges[:, 1]
        x = p[j] - p[i]
        dist = np.linalg.norm(x, axis=1)
        beta = x / dist[:, None]
        P = np.eye(d)[None] - beta[:, :, None] * beta[:, None, :]
        RtP = np.einsum("tar,tac->trc", R[i], P) / dist[:, None, None]
        if d == 2:
            M = np.stack([-beta[:, 1], beta[:, 0]], axis=1)[:, :, None]
        else:
            z = np.zeros(E)
            M = np.stack([
                np.stack([z, beta[:, 2], -beta[:, 1]], axis=1),
                np.stack([-beta[:, 2], z, beta[:, 0]], axis=1),
                np.stack([beta[:, 1], -beta[:, 0], z], axis=1),
            ], axis=1)
        RtM = np.einsum("tar,tac->trc", R[i], M)
        rows = np.arange(E)
        for c in range(d):
            B[rows, :, d * j + c] += RtP[:, :, c]
            B[rows, :, d * i + c] -= RtP[:, :, c]
        for c in range(dr):
            B[rows, :, d * n + dr * i + c] = -RtM[:, :, c]
    return B.reshape(d * E, n * (d + dr))


# --------------------------------------------------------------------------
# weighted symmetric angle rigidity matrix  sum_t w_t A_t^T A_t
# --------------------------------------------------------------------------

@njit
def weighted_gram_loop(p, triples, w):
    T = triples.shape[0]
    n, d = p.shape
    G = np.zeros((n * d, n * d))
    bij = np.empty(d)
    bik = np.empty(d)
    rows = np.empty((3, d))
    idx = np.empty(3, dtype=np.int64)
    for t in range(T):
        wt = w[t]
        if wt == 0.0:
            continue
        i, j, k = triples[t, 0], triples[t, 1], triples[t, 2]
        dij = 0.0
        dik = 0.0
        for a in range(d):
            bij[a] = p[j, a] - p[i, a]
            bik[a] = p[k, a] - p[i, a]
            dij += bij[a] * bij[a]
            dik += bik[a] * bik[a]
        dij = np.sqrt(dij)
        dik = np.sqrt(dik)
        c = 0.0
        for a in range(d):
            bij[a] /= dij
            bik[a] /= dik
            c += bij[a] * bik[a]
        for a in range(d):
            e_jk = (bik[a] - c * bij[a]) / dij
            e_kj = (bij[a] - c * bik[a]) / dik
            rows[0, a] = -(e_jk + e_kj)
            rows[1, a] = e_jk
            rows[2, a] = e_kj
        idx[0] = i
        idx[1] = j
        idx[2] = k
        for u in range(3):
            for v in range(3):
                for a in range(d):
                    for b in range(d):
                        G[idx[u] * d + a, idx[v] * d + b] += wt * rows[u, a] * rows[v, b]
    return G


def weighted_gram_np(p, triples, w):
    A = angle_matrix_np(p, triples)
    return A.T @ (np.asarray(w)[:, None] * A)


# --------------------------------------------------------------------------
# sensing model
# --------------------------------------------------------------------------

@njit
def sensing_mask_loop(p, R, rho_r, rho_f):
    n, d = p.shape
    mask = np.zeros((n, n), dtype=np.bool_)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dist = 0.0
            proj = 0.0
            for a in range(d):
                x = p[j, a] - p[i, a]
                dist += x * x
                proj += R[i, a, 0] * x
            dist = np.sqrt(dist)
            mask[i, j] = dist < rho_r and proj / dist > rho_f
    return mask


def sensing_mask_np(p, R, rho_r, rho_f):
    n = p.shape[0]
    x = p[None, :, :] - p[:, None, :]
    dist = np.linalg.norm(x, axis=2)
    np.fill_diagonal(dist, np.inf)
    zeta = np.einsum("ia,ija->ij", R[:, :, 0], x) / dist
    mask = (dist < rho_r) & (zeta > rho_f)
    mask[np.arange(n), np.arange(n)] = False
    return mask


@njit
def triples_from_mask_loop(mask):
    n = mask.shape[0]
    count = 0
    for i in range(n):
        m = 0
        for j in range(n):
            if mask[i, j]:
                m += 1
        count += m * (m - 1) // 2
    out = np.empty((count, 3), dtype=np.int64)
    t = 0
    for i in range(n):
        for j in range(n):
            if not mask[i, j]:
                continue
            for k in range(j + 1, n):
                if mask[i, k]:
                    out[t, 0] = i
                    out[t, 1] = j
                    out[t, 2] = k
                    t += 1
    return out


def triples_from_mask_np(mask):
    out = []
    for i in range(mask.shape[0]):
        nb = np.flatnonzero(mask[i])
        jj, kk = np.triu_indices(nb.size, k=1)
        out.append(np.stack([np.full(jj.size, i), nb[jj], nb[kk]], axis=1))
    if not out:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(out).astype(np.int64).reshape(-1, 3)


# --------------------------------------------------------------------------
# angle weights and the body-frame gradient of the weighted eigenvalue
# --------------------------------------------------------------------------

@njit
def _edge_factor(p, R, i, j, ar, br, af, bf, beta, beta_body):
    """Fill bearings of edge (i, j); return (dist, g, dg/dd, wr, wf, dwf)."""
    d = p.shape[1]
    dist = 0.0
    for a in range(d):
        beta[a] = p[j, a] - p[i, a]
        dist += beta[a] * beta[a]
    dist = np.sqrt(dist)
    for a in range(d):
        beta[a] /= dist
    for r in range(d):
        acc = 0.0
        for a in range(d):
            acc += R[i, a, r] * beta[a]
        beta_body[r] = acc
    zeta = beta_body[0]
    wr = 1.0 - _sigma_s(dist, ar, br)
    dwr = -_dsigma_s(dist, ar, br)
    wf = _sigma_s(zeta, af, bf)
    dwf = _dsigma_s(zeta, af, bf)
    g = dist * wr * wf
    return dist, g, (wr + dist * dwr) * wf, wr, wf, dwf


@njit
def angle_weights_loop(p, R, triples, ar, br, af, bf):
    T = triples.shape[0]
    d = p.shape[1]
    w = np.empty(T)
    b1 = np.empty(d)
    b1b = np.empty(d)
    for t in range(T):
        i, j, k = triples[t, 0], triples[t, 1], triples[t, 2]
        g1 = _edge_factor(p, R, i, j, ar, br, af, bf, b1, b1b)[1]
        g2 = _edge_factor(p, R, i, k, ar, br, af, bf, b1, b1b)[1]
        w[t] = g1 * g2
    return w


def _edge_factors_np(p, R, i, j, ar, br, af, bf):
    x = p[j] - p[i]
    dist = np.linalg.norm(x, axis=1)
    beta = x / dist[:, None]
    body = np.einsum("tar,ta->tr", R[i], beta)
    zeta = body[:, 0]
    wr = 1.0 - sigma(dist, ar, br)
    dwr = -dsigma(dist, ar, br)
    wf = sigma(zeta, af, bf)
    dwf = dsigma(zeta, af, bf)
    return dict(dist=dist, beta=beta, body=body, g=dist * wr * wf,
                dg_dd=(wr + dist * dwr) * wf, wr=wr, wf=wf, dwf=dwf)


def angle_weights_np(p, R, triples, ar, br, af, bf):
    if triples.shape[0] == 0:
        return np.zeros(0)
    i, j, k = triples.T
    e1 = _edge_factors_np(p, R, i, j, ar, br, af, bf)
    e2 = _edge_factors_np(p, R, i, k, ar, br, af, bf)
    return e1["g"] * e2["g"]


@njit
def rigidity_gradient_loop(p, R, triples, nu, ar, br, af, bf):
    """Gradient of  lambda = sum_t w_t (A_t nu)^2  with nu frozen.

    Returns (grad_p, grad_rot): grad_p is the world-frame gradient w.r.t. each
    position (N, d); grad_rot holds body-frame so(d) coordinates (N, d') of the
    Riemannian gradient w.r.t. each orientation.
    """
    T = triples.shape[0]
    n, d = p.shape
    dr = d * (d - 1) // 2
    gp = np.zeros((n, d))
    gR = np.zeros((n, dr))
    bij = np.empty(d)
    bik = np.empty(d)
    bij_b = np.empty(d)
    bik_b = np.empty(d)
    va = np.empty(d)
    vb = np.empty(d)
    Gij = np.empty(d)
    Gik = np.empty(d)
    Pa_ij = np.empty(d)
    Pb_ik = np.empty(d)
    PPb = np.empty(d)
    PPa = np.empty(d)
    Da = np.empty(d)
    Db = np.empty(d)
    rij = np.empty(dr)
    rik = np.empty(dr)
    for t in range(T):
        i, j, k = triples[t, 0], triples[t, 1], triples[t, 2]
        dij, gij, dgij, wrij, wfij, dwfij = _edge_factor(p, R, i, j, ar, br, af, bf, bij, bij_b)
        dik, gik, dgik, wrik, wfik, dwfik = _edge_factor(p, R, i, k, ar, br, af, bf, bik, bik_b)
        w = gij * gik
        if w == 0.0:
            continue
        c = 0.0
        for a in range(d):
            c += bij[a] * bik[a]
        # s = A_t nu
        s = 0.0
        for a in range(d):
            va[a] = nu[j, a] - nu[i, a]
            vb[a] = nu[k, a] - nu[i, a]
            s += (bik[a] - c * bij[a]) / dij * va[a] + (bij[a] - c * bik[a]) / dik * vb[a]
        s2 = s * s
        # world-frame gradient of the edge factors w.r.t. the observer position
        for a in range(d):
            cam = R[i, a, 0]
            Gij[a] = -dgij * bij[a] - wrij * dwfij * (cam - bij[a] * bij_b[0])
            Gik[a] = -dgik * bik[a] - wrik * dwfik * (cam - bik[a] * bik_b[0])
        # D and E operators applied to va, vb
        ba_ij = 0.0
        bb_ik = 0.0
        for a in range(d):
            ba_ij += bij[a] * va[a]
            bb_ik += bik[a] * vb[a]
        for a in range(d):
            Pa_ij[a] = va[a] - bij[a] * ba_ij
            Pb_ik[a] = vb[a] - bik[a] * bb_ik
        # P_ij P_ik vb and P_ik P_ij va
        t1 = 0.0
        t2 = 0.0
        for a in range(d):
            t1 += bij[a] * Pb_ik[a]
            t2 += bik[a] * Pa_ij[a]
        for a in range(d):
            PPb[a] = Pb_ik[a] - bij[a] * t1
            PPa[a] = Pa_ij[a] - bik[a] * t2
        # D_ijk va = [P_ij bik (bij.va) + bij (bik.P_ij va) + c P_ij va] / dij^2
        bik_Pa = 0.0
        bij_Pb = 0.0
        for a in range(d):
            bik_Pa += bik[a] * Pa_ij[a]
            bij_Pb += bij[a] * Pb_ik[a]
        for a in range(d):
            Da[a] = ((bik[a] - c * bij[a]) * ba_ij + bij[a] * bik_Pa + c * Pa_ij[a]) / (dij * dij)
            Db[a] = ((bij[a] - c * bik[a]) * bb_ik + bik[a] * bij_Pb + c * Pb_ik[a]) / (dik * dik)
        ee = 1.0 / (dij * dik)
        for a in range(d):
            ds_dj = -Da[a] + PPb[a] * ee
            ds_dk = PPa[a] * ee - Db[a]
            dw_i = gik * Gij[a] + gij * Gik[a]
            gp[i, a] += s2 * dw_i - 2.0 * w * s * (ds_dj + ds_dk)
            gp[j, a] += -s2 * gik * Gij[a] + 2.0 * w * s * ds_dj
            gp[k, a] += -s2 * gij * Gik[a] + 2.0 * w * s * ds_dk
        # orientation: d zeta / d R_i in body so(d) coords = unskew(b e1^T - e1 b^T)
        if d == 2:
            rij[0] = bij_b[1]
            rik[0] = bik_b[1]
        else:
            rij[0] = 0.0
            rij[1] = -bij_b[2]
            rij[2] = bij_b[1]
            rik[0] = 0.0
            rik[1] = -bik_b[2]
            rik[2] = bik_b[1]
        fij = dij * wrij * dwfij
        fik = dik * wrik * dwfik
        for a in range(dr):
            gR[i, a] += s2 * (gik * fij * rij[a] + gij * fik * rik[a])
    return gp, gR


def _unskew_e1(body):
    """unskew(b e1^T - e1 b^T) row-wise: e1 x b for d = 3, b_2 for d = 2."""
    if body.shape[1] == 2:
        return body[:, 1:2]
    z = np.zeros(body.shape[0])
    return np.stack([z, -body[:, 2], body[:, 1]], axis=1)


def rigidity_gradient_np(p, R, triples, nu, ar, br, af, bf):
    n, d = p.shape
    dr = d * (d - 1) // 2
    gp = np.zeros((n, d))
    gR = np.zeros((n, dr))
    if triples.shape[0] == 0:
        return gp, gR
    i, j, k = triples.T
    e1 = _edge_factors_np(p, R, i, j, ar, br, af, bf)
    e2 = _edge_factors_np(p, R, i, k, ar, br, af, bf)
    w = e1["g"] * e2["g"]
    keep = w != 0.0
    i, j, k, w = i[keep], j[keep], k[keep], w[keep]
    e1 = {key: val[keep] for key, val in e1.items()}
    e2 = {key: val[keep] for key, val in e2.items()}
    bij, bik, dij, dik = e1["beta"], e2["beta"], e1["dist"], e2["dist"]
    c = np.einsum("ta,ta->t", bij, bik)[:, None]
    va = nu[j] - nu[i]
    vb = nu[k] - nu[i]
    eta_jk = (bik - c * bij) / dij[:, None]
    eta_kj = (bij - c * bik) / dik[:, None]
    s = np.einsum("ta,ta->t", eta_jk, va) + np.einsum("ta,ta->t", eta_kj, vb)
    s2 = (s * s)[:, None]
    cam = R[i][:, :, 0]

    def proj(beta, v):
        return v - beta * np.einsum("ta,ta->t", beta, v)[:, None]

    Gij = -e1["dg_dd"][:, None] * bij - (e1["wr"] * e1["dwf"])[:, None] * proj(bij, cam)
    Gik = -e2["dg_dd"][:, None] * bik - (e2["wr"] * e2["dwf"])[:, None] * proj(bik, cam)
    Pa = proj(bij, va)
    Pb = proj(bik, vb)
    PPb = proj(bij, Pb)
    PPa = proj(bik, Pa)
    ba = np.einsum("ta,ta->t", bij, va)[:, None]
    bb = np.einsum("ta,ta->t", bik, vb)[:, None]
    Da = ((bik - c * bij) * ba + bij * np.einsum("ta,ta->t", bik, Pa)[:, None] + c * Pa) / (dij ** 2)[:, None]
    Db = ((bij - c * bik) * bb + bik * np.einsum("ta,ta->t", bij, Pb)[:, None] + c * Pb) / (dik ** 2)[:, None]
    ee = (1.0 / (dij * dik))[:, None]
    ds_dj = -Da + PPb * ee
    ds_dk = PPa * ee - Db
    gij = e1["g"][:, None]
    gik = e2["g"][:, None]
    ws = (2.0 * w * s)[:, None]
    np.add.at(gp, i, s2 * (gik * Gij + gij * Gik) - ws * (ds_dj + ds_dk))
    np.add.at(gp, j, -s2 * gik * Gij + ws * ds_dj)
    np.add.at(gp, k, -s2 * gij * Gik + ws * ds_dk)
    fij = (dij * e1["wr"] * e1["dwf"])[:, None]
    fik = (dik * e2["wr"] * e2["dwf"])[:, None]
    np.add.at(gR, i, s2 * (gik * fij * _unskew_e1(e1["body"]) + gij * fik * _unskew_e1(e2["body"])))
    return gp, gR


# --------------------------------------------------------------------------
# localization flow  -grad L
# --------------------------------------------------------------------------

@njit
def localization_flow_loop(ph, triples, alpha_meas, iota, kappa, d_meas, gamma_a, gamma_s):
    T = triples.shape[0]
    n, d = ph.shape
    out = np.zeros((n, d))
    bij = np.empty(d)
    bik = np.empty(d)
    for t in range(T):
        i, j, k = triples[t, 0], triples[t, 1], triples[t, 2]
        dij = 0.0
        dik = 0.0
        for a in range(d):
            bij[a] = ph[j, a] - ph[i, a]
            bik[a] = ph[k, a] - ph[i, a]
            dij += bij[a] * bij[a]
            dik += bik[a] * bik[a]
        dij = np.sqrt(dij)
        dik = np.sqrt(dik)
        c = 0.0
        for a in range(d):
            bij[a] /= dij
            bik[a] /= dik
            c += bij[a] * bik[a]
        res = gamma_a * (c - alpha_meas[t])
        for a in range(d):
            e_jk = (bik[a] - c * bij[a]) / dij
            e_kj = (bij[a] - c * bik[a]) / dik
            out[i, a] += res * (e_jk + e_kj)
            out[j, a] -= res * e_jk
            out[k, a] -= res * e_kj
    if gamma_s != 0.0:
        dh2 = 0.0
        for a in range(d):
            x = ph[iota, a] - ph[kappa, a]
            dh2 += x * x
        f = gamma_s * (dh2 - d_meas * d_meas)
        for a in range(d):
            x = ph[iota, a] - ph[kappa, a]
            out[iota, a] -= f * x
            out[kappa, a] += f * x
    return out


def localization_flow_np(ph, triples, alpha_meas, iota, kappa, d_meas, gamma_a, gamma_s):
    n, d = ph.shape
    out = np.zeros((n, d))
    if triples.shape[0]:
        A = angle_matrix_np(ph, triples)
        res = gamma_a * (angle_values_np(ph, triples) - alpha_meas)
        out -= (A.T @ res).reshape(n, d)
    if gamma_s != 0.0:
        x = ph[iota] - ph[kappa]
        f = gamma_s * (x @ x - d_meas ** 2)
        out[iota] -= f * x
        out[kappa] += f * x
    return out


# --------------------------------------------------------------------------
# collision avoidance  -grad C  (world frame)
# --------------------------------------------------------------------------

@njit
def collision_flow_loop(p, mask, rho):
    n, d = p.shape
    out = np.zeros((n, d))
    for i in range(n):
        for j in range(n):
            if not mask[i, j]:
                continue
            dist = 0.0
            for a in range(d):
                x = p[j, a] - p[i, a]
                dist += x * x
            dist = np.sqrt(dist)
            coef = 2.0 * rho * (dist - rho) / (dist * dist * dist * dist)
            for a in range(d):
                x = (p[j, a] - p[i, a]) * coef
                out[i, a] += x
                out[j, a] -= x
    return out


def collision_flow_np(p, mask, rho):
    ii, jj = np.nonzero(mask)
    out = np.zeros_like(p, dtype=float)
    if ii.size:
        x = p[jj] - p[ii]
        dist = np.linalg.norm(x, axis=1)
        v = (2.0 * rho * (dist - rho) / dist ** 3)[:, None] * (x / dist[:, None])
        np.add.at(out, ii, v)
        np.add.at(out, jj, -v)
    return out


# --------------------------------------------------------------------------
# target tracking (mission) and robot-target collision, body frame
# --------------------------------------------------------------------------

@njit
def mission_flow_loop(p, R, targets, mu_r, mu_f, rho_t):
    """Body-frame mission inputs and robot-target repulsion for every robot.

    Returns (u_m (N, d), omega_m (N, d'), u_ct (N, d)).
    """
    n, d = p.shape
    dr = d * (d - 1) // 2
    u = np.zeros((n, d))
    om = np.zeros((n, dr))
    uc = np.zeros((n, d))
    beta = np.empty(d)
    body = np.empty(d)
    for i in range(n):
        dist = 0.0
        for a in range(d):
            beta[a] = targets[i, a] - p[i, a]
            dist += beta[a] * beta[a]
        dist = np.sqrt(dist)
        for a in range(d):
            beta[a] /= dist
        for r in range(d):
            acc = 0.0
            for a in range(d):
                acc += R[i, a, r] * beta[a]
            body[r] = acc
        zeta = body[0]
        dsr = _dsigma_s(dist, 0.0, rho_t)
        dsf = _dsigma_s(zeta, -1.0, 1.0)
        coll = 0.0
        if dist < rho_t:
            coll = 2.0 * rho_t * (dist - rho_t) / (dist * dist * dist)
        for a in range(d):
            e1a = 1.0 if a == 0 else 0.0
            u[i, a] = mu_r * dsr * body[a] - mu_f * dsf * (e1a - body[a] * zeta) / dist
            uc[i, a] = coll * body[a]
        if d == 2:
            om[i, 0] = mu_f * dsf * body[1]
        else:
            om[i, 0] = 0.0
            om[i, 1] = -mu_f * dsf * body[2]
            om[i, 2] = mu_f * dsf * body[1]
    return u, om, uc


def mission_flow_np(p, R, targets, mu_r, mu_f, rho_t):
    n, d = p.shape
    x = targets - p
    dist = np.linalg.norm(x, axis=1)
    body = np.einsum("iar,ia->ir", R, x / dist[:, None])
    zeta = body[:, 0]
    dsr = dsigma(dist, 0.0, rho_t)[:, None]
    dsf = dsigma(zeta, -1.0, 1.0)[:, None]
    e1 = np.zeros(d)
    e1[0] = 1.0
    u = mu_r * dsr * body - mu_f * dsf * (e1 - body * zeta[:, None]) / dist[:, None]
    coll = np.where(dist < rho_t, 2.0 * rho_t * (dist - rho_t) / dist ** 3, 0.0)[:, None]
    om = mu_f * dsf * _unskew_e1(body)
    return u, om, coll * body


# --------------------------------------------------------------------------
# batched SO(d) helpers for the Lie-group integrator
# --------------------------------------------------------------------------

@njit
def _exp3(w, out):
    th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
    th = np.sqrt(th2)
    if th < 1e-8:
        a = 1.0
        b = 0.5
    else:
        a = np.sin(th) / th
        b = (1.0 - np.cos(th)) / th2
    K = np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
    KK = K @ K
    for r in range(3):
        for c in range(3):
            out[r, c] = (1.0 if r == c else 0.0) + a * K[r, c] + b * KK[r, c]


@njit
def right_exp_loop(R, theta):
    """R_i exp(S(theta_i)) for every row."""
    n, d, _ = R.shape
    out = np.empty_like(R)
    E = np.empty((d, d))
    for i in range(n):
        if d == 2:
            c = np.cos(theta[i, 0])
            s = np.sin(theta[i, 0])
            E[0, 0] = c
            E[0, 1] = -s
            E[1, 0] = s
            E[1, 1] = c
        else:
            _exp3(theta[i], E)
        for r in range(d):
            for q in range(d):
                acc = 0.0
                for m in range(d):
                    acc += R[i, r, m] * E[m, q]
                out[i, r, q] = acc
    return out


def _skew_rows(w):
    z = np.zeros(w.shape[0])
    return np.stack([np.stack([z, -w[:, 2], w[:, 1]], 1),
                     np.stack([w[:, 2], z, -w[:, 0]], 1),
                     np.stack([-w[:, 1], w[:, 0], z], 1)], 1)


def right_exp_np(R, theta):
    n, d, _ = R.shape
    if d == 2:
        c, s = np.cos(theta[:, 0]), np.sin(theta[:, 0])
        E = np.stack([np.stack([c, -s], 1), np.stack([s, c], 1)], 1)
    else:
        th = np.linalg.norm(theta, axis=1)
        small = th < 1e-8
        ths = np.where(small, 1.0, th)
        a = np.where(small, 1.0, np.sin(ths) / ths)[:, None, None]
        b = np.where(small, 0.5, (1.0 - np.cos(ths)) / ths ** 2)[:, None, None]
        K = _skew_rows(theta)
        E = np.eye(3) + a * K + b * (K @ K)
    return R @ E


@njit
def dexpinv_loop(theta, omega):
    """Row-wise omega + theta x omega / 2 + theta x (theta x omega) / 12."""
    n, dr = theta.shape
    out = omega.copy()
    if dr == 1:
        return out
    for i in range(n):
        t0, t1, t2 = theta[i, 0], theta[i, 1], theta[i, 2]
        w0, w1, w2 = omega[i, 0], omega[i, 1], omega[i, 2]
        c0 = t1 * w2 - t2 * w1
        c1 = t2 * w0 - t0 * w2
        c2 = t0 * w1 - t1 * w0
        out[i, 0] += 0.5 * c0 + (t1 * c2 - t2 * c1) / 12.0
        out[i, 1] += 0.5 * c1 + (t2 * c0 - t0 * c2) / 12.0
        out[i, 2] += 0.5 * c2 + (t0 * c1 - t1 * c0) / 12.0
    return out


def _cross_rows(a, b):
    return np.stack([a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
                     a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
                     a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]], axis=1)


def dexpinv_np(theta, omega):
    if theta.shape[1] == 1:
        return omega.copy()
    c = _cross_rows(theta, omega)
    return omega + 0.5 * c + _cross_rows(theta, c) / 12.0


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

if USE_NUMBA:
    angle_values = angle_values_loop
    angle_matrix = angle_matrix_loop
    bearing_matrix = bearing_matrix_loop
    weighted_gram = weighted_gram_loop
    sensing_mask = sensing_mask_loop
    triples_from_mask = triples_from_mask_loop
    angle_weights = angle_weights_loop
    rigidity_gradient = rigidity_gradient_loop
    localization_flow = localization_flow_loop
    collision_flow = collision_flow_loop
    mission_flow = mission_flow_loop
    right_exp = right_exp_loop
    dexpinv = dexpinv_loop
else:
    angle_values = angle_values_np
    angle_matrix = angle_matrix_np
    bearing_matrix = bearing_matrix_np
    weighted_gram = weighted_gram_np
    sensing_mask = sensing_mask_np
    triples_from_mask = triples_from_mask_np
    angle_weights = angle_weights_np
    rigidity_gradient = rigidity_gradient_np
    localization_flow = localization_flow_np
    collision_flow = collision_flow_np
    mission_flow = mission_flow_np
    right_exp = right_exp_np
    dexpinv = dexpinv_np
