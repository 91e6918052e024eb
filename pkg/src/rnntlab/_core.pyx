# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the two training hot loops.

``lstm_forward``/``lstm_backward`` run a projected LSTM over a whole
sequence; ``rnnt_forward``/``rnnt_backward`` run the alignment-lattice
dynamic program. Both backwards are the mechanical reverse sweep of the
forward recurrence, so they produce the same values (up to rounding) as
replaying the pure tape composition in `rnntlab.kernels.pure` — the test
suite asserts that equivalence.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, tanh

cnp.import_array()


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef inline double _logaddexp(double a, double b) nogil:
    # max subtraction, same formula as the pure-route primitive
    cdef double m = a if a > b else b
    return m + log(exp(a - m) + exp(b - m))


def lstm_forward(double[:, :] x, double[:, :] w_ih, double[:, :] w_hh,
                 double[:] b, double[:, :] w_proj):
    """Projected LSTM over x (T,Din). Gate order i,f,g,o in the 4H axis.

    Returns (p (T,P), acts (T,4H), c (T,H), tc (T,H), h (T,H)) where acts
    holds post-activation gates and p feeds both the caller and backward.
    """
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t din = x.shape[1]
    cdef Py_ssize_t h4 = w_ih.shape[1]
    cdef Py_ssize_t H = h4 // 4
    cdef Py_ssize_t P = w_proj.shape[1]

    acts_arr = np.empty((T, h4), dtype=np.float64)
    c_arr = np.empty((T, H), dtype=np.float64)
    tc_arr = np.empty((T, H), dtype=np.float64)
    h_arr = np.empty((T, H), dtype=np.float64)
    p_arr = np.empty((T, P), dtype=np.float64)
    z_arr = np.empty(h4, dtype=np.float64)

    cdef double[:, :] acts = acts_arr
    cdef double[:, :] c = c_arr
    cdef double[:, :] tc = tc_arr
    cdef double[:, :] hv = h_arr
    cdef double[:, :] p = p_arr
    cdef double[:] z = z_arr

    cdef Py_ssize_t t, j, k, n
    cdef double acc, cprev, iv, fv, gv, ov, cv

    with nogil:
        for t in range(T):
            for j in range(h4):
                acc = b[j]
                for k in range(din):
                    acc += x[t, k] * w_ih[k, j]
                if t > 0:
                    for k in range(P):
                        acc += p[t - 1, k] * w_hh[k, j]
                z[j] = acc
            for n in range(H):
                iv = _sigmoid(z[n])
                fv = _sigmoid(z[H + n])
                gv = tanh(z[2 * H + n])
                ov = _sigmoid(z[3 * H + n])
                acts[t, n] = iv
                acts[t, H + n] = fv
                acts[t, 2 * H + n] = gv
                acts[t, 3 * H + n] = ov
                cprev = c[t - 1, n] if t > 0 else 0.0
                cv = fv * cprev + iv * gv
                c[t, n] = cv
                tc[t, n] = tanh(cv)
                hv[t, n] = ov * tc[t, n]
            for j in range(P):
                acc = 0.0
                for n in range(H):
                    acc += hv[t, n] * w_proj[n, j]
                p[t, j] = acc

    return p_arr, acts_arr, c_arr, tc_arr, h_arr


def lstm_backward(double[:, :] dp_seq, double[:, :] x, double[:, :] w_ih,
                  double[:, :] w_hh, double[:, :] w_proj,
                  double[:, :] p, double[:, :] acts, double[:, :] c,
                  double[:, :] tc, double[:, :] hv):
    """Reverse sweep of lstm_forward. Returns (dx, dw_ih, dw_hh, db, dw_proj)."""
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t din = x.shape[1]
    cdef Py_ssize_t h4 = w_ih.shape[1]
    cdef Py_ssize_t H = h4 // 4
    cdef Py_ssize_t P = w_proj.shape[1]

    dx_arr = np.zeros((T, din), dtype=np.float64)
    dw_ih_arr = np.zeros((din, h4), dtype=np.float64)
    dw_hh_arr = np.zeros((P, h4), dtype=np.float64)
    db_arr = np.zeros(h4, dtype=np.float64)
    dw_proj_arr = np.zeros((H, P), dtype=np.float64)

    cdef double[:, :] dx = dx_arr
    cdef double[:, :] dw_ih = dw_ih_arr
    cdef double[:, :] dw_hh = dw_hh_arr
    cdef double[:] db = db_arr
    cdef double[:, :] dw_proj = dw_proj_arr

    dp_rec_arr = np.zeros(P, dtype=np.float64)
    dc_rec_arr = np.zeros(H, dtype=np.float64)
    dp_tot_arr = np.empty(P, dtype=np.float64)
    dz_arr = np.empty(h4, dtype=np.float64)
    dh_arr = np.empty(H, dtype=np.float64)

    cdef double[:] dp_rec = dp_rec_arr
    cdef double[:] dc_rec = dc_rec_arr
    cdef double[:] dp_tot = dp_tot_arr
    cdef double[:] dz = dz_arr
    cdef double[:] dh = dh_arr

    cdef Py_ssize_t t, j, k, n
    cdef double acc, iv, fv, gv, ov, tcv, dcv, dov, dtcv, cprev

    with nogil:
        for t in range(T - 1, -1, -1):
            for j in range(P):
                dp_tot[j] = dp_seq[t, j] + dp_rec[j]
            for n in range(H):
                acc = 0.0
                for j in range(P):
                    acc += w_proj[n, j] * dp_tot[j]
                    dw_proj[n, j] += hv[t, n] * dp_tot[j]
                dh[n] = acc
            for n in range(H):
                iv = acts[t, n]
                fv = acts[t, H + n]
                gv = acts[t, 2 * H + n]
                ov = acts[t, 3 * H + n]
                tcv = tc[t, n]
                dov = dh[n] * tcv
                dtcv = dh[n] * ov
                dcv = dtcv * (1.0 - tcv * tcv) + dc_rec[n]
                cprev = c[t - 1, n] if t > 0 else 0.0
                dz[n] = dcv * gv * iv * (1.0 - iv)
                dz[H + n] = dcv * cprev * fv * (1.0 - fv)
                dz[2 * H + n] = dcv * iv * (1.0 - gv * gv)
                dz[3 * H + n] = dov * ov * (1.0 - ov)
                dc_rec[n] = dcv * fv
            for j in range(h4):
                db[j] += dz[j]
            for k in range(din):
                acc = 0.0
                for j in range(h4):
                    acc += w_ih[k, j] * dz[j]
                    dw_ih[k, j] += x[t, k] * dz[j]
                dx[t, k] = acc
            for k in range(P):
                acc = 0.0
                for j in range(h4):
                    acc += w_hh[k, j] * dz[j]
                    if t > 0:
                        dw_hh[k, j] += p[t - 1, k] * dz[j]
                dp_rec[k] = acc

    return dx_arr, dw_ih_arr, dw_hh_arr, db_arr, dw_proj_arr


def rnnt_forward(double[:, :] blank, double[:, :] label):
    """Forward DP over the (T, U+1) lattice. Returns (loss, alpha).

    alpha[t,u] = logsumexp(alpha[t-1,u] + blank[t-1,u],
                           alpha[t,u-1] + label[t,u-1]), absent terms omitted;
    loss = -(alpha[T-1,U] + blank[T-1,U]).
    """
    cdef Py_ssize_t T = blank.shape[0]
    cdef Py_ssize_t U1 = blank.shape[1]
    if label.shape[0] != T or label.shape[1] != U1 - 1:
        raise ValueError("label lattice must have shape (T, U)")

    alpha_arr = np.empty((T, U1), dtype=np.float64)
    cdef double[:, :] alpha = alpha_arr
    cdef Py_ssize_t t, u
    cdef double a, bterm

    with nogil:
        alpha[0, 0] = 0.0
        for u in range(1, U1):
            alpha[0, u] = alpha[0, u - 1] + label[0, u - 1]
        for t in range(1, T):
            alpha[t, 0] = alpha[t - 1, 0] + blank[t - 1, 0]
            for u in range(1, U1):
                a = alpha[t - 1, u] + blank[t - 1, u]
                bterm = alpha[t, u - 1] + label[t, u - 1]
                alpha[t, u] = _logaddexp(a, bterm)

    cdef double loss = -(alpha[T - 1, U1 - 1] + blank[T - 1, U1 - 1])
    return loss, alpha_arr


def rnnt_backward(double[:, :] alpha, double[:, :] blank, double[:, :] label,
                  double g):
    """Reverse sweep of rnnt_forward scaled by upstream adjoint g.

    Returns (dblank (T,U+1), dlabel (T,U)).
    """
    cdef Py_ssize_t T = blank.shape[0]
    cdef Py_ssize_t U1 = blank.shape[1]

    abar_arr = np.zeros((T, U1), dtype=np.float64)
    dblank_arr = np.zeros((T, U1), dtype=np.float64)
    dlabel_arr = np.zeros((T, U1 - 1), dtype=np.float64)

    cdef double[:, :] abar = abar_arr
    cdef double[:, :] dblank = dblank_arr
    cdef double[:, :] dlabel = dlabel_arr

    cdef Py_ssize_t t, u
    cdef double gt, wa, wb

    with nogil:
        abar[T - 1, U1 - 1] = -g
        dblank[T - 1, U1 - 1] = -g
        for t in range(T - 1, -1, -1):
            for u in range(U1 - 1, -1, -1):
                if t == 0 and u == 0:
                    continue
                gt = abar[t, u]
                if gt == 0.0:
                    continue
                if t > 0 and u > 0:
                    wa = exp(alpha[t - 1, u] + blank[t - 1, u] - alpha[t, u])
                    wb = exp(alpha[t, u - 1] + label[t, u - 1] - alpha[t, u])
                    abar[t - 1, u] += gt * wa
                    dblank[t - 1, u] += gt * wa
                    abar[t, u - 1] += gt * wb
                    dlabel[t, u - 1] += gt * wb
                elif t > 0:
                    abar[t - 1, u] += gt
                    dblank[t - 1, u] += gt
                else:
                    abar[t, u - 1] += gt
                    dlabel[t, u - 1] += gt

    return dblank_arr, dlabel_arr
