# cython: language_level=3
"""Compiled training-step kernel.

Same fused batch step as ``_kernels_py`` (forward, loss, backward, SGD
update, identity-column renorm).  Matrix products go straight to BLAS
(no per-op numpy dispatch); the margin transform, softmax, and update
arithmetic are fused C loops.  Keep the arithmetic in sync with the
numpy backend.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport M_PI, acos, cos, exp, fabs, log, sin, sqrt
from scipy.linalg.cython_blas cimport dgemm

from .errors import NumericDomainError

cnp.import_array()

BACKEND_NAME = "compiled"

DEF SIN_FLOOR = 1e-8


# Row-major GEMM wrappers over column-major BLAS: C_rm = op(A) op(B) is
# computed as C_rm^T = op(B)^T op(A)^T on the transposed (column-major)
# views of the same buffers.

cdef void _mm_nn(const double[:, ::1] a, const double[:, ::1] b,
                 double[:, ::1] out) noexcept:
    # out[m, n] = a[m, k] @ b[k, n]
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef double alpha = 1.0, beta = 0.0
    if m == 0 or n == 0 or k == 0:
        return
    dgemm("N", "N", &n, &m, &k, &alpha, <double*> &b[0, 0], &n,
          <double*> &a[0, 0], &k, &beta, &out[0, 0], &n)


cdef void _mm_nt(const double[:, ::1] a, const double[:, ::1] b,
                 double[:, ::1] out) noexcept:
    # out[m, n] = a[m, k] @ b[n, k].T
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[0]
    cdef double alpha = 1.0, beta = 0.0
    if m == 0 or n == 0 or k == 0:
        return
    dgemm("T", "N", &n, &m, &k, &alpha, <double*> &b[0, 0], &k,
          <double*> &a[0, 0], &k, &beta, &out[0, 0], &n)


cdef void _mm_tn(const double[:, ::1] a, const double[:, ::1] b,
                 double[:, ::1] out) noexcept:
    # out[m, n] = a[k, m].T @ b[k, n]
    cdef int k = a.shape[0], m = a.shape[1], n = b.shape[1]
    cdef double alpha = 1.0, beta = 0.0
    if m == 0 or n == 0 or k == 0:
        return
    dgemm("N", "T", &n, &m, &k, &alpha, <double*> &b[0, 0], &n,
          <double*> &a[0, 0], &m, &beta, &out[0, 0], &n)


cdef void _linear(const double[:, ::1] a, const double[:, ::1] w,
                  const double[::1] b, double[:, ::1] out) noexcept:
    cdef Py_ssize_t i, j
    _mm_nn(a, w, out)
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] += b[j]


def sgd_batch_step(list enc_ws, list enc_bs, list vel_ws, list vel_bs,
                   object ident_w_obj, object vel_ident_obj,
                   object x_obj, object y_obj, object groups_obj,
                   object margins_obj, int mode, double scale,
                   double lr, double momentum, double weight_decay):
    """One fused train step on a batch; mutates parameters in place."""
    x_arr = np.ascontiguousarray(x_obj, dtype=np.float64)
    cdef double[:, ::1] x = x_arr
    cdef cnp.int64_t[::1] y = np.ascontiguousarray(y_obj, dtype=np.int64)
    cdef cnp.int64_t[::1] groups = np.ascontiguousarray(groups_obj, dtype=np.int64)
    cdef double[::1] margins_by_group = np.ascontiguousarray(margins_obj, dtype=np.float64)
    cdef double[:, ::1] ident_w = ident_w_obj
    cdef double[:, ::1] vel_ident = vel_ident_obj

    cdef Py_ssize_t n_layers = len(enc_ws)
    cdef Py_ssize_t batch = x.shape[0]
    cdef Py_ssize_t d = (<cnp.ndarray> enc_ws[n_layers - 1]).shape[1]
    cdef Py_ssize_t n_ids = ident_w.shape[1]
    cdef Py_ssize_t i, j, k, layer

    # ---- forward ----
    acts = [x_arr]
    pres = []
    cdef double[:, ::1] cur = x
    cdef double[:, ::1] z
    cdef double[:, ::1] act
    for layer in range(n_layers - 1):
        z_arr = np.empty((batch, (<cnp.ndarray> enc_ws[layer]).shape[1]))
        z = z_arr
        _linear(cur, enc_ws[layer], enc_bs[layer], z)
        act_arr = np.empty_like(z_arr)
        act = act_arr
        for i in range(z.shape[0]):
            for j in range(z.shape[1]):
                act[i, j] = z[i, j] if z[i, j] > 0.0 else 0.0
        pres.append(z_arr)
        acts.append(act_arr)
        cur = act
    z_final_arr = np.empty((batch, d))
    cdef double[:, ::1] z_final = z_final_arr
    _linear(cur, enc_ws[n_layers - 1], enc_bs[n_layers - 1], z_final)

    # ---- loss and gradients w.r.t. z_final and ident_w ----
    cdef double loss = 0.0
    cdef double c, m, theta, sin_theta, sin_m, val, slope, rowmax, sumexp, p
    cdef double norm_i, dot, g
    cdef Py_ssize_t target

    d_z_arr = np.empty((batch, d))
    d_wc_arr = np.empty((d, n_ids))
    cdef double[:, ::1] d_z = d_z_arr
    cdef double[:, ::1] d_wc = d_wc_arr

    cdef double[:, ::1] logits
    cdef double[:, ::1] dlog
    cdef double[:, ::1] fhat
    cdef double[:, ::1] what
    cdef double[:, ::1] cosm
    cdef double[:, ::1] dfhat
    cdef double[:, ::1] dwhat
    cdef double[::1] norms
    cdef double[::1] wnorms
    cdef double[::1] slopes

    if mode == 0:
        logits_arr = np.empty((batch, n_ids))
        logits = logits_arr
        _mm_nn(z_final, ident_w, logits)
    else:
        norms_arr = np.empty(batch)
        norms = norms_arr
        fhat_arr = np.empty((batch, d))
        fhat = fhat_arr
        for i in range(batch):
            dot = 0.0
            for k in range(d):
                dot += z_final[i, k] * z_final[i, k]
            norm_i = sqrt(dot)
            if norm_i == 0.0:
                raise NumericDomainError("zero-norm feature or weight column")
            norms[i] = norm_i
            for k in range(d):
                fhat[i, k] = z_final[i, k] / norm_i
        wnorms_arr = np.empty(n_ids)
        wnorms = wnorms_arr
        what_arr = np.empty((d, n_ids))
        what = what_arr
        for j in range(n_ids):
            dot = 0.0
            for k in range(d):
                dot += ident_w[k, j] * ident_w[k, j]
            norm_i = sqrt(dot)
            if norm_i == 0.0:
                raise NumericDomainError("zero-norm feature or weight column")
            wnorms[j] = norm_i
        for k in range(d):
            for j in range(n_ids):
                what[k, j] = ident_w[k, j] / wnorms[j]
        cosm_arr = np.empty((batch, n_ids))
        cosm = cosm_arr
        _mm_nn(fhat, what, cosm)

        logits_arr = np.empty((batch, n_ids))
        logits = logits_arr
        slopes_arr = np.empty(batch)
        slopes = slopes_arr
        for i in range(batch):
            target = y[i]
            c = cosm[i, target]
            if c > 1.0:
                c = 1.0
            elif c < -1.0:
                c = -1.0
            m = margins_by_group[groups[i]]
            if mode == 1:
                theta = acos(c)
                sin_theta = sqrt(1.0 - c * c)
                if sin_theta < SIN_FLOOR:
                    sin_theta = SIN_FLOOR
                if theta <= M_PI - m:
                    val = cos(theta + m)
                    slope = sin(theta + m) / sin_theta
                else:
                    sin_m = sin(m)
                    val = -1.0 - (theta - (M_PI - m)) * sin_m
                    slope = sin_m / sin_theta
            else:
                val = c - m
                slope = 1.0
            for j in range(n_ids):
                logits[i, j] = scale * cosm[i, j]
            logits[i, target] = scale * val
            slopes[i] = slope

    # shared softmax cross-entropy on `logits`
    dlog_arr = np.empty((batch, n_ids))
    dlog = dlog_arr
    for i in range(batch):
        target = y[i]
        rowmax = logits[i, 0]
        for j in range(1, n_ids):
            if logits[i, j] > rowmax:
                rowmax = logits[i, j]
        sumexp = 0.0
        for j in range(n_ids):
            dlog[i, j] = exp(logits[i, j] - rowmax)
            sumexp += dlog[i, j]
        loss += log(sumexp) - (logits[i, target] - rowmax)
        for j in range(n_ids):
            p = dlog[i, j] / sumexp
            if j == target:
                p -= 1.0
            dlog[i, j] = p / batch
    loss /= batch

    if mode == 0:
        _mm_nt(dlog, ident_w, d_z)
        _mm_tn(z_final, dlog, d_wc)
    else:
        # dlog -> dcos in place (scale, then the target slope)
        for i in range(batch):
            for j in range(n_ids):
                dlog[i, j] *= scale
            dlog[i, y[i]] *= slopes[i]
        dfhat_arr = np.empty((batch, d))
        dfhat = dfhat_arr
        _mm_nt(dlog, what, dfhat)
        for i in range(batch):
            dot = 0.0
            for k in range(d):
                dot += dfhat[i, k] * fhat[i, k]
            for k in range(d):
                d_z[i, k] = (dfhat[i, k] - fhat[i, k] * dot) / norms[i]
        dwhat_arr = np.empty((d, n_ids))
        dwhat = dwhat_arr
        _mm_tn(fhat, dlog, dwhat)
        for j in range(n_ids):
            dot = 0.0
            for k in range(d):
                dot += dwhat[k, j] * what[k, j]
            for k in range(d):
                d_wc[k, j] = (dwhat[k, j] - what[k, j] * dot) / wnorms[j]

    # ---- encoder backward (gradients first, updates afterwards) ----
    grads_w = []
    grads_b = []
    cdef double[:, ::1] delta = d_z
    cdef double[:, ::1] new_delta
    cdef double[:, ::1] gw
    cdef double[::1] gb
    cdef double[:, ::1] pre
    cdef double[:, ::1] w_view
    for layer in range(n_layers - 1, -1, -1):
        gw_arr = np.empty(((<cnp.ndarray> enc_ws[layer]).shape[0],
                           (<cnp.ndarray> enc_ws[layer]).shape[1]))
        gw = gw_arr
        _mm_tn(acts[layer], delta, gw)
        gb_arr = np.empty((<cnp.ndarray> enc_bs[layer]).shape[0])
        gb = gb_arr
        for j in range(gb.shape[0]):
            dot = 0.0
            for i in range(batch):
                dot += delta[i, j]
            gb[j] = dot
        grads_w.append(gw_arr)
        grads_b.append(gb_arr)
        if layer > 0:
            w_view = enc_ws[layer]
            pre = pres[layer - 1]
            nd_arr = np.empty((batch, w_view.shape[0]))
            new_delta = nd_arr
            _mm_nt(delta, w_view, new_delta)
            for i in range(batch):
                for k in range(new_delta.shape[1]):
                    if pre[i, k] <= 0.0:
                        new_delta[i, k] = 0.0
            delta = new_delta
    grads_w.reverse()
    grads_b.reverse()

    # ---- updates ----
    cdef double[:, ::1] wv
    cdef double[:, ::1] vv
    cdef double[::1] bv
    cdef double[::1] vbv
    for layer in range(n_layers):
        wv = enc_ws[layer]
        vv = vel_ws[layer]
        gw = grads_w[layer]
        for i in range(wv.shape[0]):
            for j in range(wv.shape[1]):
                g = gw[i, j] + weight_decay * wv[i, j]
                vv[i, j] = momentum * vv[i, j] - lr * g
                wv[i, j] += vv[i, j]
        bv = enc_bs[layer]
        vbv = vel_bs[layer]
        gb = grads_b[layer]
        for j in range(bv.shape[0]):
            vbv[j] = momentum * vbv[j] - lr * gb[j]
            bv[j] += vbv[j]
    for k in range(d):
        for j in range(n_ids):
            vel_ident[k, j] = momentum * vel_ident[k, j] - lr * d_wc[k, j]
            ident_w[k, j] += vel_ident[k, j]
    if mode != 0:
        for j in range(n_ids):
            dot = 0.0
            for k in range(d):
                dot += ident_w[k, j] * ident_w[k, j]
            norm_i = sqrt(dot)
            for k in range(d):
                ident_w[k, j] /= norm_i
    return loss
