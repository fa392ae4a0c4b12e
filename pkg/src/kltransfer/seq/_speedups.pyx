# Compiled recurrence kernels; mirrors _kernels_np exactly.
#
# The per-timestep loop dominates desk-scale training, so the whole
# forward/backward-through-time pass runs in C with manual matvecs
# (dims are too small for BLAS dispatch to pay off).

import numpy as np

cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()


def recurrent_forward(double[:, ::1] w, double[:, ::1] u):
    """h_t = tanh(w @ h_{t-1} + u[t]) from h_{-1} = 0; returns (T, d) states."""
    cdef Py_ssize_t steps = u.shape[0]
    cdef Py_ssize_t dim = u.shape[1]
    h_arr = np.zeros((steps, dim))
    cdef double[:, ::1] h = h_arr
    cdef Py_ssize_t t, i, j
    cdef double acc
    for t in range(steps):
        for i in range(dim):
            acc = u[t, i]
            if t > 0:
                for j in range(dim):
                    acc += w[i, j] * h[t - 1, j]
            h[t, i] = tanh(acc)
    return h_arr


def recurrent_backward(double[:, ::1] w, double[:, ::1] h, double[:, ::1] dh):
    """Backward-through-time pass for recurrent_forward; returns (dw, du)."""
    cdef Py_ssize_t steps = h.shape[0]
    cdef Py_ssize_t dim = h.shape[1]
    dw_arr = np.zeros((dim, dim))
    du_arr = np.zeros((steps, dim))
    cdef double[:, ::1] dw = dw_arr
    cdef double[:, ::1] du = du_arr
    carry_arr = np.zeros(dim)
    cdef double[::1] carry = carry_arr
    next_arr = np.zeros(dim)
    cdef double[::1] nxt = next_arr
    cdef Py_ssize_t t, i, j
    cdef double da
    for t in range(steps - 1, -1, -1):
        for i in range(dim):
            da = (dh[t, i] + carry[i]) * (1.0 - h[t, i] * h[t, i])
            du[t, i] = da
        if t > 0:
            for i in range(dim):
                da = du[t, i]
                for j in range(dim):
                    dw[i, j] += da * h[t - 1, j]
            for j in range(dim):
                nxt[j] = 0.0
            for i in range(dim):
                da = du[t, i]
                for j in range(dim):
                    nxt[j] += w[i, j] * da
            for j in range(dim):
                carry[j] = nxt[j]
        else:
            for j in range(dim):
                carry[j] = 0.0
    return dw_arr, du_arr
