# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled closed-loop kernel. Arithmetic mirrors ``_loop_py.run_loop`` op for op."""
import numpy as np

from libc.math cimport exp


cdef inline double _sigmoid(double u) nogil:
    cdef double z
    if u >= 0.0:
        return 1.0 / (1.0 + exp(-u))
    z = exp(u)
    return z / (1.0 + z)


def run_loop(double[::1] setpoints, double[::1] noise, bint noisy,
             double a, double amp, double rate, double y0,
             double beta0, double kp, double ki, double beta_min,
             int window, double[::1] weights, bint weighted,
             bint positional, bint smoothing):
    cdef Py_ssize_t n = setpoints.shape[0]
    cdef Py_ssize_t t, j, idx, count = 0, head = 0
    cdef double y = y0, beta = beta0, prev_error = 0.0, err_sum = 0.0
    cdef double raw, ys, acc, e, d_p, d_i

    kl_raw_arr = np.empty(n)
    kl_s_arr = np.empty(n)
    beta_arr = np.empty(n)
    buf_arr = np.zeros(max(window, 1))
    cdef double[::1] kl_raw = kl_raw_arr
    cdef double[::1] kl_s = kl_s_arr
    cdef double[::1] betas = beta_arr
    cdef double[::1] buf = buf_arr

    with nogil:
        for t in range(n):
            betas[t] = beta
            y = y / (1.0 + a) + (a / (1.0 + a)) * (amp * exp(-rate * beta))
            if noisy:
                raw = y + noise[t]
                if not raw > 0.0:
                    raw = 0.0
            else:
                raw = y
            kl_raw[t] = raw

            if smoothing:
                # ring buffer; head is the slot of the oldest sample once full
                if count < window:
                    buf[count] = raw
                    count += 1
                else:
                    buf[head] = raw
                    head += 1
                    if head == window:
                        head = 0
                acc = 0.0
                if count < window or not weighted:
                    for j in range(count):
                        idx = head + j
                        if idx >= window:
                            idx -= window
                        acc += buf[idx]
                    ys = acc / count
                else:
                    for j in range(window):
                        idx = head + j
                        if idx >= window:
                            idx -= window
                        acc += weights[j] * buf[idx]
                    ys = acc
            else:
                ys = raw
            kl_s[t] = ys

            e = setpoints[t] - ys
            if positional:
                err_sum = err_sum + e
                beta = kp * _sigmoid(-e) - ki * err_sum
            else:
                d_p = kp * (_sigmoid(-e) - _sigmoid(-prev_error))
                d_i = -ki * e
                if beta < beta_min:
                    d_i = 0.0
                beta = beta + (d_p + d_i)
            if beta < beta_min:
                beta = beta_min
            prev_error = e

    return kl_raw_arr, kl_s_arr, beta_arr, beta
