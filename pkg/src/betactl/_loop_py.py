"""Pure-Python closed-loop kernel, used when the compiled extension is unavailable."""
import math
from collections import deque

import numpy as np


def _sigmoid(u):
    if u >= 0.0:
        return 1.0 / (1.0 + math.exp(-u))
    z = math.exp(u)
    return z / (1.0 + z)


def run_loop(setpoints, noise, noisy, a, amp, rate, y0, beta0, kp, ki, beta_min,
             window, weights, weighted, positional, smoothing):
    n = len(setpoints)
    setpoints = setpoints.tolist()
    noise = noise.tolist() if noisy else None
    weights = weights.tolist()
    kl_raw = [0.0] * n
    kl_s = [0.0] * n
    betas = [0.0] * n
    buf = deque(maxlen=window)
    exp = math.exp
    y, beta, prev_error, err_sum = y0, beta0, 0.0, 0.0
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
            buf.append(raw)
            acc = 0.0
            if len(buf) < window or not weighted:
                for v in buf:
                    acc += v
                ys = acc / len(buf)
            else:
                for w, v in zip(weights, buf):
                    acc += w * v
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

    return np.array(kl_raw), np.array(kl_s), np.array(betas), beta
