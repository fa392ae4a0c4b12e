"""Pure-numpy recurrence kernels (fallback for the compiled extension).

Both backends implement the same two functions; ``kernels`` picks one at
import time.
"""

import numpy as np


def recurrent_forward(w: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Run h_t = tanh(w @ h_{t-1} + u[t]) from h_{-1} = 0.

    w: (d, d) recurrence matrix; u: (T, d) per-step additive input.
    Returns the hidden states as a (T, d) array.
    """
    steps, dim = u.shape
    h = np.zeros((steps, dim))
    prev = np.zeros(dim)
    for t in range(steps):
        prev = np.tanh(w @ prev + u[t])
        h[t] = prev
    return h


def recurrent_backward(
    w: np.ndarray, h: np.ndarray, dh: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Backpropagate through :func:`recurrent_forward`.

    h: (T, d) states from the forward pass; dh: (T, d) direct gradients
    flowing into each state.  Returns (dw, du) where du[t] is the gradient
    with respect to u[t].
    """
    steps, dim = h.shape
    dw = np.zeros((dim, dim))
    du = np.zeros((steps, dim))
    carry = np.zeros(dim)
    for t in range(steps - 1, -1, -1):
        total = dh[t] + carry
        da = total * (1.0 - h[t] * h[t])
        if t > 0:
            dw += np.outer(da, h[t - 1])
            carry = w.T @ da
        else:
            carry = np.zeros(dim)  # h_{-1} is the zero constant
        du[t] = da
    return dw, du
