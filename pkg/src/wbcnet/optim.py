"""Cross-entropy loss, the Adam optimizer, and the finite-difference checker.

Adam defaults are lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8, the de facto
standard configuration. The loss reduces by mean over the batch so values are
comparable across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DistributionError, LabelError, NumericError, ShapeError

PROB_CLAMP = 1e-12
ROW_SUM_TOL = 1e-6


@dataclass
class LossValue:
    """Scalar loss plus the gradient w.r.t. the pre-softmax logits."""
    value: float
    grad_logits: np.ndarray


def cross_entropy(probabilities: np.ndarray, labels) -> LossValue:
    """Sparse categorical cross-entropy over a batch of probability rows.

    ``probabilities`` is ``[batch, n_classes]`` with rows summing to 1;
    ``labels`` are integer class indices. The returned gradient is the fused
    softmax+cross-entropy gradient (p - onehot)/batch, valid when the
    probabilities came from a softmax over the logits being differentiated.
    """
    p = np.asarray(probabilities)
    if p.ndim != 2:
        raise ShapeError(f"expected [batch, n_classes] probabilities, got shape {p.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (p.shape[0],):
        raise ShapeError(f"expected {p.shape[0]} labels, got shape {labels.shape}")
    n_classes = p.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes})")
    row_sums = p.sum(axis=1)
    if not np.all(np.abs(row_sums - 1.0) <= ROW_SUM_TOL):
        worst = np.abs(row_sums - 1.0).max()
        raise DistributionError(f"probability rows must sum to 1 (worst deviation {worst:.3g})")
    batch = p.shape[0]
    picked = p[np.arange(batch), labels]
    value = float(-np.log(np.clip(picked, PROB_CLAMP, 1.0)).mean())
    grad = np.array(p, dtype=np.float64 if p.dtype == np.float64 else np.float32)
    grad[np.arange(batch), labels] -= 1.0
    grad /= batch
    return LossValue(value=value, grad_logits=grad)


class AdamState:
    """Adam with bias correction for a single parameter tensor.

    The update is m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g^2, then
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) with the usual 1/(1-b^t)
    bias corrections. ``step`` mutates the parameter array in place (scratch
    buffers are reused across steps to avoid re-allocating optimizer-sized
    temporaries) and returns it. One state instance serves one tensor.
    """

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        if learning_rate <= 0:
            raise ValueError(f"learning rate must be positive, got {learning_rate}")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = None
        self.v = None
        self._t1 = None
        self._t2 = None

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if params.shape != grads.shape:
            raise ShapeError(f"params shape {params.shape} != grads shape {grads.shape}")
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
            self._t1 = np.empty_like(params)
            self._t2 = np.empty_like(params)
        elif self.m.shape != params.shape:
            raise ShapeError(f"state was initialized for shape {self.m.shape}, "
                             f"got params of shape {params.shape}")
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        m, v, t1, t2 = self.m, self.v, self._t1, self._t2
        g = np.asarray(grads, dtype=params.dtype)

        m *= b1
        np.multiply(g, 1.0 - b1, out=t1)
        m += t1
        v *= b2
        np.multiply(g, g, out=t1)
        t1 *= 1.0 - b2
        v += t1

        np.divide(v, 1.0 - b2 ** t, out=t1)
        np.sqrt(t1, out=t1)
        t1 += self.epsilon
        np.divide(m, t1, out=t2)
        t2 *= self.learning_rate / (1.0 - b1 ** t)
        params -= t2
        return params


def gradient_check(f, x: np.ndarray, analytic_grad: np.ndarray, *,
                   step: float = 1e-5, indices=None) -> float:
    """Max relative error between ``analytic_grad`` and central differences of ``f``.

    ``f`` maps a tensor like ``x`` to a scalar. Each probed coordinate i is
    perturbed by +-step and the numeric slope (f(x+h e_i) - f(x-h e_i)) / 2h is
    compared as |a-n| / max(|a|, |n|, 1e-8). ``indices`` restricts the probe to
    a subset of flat coordinates (default: all of them).
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ShapeError(f"analytic gradient shape {analytic.shape} != x shape {x.shape}")
    flat_idx = range(x.size) if indices is None else indices
    worst = 0.0
    xw = x.copy()
    flat = xw.ravel()
    for i in flat_idx:
        orig = flat[i]
        flat[i] = orig + step
        f_plus = float(f(xw))
        flat[i] = orig - step
        f_minus = float(f(xw))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"f is non-finite near coordinate {i}")
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = analytic.ravel()[i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
