"""Central-difference gradient verification for layers and whole networks."""

from __future__ import annotations

import numpy as np

from .layers import softmax_cross_entropy
from .network import Network, network_backward, network_forward


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / denom))


def jitter(x: np.ndarray, scale: float = 1e-4) -> np.ndarray:
    """Add small distinct offsets so max-pool windows have unique maxima."""
    ramp = np.linspace(0.0, 1.0, x.size, dtype=np.float64).reshape(x.shape)
    return x.astype(np.float64) + scale * ramp


def randomize_for_check(net: Network, seed: int = 0) -> Network:
    """Re-draw parameters at fan-in scale with nonzero biases.

    Check instances need O(1) pre-activations: tiny weights leave every relu
    near its kink, where an epsilon perturbation flips the branch and the
    finite difference no longer matches the analytic gradient.
    """
    rng = np.random.default_rng(seed)
    out = net.copy()
    for i, p in enumerate(out.params):
        if "w" in p:
            fan_in = int(np.prod(p["w"].shape[1:]))
            sigma = np.sqrt(2.0 / fan_in)
            if i == len(out.params) - 1:
                sigma /= 8.0  # keep logits O(1) so softmax does not saturate
            p["w"] = (rng.standard_normal(p["w"].shape) * sigma).astype(p["w"].dtype)
            p["b"] = (rng.standard_normal(p["b"].shape) * 0.1).astype(p["b"].dtype)
    return out


def gradient_check(net: Network, x: np.ndarray, labels,
                   epsilon: float | tuple[float, ...] = 1e-5) -> float:
    """Max relative error between analytic and numeric parameter gradients.

    Runs in float64 with dropout off (eval mode, center crop) and the input
    jittered against max-pool ties. Perturbs every parameter element. When
    ``epsilon`` is a tuple, each element keeps its best step size (adaptive
    step: small steps lose to roundoff, large ones to curvature).
    """
    epsilons = (epsilon,) if isinstance(epsilon, float) else tuple(epsilon)
    net64 = net.astype(np.float64)
    x64 = jitter(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels)

    def loss_of() -> float:
        logits, _ = network_forward(net64, x64, mode="eval")
        loss, _, _ = softmax_cross_entropy(logits, labels)
        return loss

    logits, cache = network_forward(net64, x64, mode="eval")
    _, _, dlogits = softmax_cross_entropy(logits, labels)
    _, grads = network_backward(net64, cache, dlogits)

    worst = 0.0
    for p, g in zip(net64.params, grads):
        for key, theta in p.items():
            analytic = g[key].reshape(-1)
            flat = theta.reshape(-1)
            for i in range(flat.size):
                best = np.inf
                for eps in epsilons:
                    orig = flat[i]
                    flat[i] = orig + eps
                    hi = loss_of()
                    flat[i] = orig - eps
                    lo = loss_of()
                    flat[i] = orig
                    numeric = (hi - lo) / (2.0 * eps)
                    denom = max(abs(analytic[i]), abs(numeric), 1e-12)
                    best = min(best, abs(analytic[i] - numeric) / denom)
                worst = max(worst, best)
    return worst


def layer_gradient_check(forward, backward, inputs, epsilon: float = 1e-5,
                         output_weights=None) -> float:
    """Check a standalone forward/backward pair against finite differences.

    ``forward`` maps the tuple of input arrays to (output, cache);
    ``backward`` maps (cache, grad_out) to per-input gradients (same order).
    The scalar objective is sum(output * output_weights).
    """
    inputs = [np.asarray(a, dtype=np.float64) for a in inputs]
    y, cache = forward(*inputs)
    if output_weights is None:
        rng = np.random.default_rng(0)
        output_weights = rng.standard_normal(y.shape)
    grads = backward(cache, output_weights.astype(np.float64))
    if not isinstance(grads, tuple):
        grads = (grads,)

    worst = 0.0
    for arr, analytic in zip(inputs, grads):
        flat = arr.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = float(np.sum(forward(*inputs)[0] * output_weights))
            flat[i] = orig - epsilon
            lo = float(np.sum(forward(*inputs)[0] * output_weights))
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * epsilon)
        worst = max(worst, relative_error(analytic.reshape(-1), numeric))
    return worst
