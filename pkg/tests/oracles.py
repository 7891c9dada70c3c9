"""Brute-force references shared by the unit and acceptance tests."""

import numpy as np

from videopower.model import RATE_FLOOR, rates


def grid_best(params, profile, gains, n=200):
    """Best weighted-sum PSNR over an n x n power grid for K=2."""
    assert params.K == 2
    axis = np.linspace(0.0, params.Pmax, n)
    P1, P2 = np.meshgrid(axis, axis, indexing="ij")
    P = np.stack([P1.ravel(), P2.ravel()], axis=1)
    P = P[P.sum(axis=1) <= params.Pmax * (1 + 1e-12)]
    R = rates(params, np.broadcast_to(gains, (len(P), 2, 2)), P)
    ok = np.all(R >= RATE_FLOOR, axis=1)
    R = R[ok]
    q = profile.alpha * np.log(R / 1e3) + profile.beta
    ok2 = np.all(q >= profile.q_min, axis=1)
    if not ok2.any():
        return -np.inf
    return float((q[ok2] @ profile.omega).max())


def boundary_best(params, profile, gains, n=200_001):
    """Fine scan of the full-budget segment for K=2 (the optimum lies on it)."""
    s = np.linspace(0.0, 1.0, n)
    P = np.stack([s, 1 - s], axis=1) * params.Pmax
    R = rates(params, np.broadcast_to(gains, (n, 2, 2)), P)
    with np.errstate(divide="ignore"):
        q = profile.alpha * np.log(R / 1e3) + profile.beta
    q[np.any(R < RATE_FLOOR, axis=1)] = -np.inf
    return float((q @ profile.omega).max())



def _kink_pattern(net, X):
    # which rectifier and output-clip decisions are active
    pattern = []
    h = X
    for w, b in zip(net.weights, net.biases):
        a = h @ w + b
        pattern.append(a > 0)
        h = np.maximum(a, 0.0)
    return pattern


def gradient_check(net, X, Y, per_layer=100, rng=None, floor=1e-12):
    """Central differences on sampled coordinates of every layer.

    Weights and biases of a layer are sampled together. Coordinates whose
    perturbation flips any rectifier or output-clip decision are skipped, so
    the comparison stays on smooth pieces. Returns one
    ``(layer, sampled count, max relative error)`` tuple per layer.
    """
    from videopower.neural import backward, loss

    rng = np.random.default_rng(0) if rng is None else rng
    _, grads = backward(net, X, Y)
    base = _kink_pattern(net, X)
    report = []
    for layer in range(len(net.weights)):
        arrays = [net.weights[layer].reshape(-1), net.biases[layer].reshape(-1)]
        garrays = [grads[2 * layer].reshape(-1), grads[2 * layer + 1].reshape(-1)]
        coords = [(a, i) for a in (0, 1) for i in range(arrays[a].size)]
        want = min(per_layer, len(coords))
        worst, used = 0.0, 0
        for c in rng.permutation(len(coords)):
            if used == want:
                break
            a, i = coords[c]
            flat = arrays[a]
            theta = flat[i]
            h = 1e-5 * max(1.0, abs(theta))
            flat[i] = theta + h
            up, pat_up = loss(net, X, Y), _kink_pattern(net, X)
            flat[i] = theta - h
            down, pat_down = loss(net, X, Y), _kink_pattern(net, X)
            flat[i] = theta
            if any(not np.array_equal(b, u) or not np.array_equal(b, d)
                   for b, u, d in zip(base, pat_up, pat_down)):
                continue
            num = (up - down) / (2 * h)
            ana = garrays[a][i]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
            used += 1
        report.append((layer, used, worst))
    return report
