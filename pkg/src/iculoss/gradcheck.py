"""Finite-difference verification of every analytic gradient in the package.

Each suite draws random small instances (N <= 8, K <= 4, D <= 3), flattens
all differentiable inputs into one vector, and compares the analytic
gradient against central differences from ``oracle.finite_diff_gradient``.
"""

import time

import numpy as np

from . import baselines, head, network
from .oracle import GradCheckReport, finite_diff_gradient, grad_check
from .rng import Rng

EPS = 1e-4
TOL = 1e-5


def _pack(arrays):
    return np.concatenate([a.reshape(-1) for a in arrays])


def _unpack(flat, shapes):
    out, off = [], 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(flat[off:off + n].reshape(s))
        off += n
    return out


def _names(prefixes, shapes):
    return [f"{p}{list(i)}" for p, s in zip(prefixes, shapes) for i in np.ndindex(*s)]


def _draw_sizes(rng):
    n, k, d = (int(v) for v in rng.next_u64(3) % np.array([8, 3, 3], dtype=np.uint64))
    return n + 1, k + 2, d + 1


def _labels(rng, n, k):
    return (rng.next_u64(n) % np.uint64(k)).astype(np.int64)


def _check(fn, grads, arrays, prefixes, tol):
    shapes = [a.shape for a in arrays]
    numeric = finite_diff_gradient(lambda f: fn(*_unpack(f, shapes)), _pack(arrays), EPS)
    return grad_check(_pack(grads), numeric, tol, _names(prefixes, shapes))


def icu_instance(rng, tol=TOL, sign_flip=False):
    n, k, d = _draw_sizes(rng)
    x = rng.normal(n * d).reshape(n, d)
    mu = rng.normal(k * d).reshape(k, d)
    lv = 0.5 * rng.normal(k * d).reshape(k, d)
    labels = _labels(rng, n, k)
    a, g, l1, l2 = 0.5 * rng.uniform(4)
    cfg = head.MarginConfig(a, g, l1, l2)
    gb = head.icu_loss_backward(x, labels, head.ClassGaussians(mu, lv), cfg)
    d_mu = -gb.d_mu if sign_flip else gb.d_mu

    def f(x_, mu_, lv_):
        return head.icu_loss_forward(x_, labels, head.ClassGaussians(mu_, lv_), cfg).total

    return _check(f, [gb.d_x, d_mu, gb.d_log_var], [x, mu, lv], ["x", "mu", "log_var"], tol)


def softmax_instance(rng, tol=TOL):
    n, k, d = _draw_sizes(rng)
    x = rng.normal(n * d).reshape(n, d)
    w = rng.normal(k * d).reshape(k, d)
    labels = _labels(rng, n, k)
    _, g = baselines.softmax_ce(x, labels, baselines.LinearClassifier(w))

    def f(x_, w_):
        return baselines.softmax_ce(x_, labels, baselines.LinearClassifier(w_))[0]

    return _check(f, [g["x"], g["w"]], [x, w], ["x", "w"], tol)


def center_instance(rng, tol=TOL):
    n, k, d = _draw_sizes(rng)
    x = rng.normal(n * d).reshape(n, d)
    w = rng.normal(k * d).reshape(k, d)
    c = rng.normal(k * d).reshape(k, d)
    lam = float(rng.uniform(1)[0])
    labels = _labels(rng, n, k)
    _, g = baselines.center_loss(x, labels, baselines.LinearClassifier(w), baselines.Centers(c, lam))

    def f(x_, w_, c_):
        return baselines.center_loss(x_, labels, baselines.LinearClassifier(w_), baselines.Centers(c_, lam))[0]

    return _check(f, [g["x"], g["w"], g["c"]], [x, w, c], ["x", "w", "c"], tol)


def lgm_instance(rng, tol=TOL):
    n, k, d = _draw_sizes(rng)
    x = rng.normal(n * d).reshape(n, d)
    mu = rng.normal(k * d).reshape(k, d)
    lv = 0.5 * rng.normal(k * d).reshape(k, d)
    alpha, lam = 0.5 * rng.uniform(2)
    labels = _labels(rng, n, k)
    _, g = baselines.lgm_loss(x, labels, baselines.LgmParams(mu, lv, alpha, lam))

    def f(x_, mu_, lv_):
        return baselines.lgm_loss(x_, labels, baselines.LgmParams(mu_, lv_, alpha, lam))[0]

    return _check(f, [g["x"], g["mu"], g["log_var"]], [x, mu, lv], ["x", "mu", "log_var"], tol)


def mlp_instance(rng, tol=TOL, sizes=(4, 3, 2), num_classes=2, n=4):
    """Total ICU loss through a small ReLU net, w.r.t. every weight and head parameter.

    Instances with a hidden pre-activation within 1e-3 of zero are redrawn:
    central differences straddling the ReLU kink are not a valid reference.
    """
    while True:
        mlp = network.Mlp.init(list(sizes), rng)
        for layer in mlp.layers:
            layer.bias[:] = 0.1 * rng.normal(layer.bias.size)
        xin = rng.normal(n * sizes[0]).reshape(n, sizes[0])
        _, cache = network.forward(mlp, xin)
        if all(np.min(np.abs(z)) > 1e-3 for _, z in cache[:-1]):
            break
    gauss = head.ClassGaussians(rng.normal(num_classes * sizes[-1]).reshape(num_classes, -1),
                                0.3 * rng.normal(num_classes * sizes[-1]).reshape(num_classes, -1))
    labels = np.arange(n) % num_classes
    cfg = head.MarginConfig(0.1, 0.2, 0.1, 0.1)

    emb, cache = network.forward(mlp, xin)
    gb = head.icu_loss_backward(emb, labels, gauss, cfg)
    net_grads, _ = network.backward(mlp, cache, gb.d_x)
    names = list(mlp.params())
    arrays = [p.copy() for p in mlp.params().values()] + [gauss.mu, gauss.log_var]
    grads = [net_grads[k] for k in names] + [gb.d_mu, gb.d_log_var]

    def f(*flat):
        layers = [network.DenseLayer(flat[2 * i], flat[2 * i + 1]) for i in range(len(mlp.layers))]
        e, _ = network.forward(network.Mlp(layers), xin)
        return head.icu_loss_forward(e, labels, head.ClassGaussians(flat[-2], flat[-1]), cfg).total

    return _check(f, grads, arrays, names + ["mu", "log_var"], tol)


SUITES = {
    "icu": icu_instance,
    "softmax": softmax_instance,
    "center": center_instance,
    "lgm": lgm_instance,
    "mlp_icu": mlp_instance,
}


def run_suite(seed=0, instances=100, tol=TOL, sign_flip=False):
    """Worst report per suite over ``instances`` random draws, plus timing.

    Suite ``i`` uses the stream ``Rng(seed).spawn(i)``.
    """
    base = Rng(seed)
    results = {}
    t0 = time.perf_counter()
    for i, (name, fn) in enumerate(SUITES.items()):
        rng = base.spawn(i)
        worst = GradCheckReport(0.0, None, True, tol)
        for j in range(instances):
            rep = fn(rng, tol, sign_flip=True) if (sign_flip and name == "icu") else fn(rng, tol)
            if rep.max_relative_error >= worst.max_relative_error:
                worst = GradCheckReport(rep.max_relative_error, f"instance {j}: {rep.worst_coordinate}",
                                        rep.max_relative_error <= tol, tol)
        results[name] = worst
    return results, time.perf_counter() - t0
