"""Independent numerical oracles shared by the unit and acceptance tests."""
from fractions import Fraction

import numpy as np

from phytaylor.datagen import vehicle_knowledge
from phytaylor.editing import LayerPlan, build_model
from phytaylor.knowledge import KnowledgeSpec, example1_spec
from phytaylor.network import backward, forward, predict
from phytaylor.selfcorrect import CommandBox, CorrectionProblem, SafetyQuadratic
from phytaylor.suppressor import SuppressorConfig


def half_sse(model, x, t):
    return 0.5 * float(np.sum((predict(model, x) - t) ** 2))


def probe_gradient(model, x, t, layer, idx, h=1e-6):
    """(backprop, central difference) for one weight entry of 0.5 * ||y - t||^2."""
    y, trace = forward(model, x)
    g = backward(model, trace, y - t).weights[layer][idx]
    W = model.layers[layer].W
    orig = W[idx]
    W[idx] = orig + h
    up = half_sse(model, x, t)
    W[idx] = orig - h
    down = half_sse(model, x, t)
    W[idx] = orig
    return g, (up - down) / (2 * h)


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_architectures(seed=0):
    """Models spanning both activations, with and without later-layer suppressors."""
    rng = np.random.default_rng(seed)
    latent = SuppressorConfig((False, False, False, True), (1.0, 1.0, 1.0, 0.5),
                              (0.0, 0.0, 0.0, 1.0), (False, False, False, True))
    every = SuppressorConfig.uniform(3, 1.0, 0.0, noise_positive=False)
    models = [
        build_model(example1_spec(), [LayerPlan(3, 2, "tanh")], rng=rng),
        build_model(example1_spec(), [LayerPlan(4, 2, "tanh"), LayerPlan(3, 2, "relu", latent)],
                    rng=rng),
        build_model(KnowledgeSpec.unknown(2, 2, 2),
                    [LayerPlan(3, 2, "relu"), LayerPlan(4, 1, "tanh", every),
                     LayerPlan(2, 2, "identity")], rng=rng, init_std=0.3),
        build_model(vehicle_knowledge(2), [LayerPlan(7, 2, "tanh"), LayerPlan(6, 2, "tanh")],
                    rng=rng, init_std=0.3),
    ]
    for m in models:
        # non-zero weights everywhere trainable so no gradient path is trivially idle
        for layer in m.layers:
            layer.W = np.where(layer.M != 0, rng.normal(0, 0.3, layer.W.shape), 0.0)
    return models


def gradient_probes(n_probes, seed=0):
    """Relative errors of backprop against central differences on random probes."""
    rng = np.random.default_rng(seed)
    models = gradient_architectures(seed)
    errors = []
    for k in range(n_probes):
        model = models[k % len(models)]
        x = rng.uniform(-1, 1, (3, model.input_dim))
        t = rng.normal(size=(3, model.terminal_out_dim))
        layer = int(rng.integers(len(model.layers)))
        trainable = np.argwhere(model.layers[layer].M != 0)
        idx = tuple(trainable[rng.integers(len(trainable))])
        g, fd = probe_gradient(model, x, t, layer, idx)
        errors.append(relative_error(g, fd))
    return np.array(errors)


def randomize_trainable(model, rng, std=0.5):
    for layer in model.layers:
        layer.W = np.where(layer.M != 0, rng.normal(0, std, layer.W.shape), 0.0)


def quad_value(b, sign, P, u):
    """Direct substitution b + sign * u^T P u, written out by hand."""
    t, g = u
    return b + sign * (P[0][0] * t * t + 2 * P[0][1] * t * g + P[1][1] * g * g)


def random_correction_problem(rng):
    """A problem whose target metrics are reached by a known in-box command.

    P1 has distinct positive eigenvalues, P2 is a scaled PSD matrix, the
    targets are the metrics of a hidden interior point, and the returned
    command violates both bounds.
    """
    while True:
        th = rng.uniform(0, np.pi)
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        lam = np.sort(rng.uniform(0.1, 2.0, 2)) * [1.0, rng.uniform(1.2, 3.0)]
        P1 = R @ np.diag(lam) @ R.T
        B = rng.normal(size=(2, 2))
        P2 = rng.uniform(0.2, 2.0) * (B @ B.T + 0.1 * np.eye(2))
        q1 = SafetyQuadratic("plus", rng.uniform(0.0, 0.5), (P1 + P1.T) / 2)
        q2 = SafetyQuadratic("minus", rng.uniform(2.0, 4.0), (P2 + P2.T) / 2)
        box = CommandBox.symmetric(rng.uniform(0.8, 1.5, 2))
        hidden = rng.uniform(-0.6, 0.6, 2) * np.array(box.upper)
        c = (float(q1(hidden)), float(q2(hidden)))
        for _ in range(50):
            u = rng.uniform(box.lower, box.upper)
            if q1(u) > c[0] + 1e-3 and q2(u) > c[1] + 1e-3:
                return CorrectionProblem((q1, q2), c, box), u


def valid_suppressor_sample(rng, exact=False):
    """(h, w, kappa, rho) satisfying |rho| >= |h + w| |kappa|, sign(rho) = -sign(kappa)."""
    h, w = rng.uniform(-5, 5, 2)
    while w == 0:
        w = rng.uniform(-5, 5)
    kappa = rng.uniform(0.1, 3) * rng.choice([-1, 1])
    rho = -np.sign(kappa) * abs(h + w) * abs(kappa) * rng.uniform(1.0, 4.0)
    if exact:
        return tuple(Fraction(float(v)) for v in (h, w, kappa, rho))
    return float(h), float(w), float(kappa), float(rho)
