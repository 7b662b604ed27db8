"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np

from conftest import central_diff, rel_err
from motortemp.neural import CnnSpec, Conv1d, Dense, MlpSpec, init_params
from motortemp.synth import NODES, CommandSeries, LptnParams, simulate_lptn

H = 1e-5
TOL = 1e-4


def layer_gradient_error(layer, x, seed=0, train=False):
    """Worst relative error over input and parameter gradients of ``sum(R * layer(x))``."""
    out, _ = layer.forward(x, train=train, rng=np.random.default_rng(seed))
    R = np.random.default_rng(seed + 1).normal(size=out.shape)

    def f():
        return float(np.sum(R * layer.forward(x, train=train, rng=np.random.default_rng(seed))[0]))

    _, cache = layer.forward(x, train=train, rng=np.random.default_rng(seed))
    dx, grads = layer.backward(cache, R)
    errs = [rel_err(dx, central_diff(f, x, H))]
    errs += [rel_err(g, central_diff(f, p, H)) for p, g in zip(layer.params, grads)]
    return max(errs)


def network_gradient_error(net, x, seed=0, train=False):
    out, _ = net.forward(x, train=train, rng=np.random.default_rng(seed))
    R = np.random.default_rng(seed + 1).normal(size=out.shape)

    def f():
        return float(np.sum(R * net.forward(x, train=train, rng=np.random.default_rng(seed))[0]))

    _, cache = net.forward(x, train=train, rng=np.random.default_rng(seed))
    grads = net.backward(cache, R)
    return max(rel_err(g, central_diff(f, p, H)) for p, g in zip(net.params, grads))


def random_dense(rng, activation):
    fi, fo = rng.integers(1, 6, size=2)
    return Dense(rng.normal(size=(fi, fo)), rng.normal(size=fo), activation), rng.normal(size=(3, fi))


def random_conv(rng, activation, dilation):
    s, c, f = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 4)
    layer = Conv1d(rng.normal(size=(s, c, f)), rng.normal(size=f), dilation, activation)
    return layer, rng.normal(size=(2, layer.extent + rng.integers(0, 4), c))


def random_mlp(rng, activation, dropout=0.0):
    widths = tuple(int(w) for w in rng.integers(2, 6, size=rng.integers(1, 3)))
    n_in = int(rng.integers(2, 6))
    net = init_params(MlpSpec(widths, dropout, activation), n_in, int(rng.integers(1 << 30)))
    _randomize_biases(net, rng)
    return net, rng.normal(size=(4, n_in))


def random_cnn(rng, activation, pooling):
    n = int(rng.integers(1, 4))
    sizes = tuple(int(v) for v in rng.integers(1, 4, size=n))
    dil = tuple(int(v) for v in rng.integers(1, 4, size=n))
    filters = tuple(int(v) for v in rng.integers(1, 4, size=n))
    spec = CnnSpec(filters, sizes, dil, seq_len=1 + sum((s - 1) * d for s, d in zip(sizes, dil)) + int(rng.integers(0, 3)),
                   activation=activation, pooling=pooling)
    n_in = int(rng.integers(1, 4))
    net = init_params(spec, n_in, int(rng.integers(1 << 30)))
    _randomize_biases(net, rng)
    return net, rng.normal(size=(2, spec.seq_len, n_in))


def _randomize_biases(net, rng):
    # zero biases make relu kinks line up; spread them out
    for layer in net.layers:
        if layer.params:
            layer.b = rng.normal(scale=0.5, size=layer.b.shape)


def ewma_direct(x, span):
    """Closed-form weighted sum: sum_k a(1-a)^k x[t-k] plus the weight left on x[0]."""
    a = 2.0 / (span + 1.0)
    out = np.empty(len(x))
    for t in range(len(x)):
        k = np.arange(t)
        out[t] = np.sum(a * (1 - a) ** k * x[t - k]) + (1 - a) ** t * x[0]
    return out


def soft_threshold_1d(x, y, l1, l2):
    """Exact minimizer of mean((y - b - beta*x)^2) + l2*beta^2 + l1*|beta|."""
    xc, yc = x - x.mean(), y - y.mean()
    sxy, sxx = np.mean(xc * yc), np.mean(xc * xc)
    beta = np.sign(sxy) * max(2 * abs(sxy) - l1, 0.0) / (2 * sxx + 2 * l2)
    return beta, y.mean() - beta * x.mean()


def solve_by_elimination(A, b):
    """Gaussian elimination with partial pivoting on plain Python lists."""
    n = len(b)
    M = [list(map(float, A[i])) + [float(b[i])] for i in range(n)]
    for c in range(n):
        piv = max(range(c, n), key=lambda r: abs(M[r][c]))
        M[c], M[piv] = M[piv], M[c]
        for r in range(c + 1, n):
            f = M[r][c] / M[c][c]
            for k in range(c, n + 1):
                M[r][k] -= f * M[c][k]
    x = [0.0] * n
    for r in reversed(range(n)):
        x[r] = (M[r][n] - sum(M[r][k] * x[k] for k in range(r + 1, n))) / M[r][r]
    return x


def steady_oracle(p: LptnParams, torque, speed):
    """Build G*T = P + G_amb*T_amb by hand from the edge list and solve it."""
    n = len(NODES)
    G = [[0.0] * n for _ in range(n)]
    for a, b, g in p.conductances:
        i, j = NODES.index(a), NODES.index(b)
        G[i][i] += g
        G[j][j] += g
        G[i][j] -= g
        G[j][i] -= g
    rhs = [0.0] * n
    for k, g in p.ambient_conductance.items():
        i = NODES.index(k)
        G[i][i] += g
        rhs[i] += g * p.T_amb
    current = 30.6 * abs(torque) / 97.0
    rhs[0] += p.k_cu * current**2
    rhs[1] += 0.5 * p.k_mech * speed**2
    rhs[2] += 0.5 * p.k_mech * speed**2
    return solve_by_elimination(G, rhs)


def random_params(rng) -> LptnParams:
    return LptnParams(
        capacitance={
            "winding": rng.uniform(1000, 8000),
            "bearing_DE": rng.uniform(500, 4000),
            "bearing_NDE": rng.uniform(500, 4000),
            "shell": rng.uniform(5000, 30000),
        },
        conductances=(
            ("winding", "shell", rng.uniform(5, 15)),
            ("winding", "bearing_DE", rng.uniform(0, 0.5)),
            ("winding", "bearing_NDE", rng.uniform(0, 0.5)),
            ("bearing_DE", "shell", rng.uniform(1, 3)),
            ("bearing_NDE", "shell", rng.uniform(1, 3)),
        ),
        ambient_conductance={"shell": rng.uniform(10, 30), "bearing_DE": rng.uniform(0, 0.5)},
        k_cu=rng.uniform(0.2, 1.0),
        k_mech=rng.uniform(5e-6, 3e-5),
        T_amb=rng.uniform(15, 35),
        sigma_noise=0.0,
    )


def steady_state_error(p, torque, speed, duration=150_000):
    prof = simulate_lptn(CommandSeries.constant(torque, speed, duration), p, seed=0)
    final = prof.values[-1]
    sim = [final[4], final[5], final[6], final[3]]  # winding, DE, NDE, shell
    return max(abs(a - b) for a, b in zip(sim, steady_oracle(p, torque, speed)))
