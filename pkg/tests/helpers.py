import numpy as np

from ipbasis.network import NetworkArch, ReadoutLayer, init_network


def random_net(rng, input_dim, hidden, n_basis, n_out, solution_dim=1):
    R = init_network(NetworkArch(input_dim, hidden, n_basis), int(rng.integers(1 << 31)))
    for b in R.biases:
        b += rng.normal(size=b.shape) * 0.2
    cols = n_out * solution_dim
    L = ReadoutLayer(rng.normal(size=(n_basis, cols)), rng.normal(size=cols), n_out, solution_dim)
    return R, L


def fd_gradient(f, p, h=1e-5):
    """Central differences of scalar ``f()`` w.r.t. array ``p`` (mutated in place)."""
    g = np.zeros_like(p)
    flat, gflat = p.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        step = h * max(1.0, abs(old))
        flat[k] = old + step
        fp = f()
        flat[k] = old - step
        fm = f()
        flat[k] = old
        gflat[k] = (fp - fm) / (2 * step)
    return g


def relative_errors(g, fd, floor=1e-7):
    """Relative error with an absolute floor tied to the gradient scale."""
    g, fd = np.ravel(g), np.ravel(fd)
    scale = floor * (1.0 + np.max(np.abs(fd))) if fd.size else floor
    return np.abs(g - fd) / np.maximum(np.maximum(np.abs(fd), np.abs(g)), scale)
