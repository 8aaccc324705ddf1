"""Central finite differences, vectorized over a batch of points."""

import numpy as np


def central_gradient(fun, x, h=1e-5):
    """Gradient of a scalar field at each row of ``x``.

    ``fun`` maps an ``(N, d)`` array to ``(N,)`` values.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    out = np.empty_like(x)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        out[:, i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def central_jacobian(fun, x, h=1e-4):
    """Jacobian of a vector field at each row of ``x``; shape ``(N, d, d)``.

    Applied to an analytic gradient this gives a finite-difference Hessian,
    symmetrized before it is returned.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    jac = np.empty(x.shape + (d,))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        jac[:, :, i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return 0.5 * (jac + np.swapaxes(jac, 1, 2))


def hessian_eigen_range(fun_grad, x, h=1e-4):
    """Smallest and largest finite-difference Hessian eigenvalue at each point."""
    eig = np.linalg.eigvalsh(central_jacobian(fun_grad, x, h))
    return eig[:, 0], eig[:, -1]
