"""Convex sample losses, the distributions that generate them, and local ERM.

Sample functions are stored in batches laid out as ``(machines, samples)``
so that a whole population of machines can be evaluated and minimized with
array operations.  Every evaluation method takes points shaped
``(machines, points, d)``.
"""

from __future__ import annotations

import dataclasses
import inspect
import math
from dataclasses import dataclass, field
from typing import Callable, ClassVar, Sequence

import numpy as np

from .numdiff import central_gradient

__all__ = [
    "DomainCube",
    "SampleBatch",
    "SampleFunction",
    "CallableLoss",
    "FunctionList",
    "QuadraticLoss",
    "LogisticLoss",
    "CubicPairLoss",
    "SquaredDistanceLoss",
    "MachineDataset",
    "LossDistribution",
    "RidgeDistribution",
    "LogisticDistribution",
    "CubicPairDistribution",
    "QuadraticDistribution",
    "make_ridge_distribution",
    "make_logistic_distribution",
    "make_cubic_pair_distribution",
    "make_quadratic_distribution",
    "make_distribution",
    "ERMConvergenceError",
    "erm_minimize",
    "erm_minimize_batch",
    "Assumption1Report",
    "check_assumption1",
]


@dataclass(frozen=True)
class DomainCube:
    """The box ``[lo, hi]^d``; ``[-1, 1]^d`` unless stated otherwise."""

    d: int
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be positive, got {self.d}")
        if not self.lo < self.hi:
            raise ValueError(f"empty cube [{self.lo}, {self.hi}]")

    @property
    def center(self) -> np.ndarray:
        return np.full(self.d, 0.5 * (self.lo + self.hi))

    def project(self, x):
        return np.clip(x, self.lo, self.hi)

    def contains(self, x, atol=0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo - atol) and np.all(x <= self.hi + atol))

    def uniform(self, rng, size):
        return rng.uniform(self.lo, self.hi, size=tuple(np.atleast_1d(size)) + (self.d,))


# ---------------------------------------------------------------------------
# sample functions


class SampleFunction:
    """A single convex sample loss: value and gradient at any point."""

    d: int
    smoothness: float = 1.0

    def values(self, points):
        raise NotImplementedError

    def grads(self, points):
        raise NotImplementedError

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        pts = theta.reshape(1, -1)
        return float(self.values(pts)[0]), self.grads(pts)[0]


class CallableLoss(SampleFunction):
    """Wrap plain callables ``value(points)`` and ``grad(points)``."""

    def __init__(self, value: Callable, grad: Callable, d: int, smoothness: float = 1.0):
        self._value = value
        self._grad = grad
        self.d = d
        self.smoothness = float(smoothness)

    def values(self, points):
        return np.asarray(self._value(np.atleast_2d(points)), dtype=float)

    def grads(self, points):
        return np.asarray(self._grad(np.atleast_2d(points)), dtype=float)


class SampleBatch:
    """Base class for a ``(machines, samples)`` grid of sample functions.

    Subclasses list the array attributes carrying the two leading batch axes
    in ``batched``; everything else is shared by all members.
    """

    batched: ClassVar[tuple[str, ...]] = ()
    floats_per_sample: ClassVar[int] = 1
    d: int

    @property
    def shape(self) -> tuple[int, int]:
        return getattr(self, self.batched[0]).shape[:2]

    def _map(self, fn):
        return dataclasses.replace(self, **{k: fn(getattr(self, k)) for k in self.batched})

    def take(self, machines=slice(None), samples=slice(None)):
        return self._map(lambda a: a[machines][:, samples])

    def pooled(self):
        """All members as the samples of a single machine."""
        return self._map(lambda a: a.reshape((1, -1) + a.shape[2:]))

    def at(self, i: int, j: int) -> SampleFunction:
        return BatchMember(self.take([i], [j]))

    def value(self, theta):
        raise NotImplementedError

    def grad(self, theta):
        raise NotImplementedError

    def smoothness(self):
        """Per-member Lipschitz constant of the gradient, shape ``(M, K)``."""
        raise NotImplementedError

    def mean_value(self, theta):
        return self.value(theta).mean(axis=2)

    def mean_grad(self, theta):
        return self.grad(theta).mean(axis=2)


class BatchMember(SampleFunction):
    def __init__(self, batch: SampleBatch):
        assert batch.shape == (1, 1)
        self.batch = batch
        self.d = batch.d
        self.smoothness = float(batch.smoothness()[0, 0])

    def values(self, points):
        return self.batch.value(np.atleast_2d(points)[None])[0, :, 0]

    def grads(self, points):
        return self.batch.grad(np.atleast_2d(points)[None])[0, :, 0]


@dataclass(frozen=True)
class FunctionList(SampleBatch):
    """Arbitrary :class:`SampleFunction` objects as the samples of one machine."""

    functions: tuple
    d: int
    batched: ClassVar[tuple[str, ...]] = ()

    @property
    def shape(self):
        return (1, len(self.functions))

    def take(self, machines=slice(None), samples=slice(None)):
        fns = np.empty(len(self.functions), dtype=object)
        fns[:] = self.functions
        return FunctionList(tuple(fns[samples]), self.d)

    def pooled(self):
        return self

    def value(self, theta):
        pts = theta[0]
        return np.stack([f.values(pts) for f in self.functions], axis=-1)[None]

    def grad(self, theta):
        pts = theta[0]
        return np.stack([f.grads(pts) for f in self.functions], axis=1)[None]

    def smoothness(self):
        return np.array([[f.smoothness for f in self.functions]])


@dataclass(frozen=True)
class QuadraticLoss(SampleBatch):
    """``scale * ((theta.x - y)^2 + reg * |theta|^2)``."""

    x: np.ndarray
    y: np.ndarray
    reg: float
    scale: float
    batched: ClassVar[tuple[str, ...]] = ("x", "y")

    @property
    def d(self):
        return self.x.shape[-1]

    @property
    def floats_per_sample(self):
        return self.d + 1

    def _residual(self, theta):
        return np.einsum("mpd,mkd->mpk", theta, self.x) - self.y[:, None, :]

    def value(self, theta):
        r = self._residual(theta)
        ridge = self.reg * np.sum(theta * theta, axis=-1)[..., None]
        return self.scale * (r * r + ridge)

    def grad(self, theta):
        r = self._residual(theta)
        return self.scale * (2 * r[..., None] * self.x[:, None] + 2 * self.reg * theta[:, :, None, :])

    def mean_grad(self, theta):
        # (x x^T) theta - y x averaged without materializing (M, P, K, d)
        k = self.x.shape[1]
        xx = np.einsum("mkd,mke->mde", self.x, self.x) / k
        xy = np.einsum("mk,mkd->md", self.y, self.x) / k
        g = np.einsum("mde,mpe->mpd", xx, theta) - xy[:, None, :] + self.reg * theta
        return 2 * self.scale * g

    def smoothness(self):
        return 2 * self.scale * (np.sum(self.x * self.x, axis=-1) + self.reg)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class LogisticLoss(SampleBatch):
    """``scale * (q * log(1 + e^{-z}) + (1 - q) * log(1 + e^{z}))`` with ``z = theta.x``.

    ``q`` is the probability of label +1; hard labels ``y`` enter as
    ``q = (1 + y) / 2``.
    """

    x: np.ndarray
    q: np.ndarray
    scale: float
    batched: ClassVar[tuple[str, ...]] = ("x", "q")

    @property
    def d(self):
        return self.x.shape[-1]

    @property
    def floats_per_sample(self):
        return self.d + 1

    def _z(self, theta):
        return np.einsum("mpd,mkd->mpk", theta, self.x)

    def value(self, theta):
        z = self._z(theta)
        q = self.q[:, None, :]
        return self.scale * (q * _softplus(-z) + (1 - q) * _softplus(z))

    def grad(self, theta):
        w = _sigmoid(self._z(theta)) - self.q[:, None, :]
        return self.scale * w[..., None] * self.x[:, None]

    def mean_grad(self, theta):
        w = _sigmoid(self._z(theta)) - self.q[:, None, :]
        return self.scale * np.einsum("mpk,mkd->mpd", w, self.x) / self.x.shape[1]

    def smoothness(self):
        return self.scale * np.sum(self.x * self.x, axis=-1) / 4


@dataclass(frozen=True)
class CubicPairLoss(SampleBatch):
    """``scale * ((theta - b)^2 + (theta - b)^3 / 6)`` for a label ``b`` in {0, 1}."""

    b: np.ndarray
    scale: float
    d: int = 1
    batched: ClassVar[tuple[str, ...]] = ("b",)

    def value(self, theta):
        u = theta - self.b[:, None, :]
        return self.scale * (u * u + u**3 / 6)

    def grad(self, theta):
        u = theta - self.b[:, None, :]
        return (self.scale * (2 * u + u * u / 2))[..., None]

    def smoothness(self):
        # second derivative 2 + (theta - b) is at most 3 on [0, 1]
        return np.full(self.b.shape, 3.0 * self.scale)


@dataclass(frozen=True)
class SquaredDistanceLoss(SampleBatch):
    """``|theta - z|^2 / (4 sqrt(d))``."""

    z: np.ndarray
    batched: ClassVar[tuple[str, ...]] = ("z",)

    @property
    def d(self):
        return self.z.shape[-1]

    @property
    def floats_per_sample(self):
        return self.d

    @property
    def coef(self):
        return 1.0 / (4 * math.sqrt(self.d))

    def value(self, theta):
        diff = theta[:, :, None, :] - self.z[:, None]
        return self.coef * np.sum(diff * diff, axis=-1)

    def grad(self, theta):
        return 2 * self.coef * (theta[:, :, None, :] - self.z[:, None])

    def mean_grad(self, theta):
        return 2 * self.coef * (theta - self.z.mean(axis=1)[:, None, :])

    def smoothness(self):
        return np.full(self.z.shape[:2], 2 * self.coef)


@dataclass(frozen=True)
class MachineDataset:
    """The ``n`` samples held by each of ``m`` machines, one row per machine.

    The first ``n // 2`` samples feed the local minimizer and the rest the
    local empirical function.  With ``n == 1`` both halves are the same
    single sample.
    """

    samples: SampleBatch

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]

    @property
    def split_index(self) -> int:
        return self.n // 2

    def first_half(self) -> SampleBatch:
        if self.split_index == 0:
            return self.samples
        return self.samples.take(samples=slice(0, self.split_index))

    def second_half(self) -> SampleBatch:
        return self.samples.take(samples=slice(self.split_index, None))


# ---------------------------------------------------------------------------
# local empirical risk minimization


class ERMConvergenceError(RuntimeError):
    def __init__(self, failed: int, worst: float, tol: float):
        super().__init__(
            f"ERM did not converge for {failed} problem(s): "
            f"projected gradient {worst:.3e} > tol {tol:.1e}"
        )
        self.failed = failed
        self.worst = worst


def erm_minimize_batch(
    batch: SampleBatch,
    cube: DomainCube,
    tol: float = 1e-8,
    max_iter: int = 100_000,
    method: str = "fista",
    lipschitz=None,
    x0=None,
):
    """Minimize the sample average of every machine over ``cube``.

    Runs projected gradient steps of size ``1/L`` where ``L`` is the average
    of the members' gradient Lipschitz constants (or ``lipschitz`` when
    given).  ``method="fista"`` adds Nesterov momentum with gradient-based
    restarts; ``method="pgd"`` is the plain projected iteration.  A machine
    stops once the norm of its gradient mapping ``(x - P(x - g/L)) L`` is at
    most ``tol``.  Returns an ``(M, d)`` array.
    """
    if method not in ("fista", "pgd"):
        raise ValueError(f"unknown method {method!r}")
    M = batch.shape[0]
    if M == 0 or batch.shape[1] == 0:
        raise ValueError("need at least one sample function per machine")
    if lipschitz is None:
        lip = batch.smoothness().mean(axis=1)
    else:
        lip = np.broadcast_to(np.asarray(lipschitz, dtype=float), (M,))
    eta = 1.0 / np.maximum(lip, 1e-8)

    if x0 is None:
        x = np.tile(cube.center, (M, 1))
    else:
        x = cube.project(np.broadcast_to(np.asarray(x0, dtype=float), (M, cube.d)).copy())
    result = np.empty((M, cube.d))
    index = np.arange(M)
    sub = batch
    y = x.copy()
    tk = np.ones(M)
    gmap = np.full(M, np.inf)

    for _ in range(max_iter):
        gx = sub.mean_grad(x[:, None, :])[:, 0, :]
        step = cube.project(x - eta[:, None] * gx)
        gmap = np.linalg.norm(x - step, axis=1) / eta
        done = gmap <= tol
        if done.any():
            result[index[done]] = x[done]
            keep = ~done
            if not keep.any():
                return result
            index, x, y, tk, eta, gmap = index[keep], x[keep], y[keep], tk[keep], eta[keep], gmap[keep]
            sub = sub.take(np.flatnonzero(keep)) if not isinstance(sub, FunctionList) else sub
        if method == "pgd":
            x = step if not done.any() else step[~done]
            continue
        gy = sub.mean_grad(y[:, None, :])[:, 0, :]
        x_new = cube.project(y - eta[:, None] * gy)
        restart = np.sum((y - x_new) * (x_new - x), axis=1) > 0
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * tk * tk))
        beta = np.where(restart, 0.0, (tk - 1) / t_next)
        y = x_new + beta[:, None] * (x_new - x)
        tk = np.where(restart, 1.0, t_next)
        x = x_new
    raise ERMConvergenceError(len(index), float(gmap.max()), tol)


def erm_minimize(functions, cube: DomainCube, tol: float = 1e-8, **kwargs) -> np.ndarray:
    """Minimizer over ``cube`` of the average of ``functions``.

    ``functions`` is a list of :class:`SampleFunction` or a single-machine
    :class:`SampleBatch`.
    """
    if isinstance(functions, SampleBatch):
        batch = functions
        if batch.shape[0] != 1:
            raise ValueError("use erm_minimize_batch for several machines")
    else:
        functions = tuple(functions)
        if not functions:
            raise ValueError("need at least one sample function")
        batch = FunctionList(functions, cube.d)
    return erm_minimize_batch(batch, cube, tol, **kwargs)[0]


# ---------------------------------------------------------------------------
# assumption checks


@dataclass(frozen=True)
class Assumption1Report:
    """Worst observed values over random points; bounds are 1 after normalization."""

    max_value: float
    value_bound: float
    max_grad_norm: float
    max_lipschitz_ratio: float
    max_fd_error: float
    trials: int

    def passes(self, slack: float = 1e-6, fd_tol: float = 1e-5) -> bool:
        return (
            self.max_value <= self.value_bound * (1 + slack)
            and self.max_grad_norm <= 1 + slack
            and self.max_lipschitz_ratio <= 1 + slack
            and self.max_fd_error <= fd_tol
        )


def check_assumption1(f: SampleFunction, trials: int, seed, cube: DomainCube | None = None) -> Assumption1Report:
    """Probe value, gradient and Lipschitz bounds of ``f`` at random point pairs.

    Violations are reported, never raised.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    cube = cube or DomainCube(f.d)
    rng = np.random.default_rng(seed)
    a = cube.uniform(rng, trials)
    b = cube.uniform(rng, trials)
    ga, gb = f.grads(a), f.grads(b)
    ratio = np.linalg.norm(ga - gb, axis=1) / np.maximum(np.linalg.norm(a - b, axis=1), 1e-300)
    # keep finite-difference probes inside the domain
    inner = np.clip(a, cube.lo + 1e-5, cube.hi - 1e-5)
    fd = central_gradient(f.values, inner, h=1e-5)
    return Assumption1Report(
        max_value=float(np.max(np.abs(f.values(a)))),
        value_bound=math.sqrt(f.d),
        max_grad_norm=float(max(np.linalg.norm(ga, axis=1).max(), np.linalg.norm(gb, axis=1).max())),
        max_lipschitz_ratio=float(ratio.max()),
        max_fd_error=float(np.abs(fd - f.grads(inner)).max()),
        trials=trials,
    )


# ---------------------------------------------------------------------------
# distributions


def _clipped_normal_second_moment(a: float) -> float:
    """E[clip(Z, -a, a)^2] for standard normal Z."""
    phi = math.exp(-a * a / 2) / math.sqrt(2 * math.pi)
    tail = 0.5 * math.erfc(a / math.sqrt(2))
    return (1 - 2 * tail) - 2 * a * phi + 2 * a * a * tail


@dataclass(frozen=True)
class LossDistribution:
    """A distribution over sample losses with a known population minimizer.

    ``strong_convexity`` follows the convention
    ``F(b) >= F(a) + grad F(a).(b - a) + lambda |b - a|^2``.
    ``scale`` is the constant every raw loss was multiplied by to keep
    values, gradients and gradient Lipschitz constants within unit bounds.
    """

    name: str
    d: int
    cube: DomainCube
    true_minimizer: np.ndarray
    strong_convexity: float
    scale: float
    meta: dict = field(default_factory=dict)

    def sample(self, m: int, n: int, rng) -> SampleBatch:
        raise NotImplementedError

    def sample_function(self, seed) -> SampleFunction:
        return self.sample(1, 1, np.random.default_rng(seed)).at(0, 0)

    def dataset(self, m: int, n: int, rng) -> MachineDataset:
        return MachineDataset(self.sample(m, n, rng))

    def _oracle_batch(self, samples: int, rng) -> SampleBatch:
        """Monte-Carlo surrogate of the population loss, shape ``(1, samples)``.

        Label and noise randomness is integrated out analytically where it
        can be, which leaves the minimizer and gradient unchanged.
        """
        return self.sample(1, samples, rng)

    def expected_gradient(self, theta, samples: int = 10**6, seed=0) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(1, 1, self.d)
        batch = self._oracle_batch(samples, np.random.default_rng(seed))
        return batch.mean_grad(theta)[0, 0]

    def oracle_minimizer(self, samples: int = 10**6, seed=0, tol: float = 1e-10) -> np.ndarray:
        """Numeric minimizer of a Monte-Carlo average of the population loss."""
        batch = self._oracle_batch(samples, np.random.default_rng(seed))
        return erm_minimize(batch, self.cube, tol=tol)


@dataclass(frozen=True)
class RidgeDistribution(LossDistribution):
    theta: np.ndarray = None
    noise_var: float = 0.0
    reg: float = 0.0
    clip: float = 3.0

    def _draw(self, shape, rng, noisy=True):
        x = np.clip(rng.standard_normal(shape + (self.d,)), -self.clip, self.clip)
        y = x @ self.theta
        if noisy and self.noise_var > 0:
            sd = math.sqrt(self.noise_var)
            y = y + np.clip(sd * rng.standard_normal(shape), -3 * sd, 3 * sd)
        return x, y

    def sample(self, m, n, rng):
        x, y = self._draw((m, n), rng)
        return QuadraticLoss(x, y, self.reg, self.scale)

    def _oracle_batch(self, samples, rng):
        x, y = self._draw((1, samples), rng, noisy=False)
        return QuadraticLoss(x, y, self.reg, self.scale)


def make_ridge_distribution(d: int, noise_var: float = 0.01, reg: float = 0.1, seed=0, theta=None, clip: float = 3.0):
    """Linear model ``Y = X.theta + E`` under squared loss with an l2 penalty.

    ``X`` is standard normal clipped to ``[-clip, clip]^d``, ``E`` is normal
    with variance ``noise_var`` clipped at three standard deviations, and the
    model parameter is uniform on ``[0, 1]^d`` unless given.  The loss is
    multiplied by a constant that makes values, gradients and gradient
    Lipschitz constants satisfy the unit bounds on ``[-1, 1]^d``.
    """
    if d < 1:
        raise ValueError("d must be positive")
    if reg < 0:
        raise ValueError(f"regularization must be nonnegative, got {reg}")
    if noise_var < 0:
        raise ValueError(f"noise variance must be nonnegative, got {noise_var}")
    if theta is None:
        theta = np.random.default_rng(seed).uniform(0.0, 1.0, d)
    theta = np.asarray(theta, dtype=float).reshape(d)
    sd = math.sqrt(noise_var)
    resid = clip * d + clip * np.abs(theta).sum() + 3 * sd
    grad_bound = 2 * (resid * clip * math.sqrt(d) + reg * math.sqrt(d))
    hess_bound = 2 * (clip * clip * d + reg)
    value_bound = resid * resid + reg * d
    scale = min(1 / grad_bound, 1 / hess_bound, math.sqrt(d) / value_bound)
    s2 = _clipped_normal_second_moment(clip)
    if s2 + reg == 0:
        raise ValueError("population loss is not strongly convex")
    return RidgeDistribution(
        name="ridge",
        d=d,
        cube=DomainCube(d),
        true_minimizer=s2 / (s2 + reg) * theta,
        strong_convexity=scale * (s2 + reg),
        scale=scale,
        meta={"theta": theta.tolist(), "noise_var": noise_var, "reg": reg, "clip": clip, "scale": scale},
        theta=theta,
        noise_var=noise_var,
        reg=reg,
        clip=clip,
    )


@dataclass(frozen=True)
class LogisticDistribution(LossDistribution):
    theta: np.ndarray = None
    clip: float = 3.0

    def _features(self, shape, rng):
        return np.clip(rng.standard_normal(shape + (self.d,)), -self.clip, self.clip)

    def sample(self, m, n, rng):
        x = self._features((m, n), rng)
        p = _sigmoid(x @ self.theta)
        y = rng.random((m, n)) < p
        return LogisticLoss(x, y.astype(float), self.scale)

    def _oracle_batch(self, samples, rng):
        x = self._features((1, samples), rng)
        return LogisticLoss(x, _sigmoid(x @ self.theta), self.scale)


def make_logistic_distribution(d: int, seed=0, theta=None, clip: float = 3.0):
    """Logistic regression with ``P(Y=1 | X) = 1 / (1 + exp(-X.theta))``.

    Labels are drawn from the clipped features, so the model is well
    specified and the population minimizer is the model parameter itself.
    """
    if d < 1:
        raise ValueError("d must be positive")
    if theta is None:
        theta = np.random.default_rng(seed).uniform(0.0, 1.0, d)
    theta = np.asarray(theta, dtype=float).reshape(d)
    scale = min(
        1 / (clip * math.sqrt(d)),
        4 / (clip * clip * d),
        math.sqrt(d) / float(_softplus(clip * d)),
    )
    # curvature estimate: smallest Hessian eigenvalue of F over the cube corners and theta
    rng = np.random.default_rng(12345)
    x = np.clip(rng.standard_normal((200_000, d)), -clip, clip)
    corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * d)).reshape(d, -1).T
    lam = np.inf
    for pt in np.vstack([corners, theta]):
        s = _sigmoid(x @ pt)
        h = np.einsum("k,kd,ke->de", s * (1 - s), x, x) / len(x)
        lam = min(lam, np.linalg.eigvalsh(h)[0])
    return LogisticDistribution(
        name="logistic",
        d=d,
        cube=DomainCube(d),
        true_minimizer=theta.copy(),
        strong_convexity=scale * lam / 2,
        scale=scale,
        meta={"theta": theta.tolist(), "clip": clip, "scale": scale},
        theta=theta,
        clip=clip,
    )


@dataclass(frozen=True)
class CubicPairDistribution(LossDistribution):
    def sample(self, m, n, rng):
        return CubicPairLoss((rng.random((m, n)) < 0.5).astype(float), self.scale)

    def _oracle_batch(self, samples, rng):
        # the two functions, each carrying half the mass
        return CubicPairLoss(np.array([[0.0, 1.0]]), self.scale)

    def population_derivative(self, theta: float) -> float:
        """F'(theta) of the unscaled pair, ``2 theta - 1 + (2 theta^2 - 2 theta + 1) / 4``."""
        return 2 * theta - 1 + (2 * theta * theta - 2 * theta + 1) / 4


def make_cubic_pair_distribution() -> CubicPairDistribution:
    """Two cubics ``(theta - b)^2 + (theta - b)^3 / 6``, b in {0, 1}, each with mass 1/2, on [0, 1].

    Single-sample minimizers are 0 and 1 while the population minimizer is
    ``(sqrt(15) - 3) / 2``, so averaging local minimizers stays biased.
    """
    scale = 1 / 3
    return CubicPairDistribution(
        name="cubic-pair",
        d=1,
        cube=DomainCube(1, 0.0, 1.0),
        true_minimizer=np.array([(math.sqrt(15) - 3) / 2]),
        # F'' = (3 + 2 theta) / 2 >= 3/2 before scaling
        strong_convexity=scale * 0.75,
        scale=scale,
        meta={"scale": scale},
    )


@dataclass(frozen=True)
class QuadraticDistribution(LossDistribution):
    theta: np.ndarray = None

    def sample(self, m, n, rng):
        z = np.where(rng.random((m, n, self.d)) < (1 + self.theta) / 2, 1.0, -1.0)
        return SquaredDistanceLoss(z)

    def _oracle_batch(self, samples, rng):
        return SquaredDistanceLoss(np.broadcast_to(self.theta, (1, 1, self.d)).copy())


def make_quadratic_distribution(d: int, theta=None, seed=0) -> QuadraticDistribution:
    """``|theta - Z|^2 / (4 sqrt(d))`` with ``Z`` in {-1, 1}^d and ``E[Z] = theta``."""
    if theta is None:
        theta = np.random.default_rng(seed).uniform(-0.5, 0.5, d)
    theta = np.asarray(theta, dtype=float).reshape(d)
    if np.any(np.abs(theta) >= 1):
        raise ValueError("minimizer must lie in the open cube")
    return QuadraticDistribution(
        name="quadratic",
        d=d,
        cube=DomainCube(d),
        true_minimizer=theta.copy(),
        strong_convexity=1 / (4 * math.sqrt(d)),
        scale=1.0,
        meta={"theta": theta.tolist()},
        theta=theta,
    )


_FACTORIES: dict[str, Callable[..., LossDistribution]] = {
    "ridge": make_ridge_distribution,
    "logistic": make_logistic_distribution,
    "cubic-pair": make_cubic_pair_distribution,
    "quadratic": make_quadratic_distribution,
}


def register_distribution(name: str, factory: Callable[..., LossDistribution]) -> None:
    _FACTORIES[name] = factory


def make_distribution(name: str, params: dict | None = None) -> LossDistribution:
    """Build a distribution from its registry name and keyword parameters."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown distribution {name!r}; known: {sorted(_FACTORIES)}") from None
    return factory(**(params or {}))


def distribution_parameters(name: str) -> tuple[str, ...]:
    """Keyword parameters accepted by a registered distribution factory."""
    if name not in _FACTORIES:
        raise ValueError(f"unknown distribution {name!r}; known: {sorted(_FACTORIES)}")
    return tuple(inspect.signature(_FACTORIES[name]).parameters)


def functions_of(batch: SampleBatch, machine: int = 0) -> Sequence[SampleFunction]:
    """The sample functions of one machine as individual objects."""
    return [batch.at(machine, j) for j in range(batch.shape[1])]
