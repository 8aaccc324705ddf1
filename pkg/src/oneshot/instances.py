"""Adversarial constructions: a compactly supported bump kernel, sign-lattice
packings built from it, and half-packing / half-linear mixtures.

The packing functions are strongly convex, vanish with zero gradient at the
origin, and any two of them differ in gradient by ``1.5 * epsilon`` at some
lattice point inside ``[-delta, delta]^d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from .losses import (
    DomainCube,
    LossDistribution,
    SampleBatch,
    SampleFunction,
    erm_minimize,
    register_distribution,
)
from .numdiff import central_gradient, hessian_eigen_range

__all__ = [
    "kernel_h",
    "kernel_h_hessian",
    "kernel_k",
    "SignAssignment",
    "PackingFunction",
    "make_packing",
    "ClassCBatch",
    "ClassCDistribution",
    "make_classC",
    "verify_kernel_properties",
    "verify_packing_convexity",
    "packing_separation",
]


def _shifted(x):
    x = np.asarray(x, dtype=float)
    u = x.copy()
    u[..., 0] += 1.0 / 3.0
    return u


def kernel_h(x):
    """Bump ``(8/27) (1 - (9/4)|x + e1/3|^2)^3`` inside radius 2/3, zero outside.

    Returns ``(value, gradient)`` for points along the last axis.
    """
    u = _shifted(x)
    r2 = np.sum(u * u, axis=-1)
    q = np.where(r2 < 4.0 / 9.0, 1.0 - 2.25 * r2, 0.0)
    value = 8.0 / 27.0 * q**3
    grad = -4.0 * (q * q)[..., None] * u
    return value, grad


def kernel_h_hessian(x):
    u = _shifted(x)
    r2 = np.sum(u * u, axis=-1)
    q = np.where(r2 < 4.0 / 9.0, 1.0 - 2.25 * r2, 0.0)
    d = u.shape[-1]
    return 36.0 * q[..., None, None] * u[..., :, None] * u[..., None, :] - 4.0 * (q * q)[..., None, None] * np.eye(d)


def kernel_k(x, epsilon: float, d: int | None = None):
    """``10 sqrt(d) eps^2 h(x / (10 sqrt(d) eps))`` and its gradient."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(x, dtype=float)
    d = d or x.shape[-1]
    width = 10 * math.sqrt(d) * epsilon
    v, g = kernel_h(x / width)
    return width * epsilon * v, epsilon * g


# ---------------------------------------------------------------------------
# packings


@dataclass(frozen=True)
class SignAssignment:
    """Signs on the lattice of odd multiples of ``width`` inside ``[-delta, delta]^d``."""

    width: float
    delta: float
    signs: np.ndarray

    @property
    def d(self) -> int:
        return self.signs.ndim

    @property
    def per_axis(self) -> int:
        return self.signs.shape[0]

    @staticmethod
    def axis_count(width: float, delta: float) -> int:
        return 2 * math.floor((delta + width) / (2 * width) + 1e-12)

    def axis_points(self) -> np.ndarray:
        half = self.per_axis // 2
        return (2 * np.arange(-half, half) + 1) * self.width

    def points(self) -> np.ndarray:
        ax = self.axis_points()
        mesh = np.meshgrid(*[ax] * self.d, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def nearest(self, x):
        """Index of and position of the closest lattice point, per coordinate."""
        half = self.per_axis // 2
        idx = np.clip(np.floor(np.asarray(x) / (2 * self.width)).astype(np.int64) + half, 0, self.per_axis - 1)
        return idx, (2 * (idx - half) + 1) * self.width


@dataclass(frozen=True)
class PackingFunction(SampleBatch):
    """``s(pi(x)) k(x - pi(x)) + |x|^2 / (4 sqrt(d))`` with ``pi`` the nearest lattice point.

    A single shared function; ``tag`` carries the batch shape so it can be
    handed to code expecting a batch of samples.
    """

    assignment: SignAssignment
    epsilon: float
    tag: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))
    batched: ClassVar[tuple[str, ...]] = ("tag",)

    @property
    def d(self) -> int:
        return self.assignment.d

    @property
    def width(self) -> float:
        return self.assignment.width

    def evaluate(self, x):
        """Value and gradient at points along the last axis."""
        x = np.asarray(x, dtype=float)
        idx, center = self.assignment.nearest(x)
        sign = self.assignment.signs[tuple(np.moveaxis(idx, -1, 0))]
        kv, kg = kernel_k(x - center, self.epsilon, self.d)
        c = 1.0 / (4 * math.sqrt(self.d))
        value = sign * kv + c * np.sum(x * x, axis=-1)
        grad = sign[..., None] * kg + 2 * c * x
        return value, grad

    def __call__(self, theta):
        v, g = self.evaluate(np.asarray(theta, dtype=float))
        return float(v), g

    def evaluate_sum(self, x):
        """Reference form summing the kernel over every lattice point."""
        x = np.asarray(x, dtype=float)
        pts = self.assignment.points()
        flat_signs = self.assignment.signs.reshape(-1)
        c = 1.0 / (4 * math.sqrt(self.d))
        value = c * np.sum(x * x, axis=-1)
        grad = 2 * c * x
        for p, s in zip(pts, flat_signs):
            kv, kg = kernel_k(x - p, self.epsilon, self.d)
            value = value + s * kv
            grad = grad + s * kg
        return value, grad

    def value(self, theta):
        v, _ = self.evaluate(theta)
        return np.broadcast_to(v[..., None], v.shape + (self.tag.shape[1],))

    def grad(self, theta):
        _, g = self.evaluate(theta)
        return np.broadcast_to(g[:, :, None, :], g.shape[:2] + (self.tag.shape[1], self.d))

    def mean_grad(self, theta):
        return self.evaluate(theta)[1]

    def smoothness(self):
        return np.full(self.tag.shape[:2], 1.0 / math.sqrt(self.d))

    def function(self) -> SampleFunction:
        return self.at(0, 0)

    @property
    def strong_convexity(self) -> float:
        return 1.0 / (10 * math.sqrt(self.d))


def make_packing(epsilon: float, delta: float, d: int, signs=None, seed=None) -> PackingFunction:
    """Packing member for a sign pattern given directly or drawn from ``seed``."""
    width = 10 * math.sqrt(d) * epsilon
    if epsilon <= 0 or width > delta:
        raise ValueError(f"need 0 < 10 sqrt(d) eps <= delta, got eps={epsilon}, delta={delta}")
    if delta > 1:
        raise ValueError("delta must be at most 1")
    per_axis = SignAssignment.axis_count(width, delta)
    shape = (per_axis,) * d
    if signs is None:
        signs = np.where(np.random.default_rng(seed).random(shape) < 0.5, -1, 1)
    signs = np.asarray(signs)
    if signs.shape != shape or not np.all(np.abs(signs) == 1):
        raise ValueError(f"signs must be +-1 with shape {shape}")
    return PackingFunction(SignAssignment(width, delta, signs.astype(np.int8)), epsilon)


def packing_separation(f: PackingFunction, g: PackingFunction) -> float:
    """Largest gradient gap over lattice points where the sign patterns differ."""
    diff = f.assignment.signs != g.assignment.signs
    if not diff.any():
        return 0.0
    pts = f.assignment.points()[diff.reshape(-1)]
    return float(np.max(np.linalg.norm(f.evaluate(pts)[1] - g.evaluate(pts)[1], axis=1)))


# ---------------------------------------------------------------------------
# mixture distributions


@dataclass(frozen=True)
class ClassCBatch(SampleBatch):
    """Samples that are either the packing (component 0) or a signed coordinate function.

    Component ``i`` in ``1..d`` is ``+x_i`` and ``d + i`` is ``-x_i``, both
    multiplied by ``linear_scale * d``.
    """

    comp: np.ndarray
    packing: PackingFunction
    linear_scale: float
    batched: ClassVar[tuple[str, ...]] = ("comp",)

    @property
    def d(self):
        return self.packing.d

    def _linear(self):
        d = self.d
        w = np.zeros((2 * d + 1, d))
        w[1 : d + 1] = np.eye(d)
        w[d + 1 :] = -np.eye(d)
        return w * self.linear_scale * d

    def value(self, theta):
        pv, _ = self.packing.evaluate(theta)
        lin = theta @ self._linear().T
        out = np.take_along_axis(lin, np.broadcast_to(self.comp[:, None, :], lin.shape[:2] + self.comp.shape[1:]), axis=2)
        return np.where(self.comp[:, None, :] == 0, pv[..., None], out)

    def grad(self, theta):
        _, pg = self.packing.evaluate(theta)
        w = self._linear()[self.comp]
        return np.where((self.comp == 0)[:, None, :, None], pg[:, :, None, :], w[:, None])

    def mean_grad(self, theta):
        _, pg = self.packing.evaluate(theta)
        frac = (self.comp == 0).mean(axis=1)
        w = self._linear()[self.comp].mean(axis=1)
        return frac[:, None, None] * pg + w[:, None, :]

    def smoothness(self):
        return np.where(self.comp == 0, 1.0 / math.sqrt(self.d), 0.0)


@dataclass(frozen=True)
class ClassCDistribution(LossDistribution):
    packing: PackingFunction = None
    weights: np.ndarray = None
    linear_scale: float = 1.0

    def sample(self, m, n, rng):
        comp = rng.choice(len(self.weights), size=(m, n), p=self.weights)
        return ClassCBatch(comp, self.packing, self.linear_scale)

    def _oracle_batch(self, samples, rng):
        counts = rng.multinomial(samples, self.weights)
        return ClassCBatch(np.repeat(np.arange(len(self.weights)), counts)[None], self.packing, self.linear_scale)

    @property
    def tilt(self) -> np.ndarray:
        """Net linear coefficient of the population loss, times two."""
        d = self.d
        return 2 * (self.weights[1 : d + 1] - self.weights[d + 1 :]) * self.linear_scale * d

    def population(self, x):
        """Exact population value and gradient, ``(f(x) + tilt.x) / 2``."""
        v, g = self.packing.evaluate(x)
        return 0.5 * (v + np.asarray(x) @ self.tilt), 0.5 * (g + self.tilt)


def make_classC(packing: PackingFunction, tilt=None, weights=None, m=None, n=None, linear_scale=None) -> ClassCDistribution:
    """Half the mass on ``packing``, half spread over ``+-x_i``.

    Give either per-function ``weights`` for ``g_i^+`` (their ``g_i^-``
    partners get ``1/(2d)`` minus that) or a ``tilt`` vector ``v`` with
    ``P(g_i^+) = 1/(4d) + v_i/4``.  With ``m`` and ``n`` the weights must lie
    within ``1/(2c sqrt(n))`` of ``1/(4d)``, ``c = 4 d log2(mn)``.  Linear
    parts are scaled by ``1/d`` by default so that their gradients have unit
    norm; the population loss is then ``(f(x) + v.x) / 2``.
    """
    d = packing.d
    if tilt is not None and weights is not None:
        raise ValueError("give tilt or weights, not both")
    if weights is None:
        v = np.zeros(d) if tilt is None else np.asarray(tilt, dtype=float).reshape(d)
        plus = 1 / (4 * d) + v / 4
    else:
        plus = np.asarray(weights, dtype=float).reshape(d)
    minus = 1 / (2 * d) - plus
    if np.any(plus < 0) or np.any(minus < 0):
        raise ValueError("linear weights must lie in [0, 1/(2d)]")
    if m is not None and n is not None:
        c = 4 * d * math.log2(m * n)
        slack = 1 / (2 * c * math.sqrt(n))
        if np.any(np.abs(plus - 1 / (4 * d)) > slack + 1e-15):
            raise ValueError(f"weights must be within {slack:.3g} of 1/(4d)")
    probs = np.concatenate([[0.5], plus, minus])
    scale = 1.0 / d if linear_scale is None else linear_scale
    dist = ClassCDistribution(
        name="class-c",
        d=d,
        cube=DomainCube(d),
        true_minimizer=np.zeros(d),
        strong_convexity=packing.strong_convexity / 2,
        scale=1.0,
        meta={"linear_scale": scale, "epsilon": packing.epsilon, "delta": packing.assignment.delta},
        packing=packing,
        weights=probs,
        linear_scale=scale,
    )
    exact = _population_minimizer(dist)
    object.__setattr__(dist, "true_minimizer", exact)
    return dist


def _population_minimizer(dist: ClassCDistribution) -> np.ndarray:
    class _Population(SampleFunction):
        d = dist.d
        smoothness = 0.5 / math.sqrt(dist.d)

        def values(self, points):
            return dist.population(points)[0]

        def grads(self, points):
            return dist.population(points)[1]

    return erm_minimize([_Population()], dist.cube, tol=1e-12)


def _classc_from_params(epsilon=0.01, delta=0.5, d=2, seed=0, tilt=None, m=None, n=None):
    return make_classC(make_packing(epsilon, delta, d, seed=seed), tilt=tilt, m=m, n=n)


register_distribution("class-c", _classc_from_params)


# ---------------------------------------------------------------------------
# numerical verification


def _points_near_support(rng, samples, d, radius=2.0 / 3.0):
    """Half uniform in the support ball of ``h``, half uniform in ``[-1, 1]^d``."""
    k = samples // 2
    direction = rng.standard_normal((k, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(k) ** (1.0 / d)
    ball = direction * r[:, None]
    ball[:, 0] -= 1.0 / 3.0
    return np.vstack([ball, rng.uniform(-1, 1, (samples - k, d))])


def verify_kernel_properties(samples: int, seed=0, d: int = 2) -> dict:
    """Check bounds, derivative agreement and boundary continuity of ``h``."""
    rng = np.random.default_rng(seed)
    x = _points_near_support(rng, samples, d)
    val, grad = kernel_h(x)
    fd = central_gradient(lambda p: kernel_h(p)[0], x, h=1e-5)
    lo, hi = hessian_eigen_range(lambda p: kernel_h(p)[1], x, h=1e-4)

    direction = rng.standard_normal((samples, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    shell = direction * (2.0 / 3.0 + rng.choice([-1e-6, 1e-6], size=samples))[:, None]
    shell[:, 0] -= 1.0 / 3.0
    shell_val = np.abs(kernel_h(shell)[0]).max()
    grad0 = float(np.linalg.norm(kernel_h(np.zeros(d))[1]))

    gnorm = np.linalg.norm(grad, axis=1)
    checks = {
        "max_abs_value": (float(np.abs(val).max()), 1.0),
        "max_grad_norm": (float(gnorm.max()), 3.0),
        "max_fd_grad_error": (float(np.abs(fd - grad).max()), 1e-5),
        "min_hessian_eig": (float(lo.min()), -4.0 - 1e-3),
        "max_hessian_eig": (float(hi.max()), 4.0 + 1e-3),
        "max_abs_on_boundary_shell": (float(shell_val), 1e-12),
    }
    passed = {
        name: (observed >= bound if name == "min_hessian_eig" else observed <= bound)
        for name, (observed, bound) in checks.items()
    }
    return {
        "object": "kernel_h",
        "d": d,
        "samples": samples,
        "checks": {k: {"observed": o, "bound": b, "pass": passed[k]} for k, (o, b) in checks.items()},
        "grad_norm_at_origin": grad0,
        "max_grad_norm_observed": float(gnorm.max()),
        "pass": all(passed.values()),
    }


def verify_packing_convexity(f: PackingFunction, samples: int, seed=0) -> dict:
    """Finite-difference Hessian eigenvalues of ``f`` must lie in ``[1/(10 sqrt d), 1/sqrt d]``."""
    rng = np.random.default_rng(seed)
    d = f.d
    reach = min(1.0, f.assignment.delta + f.width)
    k = samples // 2
    x = np.vstack([rng.uniform(-reach, reach, (k, d)), rng.uniform(-1, 1, (samples - k, d))])
    lo, hi = hessian_eigen_range(lambda p: f.evaluate(p)[1], x, h=1e-4)
    v0, g0 = f.evaluate(np.zeros(d))
    lower = 1.0 / (10 * math.sqrt(d)) - 1e-3
    upper = 1.0 / math.sqrt(d) + 1e-3
    checks = {
        "min_hessian_eig": (float(lo.min()), lower, float(lo.min()) >= lower),
        "max_hessian_eig": (float(hi.max()), upper, float(hi.max()) <= upper),
        "abs_value_at_origin": (float(abs(v0)), 0.0, float(abs(v0)) == 0.0),
        "grad_norm_at_origin": (float(np.linalg.norm(g0)), 0.0, float(np.linalg.norm(g0)) == 0.0),
    }
    return {
        "object": "packing",
        "d": d,
        "epsilon": f.epsilon,
        "delta": f.assignment.delta,
        "samples": samples,
        "checks": {k: {"observed": o, "bound": b, "pass": p} for k, (o, b, p) in checks.items()},
        "pass": all(p for _, _, p in checks.values()),
    }
