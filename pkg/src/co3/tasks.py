"""
Desk-scale learning tasks for the federated simulator.

Every task exposes the same small surface: a flat parameter vector split
into "layers" (slices that are modelled and coded separately), an initial
model, an unbiased stochastic gradient per user, and a deterministic loss.
"""
import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import expit

from co3.distfit import GenNormParams, gennorm_sample


class TaskKind(enum.Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"
    TEACHER_STUDENT = "teacher_student"


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind = TaskKind.QUADRATIC
    dimension: int = 256
    seed: int = 0
    # quadratic
    mu: float = 1.0
    smoothness: float = 4.0
    noise_scale: float = 0.5
    noise_shape: float = 1.5
    init_radius: float = 1.0
    # logistic
    samples_per_user: int = 200
    batch_size: int = 16
    l2: float = 0.05
    users: int = 4
    # teacher-student
    hidden: int = 16
    input_dim: int = 16

    def __post_init__(self):
        object.__setattr__(self, "kind", TaskKind(self.kind))
        if self.dimension < 1:
            raise ValueError("dimension must be positive")


class Task:
    spec: TaskSpec
    layers: List[slice]
    smoothness: Optional[float] = None
    mu: Optional[float] = None
    grad_bound: Optional[float] = None
    w_star: Optional[np.ndarray] = None
    loss_star: Optional[float] = None

    @property
    def dim(self) -> int:
        return self.layers[-1].stop

    def initial_model(self) -> np.ndarray:
        raise NotImplementedError

    def local_gradient(self, u: int, w: np.ndarray, rng) -> np.ndarray:
        raise NotImplementedError

    def full_gradient(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def loss(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def gap(self, w: np.ndarray) -> float:
        if self.loss_star is None:
            return math.nan
        return self.loss(w) - self.loss_star


class QuadraticTask(Task):
    """L(w) = 1/2 w'Aw - b'w, shifted so that L* = 0.

    A is diagonal with eigenvalues spread evenly over [mu, L]; the stochastic
    gradient adds zero-mean GenNorm noise, so it is unbiased for A w - b.
    """

    def __init__(self, spec: TaskSpec, hessian_diag=None):
        self.spec = spec
        d = spec.dimension
        rng = np.random.default_rng([spec.seed, 0xA11])
        if hessian_diag is None:
            hessian_diag = np.linspace(spec.mu, spec.smoothness, d) if d > 1 else np.array([spec.mu])
        self.hessian_diag = np.asarray(hessian_diag, dtype=float)
        self.w_star = rng.standard_normal(d)
        self.b = self.hessian_diag * self.w_star
        self.mu = float(self.hessian_diag.min())
        self.smoothness = float(self.hessian_diag.max())
        self.loss_star = 0.0
        direction = rng.standard_normal(d)
        self._w0 = self.w_star + spec.init_radius * direction / np.linalg.norm(direction)
        self.grad_bound = float(np.linalg.norm(self.hessian_diag * (self._w0 - self.w_star)))
        self.noise = GenNormParams(0.0, spec.noise_scale, spec.noise_shape) if spec.noise_scale > 0 else None
        self.layers = [slice(0, d)]

    @property
    def hessian(self) -> np.ndarray:
        return np.diag(self.hessian_diag)

    def initial_model(self):
        return self._w0.copy()

    def full_gradient(self, w):
        return self.hessian_diag * w - self.b

    def local_gradient(self, u, w, rng):
        g = self.full_gradient(w)
        if self.noise is not None:
            g = g + gennorm_sample(self.noise, g.size, rng)
        return g

    def loss(self, w):
        r = np.asarray(w) - self.w_star
        return float(0.5 * np.dot(self.hessian_diag * r, r))


class LogisticTask(Task):
    """L2-regularized logistic regression over per-user Gaussian datasets."""

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        d = spec.dimension
        rng = np.random.default_rng([spec.seed, 0x1061])
        w_true = rng.standard_normal(d) / math.sqrt(d) * 3.0
        self.X = []
        self.y = []
        for _ in range(spec.users):
            X = rng.standard_normal((spec.samples_per_user, d))
            y = (rng.random(spec.samples_per_user) < expit(X @ w_true)).astype(float)
            self.X.append(X)
            self.y.append(y)
        self.X_all = np.vstack(self.X)
        self.y_all = np.concatenate(self.y)
        n = self.X_all.shape[0]
        self.mu = spec.l2
        self.smoothness = float(np.linalg.eigvalsh(self.X_all.T @ self.X_all / n).max() / 4.0 + spec.l2)
        self.layers = [slice(0, d)]
        self.w_star = self._newton()
        self.loss_star = self.loss(self.w_star)

    def _objective_grad(self, X, y, w):
        return X.T @ (expit(X @ w) - y) / X.shape[0] + self.spec.l2 * w

    def _newton(self):
        X, y = self.X_all, self.y_all
        w = np.zeros(X.shape[1])
        for _ in range(100):
            p = expit(X @ w)
            g = self._objective_grad(X, y, w)
            H = (X * (p * (1 - p))[:, None]).T @ X / X.shape[0] + self.spec.l2 * np.eye(X.shape[1])
            step = np.linalg.solve(H, g)
            w = w - step
            if np.linalg.norm(step) < 1e-13:
                break
        return w

    def initial_model(self):
        return np.zeros(self.spec.dimension)

    def full_gradient(self, w):
        return self._objective_grad(self.X_all, self.y_all, w)

    def local_gradient(self, u, w, rng):
        X, y = self.X[u % len(self.X)], self.y[u % len(self.y)]
        idx = rng.integers(0, X.shape[0], size=self.spec.batch_size)
        return self._objective_grad(X[idx], y[idx], w)

    def loss(self, w):
        z = self.X_all @ w
        # log(1 + e^z) - y z, evaluated stably
        ll = np.logaddexp(0.0, z) - self.y_all * z
        return float(ll.mean() + 0.5 * self.spec.l2 * np.dot(w, w))


class TeacherStudentTask(Task):
    """One-hidden-layer tanh student regressing a fixed random teacher on N(0, I) inputs.

    Two layers: the input weights (hidden x input_dim) and the output weights
    (hidden).  The teacher is realizable, so L* = 0.
    """

    def __init__(self, spec: TaskSpec):
        self.spec = spec
        h, k = spec.hidden, spec.input_dim
        rng = np.random.default_rng([spec.seed, 0x7EAC])
        self.teacher_W = rng.standard_normal((h, k)) / math.sqrt(k)
        self.teacher_v = rng.standard_normal(h) / math.sqrt(h)
        self._w0 = np.concatenate([rng.standard_normal(h * k) / math.sqrt(k), rng.standard_normal(h) / math.sqrt(h)])
        self.eval_x = rng.standard_normal((512, k))
        self.eval_y = self._forward(self.teacher_W, self.teacher_v, self.eval_x)
        self.layers = [slice(0, h * k), slice(h * k, h * k + h)]
        self.loss_star = 0.0

    def _split(self, w):
        h, k = self.spec.hidden, self.spec.input_dim
        return w[: h * k].reshape(h, k), w[h * k:]

    @staticmethod
    def _forward(W, v, x):
        return np.tanh(x @ W.T) @ v

    def initial_model(self):
        return self._w0.copy()

    def _grad(self, w, x, y):
        W, v = self._split(w)
        a = np.tanh(x @ W.T)
        err = a @ v - y
        gv = a.T @ err / x.shape[0]
        gW = ((err[:, None] * v[None, :]) * (1 - a * a)).T @ x / x.shape[0]
        return np.concatenate([gW.ravel(), gv])

    def local_gradient(self, u, w, rng):
        x = rng.standard_normal((self.spec.batch_size, self.spec.input_dim))
        y = self._forward(self.teacher_W, self.teacher_v, x)
        return self._grad(w, x, y)

    def full_gradient(self, w):
        return self._grad(w, self.eval_x, self.eval_y)

    def loss(self, w):
        W, v = self._split(np.asarray(w))
        r = self._forward(W, v, self.eval_x) - self.eval_y
        return float(0.5 * np.mean(r * r))


def build_task(spec: TaskSpec) -> Task:
    if spec.kind is TaskKind.QUADRATIC:
        return QuadraticTask(spec)
    if spec.kind is TaskKind.LOGISTIC:
        return LogisticTask(spec)
    return TeacherStudentTask(spec)
