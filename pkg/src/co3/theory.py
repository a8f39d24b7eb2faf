"""
Numerical checks of the convergence analysis.

* ``lemma1_bound`` / ``verify_lemma1``: quantization error variance under the
  theory-scale grid, estimated by Monte Carlo, with the tail term also
  computed by quadrature.
* ``theorem_bound`` / ``verify_convergence``: the O(1/sqrt(T)) bound on the
  averaged iterate versus seeded simulated trajectories.
* ``check_assumptions``: smoothness, strong convexity and gradient bound along
  a trajectory (exact for quadratics, spot-sampled otherwise).
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import integrate

from co3.distfit import GenNormParams, gennorm_pdf
from co3.errors import ParameterDomainError
from co3.fedsim import BiasMode, Scheme, SchemeConfig, run_experiment
from co3.fpquant import FpFormat, max_interval, quantization_error_moment, tail_error_moment, theory_format
from co3.tasks import QuadraticTask, Task, TaskSpec

TAIL_BOUND = 0.15
LEMMA1_BETAS = (1.0, 1.25, 1.5, 1.75, 2.0)


def lemma1_bound(mant_bits: int) -> float:
    """2**(4 - 2 mant) + 0.3."""
    if mant_bits < 0:
        raise ParameterDomainError("mant_bits must be >= 0")
    return 2.0 ** (4 - 2 * mant_bits) + 0.3


@dataclass(frozen=True)
class TheoryParams:
    L: float
    mu: float
    G: float
    T: int
    eta: float
    mant_bits: int

    def __post_init__(self):
        if not self.mu > 0:
            raise ParameterDomainError("mu must be positive")
        if self.L < self.mu:
            raise ParameterDomainError(f"need L >= mu, got L={self.L}, mu={self.mu}")
        if self.T < 1:
            raise ParameterDomainError("T must be >= 1")
        if self.G < 0:
            raise ParameterDomainError("G must be non-negative")

    @classmethod
    def for_rounds(cls, L, mu, G, T, mant_bits) -> "TheoryParams":
        return cls(L, mu, G, T, 1.0 / math.sqrt(T), mant_bits)

    @property
    def in_regime(self) -> bool:
        return math.isclose(self.eta, 1.0 / math.sqrt(self.T), rel_tol=1e-12)


def theorem_bound(p: TheoryParams, w0_gap: float) -> float:
    """||w0 - w*||^2 / sqrt(T) + G^2 / sqrt(T) + (mu + 2L) * lemma1 / T.

    ``w0_gap`` is the squared distance ||w0 - w*||^2.  Only defined for the
    step size eta = 1/sqrt(T).
    """
    if not p.in_regime:
        raise ParameterDomainError(f"bound requires eta = 1/sqrt(T) = {1 / math.sqrt(p.T):.6g}, got {p.eta}")
    if w0_gap < 0:
        raise ParameterDomainError("w0_gap is a squared distance and must be >= 0")
    root = math.sqrt(p.T)
    return w0_gap / root + p.G ** 2 / root + (p.mu + 2 * p.L) * lemma1_bound(p.mant_bits) / p.T


def bound_terms(p: TheoryParams, w0_gap: float, memory_sq: Optional[float] = None) -> Dict[str, float]:
    """The three bound terms plus the per-step memory term of the recursion.

    ``memory_sq`` is an observed E||m_t||^2; the recursion's memory term is
    eta^3 (mu + 2L) E||m_t||^2, which summed over T rounds and divided by
    T eta matches the last bound term when E||m_t||^2 <= lemma1.
    """
    root = math.sqrt(p.T)
    out = {
        "init": w0_gap / root,
        "gradient": p.G ** 2 / root,
        "quantization": (p.mu + 2 * p.L) * lemma1_bound(p.mant_bits) / p.T,
    }
    if memory_sq is not None:
        out["memory_step"] = p.eta ** 3 * (p.mu + 2 * p.L) * memory_sq
        out["memory_avg"] = p.eta ** 2 * (p.mu + 2 * p.L) * memory_sq
    return out


@dataclass
class BoundReport:
    empirical_gap: float
    bound_value: float
    std_error: float = 0.0
    T: int = 0
    n_repeats: int = 0
    terms: Dict[str, float] = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        return self.empirical_gap <= self.bound_value


@dataclass
class AssumptionReport:
    smoothness: float
    strong_convexity: float
    G: float
    max_grad_norm: float
    exact: bool
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_assumptions(task: Task, trajectory: Sequence[np.ndarray], G: Optional[float] = None,
                      n_pairs: int = 64, seed=0) -> AssumptionReport:
    """Check gradient bound, smoothness and strong convexity along ``trajectory``.

    Quadratic tasks read L and mu off the Hessian.  Other tasks estimate them
    from gradient differences between random trajectory points
    (spot-sampled, so only lower/upper estimates).
    """
    traj = [np.asarray(w, dtype=float) for w in trajectory]
    if G is None:
        G = task.grad_bound if task.grad_bound is not None else math.inf
    norms = [float(np.linalg.norm(task.full_gradient(w))) for w in traj]
    max_norm = max(norms) if norms else 0.0
    violations = []
    bad = [t for t, n in enumerate(norms) if n > G * (1 + 1e-12)]
    if bad:
        violations.append(f"gradient norm exceeds G={G:.6g} at {len(bad)} points (first t={bad[0]})")

    if isinstance(task, QuadraticTask):
        eig = np.linalg.eigvalsh(task.hessian)
        L, mu = float(eig.max()), float(eig.min())
        exact = True
    else:
        rng = np.random.default_rng(seed)
        L, mu = 0.0, math.inf
        exact = False
        if len(traj) >= 2:
            for _ in range(n_pairs):
                i, j = rng.choice(len(traj), size=2, replace=False)
                dw = traj[i] - traj[j]
                nn = float(np.dot(dw, dw))
                if nn == 0:
                    continue
                dg = task.full_gradient(traj[i]) - task.full_gradient(traj[j])
                L = max(L, float(np.linalg.norm(dg)) / math.sqrt(nn))
                mu = min(mu, float(np.dot(dg, dw)) / nn)
        if task.smoothness is not None and L > task.smoothness * (1 + 1e-9):
            violations.append(f"sampled smoothness {L:.6g} exceeds declared L={task.smoothness:.6g}")
        if task.mu is not None and mu < task.mu * (1 - 1e-9):
            violations.append(f"sampled curvature {mu:.6g} below declared mu={task.mu:.6g}")
    if mu <= 0:
        violations.append(f"curvature {mu:.6g} is not strongly convex")
    return AssumptionReport(L, mu, G, max_norm, exact, violations)


# -- quantization error -------------------------------------------------------

@dataclass
class Lemma1Row:
    beta: float
    second_moment: float
    tail_mc: float
    tail_quad: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.second_moment <= self.bound and self.tail_quad <= TAIL_BOUND


@dataclass
class Lemma1Report:
    format: FpFormat
    rows: List[Lemma1Row]
    delta: float

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    def max_tail(self) -> float:
        return max(r.tail_quad for r in self.rows)


def tail_moment_quad(p: GenNormParams, B: float) -> float:
    """E[(G - B)^2 * 1{G > B}] by quadrature: the squared clipping error beyond +B."""
    def f(x):
        return (x - B) ** 2 * float(gennorm_pdf(x, p))

    val, _ = integrate.quad(f, B, math.inf, limit=200)
    return float(val)


def verify_lemma1(fmt: FpFormat, beta_grid=LEMMA1_BETAS, n: int = 1_000_000, seed=0,
                  smoothness: float = 0.0) -> Lemma1Report:
    """MC second moment and tail moment of G - Q(G), G ~ GenNorm(0, 1, beta).

    The grid is rescaled to the theory scale with smoothness L (0 for the
    tail bound).  ``fmt`` contributes its exp/mant widths and subnormal flag.
    """
    tfmt = theory_format(fmt.exp_bits, fmt.mant_bits, smoothness, fmt.subnormals)
    bound = lemma1_bound(fmt.mant_bits)
    rows = []
    for k, beta in enumerate(beta_grid):
        p = GenNormParams(0.0, 1.0, float(beta))
        rng_seed = [int(seed), k]
        rows.append(Lemma1Row(
            beta=float(beta),
            second_moment=quantization_error_moment(p, tfmt, n, rng_seed),
            tail_mc=tail_error_moment(p, tfmt, n, rng_seed),
            tail_quad=tail_moment_quad(p, tfmt.max_level),
            bound=bound,
        ))
    return Lemma1Report(tfmt, rows, max_interval(tfmt))


# -- convergence --------------------------------------------------------------

def convergence_task(seed: int = 0, noise_scale: float = 0.5, noise_shape: float = 1.5,
                     hessian=(1.0, 2.0)) -> QuadraticTask:
    """d=2 quadratic with GenNorm gradient noise (scale and shape both < 2)."""
    spec = TaskSpec(dimension=len(hessian), seed=seed, mu=min(hessian), smoothness=max(hessian),
                    noise_scale=noise_scale, noise_shape=noise_shape, init_radius=1.0)
    return QuadraticTask(spec, hessian_diag=hessian)


def convergence_config(T: int, fmt: FpFormat, smoothness: float, seed: int = 0, gamma: float = 1.0) -> SchemeConfig:
    return SchemeConfig(scheme=Scheme.CO3, format=fmt, gamma=gamma, eta=1.0 / math.sqrt(T), T=T, U=1,
                        seed=seed, bias_mode=BiasMode.THEORY, theory_smoothness=smoothness)


def verify_convergence(task: QuadraticTask, config: SchemeConfig, n_repeats: int = 50, seed: int = 0,
                       threads: int = 0) -> BoundReport:
    """Mean gap of the averaged iterate over ``n_repeats`` seeded CO3 runs versus the bound.

    Repeat r uses simulator seed ``seed * 100003 + r``.  G is the largest
    true-gradient norm observed at any broadcast iterate of any repeat (the
    averaged iterate's own gradient is included).
    """
    if config.scheme is not Scheme.CO3:
        raise ParameterDomainError("verify_convergence runs the CO3 scheme")
    T = config.T
    configs = [replace(config, seed=seed * 100003 + r, keep_vectors=False) for r in range(n_repeats)]

    def run(cfg):
        res = run_experiment(task, cfg, threads=0)
        gap = task.loss(res.averaged_model) - task.loss_star
        return gap, res.trajectory_grad_norm_max, res.memory_sq_mean

    if threads > 0:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(run, configs))
    else:
        out = [run(c) for c in configs]
    gaps = np.array([o[0] for o in out])
    G = max(max(o[1] for o in out), task.grad_bound or 0.0)
    mem_sq = float(np.mean([o[2] for o in out]))
    w0 = task.initial_model()
    w0_gap = float(np.sum((w0 - task.w_star) ** 2))
    eig = task.hessian_diag
    p = TheoryParams(L=float(eig.max()), mu=float(eig.min()), G=G, T=T, eta=config.eta,
                     mant_bits=config.format.mant_bits)
    bound = theorem_bound(p, w0_gap)
    terms = bound_terms(p, w0_gap, mem_sq)
    terms["G"] = G
    se = float(gaps.std(ddof=1) / math.sqrt(n_repeats)) if n_repeats > 1 else 0.0
    return BoundReport(float(gaps.mean()), bound, se, T, n_repeats, terms)
