"""
Rate-limited federated SGD simulator.

One round, per user u (users are independent and may run on worker threads):

    g   = local stochastic gradient at the broadcast model w_t
    v   = g + gamma * m                       (error feedback)
    per layer: refit GenNorm on v every ``refit_interval`` rounds, pick the
               exponent bias, quantize, Huffman-code into a frame
    PS  : parse frame, rebuild the code from the header, decode, dequantize
    m   = gamma * m + g - g_hat

then the PS applies w_{t+1} = w_t - eta / U * sum_u g_hat_u, reducing over
users in index order so the result does not depend on the thread count.
"""
import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from co3 import feedback as fb
from co3.distfit import (
    Family,
    FamilyFit,
    GenNormParams,
    fit_all_families,
    fit_gennorm,
    sample_stats,
)
from co3.entropy import CommLedger, decode_frame, encode_frame
from co3.errors import ConfigError, DegenerateSampleError, InsufficientSampleError, NoPolynomialError
from co3.fpquant import (
    FpFormat,
    bias_polynomial,
    dequantize,
    optimal_bias_mc,
    quantize,
    theory_format,
)
from co3.tasks import Task

FLOAT_BITS = 32
# bias travels as one float64 in the fixed-width schemes
FIXED_HEADER_BITS = 64
FALLBACK_PARAMS = GenNormParams(0.0, 1.0, 1.0)


class Scheme(enum.Enum):
    CO3 = "co3"
    UNCOMPRESSED = "uncompressed"
    TOPK = "topk"
    FP_ONLY = "fponly"


class BiasMode(enum.Enum):
    POLYNOMIAL = "polynomial"
    MC = "mc"
    THEORY = "theory"
    FIXED = "fixed"


@dataclass(frozen=True)
class SchemeConfig:
    scheme: Scheme = Scheme.CO3
    format: Optional[FpFormat] = None
    gamma: float = fb.DEFAULT_GAMMA
    refit_interval: int = 5
    topk_fraction: float = 0.5
    eta: float = 0.05
    T: int = 100
    U: int = 4
    seed: int = 0
    bias_mode: BiasMode = BiasMode.POLYNOMIAL
    fixed_bias: float = 1.0
    theory_smoothness: float = 0.0
    mc_samples: int = 10_000
    diagnostics: bool = False
    keep_vectors: bool = False
    keep_frames: bool = False
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        object.__setattr__(self, "bias_mode", BiasMode(self.bias_mode))

    @property
    def label(self) -> str:
        return self.name or self.scheme.value

    def validate(self) -> "SchemeConfig":
        if self.scheme is not Scheme.UNCOMPRESSED and self.format is None:
            raise ConfigError(f"scheme {self.scheme.value} requires field 'format'")
        if self.refit_interval < 1:
            raise ConfigError("field 'refit_interval' must be >= 1")
        if self.scheme is Scheme.TOPK and not 0.0 < self.topk_fraction <= 1.0:
            raise ConfigError("field 'topk_fraction' must lie in (0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("field 'gamma' must lie in [0, 1]")
        if self.T < 1 or self.U < 1:
            raise ConfigError("fields 'rounds' and 'users' must be >= 1")
        if not self.eta > 0:
            raise ConfigError("field 'eta' must be positive")
        if self.bias_mode is BiasMode.FIXED and not self.fixed_bias > 0:
            raise ConfigError("field 'fixed_bias' must be positive")
        if self.mc_samples < 10_000:
            raise ConfigError("field 'mc_samples' must be >= 10000")
        return self


@dataclass
class DiagnosticRow:
    t: int
    layer: int
    fits: Optional[Dict[Family, FamilyFit]]
    excess_kurtosis: float
    degenerate: bool = False

    def w2(self, family: Family) -> float:
        if self.fits is None:
            return math.nan
        return self.fits[family].w2_distance

    @property
    def best(self) -> Optional[Family]:
        if self.fits is None:
            return None
        return min(self.fits.values(), key=lambda f: f.w2_distance).family


@dataclass
class RoundRecord:
    t: int
    loss: float
    gap: float
    bits_payload: List[int]
    bits_header: List[int]
    memory_l1: List[float]
    gradient_l1: List[float]
    fitted: List[List[Optional[GenNormParams]]]
    biases: List[List[float]]
    lossless: bool = True
    true_grad_norm: float = math.nan
    memory_sq: float = math.nan
    diagnostics: Optional[DiagnosticRow] = None
    vectors: Optional[List[np.ndarray]] = None
    frames: Optional[List[List[bytes]]] = None

    @property
    def total_payload(self) -> int:
        return sum(self.bits_payload)

    @property
    def total_header(self) -> int:
        return sum(self.bits_header)


@dataclass
class _Codec:
    params: GenNormParams
    format: FpFormat
    fitted: bool


@dataclass
class SimState:
    task: Task
    config: SchemeConfig
    w: np.ndarray
    feedback: List[fb.FeedbackState]
    codecs: Dict[Tuple[int, int], _Codec] = field(default_factory=dict)
    ledger: CommLedger = field(default_factory=CommLedger)
    t: int = 0
    model_sum: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, task: Task, config: SchemeConfig) -> "SimState":
        w0 = task.initial_model()
        return cls(task, config, w0, [fb.FeedbackState.zeros(w0.size, config.gamma) for _ in range(config.U)],
                   model_sum=np.zeros_like(w0))


@dataclass
class _UserOutcome:
    g_hat: np.ndarray
    g: np.ndarray
    v: np.ndarray
    payload_bits: int
    header_bits: int
    frames: List[bytes]
    codecs: Dict[int, _Codec]
    lossless: bool


def topk_indices(v, fraction: float) -> np.ndarray:
    """Ascending indices of the ceil(fraction * d) largest |v|; ties keep the lower index."""
    v = np.asarray(v, dtype=float)
    k = math.ceil(fraction * v.size)
    return np.sort(np.argsort(-np.abs(v), kind="stable")[:k])


def topk_payload_bits(d: int, k: int, fmt: FpFormat) -> int:
    """k (index, value) pairs: ceil(log2 d) bits per index plus fixed-width symbols."""
    return k * (math.ceil(math.log2(d)) + fmt.symbol_bits)


def _user_rng(config, t, u):
    return np.random.default_rng([config.seed, t, u])


def _fallback_params(v, prev):
    if prev is not None:
        return prev.params
    scale = float(np.mean(np.abs(v))) if v.size else 0.0
    if scale > 0 and math.isfinite(scale):
        return GenNormParams(0.0, scale, 1.0)
    return FALLBACK_PARAMS


def _choose_format(config, params, t, layer):
    base = config.format
    mode = config.bias_mode
    if mode is BiasMode.THEORY:
        return theory_format(base.exp_bits, base.mant_bits, config.theory_smoothness, base.subnormals)
    if mode is BiasMode.FIXED:
        return base.with_bias(config.fixed_bias)
    if mode is BiasMode.POLYNOMIAL:
        try:
            b = bias_polynomial(params.beta, params.alpha, base)
            if b > 0:
                return base.with_bias(b)
        except NoPolynomialError:
            pass
    # seed deliberately ignores the user: equal inputs must give equal codecs
    b = optimal_bias_mc(GenNormParams(0.0, params.alpha, params.beta), base, config.mc_samples,
                        [config.seed, t, layer, 0xB1A5])
    return base.with_bias(b)


def _codec_for_layer(config, v_layer, t, u, layer, prev: Optional[_Codec]) -> _Codec:
    if prev is not None and t % config.refit_interval != 0:
        return prev
    try:
        params = fit_gennorm(v_layer)
        fitted = True
    except (DegenerateSampleError, InsufficientSampleError):
        params = _fallback_params(v_layer, prev)
        fitted = False
    if not fitted and prev is not None:
        return prev
    return _Codec(params, _choose_format(config, params, t, layer), fitted)


def _user_step(state: SimState, u: int) -> _UserOutcome:
    config, task, t = state.config, state.task, state.t
    g = task.local_gradient(u, state.w, _user_rng(config, t, u))
    v = fb.preprocess(state.feedback[u], g)
    g_hat = np.empty_like(v)
    payload = header = 0
    frames: List[bytes] = []
    codecs: Dict[int, _Codec] = {}
    lossless = True
    for li, sl in enumerate(task.layers):
        vl = v[sl]
        n = vl.size
        if config.scheme is Scheme.UNCOMPRESSED:
            g_hat[sl] = vl
            payload += FLOAT_BITS * n
            continue
        codec = _codec_for_layer(config, vl, t, u, li, state.codecs.get((u, li)))
        codecs[li] = codec
        fmt = codec.format
        if config.scheme is Scheme.CO3:
            block = quantize(vl, fmt)
            frame = encode_frame(block, codec.params)
            received = dequantize(decode_frame(frame.data))
            local = dequantize(block)
            lossless &= bool(np.array_equal(received, local))
            g_hat[sl] = received
            payload += frame.payload_bits
            header += frame.header_bits
            if config.keep_frames:
                frames.append(frame.data)
        elif config.scheme is Scheme.FP_ONLY:
            g_hat[sl] = dequantize(quantize(vl, fmt))
            payload += n * fmt.symbol_bits
            header += FIXED_HEADER_BITS
        else:
            keep = topk_indices(vl, config.topk_fraction)
            out = np.zeros(n)
            out[keep] = dequantize(quantize(vl[keep], fmt))
            g_hat[sl] = out
            payload += topk_payload_bits(n, keep.size, fmt)
            header += FIXED_HEADER_BITS
    return _UserOutcome(g_hat, g, v, payload, header, frames, codecs, lossless)


def diagnose_vector(t: int, layer: int, v) -> DiagnosticRow:
    """Fit all four families to ``v``; degenerate samples give a marker row."""
    try:
        fits = fit_all_families(v)
        kurt = sample_stats(v).excess_kurtosis
    except (DegenerateSampleError, InsufficientSampleError):
        return DiagnosticRow(t, layer, None, math.nan, degenerate=True)
    return DiagnosticRow(t, layer, fits, kurt)


def run_round(state: SimState, pool: Optional[ThreadPoolExecutor] = None) -> RoundRecord:
    config = state.config
    users = range(config.U)
    outcomes = list(pool.map(lambda u: _user_step(state, u), users)) if pool else [_user_step(state, u) for u in users]
    t = state.t
    aggregate = np.zeros_like(state.w)
    for u, out in enumerate(outcomes):
        aggregate += out.g_hat
        state.ledger.record(t, u, out.payload_bits, out.header_bits)
        for li, codec in out.codecs.items():
            state.codecs[(u, li)] = codec
        state.feedback[u] = fb.update(state.feedback[u], out.g, out.g_hat)
    state.model_sum += state.w
    true_grad_norm = float(np.linalg.norm(state.task.full_gradient(state.w)))
    state.w = state.w - config.eta / config.U * aggregate
    task = state.task
    diag = None
    if config.diagnostics:
        diag = diagnose_vector(t, 0, outcomes[0].v[task.layers[0]])
    record = RoundRecord(
        t=t,
        loss=task.loss(state.w),
        gap=task.gap(state.w),
        bits_payload=[o.payload_bits for o in outcomes],
        bits_header=[o.header_bits for o in outcomes],
        memory_l1=[fb.memory_norm(s) for s in state.feedback],
        gradient_l1=[float(np.abs(o.g).sum()) for o in outcomes],
        fitted=[[state.codecs[(u, li)].params if (u, li) in state.codecs and state.codecs[(u, li)].fitted else None
                 for li in range(len(task.layers))] for u in users],
        biases=[[state.codecs[(u, li)].format.bias if (u, li) in state.codecs else math.nan
                 for li in range(len(task.layers))] for u in users],
        lossless=all(o.lossless for o in outcomes),
        true_grad_norm=true_grad_norm,
        memory_sq=float(np.mean([np.dot(s.memory, s.memory) for s in state.feedback])),
        diagnostics=diag,
        vectors=[o.v for o in outcomes] if config.keep_vectors else None,
        frames=[o.frames for o in outcomes] if config.keep_frames else None,
    )
    state.t += 1
    return record


def run_round_co3(state: SimState, pool=None) -> RoundRecord:
    if state.config.scheme is not Scheme.CO3:
        raise ConfigError("run_round_co3 needs a CO3 scheme config")
    return run_round(state, pool)


def run_round_topk(state: SimState, pool=None) -> RoundRecord:
    if state.config.scheme is not Scheme.TOPK:
        raise ConfigError("run_round_topk needs a TopK scheme config")
    return run_round(state, pool)


@dataclass
class ExperimentResult:
    config: SchemeConfig
    records: List[RoundRecord]
    ledger: CommLedger
    final_model: np.ndarray
    averaged_model: np.ndarray

    @property
    def final_gap(self) -> float:
        return self.records[-1].gap

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss

    @property
    def trajectory_grad_norm_max(self) -> float:
        """Largest true-gradient norm at the broadcast iterates w_0 .. w_{T-1}."""
        return max(r.true_grad_norm for r in self.records)

    @property
    def memory_sq_mean(self) -> float:
        """Mean over rounds of the user-averaged ||m_t||^2."""
        return float(np.mean([r.memory_sq for r in self.records]))


def default_threads() -> int:
    """Worker count from ``CO3_THREADS``; 0 means single-threaded."""
    raw = os.environ.get("CO3_THREADS", "0").strip() or "0"
    try:
        return max(0, int(raw))
    except ValueError:
        raise ConfigError(f"CO3_THREADS must be an integer, got {raw!r}") from None


def run_experiment(task: Task, config: SchemeConfig, threads: Optional[int] = None) -> ExperimentResult:
    config.validate()
    if threads is None:
        threads = default_threads()
    state = SimState.initial(task, config)
    records = []
    if threads > 0:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for _ in range(config.T):
                records.append(run_round(state, pool))
    else:
        for _ in range(config.T):
            records.append(run_round(state))
    return ExperimentResult(config, records, state.ledger, state.w.copy(), state.model_sum / config.T)


def gradient_diagnostics(records: List[RoundRecord], user: int = 0, layers: Optional[List[slice]] = None):
    """Per-round family fits and excess kurtosis of the transmitted vectors ``v_t``.

    Needs records produced with ``keep_vectors=True``.  ``layers`` defaults to
    treating the whole vector as one layer.
    """
    rows = []
    for rec in records:
        if rec.vectors is None:
            raise ValueError(f"round {rec.t} carries no vectors; run with keep_vectors=True")
        v = rec.vectors[user]
        for li, sl in enumerate(layers or [slice(0, v.size)]):
            rows.append(diagnose_vector(rec.t, li, v[sl]))
    return rows
