"""
Error feedback with memory decay.

Each user keeps the residual of its last quantization and adds a decayed
copy of it to the next gradient before quantizing:

    v_t = g_t + gamma * m_{t-1}
    m_t = gamma * m_{t-1} + g_t - Q(v_t)

so ``m_t`` is exactly the quantization error ``v_t - Q(v_t)`` of round t.
``gamma = 0`` disables the correction.
"""
from dataclasses import dataclass

import numpy as np

DEFAULT_GAMMA = 0.7
NASNET_GAMMA = 0.9


@dataclass(frozen=True)
class FeedbackState:
    memory: np.ndarray
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")

    @classmethod
    def zeros(cls, dim: int, gamma: float = DEFAULT_GAMMA) -> "FeedbackState":
        return cls(np.zeros(dim), gamma)

    @property
    def dim(self) -> int:
        return self.memory.size


def _check_dim(state, vec, name):
    if vec.shape != state.memory.shape:
        raise ValueError(f"{name} has shape {vec.shape}, memory has {state.memory.shape}")


def preprocess(state: FeedbackState, g) -> np.ndarray:
    """Corrected vector ``g + gamma * m``; the state is left untouched."""
    g = np.asarray(g, dtype=float)
    _check_dim(state, g, "gradient")
    return g + state.gamma * state.memory


def update(state: FeedbackState, g, g_hat) -> FeedbackState:
    g = np.asarray(g, dtype=float)
    g_hat = np.asarray(g_hat, dtype=float)
    _check_dim(state, g, "gradient")
    _check_dim(state, g_hat, "quantized gradient")
    return FeedbackState(state.gamma * state.memory + g - g_hat, state.gamma)


def memory_norm(state: FeedbackState) -> float:
    """L1 norm of the memory."""
    return float(np.abs(state.memory).sum())
