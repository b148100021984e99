"""First-order synaptic traces.

A trace is a leaky accumulator of a spike train: it decays by exp(-1/tau)
each step and jumps by a fixed increment whenever the watched neuron spikes.
The plasticity engine reads pre-synaptic traces (x1, x2) per input channel
and post-synaptic traces (y1, y2) per output neuron.

A pair of first-order traces with different decays can reproduce the
two-stage PSP filter of the neuron dynamics: the PSP response to a single
spike is a difference of two geometric kernels, so (x2 - x1) tracks the PSP
exactly when the decay constants and increments are matched (see
``psp_matched_trace_configs``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TraceConfig:
    """Decay/increment parameters of one first-order trace.

    tau is in timesteps; the decay factor is exp(-1/tau). ``saturation``
    clamps the trace from above; ``quant_bits`` optionally snaps the trace
    to the integer grid [0, 2**quant_bits - 1] after each update, mimicking
    low-precision hardware trace storage.
    """

    tau: float
    increment: float = 1.0
    saturation: float | None = None
    quant_bits: int | None = None

    def __post_init__(self):
        if self.tau < 1.0:
            raise ValueError(f"trace tau must be >= 1 timestep, got {self.tau}")
        if self.increment <= 0.0:
            raise ValueError(f"trace increment must be > 0, got {self.increment}")
        if self.saturation is not None and self.saturation <= 0.0:
            raise ValueError("trace saturation must be positive when set")

    @property
    def alpha(self) -> float:
        return math.exp(-1.0 / self.tau)


def update_trace(t, spiked, cfg: TraceConfig):
    """Advance a trace one step: t' = alpha*t + spiked*increment.

    Works elementwise on scalars or arrays; ``spiked`` may be boolean or a
    spike count. Clamps to ``cfg.saturation`` when configured.
    """
    t = cfg.alpha * np.asarray(t, dtype=np.float64) + np.asarray(spiked, dtype=np.float64) * cfg.increment
    if cfg.saturation is not None:
        t = np.minimum(t, cfg.saturation)
    if cfg.quant_bits is not None:
        t = np.clip(np.round(t), 0.0, float(2**cfg.quant_bits - 1))
    if t.ndim == 0:
        return float(t)
    return t


@dataclass
class TraceState:
    """Pre-synaptic traces per input channel and post-synaptic trace per neuron."""

    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray

    @classmethod
    def zeros(cls, fan_in: int, n_out: int) -> "TraceState":
        return cls(
            x1=np.zeros(fan_in),
            x2=np.zeros(fan_in),
            y1=np.zeros(n_out),
        )


def psp_matched_trace_configs(tau_u: float, tau_v: float) -> tuple[TraceConfig, TraceConfig]:
    """Trace pair whose difference reproduces the neuron's PSP kernel.

    The single-spike PSP of the dynamics pipeline is

        P[m] = (a_p**m - a_q**m) / (tau_u * tau_v * (a_p - a_q)),  m >= 1

    with a_q = exp(-1/tau_u), a_p = exp(-1/tau_v). Splitting this into two
    geometric kernels gives a fast trace x1 (decay a_q) and a slow trace x2
    (decay a_p) with increments a_q*c and a_p*c, c = 1/(tau_u*tau_v*(a_p-a_q)),
    so that x2 - x1 equals P for any spike train (absent saturation).

    Requires tau_v > tau_u so both increments are positive.
    """
    if tau_v <= tau_u:
        raise ValueError("PSP decomposition needs tau_v > tau_u (slow PSP, fast PSC)")
    a_q = math.exp(-1.0 / tau_u)
    a_p = math.exp(-1.0 / tau_v)
    c = 1.0 / (tau_u * tau_v * (a_p - a_q))
    return (
        TraceConfig(tau=tau_u, increment=a_q * c),
        TraceConfig(tau=tau_v, increment=a_p * c),
    )
