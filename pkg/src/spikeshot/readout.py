"""Two-compartment readout neurons: spike-coded error plus spike-count output.

Each output-class neuron has a distal (error) compartment and a proximal
(output) compartment.

The distal compartment receives the plastic synaptic drive and, during
training, a PSP-filtered label spike train with weight -w_tgt. A constant
bias current b_err keeps it firing at a steady baseline rate, so deviations
of its post-synaptic trace from the calibrated baseline average encode a
signed error: above baseline means the network drive exceeds the label
drive, below baseline the opposite.

The proximal compartment integrates the current copied from the distal one
(its synaptic drive term, pre-reset) and receives the same label train with
weight +w_tgt through the same integration path, so label spikes cancel
exactly and never contaminate the spike counts used for classification. A
constant offset on the proximal potential cancels the steady-state
contribution of b_err to the integrated current; without it every neuron
would saturate at one spike per step and spike counts would carry no signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import NeuronParams
from .plasticity import PlasticityEngine, QuantizedWeightStore
from .ruledsl import SumOfProductsRule
from .traces import TraceConfig, psp_matched_trace_configs, update_trace


class CalibrationError(RuntimeError):
    """The error compartment never reached a usable baseline."""


@dataclass(frozen=True)
class ReadoutParams:
    """Wiring and trace parameters of the readout layer.

    ``b_err`` is normally left unset and solved numerically so the free
    compartment fires once per ``baseline_period`` steps. ``b_out`` is the
    proximal offset; unset means the auto value -b_err/(1 - alpha_p).
    """

    neuron: NeuronParams = field(default_factory=NeuronParams)
    w_tgt: float = 2.0
    target_period: int = 4
    baseline_period: int = 20
    b_err: float | None = None
    b_out: float | None = None
    include_reset_in_u_err: bool = False
    y1: TraceConfig | None = None
    y2: TraceConfig | None = None
    x1: TraceConfig | None = None
    x2: TraceConfig | None = None

    def __post_init__(self):
        if self.w_tgt <= 0.0:
            raise ValueError("w_tgt must be positive")
        if self.baseline_period < 2:
            raise ValueError("baseline_period must be >= 2 steps")

    def y1_config(self) -> TraceConfig:
        return self.y1 if self.y1 is not None else TraceConfig(tau=self.neuron.tau_v, increment=1.0)

    def y2_config(self) -> TraceConfig:
        return self.y2 if self.y2 is not None else TraceConfig(tau=self.neuron.tau_u, increment=1.0)

    def pre_trace_configs(self) -> tuple[TraceConfig, TraceConfig]:
        if self.x1 is not None and self.x2 is not None:
            return self.x1, self.x2
        return psp_matched_trace_configs(self.neuron.tau_u, self.neuron.tau_v)


# --- scalar error compartment (used in isolation for calibration) -----------


@dataclass
class ErrorCompartment:
    """One distal compartment with its target filter and post traces."""

    params: ReadoutParams
    b_err: float
    q_tgt: float = 0.0
    p_tgt: float = 0.0
    v_err: float = 0.0
    r_err: float = 0.0
    u_err: float = 0.0
    spiked: bool = False
    q_err: float = 0.0
    p_err: float = 0.0
    y1: float = 0.0


def step_error(c: ErrorCompartment, weighted_input: float, target_spike: bool) -> tuple[ErrorCompartment, bool]:
    """Advance the distal compartment one step (mutates and returns c).

    ``weighted_input`` is the plastic synaptic drive sum(w * p) computed by
    the caller. The potential is drive - w_tgt * p_tgt + b_err + reset; the
    copied current u_err is the same drive without the reset term (unless
    configured otherwise).
    """
    prm = c.params
    n = prm.neuron
    c.q_tgt = n.alpha_q * c.q_tgt + (1.0 if target_spike else 0.0) / n.tau_u
    c.p_tgt = n.alpha_p * c.p_tgt + c.q_tgt / n.tau_v
    c.r_err = n.alpha_r * c.r_err - (1.0 if c.spiked else 0.0) * n.v_th
    base = weighted_input - prm.w_tgt * c.p_tgt + c.b_err
    c.u_err = base + (c.r_err if prm.include_reset_in_u_err else 0.0)
    c.v_err = base + c.r_err
    c.spiked = c.v_err >= n.v_th
    spike = 1.0 if c.spiked else 0.0
    c.q_err = n.alpha_q * c.q_err + spike
    c.p_err = n.alpha_p * c.p_err + c.q_err
    c.y1 = update_trace(c.y1, spike, prm.y1_config())
    return c, c.spiked


@dataclass(frozen=True)
class CalibrationReport:
    """Baseline statistics of a freely firing error compartment."""

    b: float          # time-average of the two-stage post trace P_err
    b_y1: float       # time-average of the single-filter trace y1
    b_err: float      # bias current used
    period: float     # mean inter-spike interval at baseline
    window: int       # steps simulated
    n_spikes: int


def calibrate_bias(c: ErrorCompartment, window: int) -> CalibrationReport:
    """Measure the baseline trace averages of an isolated error compartment.

    Runs ``window`` steps with zero input and zero targets, then averages
    the post traces over an integer number of inter-spike periods in the
    steady portion of the run (initial transient discarded). Raises
    CalibrationError when the compartment never fires or fires too rarely
    for ten full periods to fit in the window.
    """
    spikes = []
    p_err_hist = np.empty(window)
    y1_hist = np.empty(window)
    for t in range(window):
        _, spiked = step_error(c, 0.0, False)
        p_err_hist[t] = c.p_err
        y1_hist[t] = c.y1
        if spiked:
            spikes.append(t)
    if not spikes:
        raise CalibrationError("calibration failure: error compartment never fired (b_err too small)")
    if len(spikes) < 11:
        raise CalibrationError(
            f"calibration failure: only {len(spikes)} baseline spikes in {window} steps; "
            "need >= 10 full periods (enlarge window or raise b_err)"
        )
    warmup = max(2, len(spikes) // 4)
    t_a, t_b = spikes[warmup], spikes[-1]
    period = (t_b - t_a) / (len(spikes) - 1 - warmup)
    return CalibrationReport(
        b=float(p_err_hist[t_a:t_b].mean()),
        b_y1=float(y1_hist[t_a:t_b].mean()),
        b_err=c.b_err,
        period=float(period),
        window=window,
        n_spikes=len(spikes),
    )


def _free_run_period(params: ReadoutParams, b_err: float, steps: int) -> float:
    """Mean inter-spike interval of the bare compartment (no input/targets).

    With zero drive the only dynamics are v = b_err + r and the reset trace,
    so the full trace machinery is skipped.
    """
    n = params.neuron
    alpha_r, v_th = n.alpha_r, n.v_th
    r, spiked = 0.0, False
    spikes = []
    for t in range(steps):
        r = alpha_r * r - (v_th if spiked else 0.0)
        spiked = b_err + r >= v_th
        if spiked:
            spikes.append(t)
    if len(spikes) < 6:
        return float("inf")
    tail = spikes[len(spikes) // 2 :]
    return (tail[-1] - tail[0]) / (len(tail) - 1)


def solve_baseline_bias(params: ReadoutParams, target_period: int | None = None) -> float:
    """Find b_err so the free error compartment fires once per target_period.

    Bisects on b_err; the baseline period is monotonically non-increasing in
    the bias. Deterministic.
    """
    period_goal = target_period if target_period is not None else params.baseline_period
    n = params.neuron
    steps = max(400, period_goal * 60)
    lo, hi = n.v_th * 1.0005, n.v_th * 4.0
    widen = 0
    while _free_run_period(params, hi, steps) > period_goal:
        hi *= 4.0
        widen += 1
        if widen > 10:
            raise CalibrationError("could not bracket a baseline bias; reset decay too slow for this period")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _free_run_period(params, mid, steps) > period_goal:
            lo = mid
        else:
            hi = mid
    return float(hi)


# --- scalar output compartment ------------------------------------------------


@dataclass
class OutputCompartment:
    """One proximal compartment driven by a copied distal current.

    ``b_out`` offsets the integrated potential (zero for a standalone
    compartment; the readout layer uses it to cancel the integrated baseline
    bias).
    """

    params: ReadoutParams
    b_out: float = 0.0
    q_tgt: float = 0.0
    p_tgt: float = 0.0
    p_out: float = 0.0
    v_out: float = 0.0
    r_out: float = 0.0
    spiked: bool = False
    spike_count: int = 0


def step_output(o: OutputCompartment, u_err: float, target_spike: bool) -> tuple[OutputCompartment, bool]:
    """Advance the proximal compartment one step (mutates and returns o).

    The label train enters through the same PSP filter that shaped it in the
    distal compartment, with weight +w_tgt, cancelling the -w_tgt component
    carried inside ``u_err``; label spikes thus never alter the output spike
    count. No targets arrive in test mode, so the term is simply zero.
    """
    prm = o.params
    n = prm.neuron
    o.q_tgt = n.alpha_q * o.q_tgt + (1.0 if target_spike else 0.0) / n.tau_u
    o.p_tgt = n.alpha_p * o.p_tgt + o.q_tgt / n.tau_v
    o.p_out = n.alpha_p * o.p_out + u_err + prm.w_tgt * o.p_tgt
    o.r_out = n.alpha_r * o.r_out - (1.0 if o.spiked else 0.0) * n.v_th
    o.v_out = o.p_out + o.r_out + o.b_out
    o.spiked = o.v_out >= n.v_th
    if o.spiked:
        o.spike_count += 1
    return o, o.spiked


# --- target routing ----------------------------------------------------------


@dataclass(frozen=True)
class TargetRouting:
    """Which output neuron receives label spikes, and when."""

    n_out: int
    label: int | None
    period: int

    def spikes_at(self, t: int) -> np.ndarray:
        out = np.zeros(self.n_out, dtype=bool)
        if self.label is not None and self.period > 0 and t % self.period == 0:
            out[self.label] = True
        return out


def wire_targets(n_out: int, label: int | None, mode: str, period: int) -> TargetRouting:
    """Route periodic label spikes to one neuron (train) or nowhere (test)."""
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    if mode == "train" and label is not None:
        if not (0 <= label < n_out):
            raise IndexError(f"label {label} out of range for {n_out} outputs")
        return TargetRouting(n_out=n_out, label=label, period=period)
    return TargetRouting(n_out=n_out, label=None, period=0)


# --- vectorized readout layer -------------------------------------------------


class ReadoutLayer:
    """Plastic output layer of two-compartment neurons (vectorized).

    Holds the quantized weight store, the shared pre-synaptic PSC/PSP
    filters, per-neuron distal and proximal state, the plasticity traces and
    optionally a plasticity engine. Scalar semantics match ``step_error``
    applied per neuron with weighted_input = (effective weights) @ p_pre.
    """

    kind = "plastic-output"

    def __init__(
        self,
        fan_in: int,
        n_out: int,
        store: QuantizedWeightStore,
        params: ReadoutParams,
        b_err: float | None = None,
    ):
        if store.shape != (n_out, fan_in):
            raise ValueError(f"store shape {store.shape} != ({n_out}, {fan_in})")
        self.fan_in = fan_in
        self.n_out = n_out
        self.store = store
        self.params = params
        self.b_err = b_err if b_err is not None else (
            params.b_err if params.b_err is not None else solve_baseline_bias(params)
        )
        n = params.neuron
        self.b_out = params.b_out if params.b_out is not None else -self.b_err / (1.0 - n.alpha_p)
        self.x1_cfg, self.x2_cfg = params.pre_trace_configs()
        self.y1_cfg = params.y1_config()
        self.y2_cfg = params.y2_config()
        self.engine: PlasticityEngine | None = None
        self.reset_state()

    def attach_engine(self, rule: SumOfProductsRule, lr_exp: int, learn_period: int = 1):
        self.engine = PlasticityEngine(self.store, rule, lr_exp, learn_period)

    def reset_state(self):
        self.q_pre = np.zeros(self.fan_in)
        self.p_pre = np.zeros(self.fan_in)
        self.q_tgt = np.zeros(self.n_out)
        self.p_tgt = np.zeros(self.n_out)
        self.v_err = np.zeros(self.n_out)
        self.r_err = np.zeros(self.n_out)
        self.u_err = np.zeros(self.n_out)
        self.spiked_err = np.zeros(self.n_out, dtype=bool)
        self.q_err = np.zeros(self.n_out)
        self.p_err = np.zeros(self.n_out)
        self.x0 = np.zeros(self.fan_in)
        self.x1 = np.zeros(self.fan_in)
        self.x2 = np.zeros(self.fan_in)
        self.y1 = np.zeros(self.n_out)
        self.y2 = np.zeros(self.n_out)
        self.p_out = np.zeros(self.n_out)
        self.v_out = np.zeros(self.n_out)
        self.r_out = np.zeros(self.n_out)
        self.spiked_out = np.zeros(self.n_out, dtype=bool)
        self.spike_count = np.zeros(self.n_out, dtype=np.int64)
        if self.engine is not None:
            self.engine.reset_counter()

    def step(self, in_spikes: np.ndarray, target_spikes: np.ndarray, learn: bool = False) -> np.ndarray:
        """One global timestep; returns the proximal (output) spike vector."""
        s = np.asarray(in_spikes, dtype=np.float64)
        tgt = np.asarray(target_spikes, dtype=np.float64)
        if s.shape != (self.fan_in,) or tgt.shape != (self.n_out,):
            raise ValueError("readout input/target shape mismatch")
        prm = self.params
        n = prm.neuron

        # pre-synaptic filters shared by all neurons
        self.q_pre = n.alpha_q * self.q_pre + s / n.tau_u
        self.p_pre = n.alpha_p * self.p_pre + self.q_pre / n.tau_v
        # label-spike filter per neuron
        self.q_tgt = n.alpha_q * self.q_tgt + tgt / n.tau_u
        self.p_tgt = n.alpha_p * self.p_tgt + self.q_tgt / n.tau_v

        # distal compartment
        drive = self.store.effective() @ self.p_pre
        self.r_err = n.alpha_r * self.r_err - self.spiked_err * n.v_th
        base = drive - prm.w_tgt * self.p_tgt + self.b_err
        self.u_err = base + (self.r_err if prm.include_reset_in_u_err else 0.0)
        self.v_err = base + self.r_err
        self.spiked_err = self.v_err >= n.v_th
        err = self.spiked_err.astype(np.float64)

        # post traces (two-stage diagnostic pair plus the rule traces)
        self.q_err = n.alpha_q * self.q_err + err
        self.p_err = n.alpha_p * self.p_err + self.q_err
        self.y1 = update_trace(self.y1, err, self.y1_cfg)
        self.y2 = update_trace(self.y2, err, self.y2_cfg)

        # pre traces for the rule
        self.x0 = s
        self.x1 = update_trace(self.x1, s, self.x1_cfg)
        self.x2 = update_trace(self.x2, s, self.x2_cfg)

        # proximal compartment: integrates the copied current; the label
        # drive re-enters with opposite sign through the same filter, so
        # label spikes cancel exactly
        self.p_out = n.alpha_p * self.p_out + self.u_err + prm.w_tgt * self.p_tgt
        self.r_out = n.alpha_r * self.r_out - self.spiked_out * n.v_th
        self.v_out = self.p_out + self.r_out + self.b_out
        self.spiked_out = self.v_out >= n.v_th
        self.spike_count += self.spiked_out

        if learn and self.engine is not None:
            self.engine.tick(
                pre={"x0": self.x0, "x1": self.x1, "x2": self.x2},
                post={"y0": err, "y1": self.y1, "y2": self.y2},
            )
        return self.spiked_out

    def make_compartment(self) -> ErrorCompartment:
        """Fresh isolated scalar compartment with this layer's parameters."""
        return ErrorCompartment(params=self.params, b_err=self.b_err)
