"""High-precision reference implementation used to validate the simulator.

Everything here re-implements the update recursions with scalar Python
loops and real-valued weights (no rounding, no clamping, no shared
arithmetic code with the vectorized simulator), so transcription bugs in
either side show up as trajectory divergence. Test-only by design; speed is
a non-goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .dynamics import NeuronParams
from .readout import CalibrationReport, ReadoutParams
from .ruledsl import SumOfProductsRule
from .traces import TraceConfig


@dataclass
class TrajectoryRecord:
    """Per-step series of named state variables plus run metadata."""

    meta: dict
    series: dict[str, list] = field(default_factory=dict)

    def append(self, name: str, value):
        self.series.setdefault(name, []).append(value)

    @property
    def steps(self) -> int:
        return max((len(v) for v in self.series.values()), default=0)


@dataclass(frozen=True)
class VarDivergence:
    max_abs_dev: float
    first_divergence: int | None
    passed: bool


@dataclass(frozen=True)
class DivergenceReport:
    per_var: dict[str, VarDivergence]

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.per_var.values())


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def compare_trajectories(a: TrajectoryRecord, b: TrajectoryRecord, tolerances: dict[str, float]) -> DivergenceReport:
    """Per-variable max deviation and first step exceeding its tolerance.

    Variables present in both records are compared; lengths and shapes must
    match. A variable missing from ``tolerances`` is checked exactly.
    """
    per_var = {}
    for name in sorted(set(a.series) & set(b.series)):
        sa, sb = a.series[name], b.series[name]
        if len(sa) != len(sb):
            raise ValueError(f"series {name!r} lengths differ: {len(sa)} vs {len(sb)}")
        tol = tolerances.get(name, 0.0)
        max_dev, first = 0.0, None
        for t, (va, vb) in enumerate(zip(sa, sb)):
            la, lb = _as_list(va), _as_list(vb)
            if len(la) != len(lb):
                raise ValueError(f"series {name!r} shapes differ at step {t}")
            dev = max((abs(float(x) - float(y)) for x, y in zip(la, lb)), default=0.0)
            if dev > max_dev:
                max_dev = dev
            if first is None and dev > tol:
                first = t
        per_var[name] = VarDivergence(max_abs_dev=max_dev, first_divergence=first, passed=first is None)
    return DivergenceReport(per_var=per_var)


def dump_trajectory(rec: TrajectoryRecord) -> str:
    """Text dump, one step per row, for golden files."""
    names = sorted(rec.series)
    lines = [f"# trajectory steps={rec.steps}"]
    for k, v in sorted(rec.meta.items()):
        lines.append(f"# {k}={v}")
    lines.append("# columns: step " + " ".join(names))
    for t in range(rec.steps):
        cells = [str(t)]
        for name in names:
            vals = _as_list(rec.series[name][t])
            cells.append(",".join(repr(float(x)) for x in vals))
        lines.append(" ".join(cells))
    return "\n".join(lines) + "\n"


# --- scalar dynamics ----------------------------------------------------------


class OracleDenseLayer:
    """Scalar-loop dense LIF layer with real-valued weights."""

    def __init__(self, weights, params: NeuronParams):
        self.w = [[float(x) for x in row] for row in weights]
        self.n_out = len(self.w)
        self.fan_in = len(self.w[0]) if self.w else 0
        self.prm = params
        self.reset_state()

    def reset_state(self):
        self.q = [0.0] * self.fan_in
        self.p = [0.0] * self.fan_in
        self.u = [0.0] * self.n_out
        self.v = [0.0] * self.n_out
        self.r = [0.0] * self.n_out
        self.spiked = [False] * self.n_out

    def step(self, s):
        prm = self.prm
        aq, ap, ar = prm.alpha_q, prm.alpha_p, prm.alpha_r
        for j in range(self.fan_in):
            self.q[j] = aq * self.q[j] + float(s[j]) / prm.tau_u
        for i in range(self.n_out):
            acc = prm.bias
            wi = self.w[i]
            for j in range(self.fan_in):
                acc += wi[j] * self.q[j]
            self.u[i] = acc
        for j in range(self.fan_in):
            self.p[j] = ap * self.p[j] + self.q[j] / prm.tau_v
        for i in range(self.n_out):
            self.r[i] = ar * self.r[i] - (prm.v_th if self.spiked[i] else 0.0)
            acc = prm.bias + self.r[i]
            wi = self.w[i]
            for j in range(self.fan_in):
                acc += wi[j] * self.p[j]
            self.v[i] = acc
            self.spiked[i] = self.v[i] >= prm.v_th
        return self.spiked


def _trace_step(t: float, spike: float, cfg: TraceConfig) -> float:
    t = math.exp(-1.0 / cfg.tau) * t + spike * cfg.increment
    if cfg.saturation is not None and t > cfg.saturation:
        t = cfg.saturation
    return t


def _eval_rule(rule: SumOfProductsRule, values: dict[str, float]) -> float:
    total = 0.0
    for prod in rule.products:
        term = prod.constant
        for f in prod.factors:
            term *= values[f.name] + f.offset
        total += term
    return total


class OracleReadout:
    """Scalar two-compartment readout with real-valued plastic weights."""

    def __init__(self, fan_in: int, n_out: int, params: ReadoutParams, b_err: float,
                 w_scale: float = 1.0):
        self.fan_in = fan_in
        self.n_out = n_out
        self.prm = params
        self.b_err = b_err
        n = params.neuron
        self.b_out = params.b_out if params.b_out is not None else -b_err / (1.0 - n.alpha_p)
        self.x1_cfg, self.x2_cfg = params.pre_trace_configs()
        self.y1_cfg = params.y1_config()
        self.y2_cfg = params.y2_config()
        self.w_scale = w_scale  # granularity of one integer weight step
        self.rule: SumOfProductsRule | None = None
        self.lr_exp = 0
        self.learn_period = 1
        self.w = [[0.0] * fan_in for _ in range(n_out)]
        self.reset_state()

    def set_rule(self, rule: SumOfProductsRule, lr_exp: int, learn_period: int):
        self.rule = rule
        self.lr_exp = lr_exp
        self.learn_period = learn_period

    def reset_state(self):
        m, n = self.fan_in, self.n_out
        self.q_pre = [0.0] * m
        self.p_pre = [0.0] * m
        self.q_tgt = [0.0] * n
        self.p_tgt = [0.0] * n
        self.v_err = [0.0] * n
        self.r_err = [0.0] * n
        self.u_err = [0.0] * n
        self.spiked_err = [False] * n
        self.q_err = [0.0] * n
        self.p_err = [0.0] * n
        self.x0 = [0.0] * m
        self.x1 = [0.0] * m
        self.x2 = [0.0] * m
        self.y1 = [0.0] * n
        self.y2 = [0.0] * n
        self.p_out = [0.0] * n
        self.v_out = [0.0] * n
        self.r_out = [0.0] * n
        self.spiked_out = [False] * n
        self.spike_count = [0] * n
        self.step_count = 0

    def step(self, s, tgt, learn: bool = False):
        prm = self.prm
        n = prm.neuron
        aq, ap, ar = n.alpha_q, n.alpha_p, n.alpha_r
        for j in range(self.fan_in):
            self.q_pre[j] = aq * self.q_pre[j] + float(s[j]) / n.tau_u
            self.p_pre[j] = ap * self.p_pre[j] + self.q_pre[j] / n.tau_v
        for i in range(self.n_out):
            t = 1.0 if tgt[i] else 0.0
            self.q_tgt[i] = aq * self.q_tgt[i] + t / n.tau_u
            self.p_tgt[i] = ap * self.p_tgt[i] + self.q_tgt[i] / n.tau_v
        for i in range(self.n_out):
            drive = 0.0
            wi = self.w[i]
            for j in range(self.fan_in):
                drive += wi[j] * self.p_pre[j]
            self.r_err[i] = ar * self.r_err[i] - (n.v_th if self.spiked_err[i] else 0.0)
            base = drive - prm.w_tgt * self.p_tgt[i] + self.b_err
            self.u_err[i] = base + (self.r_err[i] if prm.include_reset_in_u_err else 0.0)
            self.v_err[i] = base + self.r_err[i]
            self.spiked_err[i] = self.v_err[i] >= n.v_th
            err = 1.0 if self.spiked_err[i] else 0.0
            self.q_err[i] = aq * self.q_err[i] + err
            self.p_err[i] = ap * self.p_err[i] + self.q_err[i]
            self.y1[i] = _trace_step(self.y1[i], err, self.y1_cfg)
            self.y2[i] = _trace_step(self.y2[i], err, self.y2_cfg)
        for j in range(self.fan_in):
            sj = float(s[j])
            self.x0[j] = sj
            self.x1[j] = _trace_step(self.x1[j], sj, self.x1_cfg)
            self.x2[j] = _trace_step(self.x2[j], sj, self.x2_cfg)
        for i in range(self.n_out):
            self.p_out[i] = ap * self.p_out[i] + self.u_err[i] + prm.w_tgt * self.p_tgt[i]
            self.r_out[i] = ar * self.r_out[i] - (n.v_th if self.spiked_out[i] else 0.0)
            self.v_out[i] = self.p_out[i] + self.r_out[i] + self.b_out
            self.spiked_out[i] = self.v_out[i] >= n.v_th
            if self.spiked_out[i]:
                self.spike_count[i] += 1
        if learn and self.rule is not None:
            self.step_count += 1
            if self.step_count % self.learn_period == 0:
                self._learn()
        return self.spiked_out

    def _learn(self):
        lr = 2.0**self.lr_exp * self.w_scale
        for i in range(self.n_out):
            vals = {
                "y0": 1.0 if self.spiked_err[i] else 0.0,
                "y1": self.y1[i],
                "y2": self.y2[i],
            }
            for j in range(self.fan_in):
                vals["x0"] = self.x0[j]
                vals["x1"] = self.x1[j]
                vals["x2"] = self.x2[j]
                vals["w"] = self.w[i][j]
                self.w[i][j] += _eval_rule(self.rule, vals) * lr


class OracleNetwork:
    """Dense-layer stack plus readout, mirroring the simulator's interface."""

    def __init__(self, hidden_weights: list, neuron: NeuronParams, readout_params: ReadoutParams,
                 n_out: int, b_err: float, w_scale: float = 1.0):
        self.layers = [OracleDenseLayer(w, neuron) for w in hidden_weights]
        fan_in = self.layers[-1].n_out if self.layers else None
        if fan_in is None:
            raise ValueError("oracle network needs at least one hidden layer")
        self.readout = OracleReadout(fan_in, n_out, readout_params, b_err, w_scale=w_scale)
        self.n_in = self.layers[0].fan_in
        self.n_out = n_out

    def reset_state(self):
        for layer in self.layers:
            layer.reset_state()
        self.readout.reset_state()
        self.readout.step_count = 0

    def step(self, in_spikes, target_spikes=None, learn: bool = False):
        x = [float(v) for v in in_spikes]
        for layer in self.layers:
            x = [1.0 if sp else 0.0 for sp in layer.step(x)]
        tgt = [False] * self.n_out if target_spikes is None else list(target_spikes)
        return self.readout.step(x, tgt, learn=learn)

    def spike_counts(self):
        return list(self.readout.spike_count)

    def set_rule(self, rule: SumOfProductsRule, lr_exp: int, learn_period: int):
        self.readout.set_rule(rule, lr_exp, learn_period)

    def plastic_weights(self):
        return [row[:] for row in self.readout.w]

    def reset_plastic(self):
        self.readout.w = [[0.0] * self.readout.fan_in for _ in range(self.n_out)]

    def calibrate(self, window: int) -> CalibrationReport:
        return oracle_calibrate(self.readout.prm, self.readout.b_err, window)


def oracle_calibrate(params: ReadoutParams, b_err: float, window: int) -> CalibrationReport:
    """Independent recomputation of the baseline trace averages."""
    comp = OracleReadout(0, 1, params, b_err)
    spikes, p_err_hist, y1_hist = [], [], []
    for t in range(window):
        comp.step([], [False])
        p_err_hist.append(comp.p_err[0])
        y1_hist.append(comp.y1[0])
        if comp.spiked_err[0]:
            spikes.append(t)
    if len(spikes) < 11:
        raise RuntimeError("oracle calibration: too few baseline spikes")
    warmup = max(2, len(spikes) // 4)
    t_a, t_b = spikes[warmup], spikes[-1]
    span = t_b - t_a
    return CalibrationReport(
        b=sum(p_err_hist[t_a:t_b]) / span,
        b_y1=sum(y1_hist[t_a:t_b]) / span,
        b_err=b_err,
        period=span / (len(spikes) - 1 - warmup),
        window=window,
        n_spikes=len(spikes),
    )


def oracle_simulate(layer_weights: list, params: NeuronParams, input_stream, steps: int) -> TrajectoryRecord:
    """Run a stack of dense layers at full precision, recording everything.

    ``input_stream`` yields (or indexes) the per-step input spike vector;
    missing steps read as silence.
    """
    layers = [OracleDenseLayer(w, params) for w in layer_weights]
    rec = TrajectoryRecord(meta={"steps": steps, "n_layers": len(layers)})
    n_in = layers[0].fan_in
    for t in range(steps):
        x = list(input_stream[t]) if t < len(input_stream) else [0.0] * n_in
        rec.append("input", [float(v) for v in x])
        for li, layer in enumerate(layers):
            spikes = layer.step(x)
            x = [1.0 if sp else 0.0 for sp in spikes]
            rec.append(f"L{li}.u", layer.u[:])
            rec.append(f"L{li}.v", layer.v[:])
            rec.append(f"L{li}.r", layer.r[:])
            rec.append(f"L{li}.q", layer.q[:])
            rec.append(f"L{li}.p", layer.p[:])
            rec.append(f"L{li}.spikes", x[:])
    return rec
