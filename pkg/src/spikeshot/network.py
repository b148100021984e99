"""Network assembly: frozen feature layers plus one plastic readout layer.

Topologies are described with compact layer tokens: ``"4a"`` is a 4x4
sum-pooling layer (stride 4, fixed weight 1), ``"16c5z"`` a 16-channel 5x5
zero-padded same-size convolution, a bare integer a dense layer of that many
neurons. The final layer is always the plastic multi-compartment readout.
All feature weights are signed 8-bit integers with a per-layer power-of-two
scale, loaded from a weight file or drawn seeded-uniform, and are frozen:
only the readout store ever changes.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .dynamics import NeuronParams
from .plasticity import QuantizedWeightStore
from .readout import ReadoutLayer, ReadoutParams

KIND_DENSE = "dense"
KIND_CONV = "conv2d"
KIND_POOL = "pool"
KIND_PLASTIC = "plastic-output"


class TopologyError(ValueError):
    """Inconsistent layer shapes or malformed layer tokens."""


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    kernel: int | None = None
    channels: int | None = None
    plastic: bool = False


@dataclass(frozen=True)
class Topology:
    """Ordered layer specs; the last one is the plastic readout."""

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers or self.layers[-1].kind != KIND_PLASTIC:
            raise TopologyError("topology must end with exactly one plastic-output layer")
        if any(l.kind == KIND_PLASTIC for l in self.layers[:-1]):
            raise TopologyError("plastic-output layer must be last")


def parse_shape(text: str) -> tuple[int, ...]:
    """Parse "128x128x2" or "32" into a shape tuple."""
    try:
        dims = tuple(int(d) for d in str(text).lower().split("x"))
    except ValueError:
        raise TopologyError(f"bad shape {text!r}")
    if not dims or any(d < 1 for d in dims):
        raise TopologyError(f"bad shape {text!r}")
    return dims


_POOL_RE = re.compile(r"^(\d+)a$")
_CONV_RE = re.compile(r"^(\d+)c(\d+)z$")
_DENSE_RE = re.compile(r"^(\d+)$")


def parse_topology(input_shape, layer_tokens: list[str], n_out: int) -> Topology:
    """Build a Topology from notation tokens, propagating shapes."""
    in_shape = parse_shape(input_shape) if isinstance(input_shape, str) else tuple(input_shape)
    shape = in_shape
    specs: list[LayerSpec] = []
    for tok in layer_tokens:
        tok = str(tok).strip()
        if m := _POOL_RE.match(tok):
            k = int(m.group(1))
            if len(shape) != 3:
                raise TopologyError(f"pooling {tok!r} needs an HxWxC input, got {shape}")
            h, w, c = shape
            if h % k or w % k:
                raise TopologyError(f"pool window {k} does not divide {h}x{w}")
            specs.append(LayerSpec(KIND_POOL, shape, (h // k, w // k, c), kernel=k))
        elif m := _CONV_RE.match(tok):
            ch, k = int(m.group(1)), int(m.group(2))
            if len(shape) != 3:
                raise TopologyError(f"conv {tok!r} needs an HxWxC input, got {shape}")
            if k % 2 == 0:
                raise TopologyError(f"conv kernel must be odd for same-size zero padding, got {k}")
            specs.append(LayerSpec(KIND_CONV, shape, (shape[0], shape[1], ch), kernel=k, channels=ch))
        elif m := _DENSE_RE.match(tok):
            specs.append(LayerSpec(KIND_DENSE, shape, (int(m.group(1)),)))
        else:
            raise TopologyError(f"unknown layer token {tok!r}")
        shape = specs[-1].out_shape
    if n_out < 1:
        raise TopologyError("output layer needs at least one neuron")
    specs.append(LayerSpec(KIND_PLASTIC, shape, (int(n_out),), plastic=True))
    return Topology(input_shape=in_shape, layers=tuple(specs))


# --- frozen feature layers ----------------------------------------------------


class _FrozenLayer:
    """Shared stepping pipeline; subclasses define the weight contraction."""

    kind: str

    def __init__(self, spec: LayerSpec, params: NeuronParams):
        self.spec = spec
        self.params = params
        self.reset_state()

    def reset_state(self):
        self.q = np.zeros(self.spec.in_shape)
        self.p = np.zeros(self.spec.in_shape)
        self.u = np.zeros(self.spec.out_shape)
        self.v = np.zeros(self.spec.out_shape)
        self.r = np.zeros(self.spec.out_shape)
        self.spiked = np.zeros(self.spec.out_shape, dtype=bool)

    def _contract(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step(self, in_spikes: np.ndarray) -> np.ndarray:
        s = np.asarray(in_spikes, dtype=np.float64).reshape(self.spec.in_shape)
        prm = self.params
        self.q = prm.alpha_q * self.q + s / prm.tau_u
        self.u = self._contract(self.q) + prm.bias
        self.p = prm.alpha_p * self.p + self.q / prm.tau_v
        self.r = prm.alpha_r * self.r - self.spiked * prm.v_th
        self.v = self._contract(self.p) + self.r + prm.bias
        self.spiked = self.v >= prm.v_th
        return self.spiked


class DenseLayer(_FrozenLayer):
    kind = KIND_DENSE

    def __init__(self, spec: LayerSpec, params: NeuronParams, weights: np.ndarray, scale_exp: int):
        n_in = math.prod(spec.in_shape)
        weights = np.asarray(weights)
        if weights.shape != (spec.out_shape[0], n_in):
            raise TopologyError(f"dense weights {weights.shape} != ({spec.out_shape[0]}, {n_in})")
        self.weights = weights.astype(np.int8)
        self.scale_exp = int(scale_exp)
        self.w_eff = self.weights.astype(np.float64) * 2.0**self.scale_exp
        super().__init__(spec, params)

    def _contract(self, x):
        return self.w_eff @ x.ravel()


class ConvLayer(_FrozenLayer):
    kind = KIND_CONV

    def __init__(self, spec: LayerSpec, params: NeuronParams, weights: np.ndarray, scale_exp: int):
        k, c_out, c_in = spec.kernel, spec.channels, spec.in_shape[2]
        weights = np.asarray(weights)
        if weights.shape != (c_out, k, k, c_in):
            raise TopologyError(f"conv weights {weights.shape} != ({c_out}, {k}, {k}, {c_in})")
        self.weights = weights.astype(np.int8)
        self.scale_exp = int(scale_exp)
        self.w_eff = self.weights.astype(np.float64) * 2.0**self.scale_exp
        self._pad = k // 2
        super().__init__(spec, params)

    def _contract(self, x):
        pad = self._pad
        xp = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (self.spec.kernel, self.spec.kernel), axis=(0, 1))
        # win: [H, W, C_in, kh, kw]; kernel: [C_out, kh, kw, C_in]
        return np.einsum("hwckl,oklc->hwo", win, self.w_eff)


class PoolLayer(_FrozenLayer):
    """Sum pooling into spiking neurons: fixed weight 1 over a kxk window."""

    kind = KIND_POOL

    def __init__(self, spec: LayerSpec, params: NeuronParams):
        self._k = spec.kernel
        super().__init__(spec, params)

    def _contract(self, x):
        k = self._k
        h, w, c = self.spec.in_shape
        return x.reshape(h // k, k, w // k, k, c).sum(axis=(1, 3))


# --- network ------------------------------------------------------------------


@dataclass(frozen=True)
class BuildConfig:
    """Weight initialization and scaling knobs for build_network."""

    seed: int = 0
    frozen_scale_exp: int = -6
    frozen_init_lo: int = -40
    frozen_init_hi: int = 80
    plastic_scale_exp: int = -6
    plastic_init: str = "zero"  # or "random"
    plastic_init_lo: int = -16
    plastic_init_hi: int = 16


class Network:
    """A stack of frozen feature layers feeding one plastic readout layer.

    One global timestep steps every layer once, in order, each consuming the
    spikes the previous layer produced in the same global step. A single
    stepping context owns the instance; independent instances are fully
    isolated.
    """

    def __init__(self, topology: Topology, layers: list, readout: ReadoutLayer, provenance: str = ""):
        self.topology = topology
        self.layers = layers
        self.readout = readout
        self.provenance = provenance
        self.n_in = math.prod(topology.input_shape)
        self.n_out = readout.n_out
        self.layer_spikes: list[np.ndarray] = []

    def reset_state(self):
        for layer in self.layers:
            layer.reset_state()
        self.readout.reset_state()
        self.layer_spikes = []

    def step(self, in_spikes: np.ndarray, target_spikes: np.ndarray | None = None, learn: bool = False) -> np.ndarray:
        """Advance the whole network one timestep; returns proximal spikes."""
        x = np.asarray(in_spikes, dtype=np.float64)
        if x.size != self.n_in:
            raise ValueError(f"expected {self.n_in} input channels, got {x.size}")
        record = []
        for layer in self.layers:
            x = layer.step(x).astype(np.float64)
            record.append(layer.spiked)
        tgt = np.zeros(self.n_out, dtype=bool) if target_spikes is None else target_spikes
        out = self.readout.step(x.ravel(), tgt, learn=learn)
        record.append(out)
        self.layer_spikes = record
        return out

    def forward_step(self, in_spikes: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Inference-only step: no targets, no learning; returns spikes + per-layer record."""
        out = self.step(in_spikes, None, learn=False)
        return out, self.layer_spikes

    def weighted_layers(self) -> list:
        """Layers carrying stored weights, in network order (readout last)."""
        return [l for l in self.layers if l.kind in (KIND_DENSE, KIND_CONV)] + [self.readout]

    # harness protocol -----------------------------------------------------

    def spike_counts(self) -> np.ndarray:
        return self.readout.spike_count.copy()

    def set_rule(self, rule, lr_exp: int, learn_period: int):
        self.readout.attach_engine(rule, lr_exp, learn_period)

    def calibrate(self, window: int):
        from .readout import calibrate_bias

        return calibrate_bias(self.readout.make_compartment(), window)

    def plastic_weights(self) -> np.ndarray:
        return self.readout.store.weights.copy()

    def reset_plastic(self):
        """Zero the plastic store and rewind its rounding stream."""
        self.readout.store.weights = np.zeros(self.readout.store.shape, dtype=np.int8)
        self.readout.store.reseed()


def build_network(
    topology: Topology,
    neuron: NeuronParams,
    readout_params: ReadoutParams,
    cfg: BuildConfig | None = None,
) -> Network:
    """Allocate a network: frozen weights seeded-random, plastic store zeroed.

    Seed usage is fixed: one child stream per frozen layer (in order), then
    one for the plastic store's rounding stream, then one for random plastic
    init when configured.
    """
    cfg = cfg or BuildConfig()
    if not (-128 <= cfg.frozen_init_lo <= cfg.frozen_init_hi <= 127):
        raise ValueError("frozen init range must lie within int8")
    seq = np.random.SeedSequence(cfg.seed)
    children = seq.spawn(len(topology.layers) + 2)
    layers = []
    for i, spec in enumerate(topology.layers[:-1]):
        rng = np.random.default_rng(children[i])
        if spec.kind == KIND_POOL:
            layers.append(PoolLayer(spec, neuron))
        elif spec.kind == KIND_DENSE:
            w = rng.integers(cfg.frozen_init_lo, cfg.frozen_init_hi + 1,
                             size=(spec.out_shape[0], math.prod(spec.in_shape)))
            layers.append(DenseLayer(spec, neuron, w, cfg.frozen_scale_exp))
        elif spec.kind == KIND_CONV:
            k, c_out, c_in = spec.kernel, spec.channels, spec.in_shape[2]
            w = rng.integers(cfg.frozen_init_lo, cfg.frozen_init_hi + 1, size=(c_out, k, k, c_in))
            layers.append(ConvLayer(spec, neuron, w, cfg.frozen_scale_exp))
        else:
            raise TopologyError(f"unexpected layer kind {spec.kind}")
    plastic_spec = topology.layers[-1]
    fan_in = math.prod(plastic_spec.in_shape)
    n_out = plastic_spec.out_shape[0]
    store_seed = int(np.random.default_rng(children[-2]).integers(0, 2**31 - 1))
    if cfg.plastic_init == "zero":
        init = None
    elif cfg.plastic_init == "random":
        rng = np.random.default_rng(children[-1])
        init = rng.integers(cfg.plastic_init_lo, cfg.plastic_init_hi + 1, size=(n_out, fan_in))
    else:
        raise ValueError(f"unknown plastic_init {cfg.plastic_init!r}")
    store = QuantizedWeightStore((n_out, fan_in), cfg.plastic_scale_exp, store_seed, init=init)
    readout = ReadoutLayer(fan_in, n_out, store, readout_params)
    return Network(topology, layers, readout, provenance=f"random-init seed={cfg.seed}")
