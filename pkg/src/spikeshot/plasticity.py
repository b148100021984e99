"""8-bit plastic weights with stochastic rounding, and the rule engine.

Weights are stored as signed 8-bit integers with a shared power-of-two scale:
effective weight = integer * 2**scale_exp. A rule update produces a real
increment Delta; the candidate integer weight w + Delta * 2**lr_exp is
stochastically rounded (floor with probability 1 - frac, ceil otherwise) and
clamped to [-128, 127]. Every rounding consumes exactly one uniform draw from
the store's counter-based stream, assigned in row-major synapse order, so
trajectories are reproducible regardless of how evaluation is batched.
"""

from __future__ import annotations

import numpy as np

from .ruledsl import SumOfProductsRule, evaluate_rule

WEIGHT_MIN = -128
WEIGHT_MAX = 127

_ZERO = np.zeros(1)


class QuantizedWeightStore:
    """Signed 8-bit weight matrix with a power-of-two scale and rounding stream."""

    def __init__(self, shape: tuple[int, int], scale_exp: int, seed: int, init: np.ndarray | None = None):
        self.shape = tuple(shape)
        self.scale_exp = int(scale_exp)
        self.rng_seed = int(seed)
        if init is None:
            self.weights = np.zeros(self.shape, dtype=np.int8)
        else:
            init = np.asarray(init)
            if init.shape != self.shape:
                raise ValueError(f"init shape {init.shape} != store shape {self.shape}")
            if init.min() < WEIGHT_MIN or init.max() > WEIGHT_MAX:
                raise ValueError("init weights out of int8 range")
            self.weights = init.astype(np.int8)
        self._rng = np.random.Generator(np.random.Philox(self.rng_seed))

    @property
    def scale(self) -> float:
        return 2.0**self.scale_exp

    def effective(self) -> np.ndarray:
        """Real-valued weights: integer * 2**scale_exp."""
        return self.weights.astype(np.float64) * self.scale

    def reseed(self, seed: int | None = None):
        """Rewind (or replace) the rounding stream; weights are untouched."""
        if seed is not None:
            self.rng_seed = int(seed)
        self._rng = np.random.Generator(np.random.Philox(self.rng_seed))

    def clone(self) -> "QuantizedWeightStore":
        """Deep copy, including the exact position of the rounding stream."""
        out = QuantizedWeightStore(self.shape, self.scale_exp, self.rng_seed, init=self.weights.copy())
        out._rng.bit_generator.state = self._rng.bit_generator.state
        return out

    def apply_update(self, i: int, j: int, raw_delta: float, lr_exp: int):
        """Stochastically round one synapse toward w + raw_delta * 2**lr_exp."""
        n, m = self.shape
        if not (0 <= i < n and 0 <= j < m):
            raise IndexError(f"synapse ({i},{j}) out of range for {self.shape}")
        candidate = float(self.weights[i, j]) + raw_delta * 2.0**lr_exp
        floor = np.floor(candidate)
        frac = candidate - floor
        rounded = floor + (self._rng.random() < frac)
        self.weights[i, j] = np.int8(np.clip(rounded, WEIGHT_MIN, WEIGHT_MAX))

    def apply_update_matrix(self, raw_deltas: np.ndarray, lr_exp: int):
        """Vectorized update of every synapse; draws consumed row-major.

        Equivalent to calling ``apply_update`` for each (i, j) in row-major
        order on the same stream.
        """
        deltas = np.asarray(raw_deltas, dtype=np.float64)
        if deltas.shape != self.shape:
            raise ValueError(f"delta shape {deltas.shape} != store shape {self.shape}")
        candidate = self.weights.astype(np.float64) + deltas * 2.0**lr_exp
        floor = np.floor(candidate)
        frac = candidate - floor
        draws = self._rng.random(self.shape)
        rounded = floor + (draws < frac)
        self.weights = np.clip(rounded, WEIGHT_MIN, WEIGHT_MAX).astype(np.int8)


def synapse_view(pre: dict[str, np.ndarray], post: dict[str, np.ndarray], w_eff: float, i: int, j: int) -> dict[str, float]:
    """Variable bindings for evaluating a rule at synapse (i, j)."""
    values = {"x0": 0.0, "x1": 0.0, "x2": 0.0, "y0": 0.0, "y1": 0.0, "y2": 0.0, "w": w_eff}
    for k, v in pre.items():
        values[k] = float(v[j])
    for k, v in post.items():
        values[k] = float(v[i])
    return values


def evaluate_rule_matrix(
    rule: SumOfProductsRule,
    pre: dict[str, np.ndarray],
    post: dict[str, np.ndarray],
    w_eff: np.ndarray,
) -> np.ndarray:
    """Evaluate the rule for every synapse at once.

    ``pre`` maps x-variable names to [fan_in] arrays, ``post`` maps
    y-variable names to [n_out] arrays; w_eff is the [n_out, fan_in]
    effective weight matrix. Missing variables read as zero.
    """
    n_out, fan_in = w_eff.shape
    total = np.zeros((n_out, fan_in))
    for prod in rule.products:
        term = np.full((n_out, fan_in), prod.constant)
        for f in prod.factors:
            if f.name.startswith("x"):
                val = np.asarray(pre.get(f.name, _ZERO))[np.newaxis, :]
            elif f.name.startswith("y"):
                val = np.asarray(post.get(f.name, _ZERO))[:, np.newaxis]
            else:  # w
                val = w_eff
            term = term * (val + f.offset)
        total += term
    return total


def apply_rule_rowmajor(
    store: QuantizedWeightStore,
    rule: SumOfProductsRule,
    pre: dict[str, np.ndarray],
    post: dict[str, np.ndarray],
    lr_exp: int,
) -> None:
    """Reference scalar path: evaluate + update synapse by synapse, row-major.

    Consumes the rounding stream exactly like ``apply_update_matrix``.
    """
    n, m = store.shape
    w_eff = store.effective()
    for i in range(n):
        for j in range(m):
            delta = evaluate_rule(rule, synapse_view(pre, post, w_eff[i, j], i, j))
            store.apply_update(i, j, delta, lr_exp)


class PlasticityEngine:
    """Applies a rule to a weight store every ``learn_period`` timesteps.

    ``tick`` is called once per global timestep with the current trace
    values; on period boundaries it evaluates the rule for every synapse
    (row-major) and applies stochastically rounded updates. Off-boundary
    ticks leave the store untouched.
    """

    def __init__(
        self,
        store: QuantizedWeightStore,
        rule: SumOfProductsRule,
        lr_exp: int,
        learn_period: int = 1,
    ):
        if learn_period < 1:
            raise ValueError("learn_period must be >= 1")
        self.store = store
        self.rule = rule
        self.lr_exp = int(lr_exp)
        self.learn_period = int(learn_period)
        self.step_count = 0

    def reset_counter(self):
        self.step_count = 0

    def tick(self, pre: dict[str, np.ndarray], post: dict[str, np.ndarray]) -> bool:
        """Advance one timestep; returns True when an update was applied."""
        self.step_count += 1
        if self.step_count % self.learn_period != 0:
            return False
        deltas = evaluate_rule_matrix(self.rule, pre, post, self.store.effective())
        self.store.apply_update_matrix(deltas, self.lr_exp)
        return True
