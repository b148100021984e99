"""Run configuration: one YAML file, schema-validated, flag overrides win.

The merged configuration (file + overrides) is the single source of truth
for a run; its canonical dump is hashed into the run manifest so any run can
be reproduced bit-exactly from the manifest alone.
"""

from __future__ import annotations

import copy
import hashlib
import yaml

from .dynamics import NeuronParams
from .fewshot import DEFAULT_RULE, EpisodeConfig
from .network import BuildConfig, Topology, parse_topology
from .readout import ReadoutParams
from .traces import TraceConfig


class ConfigError(ValueError):
    """Unknown keys, bad types or inconsistent values in the run config."""


DEFAULT_CONFIG: dict = {
    "topology": {
        "input": "32",
        "layers": ["64"],
        "output": 5,
    },
    "neuron": {
        "tau_u": 8.0,
        "tau_v": 16.0,
        "tau_r": None,
        "v_th": 1.0,
        "bias": -0.2,
    },
    "readout": {
        "tau_u": 8.0,
        "tau_v": 16.0,
        "tau_r": None,
        "v_th": 1.0,
        "w_tgt": 2.0,
        "target_period": 4,
        "baseline_period": 20,
        "b_err": None,
        "b_out": None,
        "y1_tau": None,
        "y1_increment": 1.0,
    },
    "learning": {
        "rule": DEFAULT_RULE,
        "lr_exp": 3,
        "learn_period": 1,
    },
    "episode": {
        "n_way": 5,
        "k_shot": 5,
        "m_pretrained": 0,
        "sample_duration": 300,
        "epochs": 1,
        "seeds": [0],
        "calibration_window": 1200,
    },
    "data": {
        "kind": "synthetic",  # or "file"
        "path": None,
        "n_per_class": 9,
        "dim": 32,
        "separation": 1.5,
        "jitter": 0.1,
        "r_max": 0.2,
        "mode": "balanced",
        "seed_offset": 10000,
    },
    "weights": {
        "path": None,
        "frozen_scale_exp": -6,
        "frozen_init_lo": -40,
        "frozen_init_hi": 80,
        "plastic_scale_exp": -6,
        "plastic_init": "zero",
    },
    "output": {
        "dir": None,
    },
}

_SCALARS = (int, float, str, bool, type(None))


def _check_block(block: dict, defaults: dict, path: str):
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected a mapping")
    for key in block:
        if key not in defaults:
            raise ConfigError(f"{path}.{key}: unknown key")
    for key, val in block.items():
        ref = defaults[key]
        if isinstance(ref, dict):
            _check_block(val, ref, f"{path}.{key}")
        elif isinstance(ref, list):
            if not isinstance(val, list):
                raise ConfigError(f"{path}.{key}: expected a list")
        elif not isinstance(val, _SCALARS):
            raise ConfigError(f"{path}.{key}: expected a scalar, got {type(val).__name__}")


def merge_config(overrides: dict | None) -> dict:
    """Defaults overlaid with a (possibly partial) config mapping."""
    merged = copy.deepcopy(DEFAULT_CONFIG)
    if overrides is None:
        return merged
    _check_block(overrides, DEFAULT_CONFIG, "config")
    for section, block in overrides.items():
        if isinstance(block, dict):
            merged[section].update(block)
        else:
            merged[section] = block
    return merged


def load_config(path: str | None) -> dict:
    """Load and validate a YAML config file; None means pure defaults."""
    if path is None:
        return merge_config(None)
    with open(path) as f:
        raw = yaml.safe_load(f)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config file must contain a mapping")
    return merge_config(raw)


def reproducible_view(cfg: dict) -> dict:
    """The config without fields that do not affect the computation.

    Only the output directory is excluded: two runs into different
    directories are the same run.
    """
    view = copy.deepcopy(cfg)
    view["output"]["dir"] = None
    return view


def canonical_dump(cfg: dict) -> str:
    return yaml.safe_dump(reproducible_view(cfg), sort_keys=True, default_flow_style=False)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_dump(cfg).encode("utf-8")).hexdigest()


# --- typed views over the merged dict ------------------------------------------


def neuron_params(cfg: dict) -> NeuronParams:
    n = cfg["neuron"]
    try:
        return NeuronParams(tau_u=n["tau_u"], tau_v=n["tau_v"], tau_r=n["tau_r"],
                            v_th=n["v_th"], bias=n["bias"])
    except ValueError as e:
        raise ConfigError(f"neuron: {e}")


def readout_params(cfg: dict) -> ReadoutParams:
    r = cfg["readout"]
    try:
        neuron = NeuronParams(tau_u=r["tau_u"], tau_v=r["tau_v"], tau_r=r["tau_r"], v_th=r["v_th"])
        y1 = TraceConfig(tau=r["y1_tau"], increment=r["y1_increment"]) if r["y1_tau"] else None
        return ReadoutParams(
            neuron=neuron,
            w_tgt=r["w_tgt"],
            target_period=r["target_period"],
            baseline_period=r["baseline_period"],
            b_err=r["b_err"],
            b_out=r["b_out"],
            y1=y1,
        )
    except ValueError as e:
        raise ConfigError(f"readout: {e}")


def topology(cfg: dict) -> Topology:
    t = cfg["topology"]
    return parse_topology(t["input"], list(t["layers"]), int(t["output"]))


def build_config(cfg: dict, seed: int) -> BuildConfig:
    w = cfg["weights"]
    return BuildConfig(
        seed=seed,
        frozen_scale_exp=w["frozen_scale_exp"],
        frozen_init_lo=w["frozen_init_lo"],
        frozen_init_hi=w["frozen_init_hi"],
        plastic_scale_exp=w["plastic_scale_exp"],
        plastic_init=w["plastic_init"],
    )


def episode_config(cfg: dict, seed: int, n_way: int | None = None) -> EpisodeConfig:
    e, l = cfg["episode"], cfg["learning"]
    try:
        return EpisodeConfig(
            n_way=n_way if n_way is not None else e["n_way"],
            k_shot=e["k_shot"],
            m_pretrained=e["m_pretrained"],
            sample_duration=e["sample_duration"],
            epochs=e["epochs"],
            seed=seed,
            rule=l["rule"],
            lr_exp=l["lr_exp"],
            learn_period=l["learn_period"],
            target_period=cfg["readout"]["target_period"],
            calibration_window=e["calibration_window"],
        )
    except ValueError as e_:
        raise ConfigError(f"episode: {e_}")
