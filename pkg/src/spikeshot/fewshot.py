"""Few-shot episode harness: N-way K-shot training and evaluation.

An episode selects K labeled samples per class for training, presents each
once (per epoch) with label spikes routed to the matching readout neuron and
plasticity enabled, then evaluates with plasticity off and no labels.
Classification is the argmax of proximal spike counts, ties resolved to the
lowest index. Neuron states and traces are zeroed between samples; weights
persist. Everything is derived from the episode seed.

The M+N variant reuses the same loop on novel classes after resetting the
plastic layer, with the frozen features carrying a provenance note naming
the classes they were prepared on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .events import LabeledSample
from .readout import CalibrationReport, wire_targets
from .ruledsl import parse_rule

DEFAULT_RULE = "dw = -1*(y1*(x2 - x1) + {b}*(x1 - x2))"


class DatasetError(ValueError):
    """Dataset does not fit the episode configuration."""


@dataclass(frozen=True)
class EpisodeConfig:
    """Protocol parameters of one few-shot task."""

    n_way: int
    k_shot: int
    m_pretrained: int = 0
    sample_duration: int = 300
    epochs: int = 1
    seed: int = 0
    rule: str = DEFAULT_RULE
    lr_exp: int = 3
    learn_period: int = 1
    target_period: int = 4
    calibration_window: int = 1200

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")
        if self.k_shot < 1:
            raise ValueError("k_shot must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class EpisodeReport:
    """Everything measured in one episode; accuracies are recomputable from
    the stored confusion matrices."""

    seed: int
    n_way: int
    k_shot: int
    m_pretrained: int
    train_accuracy: float
    test_accuracy: float
    train_confusion: np.ndarray
    confusion: np.ndarray
    spike_counts: np.ndarray
    test_labels: list[int]
    predictions: list[int]
    all_zero_fraction: float
    calibration: CalibrationReport
    weights: np.ndarray


def _episode_rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    kids = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(kids[0]), np.random.default_rng(kids[1])


def split_shots(dataset: list[LabeledSample], cfg: EpisodeConfig) -> tuple[list[LabeledSample], list[LabeledSample]]:
    """Seeded K-per-class train selection; the remainder is the test set."""
    split_rng, _ = _episode_rngs(cfg.seed)
    by_class: dict[int, list[LabeledSample]] = {}
    for s in dataset:
        by_class.setdefault(s.label, []).append(s)
    classes = sorted(by_class)
    train, test = [], []
    for c in classes:
        pool = by_class[c]
        if len(pool) < cfg.k_shot + 1:
            raise DatasetError(
                f"class {c} has {len(pool)} samples; need at least k_shot+1 = {cfg.k_shot + 1}"
            )
        picks = set(split_rng.choice(len(pool), size=cfg.k_shot, replace=False).tolist())
        for i, s in enumerate(pool):
            (train if i in picks else test).append(s)
    return train, test


def classify(spike_counts) -> int:
    """Argmax of per-neuron spike counts; ties break to the lowest index."""
    counts = np.asarray(spike_counts)
    if counts.size == 0:
        raise ValueError("cannot classify empty spike counts")
    if counts.min() < 0:
        raise ValueError("spike counts must be non-negative")
    return int(np.argmax(counts))


def _run_sample(net, sample: LabeledSample, routing, learn: bool) -> np.ndarray:
    net.reset_state()
    dense = sample.to_dense()
    for t in range(sample.duration):
        net.step(dense[t], routing.spikes_at(t), learn=learn)
    return np.asarray(net.spike_counts())


def run_episode(net, cfg: EpisodeConfig, dataset: list[LabeledSample]) -> EpisodeReport:
    """Train K shots per class with plasticity on, then evaluate frozen."""
    classes = sorted({s.label for s in dataset})
    if len(classes) != cfg.n_way:
        raise DatasetError(f"dataset has {len(classes)} classes, config says n_way={cfg.n_way}")
    if len(classes) != net.n_out:
        raise DatasetError(f"dataset has {len(classes)} classes, network has {net.n_out} outputs")
    class_to_out = {c: i for i, c in enumerate(classes)}

    train, test = split_shots(dataset, cfg)
    _, order_rng = _episode_rngs(cfg.seed)

    calibration = net.calibrate(cfg.calibration_window)
    rule = parse_rule(cfg.rule.format(b=repr(calibration.b_y1)))
    net.set_rule(rule, cfg.lr_exp, cfg.learn_period)

    test_routing = wire_targets(net.n_out, None, "test", 0)
    for _ in range(cfg.epochs):
        order = order_rng.permutation(len(train))
        for idx in order:
            sample = train[idx]
            routing = wire_targets(net.n_out, class_to_out[sample.label], "train", cfg.target_period)
            _run_sample(net, sample, routing, learn=True)

    n = cfg.n_way
    train_confusion = np.zeros((n, n), dtype=np.int64)
    for sample in train:
        pred = classify(_run_sample(net, sample, test_routing, learn=False))
        train_confusion[class_to_out[sample.label], pred] += 1

    confusion = np.zeros((n, n), dtype=np.int64)
    counts_matrix = np.zeros((len(test), net.n_out), dtype=np.int64)
    labels, preds = [], []
    zero = 0
    for k, sample in enumerate(test):
        counts = _run_sample(net, sample, test_routing, learn=False)
        counts_matrix[k] = counts
        pred = classify(counts)
        labels.append(class_to_out[sample.label])
        preds.append(pred)
        confusion[class_to_out[sample.label], pred] += 1
        if counts.sum() == 0:
            zero += 1

    return EpisodeReport(
        seed=cfg.seed,
        n_way=cfg.n_way,
        k_shot=cfg.k_shot,
        m_pretrained=cfg.m_pretrained,
        train_accuracy=float(np.trace(train_confusion) / max(1, train_confusion.sum())),
        test_accuracy=float(np.trace(confusion) / max(1, confusion.sum())),
        train_confusion=train_confusion,
        confusion=confusion,
        spike_counts=counts_matrix,
        test_labels=labels,
        predictions=preds,
        all_zero_fraction=zero / max(1, len(test)),
        calibration=calibration,
        weights=np.asarray(net.plastic_weights()),
    )


def run_mplusn(
    net,
    pretrain_classes: set[int],
    novel_classes: set[int],
    cfg: EpisodeConfig,
    datasets: dict[str, list[LabeledSample]],
) -> EpisodeReport:
    """Few-shot train the (reset) output layer on novel classes only.

    The frozen features are expected to come from the pretraining classes;
    a missing or mismatched provenance note on the network warns but does
    not fail.
    """
    novel = sorted(novel_classes)
    if pretrain_classes:
        prov = getattr(net, "provenance", "")
        marker = "pretrain-classes="
        if marker not in prov:
            warnings.warn("frozen weights carry no pretraining provenance note", stacklevel=2)
        else:
            declared = prov.split(marker, 1)[1].split()[0]
            expected = ",".join(str(c) for c in sorted(pretrain_classes))
            if declared != expected:
                warnings.warn(
                    f"frozen weights declare pretraining classes {declared}, expected {expected}",
                    stacklevel=2,
                )
    samples = [s for s in datasets["novel"] if s.label in novel_classes]
    relabel = {c: i for i, c in enumerate(novel)}
    relabeled = [replace_label(s, relabel[s.label]) for s in samples]
    net.reset_plastic()
    eff = replace(cfg, n_way=len(novel), m_pretrained=len(pretrain_classes))
    return run_episode(net, eff, relabeled)


def replace_label(sample: LabeledSample, label: int) -> LabeledSample:
    return LabeledSample(shape=sample.shape, duration=sample.duration, label=label, events=sample.events)


def format_report(report: EpisodeReport) -> str:
    """Deterministic text rendering plus a one-line machine summary."""
    lines = [
        "spikeshot episode report",
        f"seed: {report.seed}",
        f"n_way: {report.n_way}",
        f"k_shot: {report.k_shot}",
        f"m_pretrained: {report.m_pretrained}",
        f"train_accuracy: {report.train_accuracy:.6f}",
        f"test_accuracy: {report.test_accuracy:.6f}",
        f"all_zero_fraction: {report.all_zero_fraction:.6f}",
        "calibration: "
        + f"b={report.calibration.b!r} b_y1={report.calibration.b_y1!r} "
        + f"b_err={report.calibration.b_err!r} period={report.calibration.period!r}",
        "train confusion (rows=true, cols=predicted):",
    ]
    lines.extend(" ".join(str(v) for v in row) for row in report.train_confusion)
    lines.append("test confusion (rows=true, cols=predicted):")
    lines.extend(" ".join(str(v) for v in row) for row in report.confusion)
    lines.append(
        f"EPISODE seed={report.seed} n_way={report.n_way} k_shot={report.k_shot} "
        f"train_acc={report.train_accuracy:.6f} test_acc={report.test_accuracy:.6f} "
        f"zero_frac={report.all_zero_fraction:.6f}"
    )
    return "\n".join(lines) + "\n"
