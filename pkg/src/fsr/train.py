"""SGD training loop, split construction, evaluation, and experiment driver.

Split protocols follow the two evaluation styles: random stratified
fractions (observed signers) and subject-separated splits where the test
signer never appears in training or validation (new signers). Experiments
enumerate all subject combinations and report the arithmetic mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PipelineBatchSource, load_pipeline_data, subset
from .depthio import LABELS, NUM_CLASSES, DatasetManifest
from .errors import (
    EmptyPartitionError,
    FsrError,
    IncompatibleWeightsError,
    ShapeError,
    UnknownSubjectError,
)
from .nn import (
    Network,
    NetworkSpec,
    init_weights,
    load_model,
    network_backward,
    network_forward,
    replace_final_layer,
    softmax_cross_entropy,
)
from .preprocess import PreprocessParams
from .segment import SegmentationParams


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    total_iters: int = 8000
    lr_policy: str = "step"            # "fixed" | "step"
    lr_gamma: float = 0.1
    lr_step_size: int = 0              # 0 means 75% of total_iters
    new_layer_lr_multiplier: float = 1.0
    seed: int = 0
    deterministic: bool = True
    val_interval: int = 200
    init_sigma: float = 0.01

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.total_iters < 1:
            raise ValueError("batch_size and total_iters must be >= 1")
        if self.lr_policy not in ("fixed", "step"):
            raise ValueError(f"unknown lr policy {self.lr_policy!r}")

    def step_size(self) -> int:
        return self.lr_step_size if self.lr_step_size > 0 else max(1, (3 * self.total_iters) // 4)

    def learning_rate(self, iteration: int) -> float:
        if self.lr_policy == "fixed":
            return self.base_lr
        return self.base_lr * self.lr_gamma ** (iteration // self.step_size())


def retrain_config(**overrides) -> TrainConfig:
    return TrainConfig(**{"base_lr": 0.01, "total_iters": 8000, **overrides})


def finetune_config(**overrides) -> TrainConfig:
    return TrainConfig(**{
        "base_lr": 0.001, "total_iters": 4000, "new_layer_lr_multiplier": 10.0,
        **overrides,
    })


@dataclass(frozen=True)
class SplitSpec:
    mode: str  # "random" | "subjects"
    fractions: tuple[int, int, int] = (50, 25, 25)   # train/val/test percent
    train_subjects: frozenset[int] = frozenset()
    val_subjects: frozenset[int] = frozenset()
    test_subjects: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.mode == "random":
            if sum(self.fractions) != 100:
                raise ValueError("fractions must sum to 100")
        elif self.mode == "subjects":
            groups = (self.train_subjects, self.val_subjects, self.test_subjects)
            if not self.train_subjects or not self.test_subjects:
                raise ValueError("train and test subject sets must be non-empty")
            total = sum(len(g) for g in groups)
            if len(self.train_subjects | self.val_subjects | self.test_subjects) != total:
                raise ValueError("subject sets must be disjoint")
        else:
            raise ValueError(f"unknown split mode {self.mode!r}")

    def describe(self) -> str:
        if self.mode == "random":
            return "random:%d/%d/%d" % self.fractions
        fmt = lambda s: ",".join(str(i) for i in sorted(s)) or "-"
        return (f"subjects:train={fmt(self.train_subjects)}"
                f" val={fmt(self.val_subjects)} test={fmt(self.test_subjects)}")


def split_indices(manifest: DatasetManifest, spec: SplitSpec, seed: int = 0):
    """Partition record indices into (train, val, test)."""
    if spec.mode == "subjects":
        known = set(manifest.subjects)
        wanted = spec.train_subjects | spec.val_subjects | spec.test_subjects
        unknown = wanted - known
        if unknown:
            raise UnknownSubjectError(f"subjects {sorted(unknown)} not in manifest")
        train, val, test = [], [], []
        for i, rec in enumerate(manifest.records):
            if rec.subject in spec.train_subjects:
                train.append(i)
            elif rec.subject in spec.val_subjects:
                val.append(i)
            elif rec.subject in spec.test_subjects:
                test.append(i)
        if not train or not test:
            raise EmptyPartitionError("train or test partition is empty")
        return train, val, test

    # stratified per (class, subject) cell, seeded shuffle, remainder to train
    rng = np.random.default_rng(seed)
    cells: dict[tuple[str, int], list[int]] = {}
    for i, rec in enumerate(manifest.records):
        cells.setdefault((rec.label, rec.subject), []).append(i)
    a, b, c = spec.fractions
    train, val, test = [], [], []
    for key in sorted(cells):
        idx = np.array(cells[key])
        rng.shuffle(idx)
        n = len(idx)
        n_val = n * b // 100
        n_test = n * c // 100
        val.extend(idx[:n_val].tolist())
        test.extend(idx[n_val : n_val + n_test].tolist())
        train.extend(idx[n_val + n_test :].tolist())
    for frac, part, name in ((a, train, "train"), (b, val, "val"), (c, test, "test")):
        if frac > 0 and not part:
            raise EmptyPartitionError(f"{name} partition is empty")
    return sorted(train), sorted(val), sorted(test)


def make_split(manifest: DatasetManifest, spec: SplitSpec, seed: int = 0):
    """Split a manifest into (train, val, test) manifests, preserving order."""
    parts = split_indices(manifest, spec, seed)
    return tuple(
        DatasetManifest([manifest.records[i] for i in idx]) for idx in parts
    )


def enumerate_subject_combinations(n_subjects: int, mode: str) -> list[SplitSpec]:
    """All subject-separated splits: "4/1" (n combos) or "3/1/1" (n*(n-1))."""
    if n_subjects < 3:
        raise ValueError("need at least 3 subjects")
    everyone = set(range(n_subjects))
    combos = []
    if mode == "4/1":
        for test in range(n_subjects):
            combos.append(SplitSpec(
                "subjects",
                train_subjects=frozenset(everyone - {test}),
                test_subjects=frozenset({test}),
            ))
    elif mode == "3/1/1":
        for val in range(n_subjects):
            for test in range(n_subjects):
                if test == val:
                    continue
                combos.append(SplitSpec(
                    "subjects",
                    train_subjects=frozenset(everyone - {val, test}),
                    val_subjects=frozenset({val}),
                    test_subjects=frozenset({test}),
                ))
    else:
        raise ValueError(f"unknown combination mode {mode!r}")
    return combos


@dataclass
class OptimizerState:
    velocity: list[dict[str, np.ndarray]]
    iteration: int = 0

    @classmethod
    def for_network(cls, net: Network) -> "OptimizerState":
        return cls([{k: np.zeros_like(v) for k, v in p.items()} for p in net.params])


def sgd_step(net: Network, grads, state: OptimizerState, config: TrainConfig,
             iteration: int | None = None) -> None:
    """In-place momentum update: v <- mu*v - lr*(g + wd*theta); theta += v."""
    it = state.iteration if iteration is None else iteration
    lr = config.learning_rate(it)
    for p, g, v, is_new in zip(net.params, grads, state.velocity, net.new_layer):
        layer_lr = lr * (config.new_layer_lr_multiplier if is_new else 1.0)
        for key in p:
            if g[key].shape != p[key].shape:
                raise ShapeError(f"gradient shape {g[key].shape} != {p[key].shape}")
            v[key] = config.momentum * v[key] - layer_lr * (
                g[key] + config.weight_decay * p[key]
            )
            p[key] += v[key].astype(p[key].dtype)
    state.iteration = it + 1


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    val_iters: list[int] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)


@dataclass
class TrainResult:
    net: Network
    history: TrainHistory
    best_net: Network | None = None
    best_val_accuracy: float = float("nan")


def _epoch_batches(n: int, batch_size: int, rng) -> "list[np.ndarray]":
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train(net: Network, train_data, val_data, config: TrainConfig) -> TrainResult:
    """Run exactly total_iters SGD steps with seeded per-epoch shuffles."""
    if len(train_data) == 0:
        raise EmptyPartitionError("no training data")
    rng = np.random.default_rng(config.seed)
    state = OptimizerState.for_network(net)
    history = TrainHistory()
    best_acc = -1.0
    best_net = None
    pending: list[np.ndarray] = []
    for it in range(config.total_iters):
        if not pending:
            pending = _epoch_batches(len(train_data), config.batch_size, rng)
        idx = pending.pop(0)
        x, y = train_data.batch(idx)
        logits, cache = network_forward(net, x, mode="train", rng=rng)
        loss, _, dlogits = softmax_cross_entropy(logits, y)
        _, grads = network_backward(net, cache, dlogits)
        sgd_step(net, grads, state, config)
        history.loss.append(loss)
        last = it == config.total_iters - 1
        if val_data is not None and len(val_data) and (
            (it + 1) % config.val_interval == 0 or last
        ):
            acc = evaluate(net, val_data).overall_accuracy
            history.val_iters.append(it + 1)
            history.val_accuracy.append(acc)
            if acc > best_acc:
                best_acc = acc
                best_net = net.copy()
    return TrainResult(net, history, best_net,
                       best_acc if best_net is not None else float("nan"))


@dataclass
class EvalReport:
    overall_accuracy: float
    per_class_accuracy: np.ndarray  # (NUM_CLASSES,), nan for absent classes
    confusion: np.ndarray           # (NUM_CLASSES, NUM_CLASSES) int counts
    n_samples: int


def evaluate(net: Network, data, batch_size: int = 64) -> EvalReport:
    """Eval-mode forward over every sample; argmax ties go to the lowest index."""
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    n = len(data)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        x, y = data.batch(idx)
        logits, _ = network_forward(net, x, mode="eval")
        pred = logits.argmax(axis=1)
        np.add.at(confusion, (y, pred), 1)
    row_sums = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(row_sums > 0, np.diag(confusion) / row_sums, np.nan)
    overall = float(np.trace(confusion)) / n if n else float("nan")
    return EvalReport(overall, per_class, confusion, n)


@dataclass
class ExperimentResult:
    combos: list[tuple[SplitSpec, EvalReport]]
    average: EvalReport
    regime: str
    config: TrainConfig
    nets: list[Network] = field(default_factory=list)


def average_reports(reports: list[EvalReport]) -> EvalReport:
    """Unweighted arithmetic mean; absent classes are excluded per combo."""
    overall = float(np.mean([r.overall_accuracy for r in reports]))
    stacked = np.stack([r.per_class_accuracy for r in reports])
    counts = (~np.isnan(stacked)).sum(axis=0)
    sums = np.nansum(stacked, axis=0)
    per_class = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    confusion = np.sum([r.confusion for r in reports], axis=0)
    return EvalReport(overall, per_class, confusion, sum(r.n_samples for r in reports))


def build_initial_net(spec: NetworkSpec | None, regime: str, config: TrainConfig,
                      weights: bytes | None, num_classes: int, seed: int) -> Network:
    if regime == "retrain":
        if spec is None:
            raise ValueError("retrain regime needs a network spec")
        return init_weights(spec, sigma=config.init_sigma, seed=seed)
    if regime == "finetune":
        if weights is None:
            raise IncompatibleWeightsError("finetune regime needs a weights file")
        try:
            base = load_model(weights)
            return replace_final_layer(base, num_classes, seed=seed,
                                       sigma=config.init_sigma)
        except FsrError as e:
            raise IncompatibleWeightsError(str(e)) from e
    raise ValueError(f"unknown regime {regime!r}")


def run_experiment(
    manifest: DatasetManifest,
    root,
    regime: str,
    split: SplitSpec | str,
    config: TrainConfig,
    spec: NetworkSpec | None = None,
    weights: bytes | None = None,
    seg_params: SegmentationParams = SegmentationParams(),
    pre_params: PreprocessParams = PreprocessParams(),
    use_best_val: bool = True,
    keep_nets: bool = False,
    data: PipelineBatchSource | None = None,
) -> ExperimentResult:
    """Train and evaluate over one split or every subject combination.

    ``split`` is a SplitSpec for a single run, or "subjects:4/1" /
    "subjects:3/1/1" to enumerate all subject combinations.
    """
    if regime == "finetune" and weights is not None and spec is None:
        try:
            spec = load_model(weights).spec
        except FsrError as e:
            raise IncompatibleWeightsError(str(e)) from e
    channels = spec.input_shape[0] if spec is not None else 1
    if data is None:
        data = load_pipeline_data(manifest, root, seg_params, pre_params, channels)

    if isinstance(split, str):
        mode = split.split(":", 1)[1] if ":" in split else split
        combos = enumerate_subject_combinations(len(manifest.subjects), mode)
    else:
        combos = [split]

    results = []
    nets = []
    for combo_index, combo in enumerate(combos):
        tr_idx, val_idx, te_idx = split_indices(manifest, combo, config.seed)
        if combo.mode == "subjects":
            test_subjects = {manifest.records[i].subject for i in te_idx}
            trainval = {manifest.records[i].subject for i in tr_idx + val_idx}
            assert not (test_subjects & trainval), "test subject leaked into train/val"
        train_src = subset(data, tr_idx)
        mean = train_src.compute_mean("train-split")
        train_src.mean = mean
        val_src = subset(data, val_idx) if val_idx else None
        if val_src is not None:
            val_src.mean = mean
        test_src = subset(data, te_idx)
        test_src.mean = mean

        net = build_initial_net(spec, regime, config, weights, NUM_CLASSES,
                                seed=config.seed + combo_index)
        result = train(net, train_src, val_src, config)
        final = result.best_net if (use_best_val and result.best_net is not None) else result.net
        results.append((combo, evaluate(final, test_src)))
        if keep_nets:
            nets.append(final)
    return ExperimentResult(results, average_reports([r for _, r in results]),
                            regime, config, nets)


# --- report rendering --------------------------------------------------------

def _marker(value: float) -> str:
    if np.isnan(value):
        return ""
    if value < 0.5:
        return "!"
    if value > 0.9:
        return "*"
    return ""


def render_report(report: EvalReport, title: str = "") -> str:
    """Plain-text per-class accuracy table: "!" below 50%, "*" above 90%."""
    lines = []
    if title:
        lines.append(title)
    lines.append(f"overall {100.0 * report.overall_accuracy:.2f}%  (n={report.n_samples})")
    width = max(len(name) for name in LABELS)
    for name, acc in zip(LABELS, report.per_class_accuracy):
        if np.isnan(acc):
            lines.append(f"{name:<{width}} -")
        else:
            lines.append(f"{name:<{width}} {100.0 * acc:.1f}{_marker(acc)}")
    return "\n".join(lines) + "\n"


def render_experiment(result: ExperimentResult) -> str:
    cfg = result.config
    lines = [
        "fsr experiment report",
        f"regime {result.regime}",
        f"seed {cfg.seed}",
        (f"config base_lr={cfg.base_lr} momentum={cfg.momentum} "
         f"weight_decay={cfg.weight_decay} batch_size={cfg.batch_size} "
         f"total_iters={cfg.total_iters} lr_policy={cfg.lr_policy} "
         f"new_layer_lr_multiplier={cfg.new_layer_lr_multiplier}"),
        "",
    ]
    for i, (combo, report) in enumerate(result.combos):
        lines.append(f"combo {i} [{combo.describe()}]")
        lines.append(render_report(report))
    lines.append(f"averaged over {len(result.combos)} combos")
    lines.append(render_report(result.average))
    return "\n".join(lines)
