"""Training: task-homogeneous interleaved batches, SGD/Adam, cosine decay,
the task-interference benchmark, and the narrowband fine-tuning workflow.

Batches are homogeneous in task by construction (the decoder gate is a
per-batch decision); bandwidth may vary inside a batch because the encoder
gate is per sample. The loss is teacher-forced cross entropy over payload
and EOS positions only: the model conditions on the guiding prefix but is
never trained to predict it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from .data import SyntheticTaskSpec, Utterance, make_paired_dataset
from .errors import ConfigError, NumericError
from .metrics import corpus_token_accuracy
from .model import Model, ModelConfig, count_params, expand_experts, load_checkpoint
from .moe import Bandwidth, Task
from .numerics import Tape, Tensor, add, backward, constant, scale, softmax_cross_entropy
from .seqio import BYTE_BASE, GuidingToken, Vocabulary
from .signal import FbankFeatures


@dataclass
class Batch:
    """Padded task-homogeneous training unit.

    targets are PAD-padded id rows, features zero-padded frame stacks; the
    explicit length vectors recover the unpadded views.
    """

    features: np.ndarray  # [B x T_max x n_mels]
    feature_lengths: list[int]
    bandwidths: list[Bandwidth]
    targets: np.ndarray  # [B x L_max], PAD-padded
    target_lengths: list[int]
    task: Task

    @staticmethod
    def build(items: Sequence[Utterance]) -> "Batch":
        if not items:
            raise ConfigError("cannot build an empty batch")
        tasks = {it.task for it in items}
        if len(tasks) != 1:
            raise ConfigError(f"batch mixes tasks: {sorted(t.value for t in tasks)}")
        t_max = max(it.features.n_frames for it in items)
        n_mels = items[0].features.frames.shape[1]
        l_max = max(len(it.target.ids) for it in items)
        feats = np.zeros((len(items), t_max, n_mels))
        targets = np.full((len(items), l_max), int(GuidingToken.PAD), dtype=np.int64)
        for i, it in enumerate(items):
            feats[i, : it.features.n_frames] = it.features.frames.data
            targets[i, : len(it.target.ids)] = it.target.ids
        return Batch(
            features=feats,
            feature_lengths=[it.features.n_frames for it in items],
            bandwidths=[it.bandwidth for it in items],
            targets=targets,
            target_lengths=[len(it.target.ids) for it in items],
            task=items[0].task,
        )

    def __len__(self) -> int:
        return len(self.feature_lengths)

    def sample(self, i: int) -> tuple[FbankFeatures, Bandwidth, list[int]]:
        feats = FbankFeatures(
            frames=constant(self.features[i, : self.feature_lengths[i]]),
            bandwidth=self.bandwidths[i],
        )
        ids = [int(x) for x in self.targets[i, : self.target_lengths[i]]]
        return feats, self.bandwidths[i], ids


@dataclass
class TrainConfig:
    steps: int = 200
    batch_size: int = 8
    lr_peak: float = 3e-3
    lr_floor: float = 3e-4
    seed: int = 0
    optimizer: str = "adam"  # "sgd" keeps zero-grad parameters bitwise frozen
    momentum: float = 0.0
    accum_steps: int = 1
    interleave: str = "strict"
    nbwb_mix_fraction: float = 0.15

    def __post_init__(self):
        if self.lr_peak < self.lr_floor:
            raise ConfigError(f"lr_peak {self.lr_peak} < lr_floor {self.lr_floor}")
        if not 0.0 <= self.nbwb_mix_fraction <= 1.0:
            raise ConfigError(f"nbwb_mix_fraction must be in [0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.interleave not in ("strict",):
            raise ConfigError(f"unknown interleave mode {self.interleave!r}")
        if self.accum_steps < 1:
            raise ConfigError("accum_steps must be >= 1")


def cosine_lr(step: int, total_steps: int, peak: float, floor: float) -> float:
    """floor + 0.5 * (peak - floor) * (1 + cos(pi * step / total))."""
    if peak < floor:
        raise ConfigError(f"peak {peak} < floor {floor}")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    return floor + 0.5 * (peak - floor) * (1.0 + math.cos(math.pi * step / total_steps))


class SGD:
    """Plain SGD with optional momentum.

    Parameters whose grad is None are untouched, so an expert that saw no
    batch keeps bitwise-identical weights and momentum state.
    """

    def __init__(self, params: list[tuple[str, Tensor]], momentum: float = 0.0):
        self.params = params
        self.momentum = momentum
        self.velocity: dict[int, np.ndarray] = {}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        for _, p in self.params:
            if p.grad is None:
                continue
            if self.momentum > 0.0:
                v = self.velocity.get(id(p))
                v = p.grad if v is None else self.momentum * v + p.grad
                self.velocity[id(p)] = v
            else:
                v = p.grad
            p.data = p.data - lr * v


class Adam:
    """Adam with per-parameter step counts; None-grad parameters are
    skipped entirely (no moment decay, no update)."""

    def __init__(
        self,
        params: list[tuple[str, Tensor]],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[int, np.ndarray] = {}
        self.v: dict[int, np.ndarray] = {}
        self.t: dict[int, int] = {}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        for _, p in self.params:
            if p.grad is None:
                continue
            k = id(p)
            t = self.t.get(k, 0) + 1
            self.t[k] = t
            m = self.beta1 * self.m.get(k, np.zeros_like(p.data)) + (1 - self.beta1) * p.grad
            v = self.beta2 * self.v.get(k, np.zeros_like(p.data)) + (1 - self.beta2) * (
                p.grad * p.grad
            )
            self.m[k], self.v[k] = m, v
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(model: Model, tc: TrainConfig):
    params = model.named_parameters()
    if tc.optimizer == "sgd":
        return SGD(params, momentum=tc.momentum)
    return Adam(params)


def make_interleaved_stream(
    items: Sequence[Utterance], batch_size: int, seed: int
) -> Iterator[Batch]:
    """One epoch of strictly alternating task-homogeneous batches.

    Transcription batches come first; within-task order is shuffled by the
    seed; when the next task in the pattern has no items left, the epoch
    ends (so the emitted counts differ by at most one).
    """
    pools = {
        Task.ASR: [it for it in items if it.task is Task.ASR],
        Task.ST: [it for it in items if it.task is Task.ST],
    }
    for task, pool in pools.items():
        if not pool:
            raise ConfigError(f"interleaved stream needs {task.value} samples")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5,)))
    for pool in pools.values():
        order = rng.permutation(len(pool))
        pool[:] = [pool[int(i)] for i in order]
    cursors = {Task.ASR: 0, Task.ST: 0}
    current = Task.ASR
    while cursors[current] < len(pools[current]):
        pool, pos = pools[current], cursors[current]
        chunk = pool[pos : pos + batch_size]
        cursors[current] = pos + len(chunk)
        yield Batch.build(chunk)
        current = Task.ST if current is Task.ASR else Task.ASR


def make_single_task_stream(
    items: Sequence[Utterance], batch_size: int, seed: int
) -> Iterator[Batch]:
    """One epoch of shuffled batches over a single-task pool (control runs)."""
    tasks = {it.task for it in items}
    if len(tasks) != 1:
        raise ConfigError("single-task stream requires a homogeneous pool")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5,)))
    order = rng.permutation(len(items))
    shuffled = [items[int(i)] for i in order]
    for pos in range(0, len(shuffled), batch_size):
        yield Batch.build(shuffled[pos : pos + batch_size])


def shifted_targets(ids: list[int]) -> list[int]:
    """Next-token targets with the guiding prefix masked out.

    Row i predicts ids[i+1]; rows 0 and 1 would predict the language tag
    and BOS, which the model conditions on rather than learns, so they are
    masked to PAD along with the final row (nothing follows EOS).
    """
    pad = int(GuidingToken.PAD)
    out = [pad] * len(ids)
    for i in range(2, len(ids) - 1):
        out[i] = ids[i + 1]
    return out


def batch_loss(model: Model, batch: Batch) -> Tensor:
    total = None
    for i in range(len(batch)):
        feats, bw, ids = batch.sample(i)
        logits = model.decode(model.encode(feats, bw), ids, batch.task)
        sample_loss = softmax_cross_entropy(
            logits, shifted_targets(ids), ignore_id=int(GuidingToken.PAD)
        )
        total = sample_loss if total is None else add(total, sample_loss)
    return scale(total, 1.0 / len(batch))


def train_step(model: Model, batch: Batch, optimizer, lr: float) -> float:
    """One optimization step: forward with routing per batch labels,
    teacher-forced cross entropy, backward, parameter update."""
    model.train()
    optimizer.zero_grad()
    tape = Tape()
    with tape:
        loss = batch_loss(model, batch)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(
            f"non-finite loss {value} (task={batch.task.value}, lr={lr:g}, "
            f"batch_size={len(batch)})"
        )
    backward(loss, tape)
    optimizer.step(lr)
    return value


def run_training(
    model: Model,
    items: Sequence[Utterance],
    tc: TrainConfig,
    log_lines: list[str] | None = None,
    stream_factory=make_interleaved_stream,
) -> list[float]:
    """Drive train_step for tc.steps batches, cycling epochs as needed.

    Returns the loss history; appends `step= task= lr= loss=` lines to
    log_lines when given. Gradient accumulation groups accum_steps batches
    per optimizer step.
    """
    optimizer = make_optimizer(model, tc)
    model.reseed_dropout(tc.seed)
    losses: list[float] = []
    step = 0
    epoch = 0
    while step < tc.steps:
        for batch in stream_factory(items, tc.batch_size, tc.seed + epoch):
            if step >= tc.steps:
                break
            lr = cosine_lr(step, tc.steps, tc.lr_peak, tc.lr_floor)
            if tc.accum_steps == 1:
                loss = train_step(model, batch, optimizer, lr)
            else:
                loss = _accumulating_step(model, batch, optimizer, lr, tc, step)
            losses.append(loss)
            if log_lines is not None:
                task_letter = "A" if batch.task is Task.ASR else "S"
                log_lines.append(
                    f"step={step} task={task_letter} lr={lr:.8g} loss={loss:.8g}"
                )
            step += 1
        epoch += 1
    return losses


def _accumulating_step(
    model: Model, batch: Batch, optimizer, lr: float, tc: TrainConfig, step: int
) -> float:
    model.train()
    if step % tc.accum_steps == 0:
        optimizer.zero_grad()
    tape = Tape()
    with tape:
        loss = scale(batch_loss(model, batch), 1.0 / tc.accum_steps)
    value = float(loss.data) * tc.accum_steps
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss at step {step}")
    backward(loss, tape)
    if (step + 1) % tc.accum_steps == 0:
        optimizer.step(lr)
    return value


# -- evaluation ---------------------------------------------------------------


def decode_payload_symbols(ids: list[int], vocab: Vocabulary) -> list[str]:
    """Generated ids -> symbol list; ids at/after EOS and non-payload ids
    are dropped (untrained models may emit anything)."""
    kept: list[int] = []
    for i in ids:
        if i == GuidingToken.EOS:
            break
        if i >= BYTE_BASE:
            kept.append(i)
    return list(vocab.decode(kept).decode("ascii", errors="replace"))


def evaluate_token_accuracy(
    model: Model,
    items: Sequence[Utterance],
    vocab: Vocabulary,
    max_len: int = 16,
) -> dict[Task, float]:
    """Greedy-decode each item on its own task; pooled per-task accuracy
    (1 - corpus token error rate)."""
    model.eval()
    pairs: dict[Task, list[tuple[list[str], list[str]]]] = {Task.ASR: [], Task.ST: []}
    for it in items:
        result = model.infer_single(it.features, it.bandwidth, it.task, max_len=max_len)
        hyp = decode_payload_symbols(result.ids, vocab)
        ref = list(it.text.decode("ascii"))
        pairs[it.task].append((ref, hyp))
    return {
        task: corpus_token_accuracy(task_pairs)
        for task, task_pairs in pairs.items()
        if task_pairs
    }


# -- interference benchmark -----------------------------------------------------


@dataclass
class BenchmarkRow:
    name: str
    trainable: int
    active: int
    acc_asr: float
    acc_st: float

    @property
    def joint(self) -> float:
        return 0.5 * (self.acc_asr + self.acc_st)


@dataclass
class BenchmarkResult:
    rows: list[BenchmarkRow]  # seed-averaged, in config order
    per_seed: dict[str, list[BenchmarkRow]]
    control_asr: float
    control_st: float
    seeds: list[int]
    log_lines: list[str] = field(default_factory=list)

    @property
    def control_ok(self) -> bool:
        return min(self.control_asr, self.control_st) >= 0.99

    def report(self) -> str:
        lines = ["model\ttrainable\tactive\tacc_asr\tacc_st"]
        for r in self.rows:
            lines.append(
                f"{r.name}\t{r.trainable}\t{r.active}\t{r.acc_asr:.4f}\t{r.acc_st:.4f}"
            )
        lines.append(
            f"# controls: asr={self.control_asr:.4f} st={self.control_st:.4f} "
            f"ok={str(self.control_ok).lower()}"
        )
        return "\n".join(lines) + "\n"


def run_interference_benchmark(
    task_spec: SyntheticTaskSpec,
    configs: dict[str, ModelConfig],
    budget_steps: int,
    seeds: Sequence[int],
    n_train_inputs: int = 768,
    n_eval_inputs: int = 32,
    symbols_per_item: int = 4,
    train_config: TrainConfig | None = None,
) -> BenchmarkResult:
    """Train every config on the identical interleaved stream and compare
    per-task greedy accuracy; single-task controls establish that the
    baseline capacity suffices for either task alone.

    Raises ConfigError if the configs disagree anywhere except the decoder
    feedforward arrangement.
    """
    if not configs:
        raise ConfigError("benchmark needs at least one config")
    _check_shared_dims(configs)
    base_tc = train_config or TrainConfig(steps=budget_steps)
    base_tc = replace(base_tc, steps=budget_steps)
    vocab = Vocabulary()
    log_lines: list[str] = []

    per_seed: dict[str, list[BenchmarkRow]] = {name: [] for name in configs}
    controls_asr: list[float] = []
    controls_st: list[float] = []
    control_cfg = next(iter(configs.values()))

    for seed in seeds:
        train_items = make_paired_dataset(
            n_train_inputs, seed=seed * 7919 + 1, task_spec=task_spec, vocab=vocab,
            min_len=symbols_per_item, max_len=symbols_per_item,
        )
        eval_items = make_paired_dataset(
            n_eval_inputs, seed=seed * 7919 + 2, task_spec=task_spec, vocab=vocab,
            min_len=symbols_per_item, max_len=symbols_per_item,
        )
        # single-task controls on the baseline dims
        for task, sink in ((Task.ASR, controls_asr), (Task.ST, controls_st)):
            pool = [it for it in train_items if it.task is task]
            control_model = Model(control_cfg, seed=seed)
            tc = replace(base_tc, seed=seed)
            log_lines.append(f"# control task={task.value} seed={seed}")
            run_training(
                control_model, pool, tc, log_lines=log_lines,
                stream_factory=make_single_task_stream,
            )
            acc = evaluate_token_accuracy(
                control_model, [it for it in eval_items if it.task is task], vocab
            )[task]
            sink.append(acc)
            log_lines.append(f"# control task={task.value} seed={seed} acc={acc:.6f}")

        for name, cfg in configs.items():
            model = Model(cfg, seed=seed)
            tc = replace(base_tc, seed=seed)
            log_lines.append(f"# model {name} seed={seed}")
            run_training(model, train_items, tc, log_lines=log_lines)
            acc = evaluate_token_accuracy(model, eval_items, vocab)
            pc = count_params(cfg)
            row = BenchmarkRow(
                name=name,
                trainable=pc.trainable,
                active=pc.active,
                acc_asr=acc[Task.ASR],
                acc_st=acc[Task.ST],
            )
            per_seed[name].append(row)
            log_lines.append(
                f"# model {name} seed={seed} acc_asr={row.acc_asr:.6f} acc_st={row.acc_st:.6f}"
            )

    rows = []
    for name in configs:
        seats = per_seed[name]
        rows.append(
            BenchmarkRow(
                name=name,
                trainable=seats[0].trainable,
                active=seats[0].active,
                acc_asr=float(np.mean([r.acc_asr for r in seats])),
                acc_st=float(np.mean([r.acc_st for r in seats])),
            )
        )
    return BenchmarkResult(
        rows=rows,
        per_seed=per_seed,
        control_asr=float(np.mean(controls_asr)),
        control_st=float(np.mean(controls_st)),
        seeds=list(seeds),
        log_lines=log_lines,
    )


def _check_shared_dims(configs: dict[str, ModelConfig]) -> None:
    ref = next(iter(configs.values()))
    varying = {"d_ff_dec", "dec_smoe"}
    for name, cfg in configs.items():
        for f in (
            "n_enc_layers", "n_dec_layers", "d_model", "d_ff", "n_heads", "vocab_size",
            "n_mels", "dropout", "activation", "glu", "tied_embed", "enc_smoe", "n_experts",
        ):
            if getattr(cfg, f) != getattr(ref, f):
                raise ConfigError(
                    f"benchmark config {name!r} varies {f}; only the decoder "
                    f"FFN arrangement ({sorted(varying)}) may differ"
                )


# -- narrowband fine-tuning -----------------------------------------------------


def finetune_nbwb(
    donor: Model | str,
    items: Sequence[Utterance],
    tc: TrainConfig,
    log_lines: list[str] | None = None,
) -> Model:
    """Expand the donor's encoder FFNs into expert banks, then train on a
    mixed narrowband/wideband stream with encoder routing active.

    The donor may be a Model or a checkpoint path. Immediately after the
    expansion the returned model computes exactly what the donor does.
    """
    if isinstance(donor, str) or hasattr(donor, "__fspath__"):
        donor, _ = load_checkpoint(donor)
    if not any(it.bandwidth is Bandwidth.NB for it in items):
        raise ConfigError("fine-tuning set carries no narrowband samples")
    model = expand_experts(donor, encoder=True)
    run_training(model, items, tc, log_lines=log_lines)
    return model
