"""Distillation and task losses, plus the SGD training loops.

The loss is L = L_KD + alpha * L_TK with
L_KD = -softmax(z_t / tau) . log softmax(z_s / tau)  (no tau^2 rescaling)
L_TK = -y . log y_s
averaged over the batch. Gradients flow through both branches of L_KD;
training freezes the teacher by evaluating it outside the tape, while
sensitivity scoring deliberately does not.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from kdlab import autodiff as ad
from kdlab.autodiff import Graph, Tensor, backward, no_grad
from kdlab.config import DistillConfig
from kdlab.data import EncodedDataset, TaskSpec
from kdlab.errors import ContractError, InputError, ParameterError
from kdlab.metrics import metric as eval_metric
from kdlab.model import GateSet, ModelParams, encoder_forward_batch
from kdlab.rng import Rng, sub_seed


@dataclass
class LogitsPair:
    """Teacher and student logits over the same classes."""

    teacher: Tensor
    student: Tensor

    def __post_init__(self):
        if self.teacher.shape[-1] != self.student.shape[-1]:
            raise ContractError(
                f"class counts differ: teacher {self.teacher.shape[-1]} "
                f"vs student {self.student.shape[-1]}"
            )


@dataclass
class LabelBatch:
    """Gold one-hot rows paired with student probability rows."""

    gold: np.ndarray
    student_probs: Tensor

    def __post_init__(self):
        self.gold = np.asarray(self.gold, dtype=np.float64)
        if self.gold.shape != self.student_probs.shape:
            raise ContractError(
                f"gold shape {self.gold.shape} != probs shape {self.student_probs.shape}"
            )
        onehot = np.all(np.isin(self.gold, (0.0, 1.0))) and np.all(
            self.gold.sum(axis=-1) == 1.0
        )
        if not onehot:
            raise ContractError("gold labels must be one-hot")
        sums = self.student_probs.data.sum(axis=-1)
        if not np.all(np.abs(sums - 1.0) <= 1e-12):
            raise ContractError("student probabilities must sum to 1 within 1e-12")


def _batch_rows(t: Tensor) -> int:
    return 1 if t.data.ndim == 1 else t.shape[0]


def kd_loss(pair: LogitsPair, tau: float) -> Tensor:
    """Soft cross-entropy between softened teacher and student logits."""
    if tau <= 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    p_t = ad.softmax_t(pair.teacher, tau)
    logp_s = ad.log_softmax(pair.student, tau)
    rows = _batch_rows(pair.teacher)
    return ad.scale(ad.tsum(ad.mul(p_t, logp_s)), -1.0 / rows)


def task_loss(batch: LabelBatch) -> Tensor:
    """Cross-entropy of student probabilities against gold one-hots."""
    rows = _batch_rows(batch.student_probs)
    picked = ad.mul(ad.tlog(batch.student_probs), Tensor(batch.gold))
    return ad.scale(ad.tsum(picked), -1.0 / rows)


def total_loss(kd: Tensor, tk: Tensor, alpha: float) -> Tensor:
    if alpha < 0:
        raise ParameterError(f"alpha must be nonnegative, got {alpha}")
    return ad.add(kd, ad.scale(tk, alpha))


def cross_entropy_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """L_TK from logits via log-softmax; same value as task_loss on the
    softmax probabilities, numerically stabler."""
    labels = np.asarray(labels, dtype=np.int64)
    k = logits.shape[-1]
    onehot = np.eye(k)[labels]
    logp = ad.log_softmax(logits, 1.0)
    rows = _batch_rows(logits)
    return ad.scale(ad.tsum(ad.mul(logp, Tensor(onehot))), -1.0 / rows)


# ---------------------------------------------------------------------------
# evaluation


def predict_logits(params: ModelParams, gates: GateSet, data: EncodedDataset,
                   batch_size: int = 64) -> np.ndarray:
    """Deterministic full-dataset logits, no gradients."""
    outs = []
    with no_grad():
        for ids, lengths, _ in data.batches(batch_size):
            outs.append(encoder_forward_batch(ids, lengths, params, gates).data)
    return np.concatenate(outs, axis=0)


def evaluate(params: ModelParams, gates: GateSet, data: EncodedDataset,
             task: TaskSpec, batch_size: int = 64) -> float:
    logits = predict_logits(params, gates, data, batch_size)
    preds = logits.argmax(axis=1)
    return eval_metric(task.metric, preds, data.labels)


# ---------------------------------------------------------------------------
# training


@dataclass
class EpochRecord:
    epoch: int
    kd_loss: float
    task_loss: float
    total_loss: float
    dev_metric: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "kd_loss": self.kd_loss,
            "task_loss": self.task_loss,
            "total_loss": self.total_loss,
            "dev_metric": self.dev_metric,
        }


@dataclass
class TrainReport:
    """Per-epoch loss decomposition and dev trajectory.

    Wall time is kept on the object but excluded from the serialized
    records, which must be byte-identical across equal-seed runs.
    """

    epochs: list = field(default_factory=list)
    best_epoch: int | None = None
    best_metric: float | None = None
    wall_time: float = 0.0

    def to_jsonl(self) -> str:
        import json

        return "".join(
            json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.epochs
        )

    @property
    def trajectory(self) -> list:
        return [r.dev_metric for r in self.epochs]


def sgd_step(tensors, lr: float, weight_decay: float = 0.0) -> None:
    """Plain SGD with decoupled weight decay."""
    for t in tensors:
        if t.grad is None:
            continue
        if weight_decay > 0.0:
            t.data *= 1.0 - lr * weight_decay
        t.data -= lr * t.grad
        t.grad = None


def _train_loop(trainee: ModelParams, gates: GateSet, batch_loss, train_data,
                dev_data, task, cfg: DistillConfig, rng: Rng, lr: float):
    """Shared epoch loop: shuffle, step, evaluate, early-stop, rewind to
    the best epoch. batch_loss(ids, lengths, labels) returns
    (loss Tensor, kd float, tk float)."""
    start = time.perf_counter()
    report = TrainReport()
    trainables = trainee.tensors()
    trainee.set_requires_grad(True)
    best_params = None
    bad_epochs = 0
    n = len(train_data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        kd_sum = tk_sum = total_sum = 0.0
        for ids, lengths, labels in train_data.batches(cfg.batch_size, order):
            with Graph() as g:
                loss, kd_val, tk_val = batch_loss(ids, lengths, labels)
            backward(g, loss)
            sgd_step(trainables, lr, cfg.weight_decay)
            rows = len(labels)
            kd_sum += kd_val * rows
            tk_sum += tk_val * rows
            total_sum += loss.item() * rows
        dev = evaluate(trainee, gates, dev_data, task)
        report.epochs.append(
            EpochRecord(epoch, kd_sum / n, tk_sum / n, total_sum / n, dev)
        )
        if report.best_metric is None or dev > report.best_metric:
            report.best_metric = dev
            report.best_epoch = epoch
            best_params = trainee.clone()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    trainee.set_requires_grad(False)
    report.wall_time = time.perf_counter() - start
    if best_params is None:
        best_params = trainee.clone()
    best_params.set_requires_grad(False)
    return best_params, report


def finetune_teacher(params: ModelParams, train_data: EncodedDataset,
                     dev_data: EncodedDataset, task: TaskSpec, cfg: DistillConfig,
                     rng: Rng | None = None):
    """Task-loss-only training with early stopping on the dev metric."""
    if len(train_data) == 0 or len(dev_data) == 0:
        raise InputError("finetune needs nonempty train and dev data")
    cfg.validate()
    rng = rng or Rng(sub_seed_for(cfg, "finetune"))
    trainee = params.clone()
    gates = GateSet.ones_like(trainee)
    lr = cfg.teacher_lr if cfg.teacher_lr is not None else cfg.lr

    def batch_loss(ids, lengths, labels):
        logits = encoder_forward_batch(ids, lengths, trainee, gates,
                                       dropout=cfg.dropout, rng=rng)
        tk = cross_entropy_logits(logits, labels)
        return tk, 0.0, tk.item()

    return _train_loop(trainee, gates, batch_loss, train_data, dev_data, task, cfg, rng, lr)


def distill(teacher: ModelParams, teacher_gates: GateSet, student_init: ModelParams,
            train_data: EncodedDataset, dev_data: EncodedDataset, task: TaskSpec,
            cfg: DistillConfig, rng: Rng | None = None):
    """Optimize L = L_KD + alpha*L_TK w.r.t. the student only.

    The teacher forward runs with its (possibly masked) gates, outside
    the tape; teacher parameters are bit-identical afterwards. The
    passed student init is not mutated; the best-epoch clone is
    returned.
    """
    if len(train_data) == 0 or len(dev_data) == 0:
        raise InputError("distill needs nonempty train and dev data")
    cfg.validate()
    if teacher.n_classes != student_init.n_classes:
        raise ContractError(
            f"teacher has {teacher.n_classes} classes, student {student_init.n_classes}"
        )
    if not teacher_gates.binary():
        raise ContractError("teacher gates must be binary (or all ones) for distillation")
    rng = rng or Rng(sub_seed_for(cfg, "distill"))
    teacher.set_requires_grad(False)
    teacher_digest = teacher.digest()
    student = student_init.clone()
    student_gates = GateSet.ones_like(student)

    def batch_loss(ids, lengths, labels):
        with no_grad():
            t_logits = encoder_forward_batch(ids, lengths, teacher, teacher_gates)
        s_logits = encoder_forward_batch(ids, lengths, student, student_gates,
                                         dropout=cfg.dropout, rng=rng)
        kd = kd_loss(LogitsPair(teacher=t_logits.detach(), student=s_logits), cfg.tau)
        tk = cross_entropy_logits(s_logits, labels)
        return total_loss(kd, tk, cfg.alpha), kd.item(), tk.item()

    best, report = _train_loop(student, student_gates, batch_loss, train_data,
                               dev_data, task, cfg, rng, cfg.lr)
    if teacher.digest() != teacher_digest:
        raise ContractError("teacher parameters changed during distillation")
    return best, report


def sub_seed_for(cfg: DistillConfig, name: str) -> int:
    """Named sub-seed drawn from the root config seed."""
    return sub_seed(cfg.seed, name)
