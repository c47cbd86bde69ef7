"""Losses, optimizers and training loops."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .editing import PhyTaylorModel
from .errors import DimensionMismatch, InvalidArgument, NonFiniteValue, TrainingDiverged
from .network import backward, forward, predict

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 200
    epochs: int = 100
    seed: int = 0
    loss: str = "mse"
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise InvalidArgument(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("mse", "mae"):
            raise InvalidArgument(f"unknown loss {self.loss!r}")
        if not self.learning_rate > 0:
            raise InvalidArgument("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidArgument("batch_size must be >= 1 and epochs >= 0")


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    split: np.ndarray = None  # type: ignore[assignment]
    traj: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=float))
        n = len(self.inputs)
        if len(self.targets) != n:
            raise DimensionMismatch(f"{n} inputs but {len(self.targets)} targets")
        self.split = np.full(n, "train") if self.split is None else np.asarray(self.split, dtype=str)
        self.traj = np.zeros(n, dtype=int) if self.traj is None else np.asarray(self.traj, dtype=int)
        if len(self.split) != n or len(self.traj) != n:
            raise DimensionMismatch("split/traj columns are not aligned with the data")
        unknown = set(self.split.tolist()) - set(SPLITS)
        if unknown:
            raise InvalidArgument(f"unknown split tags {sorted(unknown)}")

    def __len__(self):
        return len(self.inputs)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def target_dim(self) -> int:
        return self.targets.shape[1]

    def subset(self, split: str) -> "Dataset":
        keep = self.split == split
        return Dataset(self.inputs[keep], self.targets[keep], self.split[keep], self.traj[keep])


def loss_and_grad(kind: str, y_hat: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    # overflow surfaces as a non-finite loss, which the callers check
    with np.errstate(over="ignore", invalid="ignore"):
        err = y_hat - y
        if kind == "mse":
            return float(np.mean(err**2)), 2.0 * err / err.size
        return float(np.mean(np.abs(err))), np.sign(err) / err.size


def evaluate_loss(model: PhyTaylorModel, data: Dataset, kind: str = "mse") -> float | None:
    if len(data) == 0:
        return None
    return loss_and_grad(kind, predict(model, data.inputs), data.targets)[0]


class Adam:
    """Bias-corrected Adam that only writes where the mask is 1."""

    def __init__(self, shapes: Sequence[tuple], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads, masks) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, mask, m, v in zip(params, grads, masks, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p[...] = np.where(mask != 0, p - update, p)


class SGD:
    def __init__(self, shapes: Sequence[tuple], lr: float):
        self.lr = lr

    def step(self, params, grads, masks) -> None:
        for p, g, mask in zip(params, grads, masks):
            p[...] = np.where(mask != 0, p - self.lr * g, p)


def make_optimizer(config: TrainConfig, shapes):
    if config.optimizer == "adam":
        return Adam(shapes, config.learning_rate)
    return SGD(shapes, config.learning_rate)


@dataclass
class History:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float | None] = field(default_factory=list)

    def record(self, epoch, train, val):
        self.epochs.append(epoch)
        self.train_loss.append(train)
        self.val_loss.append(val)

    def rows(self):
        return list(zip(self.epochs, self.train_loss, self.val_loss))


def _check_dims(model: PhyTaylorModel, data: Dataset):
    if data.input_dim != model.input_dim or data.target_dim != model.terminal_out_dim:
        raise DimensionMismatch(
            f"data is {data.input_dim}->{data.target_dim}, "
            f"model is {model.input_dim}->{model.terminal_out_dim}"
        )


def _batches(rng: np.random.Generator, n: int, size: int):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def train_model(
    model: PhyTaylorModel,
    data: Dataset,
    config: TrainConfig,
    callback: Callable[[int, PhyTaylorModel], None] | None = None,
) -> History:
    """Mini-batch training on the ``train`` split; ``val`` is scored per epoch.

    On a non-finite loss the weights are rolled back to the last finished epoch
    and TrainingDiverged is raised.
    """
    _check_dims(model, data)
    train, val = data.subset("train"), data.subset("val")
    if len(train) == 0:
        raise InvalidArgument("dataset has no training rows")
    rng = np.random.default_rng(config.seed)
    params = model.weights()
    masks = [layer.M for layer in model.layers]
    opt = make_optimizer(config, [p.shape for p in params])
    history = History()
    good = [p.copy() for p in params]
    for epoch in range(1, config.epochs + 1):
        try:
            for idx in _batches(rng, len(train), config.batch_size):
                y_hat, trace = forward(model, train.inputs[idx])
                loss, g = loss_and_grad(config.loss, y_hat, train.targets[idx])
                if not np.isfinite(loss):
                    raise NonFiniteValue("loss is not finite")
                opt.step(params, backward(model, trace, g).weights, masks)
            train_loss = evaluate_loss(model, train, config.loss)
            if not np.isfinite(train_loss):
                raise NonFiniteValue("loss is not finite")
        except (NonFiniteValue, FloatingPointError) as exc:
            for p, keep in zip(params, good):
                p[...] = keep
            raise TrainingDiverged(f"epoch {epoch}: {exc}", history=history) from exc
        history.record(epoch, train_loss, evaluate_loss(model, val, config.loss))
        good = [p.copy() for p in params]
        log.debug("epoch %d train %.6g", epoch, train_loss)
        if callback is not None:
            callback(epoch, model)
    return history


def _check_safety_model(safety: PhyTaylorModel):
    for t, layer in enumerate(safety.layers, start=1):
        if layer.activation != "identity" or layer.suppressor.any_active:
            raise InvalidArgument(
                f"safety layer {t} must use identity activation and no suppressor"
            )


def selfcorrecting_loss(policy, safety, x, u_truth, s_truth, alpha, beta):
    """alpha * mean ||s(u) - s_truth||^2 + beta * mean ||u_truth - u||^2 and its
    gradients (policy weights, safety weights)."""
    B = len(x)
    u, ptrace = forward(policy, x)
    s, strace = forward(safety, u)
    ds = 2.0 * alpha * (s - s_truth) / B
    du_direct = 2.0 * beta * (u - u_truth) / B
    loss = alpha * np.sum((s - s_truth) ** 2) / B + beta * np.sum((u - u_truth) ** 2) / B
    sgrad = backward(safety, strace, ds)
    pgrad = backward(policy, ptrace, sgrad.inputs + du_direct)
    return float(loss), pgrad.weights, sgrad.weights


def train_selfcorrecting(
    policy: PhyTaylorModel,
    safety: PhyTaylorModel,
    data: Dataset,
    config: TrainConfig,
) -> History:
    """Joint training of the policy -> safety cascade.

    ``data.targets`` holds the true command followed by the true safety metric.
    """
    _check_safety_model(safety)
    if policy.terminal_out_dim != safety.input_dim:
        raise DimensionMismatch(
            f"policy emits {policy.terminal_out_dim} commands, safety expects {safety.input_dim}"
        )
    p = policy.terminal_out_dim
    if data.input_dim != policy.input_dim or data.target_dim != p + safety.terminal_out_dim:
        raise DimensionMismatch(
            f"data is {data.input_dim}->{data.target_dim}, expected "
            f"{policy.input_dim}->{p + safety.terminal_out_dim}"
        )
    train, val = data.subset("train"), data.subset("val")
    rng = np.random.default_rng(config.seed)
    params = policy.weights() + safety.weights()
    masks = [l.M for l in policy.layers] + [l.M for l in safety.layers]
    opt = make_optimizer(config, [q.shape for q in params])
    history = History()
    good = [q.copy() for q in params]

    def score(d: Dataset):
        if len(d) == 0:
            return None
        return selfcorrecting_loss(policy, safety, d.inputs, d.targets[:, :p], d.targets[:, p:],
                                   config.alpha, config.beta)[0]

    for epoch in range(1, config.epochs + 1):
        try:
            for idx in _batches(rng, len(train), config.batch_size):
                t = train.targets[idx]
                loss, gp, gs = selfcorrecting_loss(policy, safety, train.inputs[idx], t[:, :p],
                                                   t[:, p:], config.alpha, config.beta)
                if not np.isfinite(loss):
                    raise NonFiniteValue("loss is not finite")
                opt.step(params, gp + gs, masks)
            train_loss = score(train)
        except (NonFiniteValue, FloatingPointError) as exc:
            for q, keep in zip(params, good):
                q[...] = keep
            raise TrainingDiverged(f"epoch {epoch}: {exc}", history=history) from exc
        history.record(epoch, train_loss, score(val))
        good = [q.copy() for q in params]
    return history


def rollout(step: Callable[[np.ndarray], np.ndarray] | PhyTaylorModel, x0, horizon: int) -> np.ndarray:
    """Closed-loop prediction of ``horizon`` steps; rows are x(k+1) .. x(k+horizon)."""
    fn = (lambda z: predict(step, z)) if isinstance(step, PhyTaylorModel) else step
    x = np.asarray(x0, dtype=float)
    out = []
    for _ in range(horizon):
        x = np.asarray(fn(x), dtype=float)
        out.append(x)
    return np.stack(out, axis=-2)


def rollout_error(
    model: Callable | PhyTaylorModel,
    trajectory,
    horizon: int,
    start: int = 0,
    squared: bool = False,
) -> float:
    """Mean per-dimension closed-loop prediction error over ``horizon`` steps.

    ``squared=False``: (1/horizon) sum_t ||x_hat(t) - x(t)|| / d.
    ``squared=True``:  (1/horizon) sum_t ||x_hat(t) - x(t)||^2 / d.
    A stack of trajectories (N, T, d) gives the mean over trajectories.  A
    rollout that leaves the finite range scores ``inf``.
    """
    traj = np.asarray(trajectory, dtype=float)
    if horizon < 1 or start + horizon >= traj.shape[-2]:
        raise InvalidArgument(
            f"horizon {horizon} from step {start} exceeds trajectory length {traj.shape[-2]}"
        )
    d = traj.shape[-1]
    if isinstance(model, PhyTaylorModel) and not (model.input_dim == model.terminal_out_dim == d):
        raise DimensionMismatch(f"rollout needs a {d}->{d} model")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            pred = rollout(model, traj[..., start, :], horizon)
    except NonFiniteValue as exc:
        log.warning("rollout diverged: %s", exc)
        return float("inf")
    diff = pred - traj[..., start + 1:start + 1 + horizon, :]
    per_step = np.sum(diff**2, axis=-1) if squared else np.linalg.norm(diff, axis=-1)
    return float(np.mean(per_step) / d)
