"""AdamW training loop with warmup/decay schedule, checkpoints and metrics."""

import csv
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Sequence

import numpy as np

from .config import TrainConfig
from .errors import DataError, NonFiniteGradientError
from .model import (
    ModelParams,
    collate,
    forward,
    load_checkpoint,
    mlm_loss,
    save_checkpoint,
)

logger = logging.getLogger(__name__)

METRICS_HEADER = ["step", "loss", "lr", "xling_frac"]
NO_DECAY_SUFFIXES = (".bias", ".gain")


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        arrays = {f"adam.m.{k}": a for k, a in self.m.items()}
        arrays.update({f"adam.v.{k}": a for k, a in self.v.items()})
        return arrays

    @classmethod
    def from_arrays(cls, step: int, arrays: Dict[str, np.ndarray]) -> "AdamState":
        state = cls(step=step)
        for key, array in arrays.items():
            if key.startswith("adam.m."):
                state.m[key[len("adam.m.") :]] = array
            elif key.startswith("adam.v."):
                state.v[key[len("adam.v.") :]] = array
        return state


def decays(name: str) -> bool:
    """Weight decay applies to weights and embeddings, not biases or gains."""
    return not name.endswith(NO_DECAY_SUFFIXES)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``lr``, then linear decay to 0 at ``total_steps``."""
    if step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    if step >= cfg.total_steps:
        return 0.0
    return cfg.lr * (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)


def check_finite(grads: Dict[str, np.ndarray], step: int) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NonFiniteGradientError(
                f"non-finite gradient in {name} at step {step} ({bad} entries)"
            )


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def adamw_step(
    params: ModelParams,
    grads: Dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
    lr: float | None = None,
    decay: Callable[[str], bool] = decays,
) -> AdamState:
    """One decoupled-weight-decay Adam update, in place."""
    check_finite(grads, state.step)
    lr = cfg.lr if lr is None else lr
    beta1, beta2 = cfg.betas
    t = state.step + 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        m = beta1 * (m if m is not None else 0.0) + (1 - beta1) * g
        v = beta2 * (v if v is not None else 0.0) + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        if cfg.weight_decay and decay(name):
            p.data -= lr * cfg.weight_decay * p.data
        p.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    state.step = t
    return state


@dataclass
class TrainResult:
    params: ModelParams
    step: int
    losses: List[float]
    metrics_path: str
    checkpoints: List[str]


def checkpoint_name(step: int) -> str:
    return f"ckpt-{step:06d}.bin"


class BatchPlan:
    """Epoch-wise shuffled batches; batch ``s`` depends only on (seed, s)."""

    def __init__(self, size: int, batch_size: int, seed: int) -> None:
        self.size = size
        self.batch_size = batch_size
        self.seed = seed
        self._perms: Dict[int, np.ndarray] = {}

    def _perm(self, epoch: int) -> np.ndarray:
        if epoch not in self._perms:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch]))
            self._perms = {epoch: rng.permutation(self.size)}
        return self._perms[epoch]

    def indices(self, step: int) -> List[int]:
        start = step * self.batch_size
        out = []
        for pos in range(start, start + self.batch_size):
            epoch, offset = divmod(pos, self.size)
            out.append(int(self._perm(epoch)[offset]))
        return out


def _read_metrics(path: str, before: int) -> List[List[str]]:
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    return [row for row in rows[1:] if row and int(row[0]) < before]


def train(
    examples: Sequence,
    params: ModelParams,
    cfg: TrainConfig,
    out_dir: str,
    resume_from: str | None = None,
) -> TrainResult:
    """Optimize ``params`` on ``examples`` for ``cfg.total_steps`` steps.

    Writes ``metrics.csv`` and ``ckpt-NNNNNN.bin`` files under ``out_dir``.
    Resuming from a checkpoint reproduces the uninterrupted run exactly.
    """
    if not examples:
        raise DataError("no training examples")
    os.makedirs(out_dir, exist_ok=True)
    seed = cfg.seed or 0
    state = AdamState()
    start = 0
    if resume_from:
        params, extra, arrays = load_checkpoint(resume_from)
        start = int(extra.get("step", 0))
        dtype = np.dtype(params.cfg.dtype)
        state = AdamState.from_arrays(
            int(extra.get("adam_step", start)),
            {k: a.astype(dtype) for k, a in arrays.items()},
        )
        logger.info("Resuming from %s at step %d", resume_from, start)

    metrics_path = os.path.join(out_dir, "metrics.csv")
    kept_rows = _read_metrics(metrics_path, start) if resume_from else []
    plan = BatchPlan(len(examples), cfg.batch_size, seed)
    model_cfg = params.cfg
    losses: List[float] = []
    checkpoints: List[str] = []
    log_every = max(1, cfg.total_steps // 20)

    with open(metrics_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        writer.writerows(kept_rows)
        for step in range(start, cfg.total_steps):
            batch = collate([examples[i] for i in plan.indices(step)], model_cfg)
            rng = None
            if model_cfg.dropout > 0:
                rng = np.random.default_rng(np.random.SeedSequence([seed, step, 1]))
            out = forward(batch, params, rng)
            loss = mlm_loss(out.logits, batch.label_ids)
            params.zero_grad()
            loss.backward()
            grads = {
                name: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for name, t in params.items()
            }
            check_finite(grads, step)
            clip_by_global_norm(grads, cfg.grad_clip)
            lr = lr_at(step, cfg)
            adamw_step(params, grads, state, cfg, lr=lr)

            value = loss.item()
            losses.append(value)
            xling = batch.xling_words / max(batch.masked_words, 1)
            writer.writerow([step, repr(value), repr(lr), repr(xling)])
            if step % log_every == 0:
                logger.info("step %d loss %.4f lr %.6g", step, value, lr)

            done = step + 1
            if done % cfg.checkpoint_every == 0 or done == cfg.total_steps:
                path = os.path.join(out_dir, checkpoint_name(done))
                save_checkpoint(
                    path,
                    params,
                    extra={"step": done, "adam_step": state.step, "train": asdict(cfg)},
                    arrays=state.to_arrays(),
                )
                checkpoints.append(path)
                f.flush()

    logger.info(
        "Finished training at step %d; %d checkpoints in %s",
        cfg.total_steps,
        len(checkpoints),
        out_dir,
    )
    return TrainResult(params, cfg.total_steps, losses, metrics_path, checkpoints)
