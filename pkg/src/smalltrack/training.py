"""Seeded training loop with Adam, CSV loss logging, and resumable
checkpoints. Each step derives its own RNG from (seed, step), so a resumed
run replays the exact trajectory of an uninterrupted one."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, mul
from .bev import build_targets
from .checkpoint import load_checkpoint, save_checkpoint
from .data import EmptySearchRegion, Sequence, make_training_sample
from .losses import LossWeights, NonFiniteLoss, total_loss
from .model import Tracker, TrackerConfig

__all__ = ["TrainConfig", "Adam", "TrainingDiverged", "train", "load_trained"]

LOG_HEADER = "step,hm,off,z,cd,total"
_MAX_SAMPLE_RETRIES = 16


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    steps: int = 200
    batch_size: int = 2
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    checkpoint_every: int = 50
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if min(self.steps, self.batch_size, self.checkpoint_every) <= 0:
            raise ValueError("steps, batch_size and checkpoint_every must be positive")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("learning_rate and eps must be positive")


class Adam:
    """Adaptive moment estimation over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            m_hat = self.m[name] / (1 - self.b1 ** self.t)
            v_hat = self.v[name] / (1 - self.b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.asarray([self.t], dtype=np.float32)
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k in self.m:
            self.m[k] = state[f"adam.m.{k}"].astype(np.float32).reshape(self.m[k].shape)
            self.v[k] = state[f"adam.v.{k}"].astype(np.float32).reshape(self.v[k].shape)
        self.t = int(state["adam.t"][0])


def _draw_sample(sequences: list[Sequence], rng: np.random.Generator):
    for _ in range(_MAX_SAMPLE_RETRIES):
        seq = sequences[int(rng.integers(len(sequences)))]
        frame_idx = int(rng.integers(1, len(seq.frames)))
        try:
            return seq, make_training_sample(seq, frame_idx, rng)
        except EmptySearchRegion:
            continue
    raise EmptySearchRegion("could not draw a non-empty training sample")


def _save_state(path: Path, model: Tracker, opt: Adam, step: int) -> None:
    arrays = model.state()
    arrays.update(opt.state())
    arrays["train.step"] = np.asarray([step], dtype=np.float32)
    save_checkpoint(path, arrays)
    sidecar = {"model": model.cfg.to_dict()}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1) + "\n", encoding="utf-8")


def load_trained(ckpt_path, dtype=np.float32) -> Tracker:
    """Rebuild a tracker from a checkpoint and its config sidecar."""
    sidecar = json.loads(Path(str(ckpt_path) + ".json").read_text(encoding="utf-8"))
    cfg = TrackerConfig.from_dict(sidecar["model"])
    model = Tracker(cfg, np.random.default_rng(0), dtype)
    state = load_checkpoint(ckpt_path)
    model.load_state({k: v for k, v in state.items() if not k.startswith(("adam.", "train."))})
    return model


def train(model: Tracker, sequences: list[Sequence], cfg: TrainConfig,
          ckpt_path, log_path=None, resume: bool = False) -> list[dict[str, float]]:
    """Run the optimization loop; returns the per-step component log.

    Deterministic given (model init, sequences, cfg.seed). ``resume`` picks
    up from ``ckpt_path`` and reproduces the uninterrupted trajectory. On a
    non-finite loss the last cadence checkpoint is left on disk and
    TrainingDiverged is raised.
    """
    ckpt_path = Path(ckpt_path)
    params = model.parameters()
    opt = Adam(params, lr=cfg.learning_rate, betas=cfg.betas, eps=cfg.eps)
    start_step = 0
    log_rows: list[dict[str, float]] = []
    if resume:
        state = load_checkpoint(ckpt_path)
        model.load_state({k: v for k, v in state.items()
                          if not k.startswith(("adam.", "train."))})
        opt.load_state(state)
        start_step = int(state["train.step"][0])

    if log_path is not None and start_step == 0:
        Path(log_path).write_text(LOG_HEADER + "\n", encoding="utf-8")

    for step in range(start_step, cfg.steps):
        rng = np.random.default_rng([cfg.seed, step])
        model.zero_grad()
        batch_total: Tensor | None = None
        sums = {"hm": 0.0, "off": 0.0, "z": 0.0, "cd": 0.0, "total": 0.0}
        for _ in range(cfg.batch_size):
            seq, sample = _draw_sample(sequences, rng)
            out = model.forward(sample.search, sample.template)
            targets = build_targets(sample.gt, model.cfg.bev)
            loss, comps = total_loss(out.maps, targets, out.prototype_coords,
                                     sample.aligned_template, cfg.weights, seq.category)
            batch_total = loss if batch_total is None else batch_total + loss
            for k in sums:
                sums[k] += comps[k]
        mean_loss = mul(batch_total, Tensor(np.asarray(1.0 / cfg.batch_size,
                                                       batch_total.dtype)))
        row = {"step": step, **{k: v / cfg.batch_size for k, v in sums.items()}}
        if not np.isfinite(row["total"]):
            raise TrainingDiverged(f"non-finite total loss at step {step}")
        mean_loss.backward()
        opt.step()
        log_rows.append(row)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(f"{step},{row['hm']!r},{row['off']!r},{row['z']!r},"
                         f"{row['cd']!r},{row['total']!r}\n")
        if (step + 1) % cfg.checkpoint_every == 0:
            _save_state(ckpt_path, model, opt, step + 1)

    _save_state(ckpt_path, model, opt, cfg.steps)
    return log_rows
