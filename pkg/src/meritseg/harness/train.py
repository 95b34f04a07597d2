"""Training loop, AdamW, evaluation and run records."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..cascade_decoder import weighted_sum
from ..losses import LossConfig, combined_loss, mutation_loss
from ..metrics import MetricsReport, evaluate_case, merge_reports
from ..model import MeritConfig, MeritModel, forward
from ..numerics.rng import RngStream
from ..numerics.tensor import Tensor, grad_of, no_grad
from .augment import augment
from .data import SynthSpec, make_dataset
from .io import save_checkpoint

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 4
    max_steps: int = 2000
    seed: int = 0
    use_mutation: bool = True
    mutation_accumulate: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    train_size: int = 64
    augment: bool = True
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_every: int = 0
    eval_cases: int = 0           # 0 = whole training set
    target_dsc: float | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay <= 0:
            raise ValueError("learning_rate and weight_decay must be > 0")
        if self.batch_size < 1 or self.max_steps < 0 or self.train_size < 1:
            raise ValueError("batch_size, train_size must be >= 1 and max_steps >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: list[Tensor], lr: float, weight_decay: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.wd, self.eps = lr, weight_decay, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            p.data *= 1.0 - self.lr * self.wd
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class RunRecord:
    losses: list[float]
    snapshots: list[dict]
    config_hash: str
    seed: int
    steps: int
    wall_clock: float = 0.0
    aborted: str | None = None

    def canonical(self) -> str:
        """Deterministic serialisation (wall-clock excluded)."""
        d = asdict(self)
        d.pop("wall_clock")
        return json.dumps(d, sort_keys=True)

    def final_report(self) -> dict | None:
        return self.snapshots[-1] if self.snapshots else None


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, record: RunRecord):
        super().__init__(message)
        self.record = record


def config_hash(cfg: MeritConfig, tc: TrainConfig, spec: SynthSpec) -> str:
    payload = {
        "model": cfg.to_dict(),
        "train": {k: v for k, v in tc.to_dict().items() if k != "seed"},
        "data": {k: v for k, v in spec.to_dict().items() if k != "seed"},
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def training_loss(model: MeritModel, images: np.ndarray, masks: np.ndarray, tc: TrainConfig) -> Tensor:
    out = forward(Tensor(images), model)
    if tc.use_mutation:
        return mutation_loss(out.maps, masks, tc.loss, accumulate=tc.mutation_accumulate)
    return combined_loss(weighted_sum(out.maps, model.cfg.head_weights), masks, tc.loss)


def predict(model: MeritModel, images: np.ndarray, batch_size: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities and argmax label masks."""
    probs = []
    with no_grad():
        for i in range(0, len(images), batch_size):
            probs.append(forward(Tensor(images[i:i + batch_size]), model).probs.data)
    p = np.concatenate(probs)
    return p, p.argmax(axis=1).astype(np.uint8)


def evaluate(model: MeritModel, images: np.ndarray, masks: np.ndarray, batch_size: int = 8) -> MetricsReport:
    _, pred = predict(model, images, batch_size)
    return merge_reports([evaluate_case(g, p, model.cfg.num_classes) for g, p in zip(masks, pred)])


def report_dict(step: int, report: MetricsReport) -> dict:
    return {
        "step": step,
        "mean_dsc": report.mean_dsc,
        "mean_hd95": report.mean_hd95,
        "per_class_dsc": report.per_class_dsc,
        "per_class_hd95": report.per_class_hd95,
        "classes": report.classes,
    }


def train(cfg: MeritConfig, tc: TrainConfig, spec: SynthSpec, out_dir=None,
          dataset: tuple[np.ndarray, np.ndarray] | None = None,
          model: MeritModel | None = None) -> tuple[MeritModel, RunRecord]:
    """Train on a fixed synthetic training set; returns the model and its run record."""
    if spec.image_size != cfg.gt_resolution:
        raise ValueError("synthetic image size must equal the model's gt resolution")
    if spec.num_classes != cfg.num_classes:
        raise ValueError("synthetic class count must equal the model's class count")
    start = time.perf_counter()
    images, masks = dataset if dataset is not None else make_dataset(spec, tc.train_size)
    model = model if model is not None else MeritModel(cfg, seed=tc.seed)
    params = model.parameters()
    opt = AdamW(params, tc.learning_rate, tc.weight_decay, (tc.beta1, tc.beta2), tc.eps)
    rng = RngStream(tc.seed, 7).generator()
    n_eval = len(images) if tc.eval_cases <= 0 else min(tc.eval_cases, len(images))
    chash = config_hash(cfg, tc, spec)
    record = RunRecord([], [], chash, tc.seed, 0)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    best = -1.0

    for step in range(1, tc.max_steps + 1):
        idx = rng.choice(len(images), size=min(tc.batch_size, len(images)), replace=False)
        bx, by = images[idx], masks[idx]
        if tc.augment:
            pairs = [augment(x, y, rng) for x, y in zip(bx, by)]
            bx = np.stack([p[0] for p in pairs])
            by = np.stack([p[1] for p in pairs])
        loss = training_loss(model, bx, by, tc)
        value = float(loss.data)
        if not np.isfinite(value):
            record.aborted = f"non-finite loss at step {step}"
            record.wall_clock = time.perf_counter() - start
            raise TrainingAborted(record.aborted, record)
        opt.step(grad_of(loss, params))
        record.losses.append(value)
        record.steps = step

        if tc.eval_every and step % tc.eval_every == 0:
            rep = evaluate(model, images[:n_eval], masks[:n_eval])
            record.snapshots.append(report_dict(step, rep))
            log.info("step %d loss %.4f train DSC %.2f", step, value, rep.mean_dsc)
            if out is not None and rep.mean_dsc > best:
                best = rep.mean_dsc
                save_checkpoint(out / "best.ckpt", model.state_dict(), checkpoint_meta(cfg, tc, spec, step))
            if tc.target_dsc is not None and rep.mean_dsc >= tc.target_dsc:
                break
        if out is not None and tc.checkpoint_every and step % tc.checkpoint_every == 0:
            save_checkpoint(out / f"step_{step:06d}.ckpt", model.state_dict(), checkpoint_meta(cfg, tc, spec, step))

    if out is not None:
        save_checkpoint(out / "final.ckpt", model.state_dict(), checkpoint_meta(cfg, tc, spec, record.steps))
    record.wall_clock = time.perf_counter() - start
    return model, record


def checkpoint_meta(cfg: MeritConfig, tc: TrainConfig, spec: SynthSpec, step: int) -> dict:
    return {"model": cfg.to_dict(), "train": tc.to_dict(), "data": spec.to_dict(), "step": step}


def with_seed(tc: TrainConfig, seed: int) -> TrainConfig:
    return replace(tc, seed=seed)
