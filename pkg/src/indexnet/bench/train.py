"""Training and evaluation of reconstruction networks."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import ops
from ..errors import ConfigError, ContractError, TrainingError
from ..optim import MultiStepSchedule, make_optimizer
from ..tensor import Tensor, backward, no_grad
from . import metrics
from .model import ReconNet

logger = logging.getLogger(__name__)

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 100
    lr: float = 0.01
    lr_decay_epochs: tuple[int, ...] = (5, 7, 9)
    loss: str = "l1"
    seed: int = 0
    subset_size: int | None = 4000
    optimizer: str = "adam"
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))
        ms = self.lr_decay_epochs
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"lr_decay_epochs must be strictly increasing, got {list(ms)}")
        if ms and ms[-1] >= self.epochs:
            raise ConfigError(f"lr_decay_epochs must be < epochs ({self.epochs}), got {list(ms)}")
        if self.loss != "l1":
            raise ConfigError(f"unsupported loss {self.loss!r}; only 'l1' is implemented for training")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    def schedule(self) -> MultiStepSchedule:
        return MultiStepSchedule(self.lr, self.lr_decay_epochs)


@dataclass(frozen=True)
class Profile:
    """A training configuration plus the number of test images scored (None = all)."""

    name: str
    train: TrainConfig
    test_size: int | None


PROFILES = {
    # 4k images, 10 epochs, decay at 5/7/9: the 100-epoch 50/70/85 schedule scaled down
    "desk": Profile("desk", TrainConfig(), 2000),
    "full": Profile("full", TrainConfig(epochs=100, lr_decay_epochs=(50, 70, 85), subset_size=None), None),
    "smoke": Profile("smoke", TrainConfig(epochs=2, lr_decay_epochs=(1,), subset_size=200, batch_size=50), 100),
}


def get_profile(name: str) -> Profile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; expected one of {sorted(PROFILES)}") from None


def rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent generators for parameter init and for batch shuffling."""
    init_seq, shuffle_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_seq), np.random.default_rng(shuffle_seq)


@dataclass
class TrainResult:
    losses: list[float]
    lrs: list[float]
    seconds: float
    steps: int


def train(model: ReconNet, images: np.ndarray, cfg: TrainConfig, shuffle_rng: np.random.Generator) -> TrainResult:
    """Minimise the l1 reconstruction loss; returns the per-epoch mean loss curve."""
    if images.ndim != 4 or len(images) == 0:
        raise ContractError(f"training images must be a non-empty (N, 1, H, W) array, got {images.shape}")
    opt = make_optimizer(cfg.optimizer, model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    sched = cfg.schedule()
    model.train()
    losses, lrs = [], []
    steps = 0
    start = time.perf_counter()
    n = len(images)
    for epoch in range(cfg.epochs):
        opt.lr = sched.lr_at(epoch)
        lrs.append(opt.lr)
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for lo in range(0, n, cfg.batch_size):
            batch = images[order[lo : lo + cfg.batch_size]]
            x = Tensor(batch)
            loss = ops.l1_loss(model(x), x)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value}", epoch + 1)
            opt.zero_grad()
            backward(loss)
            opt.step()
            steps += 1
            total += value * len(batch)
            seen += len(batch)
        losses.append(total / seen)
        logger.info("epoch %d/%d lr=%.2e loss=%.5f", epoch + 1, cfg.epochs, opt.lr, losses[-1])
    return TrainResult(losses, lrs, time.perf_counter() - start, steps)


def predict(model: ReconNet, images: np.ndarray, batch_size: int = 250) -> np.ndarray:
    model.eval()
    out = []
    with no_grad():
        for lo in range(0, len(images), batch_size):
            out.append(model(Tensor(images[lo : lo + batch_size])).data)
    return np.concatenate(out)


@dataclass
class ReconReport:
    pair: str
    variant: str
    psnr_db: float
    ssim: float
    mae: float
    rmse: float
    epochs: int
    seconds: float
    seed: int
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def score(pred: np.ndarray, target: np.ndarray) -> dict[str, float]:
    """Metrics over a test set; predictions are clipped to [0, 1] first."""
    if len(target) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    pred = np.clip(pred.astype(np.float64), 0.0, 1.0)
    m = metrics.mse(pred, target)
    return {
        "psnr_db": metrics.psnr_from_mse(m),
        "ssim": metrics.ssim(pred, target),
        "mae": metrics.mae(pred, target),
        "rmse": float(np.sqrt(m)),
    }


def evaluate(model: ReconNet, images: np.ndarray, batch_size: int = 250) -> dict[str, float]:
    if len(images) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    return score(predict(model, images, batch_size), images)
