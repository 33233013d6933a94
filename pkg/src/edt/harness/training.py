"""Training loop: combined full + masked loss, Adam, linear lr decay,
CSV loss log, periodic checkpoints, bit-exact resume.

Determinism contract: the data stream is a pure function of the step index,
and the two stochastic streams (diffusion draws, mask draws) plus the
optimizer moments and loss EMAs are checkpointed, so resuming from step k
and running to n reproduces an uninterrupted run to n bit for bit in
single-threaded mode.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from ..architecture import EdtModel, ModelConfig, edt_nano_config
from ..diffusion import NoiseSchedule
from ..errors import ConfigError
from ..masking import edt_training_losses
from ..numerics import Rng
from .checkpoint import MODEL_PREFIX, load_arrays, save_training_checkpoint
from .dataset import DatasetSpec, generate_dataset

EMA_FACTOR = 0.99
LOG_COLUMNS = "step,loss_full,loss_masked,ema_full,ema_masked,lr"


class Adam:
    """Adam with bias correction, no weight decay; moments are checkpointable."""

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr):
        """Apply one update from the gradients accumulated on the parameters."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def state_arrays(self):
        out = {f"adam.m/{k}": v for k, v in self.m.items()}
        out.update({f"adam.v/{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays, t):
        for k in self.m:
            self.m[k] = arrays[f"adam.m/{k}"].copy()
            self.v[k] = arrays[f"adam.v/{k}"].copy()
        self.t = int(t)


@dataclass(frozen=True)
class RunConfig:
    out_dir: str
    steps: int = 5000
    batch_size: int = 8
    lr_start: float = 1e-3
    lr_end: float = 5e-5
    checkpoint_every: int = 1000
    seed: int = 0
    p_uncond: float = 0.1
    model_config: str = None
    dataset: DatasetSpec = None

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError("steps must be >= 0, batch and cadence >= 1")
        if not (0.0 <= self.p_uncond < 1.0):
            raise ConfigError(f"p_uncond {self.p_uncond} outside [0, 1)")
        if self.dataset is None:
            object.__setattr__(self, "dataset", DatasetSpec(seed=self.seed))

    def to_dict(self):
        out = {
            "out_dir": self.out_dir,
            "steps": self.steps,
            "batch_size": self.batch_size,
            "lr_start": self.lr_start,
            "lr_end": self.lr_end,
            "checkpoint_every": self.checkpoint_every,
            "seed": self.seed,
            "p_uncond": self.p_uncond,
            "model_config": self.model_config,
            "dataset": self.dataset.to_dict(),
        }
        return out

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        kwargs = dict(data)
        if kwargs.get("dataset") is not None:
            kwargs["dataset"] = DatasetSpec.from_dict(kwargs["dataset"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            run = cls.from_dict(json.load(fh))
        if run.model_config is not None and not os.path.exists(run.model_config):
            raise ConfigError(f"model config {run.model_config!r} referenced by {path} does not exist")
        return run

    def resolve_model_config(self):
        if self.model_config is None:
            return edt_nano_config()
        return ModelConfig.load(self.model_config)


def learning_rate(run, step):
    """Linear decay from lr_start at step 0 to lr_end at the final step."""
    if run.steps <= 1:
        return run.lr_start
    frac = step / (run.steps - 1)
    return run.lr_start + (run.lr_end - run.lr_start) * frac


@dataclass
class TrainResult:
    final_checkpoint: str
    log_path: str
    steps_run: int
    ema_full: float
    ema_masked: float


def _checkpoint_stem(out_dir, step):
    return os.path.join(out_dir, f"ckpt_{step:06d}")


def train(run, resume=None, progress=None, until=None):
    """Run (or continue) a training run; returns the final checkpoint stem.

    resume: checkpoint stem written by a previous call with the same run
    config; training continues from its stored step, streams, and moments.
    The lr schedule is pinned to run.steps, so resuming only reproduces the
    uninterrupted run when both calls share the same config.
    progress: optional callable(step, loss_full, loss_masked) for callers
    that want live numbers.
    until: stop (and checkpoint) after this absolute step, simulating an
    interruption without touching the schedule.
    """
    os.makedirs(run.out_dir, exist_ok=True)
    config = run.resolve_model_config()
    dataset = generate_dataset(run.dataset)
    e = dataset.spec
    if (e.channels, e.height, e.width) != (
        config.latent_channels, config.latent_size, config.latent_size,
    ):
        raise ConfigError(
            f"dataset extent {e.channels}x{e.height}x{e.width} does not match the "
            f"model's {config.latent_channels}x{config.latent_size}x{config.latent_size}"
        )
    sched = NoiseSchedule.linear()
    model = EdtModel(config, seed=run.seed)
    optimizer = Adam(model.params)

    root = Rng(run.seed)
    rng_diff = root.spawn(1)
    rng_mask = root.spawn(2)
    step0 = 0
    ema_full = ema_masked = None

    if resume is not None:
        arrays, extra = load_arrays(resume)
        model.load_state_arrays(
            {k[len(MODEL_PREFIX):]: v for k, v in arrays.items() if k.startswith(MODEL_PREFIX)}
        )
        optimizer.load_state_arrays(arrays, extra["adam_t"])
        rng_diff = Rng.from_state(extra["rng_diffusion"])
        rng_mask = Rng.from_state(extra["rng_mask"])
        step0 = int(extra["step"])
        ema_full = extra.get("ema_full")
        ema_masked = extra.get("ema_masked")

    def save(step):
        stem = _checkpoint_stem(run.out_dir, step)
        save_training_checkpoint(stem, model, optimizer, extra={
            "step": step,
            "adam_t": optimizer.t,
            "rng_diffusion": rng_diff.get_state(),
            "rng_mask": rng_mask.get_state(),
            "ema_full": ema_full,
            "ema_masked": ema_masked,
            "run_config": run.to_dict(),
        })
        return stem

    log_path = os.path.join(run.out_dir, "losses.csv")
    fresh_log = not os.path.exists(log_path) or os.path.getsize(log_path) == 0
    t_count = sched.t_steps
    stem = save(step0) if step0 == 0 else _checkpoint_stem(run.out_dir, step0)
    stop = run.steps if until is None else min(run.steps, until)

    with open(log_path, "a") as log:
        if fresh_log:
            log.write(f"# ema_factor={EMA_FACTOR}\n")
            log.write(LOG_COLUMNS + "\n")
        for step in range(step0, stop):
            xs, ys = dataset.batch(step * run.batch_size, run.batch_size)
            t = rng_diff.integers(1, t_count + 1, (run.batch_size,))
            eps = rng_diff.normal(xs.shape).astype(xs.dtype)
            drop = rng_diff.uniform(0.0, 1.0, (run.batch_size,)) < run.p_uncond
            y_eff = np.where(drop, config.class_count, ys)

            loss_full, loss_masked = edt_training_losses(
                model, sched, xs, y_eff, t, eps, config.mask, rng_mask
            )
            model.zero_grads()
            (loss_full + loss_masked).backward()
            lr = learning_rate(run, step)
            optimizer.step(lr)

            lf = float(loss_full.data)
            lm = float(loss_masked.data)
            ema_full = lf if ema_full is None else EMA_FACTOR * ema_full + (1 - EMA_FACTOR) * lf
            ema_masked = lm if ema_masked is None else EMA_FACTOR * ema_masked + (1 - EMA_FACTOR) * lm
            log.write(f"{step},{lf:.8g},{lm:.8g},{ema_full:.8g},{ema_masked:.8g},{lr:.8g}\n")
            if progress is not None:
                progress(step, lf, lm)
            done = step + 1
            if done % run.checkpoint_every == 0 or done == stop:
                stem = save(done)

    return TrainResult(
        final_checkpoint=stem,
        log_path=log_path,
        steps_run=stop - step0,
        ema_full=ema_full,
        ema_masked=ema_masked,
    )


def read_loss_log(path):
    """Parse a losses.csv back into named float columns."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("step,"):
                continue
            rows.append([float(v) for v in line.split(",")])
    if not rows:
        return {name: np.array([]) for name in LOG_COLUMNS.split(",")}
    table = np.array(rows)
    return {name: table[:, i] for i, name in enumerate(LOG_COLUMNS.split(","))}
