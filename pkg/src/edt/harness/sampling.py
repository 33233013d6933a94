"""Checkpoint-driven sample generation and image dumps.

Samples land as one float32 .npy tensor plus a labels .npy; each sample
channel can additionally be dumped as an 8-bit binary PGM with a fixed
linear value mapping ([-1, 1] onto [0, 255], clipped outside).
"""

import os

import numpy as np

from ..architecture import attach_amm
from ..diffusion import GuidanceConfig, NoiseSchedule, SamplerConfig, ddim_sample
from ..errors import DimensionError
from .checkpoint import load_model_checkpoint


def to_pgm_bytes(plane):
    """8-bit binary PGM (P5) of one 2-D plane under the fixed linear mapping."""
    if plane.ndim != 2:
        raise DimensionError(f"PGM wants a 2-D plane, got shape {plane.shape}")
    h, w = plane.shape
    levels = np.clip(np.round((np.asarray(plane, dtype=np.float64) + 1.0) * 127.5), 0, 255)
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + levels.astype(np.uint8).tobytes()


def write_pgm(plane, path):
    with open(path, "wb") as fh:
        fh.write(to_pgm_bytes(plane))


def sample_from_checkpoint(
    stem,
    labels,
    steps=50,
    omega=1.0,
    seed=0,
    amm="off",
    out_dir=None,
    write_images=False,
):
    """Generate one sample per label from a training checkpoint.

    Returns (samples, labels, paths dict). amm: "on" attaches the modulation
    matrices for the run, "off" leaves the plain forward pass; parameters are
    identical either way.
    """
    model, extra = load_model_checkpoint(stem)
    if amm not in ("on", "off"):
        raise DimensionError(f"amm must be 'on' or 'off', got {amm!r}")
    if amm == "on":
        attach_amm(model)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.size == 0:
        raise DimensionError("need a non-empty 1-D label list")
    cfg = model.config
    if labels.min() < 0 or labels.max() >= cfg.class_count:
        raise DimensionError(f"labels must lie in [0, {cfg.class_count})")
    sched = NoiseSchedule.linear()
    shape = (labels.size, cfg.latent_channels, cfg.latent_size, cfg.latent_size)
    guidance = None
    if omega != 1.0:
        guidance = GuidanceConfig(omega=omega, null_class=cfg.class_count)
    samples = ddim_sample(
        model, shape, labels, sched, SamplerConfig(steps=steps, seed=seed), guidance
    )
    paths = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths["samples"] = os.path.join(out_dir, "samples.npy")
        paths["labels"] = os.path.join(out_dir, "labels.npy")
        np.save(paths["samples"], samples)
        np.save(paths["labels"], labels)
        if write_images:
            images = []
            for i in range(samples.shape[0]):
                for c in range(samples.shape[1]):
                    p = os.path.join(out_dir, f"sample_{i:03d}_c{c}.pgm")
                    write_pgm(samples[i, c], p)
                    images.append(p)
            paths["images"] = images
    return samples, labels, paths
