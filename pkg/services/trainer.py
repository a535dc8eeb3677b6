"""Training loop: patch sampling, L1 objective, Adam, checkpoints and validation"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from errors import NonFiniteError, ShapeError, TrainingDivergedError, ValidationError
from network.checkpoint import TrainState, save_checkpoint
from network.config import VARIANTS, ModelConfig
from network.tvsrn import TVSRNv2, l1_loss
from services.inference import InferenceSpec, infer
from services.metrics import as_db, evaluate_set, psnr
from storage import atomic_write
from tensor_core.optim import AdamState, adam_step
from tensor_core.tensor import Tensor
from volumes.augment import PatchSpec, make_pseudo_lr, sample_patch_pair, stack_pairs
from volumes.volume import Volume, normalize, thicken

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimization settings

    Steps before ``real_only_steps`` draw only real pairs; later steps draw
    from real and pseudo pairs alike. ``lr`` may be 0, which leaves the
    parameters untouched.
    """

    steps: int = 500
    lr: float = 1e-4
    batch_size: int = 1
    seed: int = 0
    patch: PatchSpec = field(default_factory=PatchSpec)
    checkpoint_interval: int = 0
    validation_interval: int = 0
    log_interval: int = 50
    variant: str = "full"
    real_only_steps: int = 0
    use_pseudo: bool = False
    flip: bool = True
    pseudo_max_thickness_mm: float = 3.0
    pseudo_min_slices: int = 130

    def validate(self):
        if self.steps < 1:
            raise ValidationError(f"train.steps must be >= 1, got {self.steps}")
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ValidationError(f"train.lr must be a finite value >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValidationError(f"train.batch_size must be >= 1, got {self.batch_size}")
        for name in ("checkpoint_interval", "validation_interval", "log_interval", "real_only_steps"):
            if getattr(self, name) < 0:
                raise ValidationError(f"train.{name} must be >= 0")
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}")
        return self


@dataclass
class TrainingData:
    """Normalized (low-res, high-res) volume pairs"""

    real: List[Tuple[Volume, Volume]]
    pseudo: List[Tuple[Volume, Volume]] = field(default_factory=list)


@dataclass
class TrainResult:
    loss_trace: List[float]
    validation: List[Tuple[int, float]] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)


def _normalized(v: Volume):
    return normalize(v) if v.unit == "raw_hu" else v


def build_training_data(pairs: Sequence[Tuple[Volume, Volume]], config: TrainConfig, r):
    """
    Normalize the (thick, thin) pairs and, when enabled, derive pseudo pairs

    A pseudo pair takes a thicker copy P of a thin volume as its target and
    the r-slice slab mean of P as its input.
    """
    real = [(_normalized(lr), _normalized(hr)) for lr, hr in pairs]
    if not real:
        raise ValidationError("training needs at least one real pair")
    for lr, hr in real:
        if hr.depth < r * config.patch.depth or lr.depth < config.patch.depth:
            raise ShapeError(f"pair {lr.name!r}/{hr.name!r} is too shallow for a {config.patch.depth}-slice patch")
    pseudo = []
    if config.use_pseudo:
        for _, hr in real:
            for target in make_pseudo_lr(hr, config.pseudo_max_thickness_mm, config.pseudo_min_slices):
                if target.depth // r < config.patch.depth:
                    logger.debug("Pseudo volume %s too shallow for a patch, skipped", target.name)
                    continue
                pseudo.append((thicken(target, r, name=f"{target.name}-lr"), target))
        logger.info("Built %d pseudo pair(s) from %d real pair(s)", len(pseudo), len(real))
    return TrainingData(real, pseudo)


def _validate_psnr(model, data: TrainingData, config: TrainConfig):
    lr, hr = data.real[0]
    spec = InferenceSpec(
        window_depth=config.patch.depth,
        overlap=1 if config.patch.depth > 1 else 0,
        upsample=model.config.upsample,
    )
    sr = infer(model, lr, spec)
    return as_db(psnr(sr.voxels, hr.voxels[: sr.depth]))


def _sample_batch(data: TrainingData, config: TrainConfig, step, rng, r):
    pool = list(data.real)
    labels = ["real"] * len(pool)
    if data.pseudo and step >= config.real_only_steps and config.use_pseudo:
        pool += data.pseudo
        labels += ["pseudo"] * len(data.pseudo)
    batch = []
    for _ in range(config.batch_size):
        i = int(rng.integers(len(pool)))
        lr, hr = pool[i]
        force_flip = None if config.flip else False
        batch.append(sample_patch_pair(lr, hr, config.patch, rng, r=r, force_flip=force_flip, augmentations=(labels[i],)))
    return batch


def train(
    model: TVSRNv2,
    data: TrainingData,
    config: TrainConfig,
    checkpoint_path=None,
    resume: Optional[TrainState] = None,
    progress=False,
):
    """
    Optimize ``model.params`` in place with L1 loss and Adam

    Each step samples a batch of patch pairs, runs forward and backward, and
    applies one Adam update. Fixed seed and data give identical loss traces;
    resuming from a checkpoint written by this loop continues the exact same
    trajectory.

    Raises:
        TrainingDivergedError: The loss (or an activation, with finite checks
            on) became non-finite; carries the step and patch provenance
    """
    config.validate()
    r = model.config.upsample
    params = model.params
    if resume is not None:
        rng = np.random.default_rng()
        rng.bit_generator.state = resume.rng_state
        adam = resume.adam
        start = resume.step
        result = TrainResult(loss_trace=list(resume.loss_trace))
        logger.info("Resuming at step %d of %d", start, config.steps)
    else:
        rng = np.random.default_rng(config.seed)
        adam = AdamState(lr=config.lr)
        start = 0
        result = TrainResult(loss_trace=[])
    logger.info("Training %s variant with %s parameters", model.config.variant, f"{model.parameter_count():,}")

    named = dict(params.items())
    bar = tqdm(range(start, config.steps), desc="train", unit="step", disable=not progress, initial=start, total=config.steps)
    for step in bar:
        batch = _sample_batch(data, config, step, rng, r)
        x, y = stack_pairs(batch)
        provenance = "; ".join(str(p.provenance) for p in batch)
        params.zero_grad()
        try:
            loss = l1_loss(model.forward(Tensor(x)), y)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(step, provenance, value)
            loss.backward()
        except NonFiniteError as e:
            raise TrainingDivergedError(step, provenance, float("nan")) from e
        adam_step(named, params.grads(), adam)
        result.loss_trace.append(value)
        done = step + 1

        if config.log_interval and done % config.log_interval == 0:
            logger.info("step %d/%d loss %.6f", done, config.steps, value)
        bar.set_postfix(loss=f"{value:.4f}")
        if config.validation_interval and done % config.validation_interval == 0:
            score = _validate_psnr(model, data, config)
            result.validation.append((done, score))
            logger.info("step %d validation PSNR %.3f dB", done, score)
        if checkpoint_path and config.checkpoint_interval and done % config.checkpoint_interval == 0:
            step_path = f"{checkpoint_path}.step{done}"
            state = TrainState(done, adam, rng.bit_generator.state, result.loss_trace)
            save_checkpoint(params, model.config, step_path, train_state=state)
            result.checkpoints.append(step_path)
            logger.info("step %d checkpoint written to %s", done, step_path)
    bar.close()

    if checkpoint_path:
        state = TrainState(config.steps, adam, rng.bit_generator.state, result.loss_trace)
        save_checkpoint(params, model.config, checkpoint_path, train_state=state)
        result.checkpoints.append(str(checkpoint_path))
        logger.info("Final checkpoint written to %s", checkpoint_path)
    return result


def write_loss_trace(trace, path):
    """Write ``step,loss`` lines"""
    with atomic_write(path, "w") as f:
        f.write("step,loss\n")
        for step, value in enumerate(trace):
            f.write(f"{step},{value!r}\n")


def read_loss_trace(path):
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    return [float(line.split(",")[1]) for line in lines[1:] if line]


def run_ablation(
    data: TrainingData,
    eval_pairs: Sequence[Tuple[Volume, Volume]],
    model_config: ModelConfig,
    train_config: TrainConfig,
    variants=VARIANTS,
    model_seed=0,
    progress=False,
):
    """
    Train every variant with the same budget and data, then score each

    Returns:
        list[EvalReport]: One report per variant, labelled by variant name
    """
    reports = []
    for variant in variants:
        config = replace(model_config, variant=variant).validate()
        model = TVSRNv2(config, seed=model_seed)
        logger.info("Ablation: training %s", variant)
        train(model, data, replace(train_config, variant=variant), progress=progress)
        spec = InferenceSpec(
            window_depth=train_config.patch.depth,
            overlap=1 if train_config.patch.depth > 1 else 0,
            upsample=config.upsample,
        )
        scored = []
        for lr, hr in eval_pairs:
            sr = infer(model, _normalized(lr), spec)
            target = _normalized(hr)
            scored.append((sr, target.replace(voxels=target.voxels[: sr.depth])))
        reports.append(evaluate_set(scored, label=variant))
    return reports
