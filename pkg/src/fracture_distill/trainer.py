"""
Two-stage training: supervised pretraining, then teacher-student distillation.

Stage 1 trains a detector on region-labeled (R) and negative (N) images
with pixel-wise BCE. Stage 2 starts teacher and student from the best
pretrained weights. For every image-level positive (P) in a batch the
teacher predicts a pseudo-GT on the same augmented image the student
sees; the pseudo-GT is sharpened and the student is pulled toward it with
a KL term, while R and N keep their BCE term. After each optimizer step
the teacher follows the student by exponential moving average.

After every epoch the evaluated model is scored on the validation split;
the checkpoint with the highest validation AUROC is kept, ties broken by
validation FROC score. The teacher is accumulated in a float64 shadow
vector whatever the network dtype.

Every random stream is derived from (seed, stage, epoch), so a run that
is stopped after an epoch and resumed from its state snapshot continues
exactly as an uninterrupted one.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from fracture_distill.data.augment import AugmentConfig, augment
from fracture_distill.data.synthetic import LabelKind, Sample, SyntheticDataset, gt_mask_of
from fracture_distill.errors import ConfigError, ContractError, NumericalError
from fracture_distill.losses import LossBatch, LossValue, total_loss
from fracture_distill.metrics import evaluate
from fracture_distill.model import (
    ArchitectureSpec,
    MiniFPN,
    ModelCheckpoint,
    build_module,
    checkpoint_from_module,
    init_parameters,
)
from fracture_distill.sampling import plan_epoch
from fracture_distill.sharpening import SharpeningConfig, aals_batch

logger = logging.getLogger(__name__)

STAGE_PRETRAIN = "pretrain"
STAGE_DISTILL = "distill"
STAGE_CODES = {STAGE_PRETRAIN: 0, STAGE_DISTILL: 1}

DTYPES = {"float32": torch.float32, "float64": torch.float64}
EVAL_MODELS = ("student", "teacher")

SNAPSHOT_FORMAT = 1


# =============================================================================
# Configuration
# =============================================================================

@dataclass(frozen=True)
class TrainConfig:
    """Optimization, distillation and bookkeeping settings of one run."""

    learning_rate: float = 4e-5
    weight_decay: float = 1e-4
    batch_size: int = 16
    epochs_pretrain: int = 10
    epochs_distill: int = 15
    ema_alpha: float = 0.999
    sharpening: SharpeningConfig = field(default_factory=SharpeningConfig)
    # Shares of R, P and N per batch; None means proportional to pool sizes.
    batch_mix: Optional[Dict[str, float]] = None
    min_region_per_batch: int = 2
    seed: int = 0
    architecture: ArchitectureSpec = field(default_factory=ArchitectureSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval_model: str = "student"
    dtype: str = "float32"
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    # None means ceil(pool size / batch_size).
    steps_per_epoch: Optional[int] = None
    log_every: int = 50

    def __post_init__(self) -> None:
        object.__setattr__(self, "adam_betas", tuple(float(b) for b in self.adam_betas))
        if not 0.0 < self.ema_alpha < 1.0:
            raise ConfigError(f"ema_alpha must lie in (0, 1), got {self.ema_alpha}")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate must be > 0 and weight_decay >= 0")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs_pretrain < 1 or self.epochs_distill < 0:
            raise ConfigError("epochs_pretrain must be >= 1 and epochs_distill >= 0")
        if not 0 <= self.min_region_per_batch <= self.batch_size:
            raise ConfigError("min_region_per_batch must lie in [0, batch_size]")
        if self.batch_mix is not None:
            total = sum(float(v) for v in self.batch_mix.values())
            if abs(total - 1.0) > 1e-6:
                raise ConfigError(f"batch_mix fractions must sum to 1, got {total}")
        if self.eval_model not in EVAL_MODELS:
            raise ConfigError(f"eval_model must be one of {EVAL_MODELS}, got '{self.eval_model}'")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {tuple(DTYPES)}, got '{self.dtype}'")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1")
        if len(self.adam_betas) != 2 or not all(0.0 <= b < 1.0 for b in self.adam_betas):
            raise ConfigError(f"invalid adam_betas {self.adam_betas}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]


# =============================================================================
# State
# =============================================================================

def make_optimizer(module: MiniFPN, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.AdamW(
        module.parameters(),
        lr=config.learning_rate,
        betas=config.adam_betas,
        eps=config.adam_eps,
        weight_decay=config.weight_decay,
    )


def _module_from_vector(vector: torch.Tensor, architecture_id: str, dtype: torch.dtype) -> MiniFPN:
    return build_module(ModelCheckpoint(vector.detach().cpu().numpy(), architecture_id), dtype)


def _freeze(module: MiniFPN) -> MiniFPN:
    for parameter in module.parameters():
        parameter.requires_grad_(False)
    return module


@dataclass
class TrainState:
    """Live student/teacher networks, optimizer and model-selection bookkeeping."""

    student: MiniFPN
    optimizer: torch.optim.Optimizer
    stage: str = STAGE_PRETRAIN
    teacher: Optional[MiniFPN] = None
    step_index: int = 0
    next_epoch: int = 0
    best_validation_auroc: float = -math.inf
    best_validation_froc: float = -math.inf
    best_checkpoint: Optional[ModelCheckpoint] = None
    pretrained_checkpoint: Optional[ModelCheckpoint] = None
    history: List[Dict[str, Any]] = field(default_factory=list)
    # float64 EMA accumulator behind the teacher parameters.
    teacher_shadow: Optional[torch.Tensor] = None

    def __post_init__(self) -> None:
        if self.teacher is not None and self.teacher.arch != self.student.arch:
            raise ContractError("teacher and student must share one architecture")

    @property
    def student_checkpoint(self) -> ModelCheckpoint:
        return checkpoint_from_module(self.student, self.step_index)

    @property
    def teacher_checkpoint(self) -> Optional[ModelCheckpoint]:
        if self.teacher is None:
            return None
        if self.teacher_shadow is not None:
            return ModelCheckpoint(
                self.teacher_shadow.numpy().copy(),
                self.teacher.arch.architecture_id,
                self.step_index,
            )
        return checkpoint_from_module(self.teacher, self.step_index)

    def snapshot(self) -> Dict[str, Any]:
        """Plain dict of tensors and primitives, loadable with weights_only."""

        def vector(module: Optional[MiniFPN]) -> Optional[torch.Tensor]:
            if module is None:
                return None
            return parameters_to_vector(module.parameters()).detach().clone()

        def params(ckpt: Optional[ModelCheckpoint]) -> Optional[torch.Tensor]:
            return None if ckpt is None else torch.from_numpy(np.array(ckpt.parameters))

        return {
            "format": SNAPSHOT_FORMAT,
            "architecture_id": self.student.arch.architecture_id,
            "stage": self.stage,
            "step_index": self.step_index,
            "next_epoch": self.next_epoch,
            "best_validation_auroc": self.best_validation_auroc,
            "best_validation_froc": self.best_validation_froc,
            "student": vector(self.student),
            "teacher": vector(self.teacher),
            "teacher_shadow": (
                None if self.teacher_shadow is None else self.teacher_shadow.detach().clone()
            ),
            "optimizer": self.optimizer.state_dict(),
            "best_checkpoint": params(self.best_checkpoint),
            "best_step": self.best_checkpoint.step_index if self.best_checkpoint else 0,
            "pretrained_checkpoint": params(self.pretrained_checkpoint),
            "history": [dict(row) for row in self.history],
        }

    @classmethod
    def from_snapshot(cls, payload: Mapping[str, Any], config: TrainConfig) -> "TrainState":
        if payload.get("format") != SNAPSHOT_FORMAT:
            raise ConfigError("unsupported training state format")
        arch_id = payload["architecture_id"]
        if arch_id != config.architecture.architecture_id:
            raise ConfigError(
                f"state was saved for {arch_id}, config asks for "
                f"{config.architecture.architecture_id}"
            )
        dtype = config.torch_dtype
        student = _module_from_vector(payload["student"], arch_id, dtype)
        teacher = None
        if payload["teacher"] is not None:
            teacher = _freeze(_module_from_vector(payload["teacher"], arch_id, dtype))
        optimizer = make_optimizer(student, config)
        optimizer.load_state_dict(payload["optimizer"])

        def restore(key: str, step: int) -> Optional[ModelCheckpoint]:
            tensor = payload[key]
            if tensor is None:
                return None
            return ModelCheckpoint(tensor.numpy().copy(), arch_id, step)

        return cls(
            student=student,
            optimizer=optimizer,
            stage=payload["stage"],
            teacher=teacher,
            step_index=int(payload["step_index"]),
            next_epoch=int(payload["next_epoch"]),
            best_validation_auroc=float(payload["best_validation_auroc"]),
            best_validation_froc=float(payload["best_validation_froc"]),
            best_checkpoint=restore("best_checkpoint", int(payload["best_step"])),
            pretrained_checkpoint=restore("pretrained_checkpoint", 0),
            history=[dict(row) for row in payload["history"]],
            teacher_shadow=payload["teacher_shadow"],
        )


def save_state(state: TrainState, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(state.snapshot(), path)
    return path


def load_state(path: Path, config: TrainConfig) -> TrainState:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"training state not found: {path}")
    return TrainState.from_snapshot(torch.load(path, weights_only=True), config)


# =============================================================================
# Steps
# =============================================================================

def ema_update(teacher: ModelCheckpoint, student: ModelCheckpoint, alpha: float) -> ModelCheckpoint:
    """
    theta' <- alpha * theta' + (1 - alpha) * theta, elementwise.

    Accumulates and returns float64 whatever the input dtype, so long
    chains of updates at alpha close to 1 keep their precision.
    """
    if teacher.architecture_id != student.architecture_id:
        raise ContractError(
            f"EMA needs one architecture, got {teacher.architecture_id} "
            f"and {student.architecture_id}"
        )
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    t = np.asarray(teacher.parameters, dtype=np.float64)
    s = np.asarray(student.parameters, dtype=np.float64)
    updated = t * alpha + s * (1.0 - alpha)
    return ModelCheckpoint(updated, teacher.architecture_id, teacher.step_index + 1)


def _module_dtype(module: MiniFPN) -> torch.dtype:
    return next(module.parameters()).dtype


def _ema_modules(
    teacher: MiniFPN, student: MiniFPN, alpha: float, shadow: Optional[torch.Tensor]
) -> torch.Tensor:
    """In-place teacher EMA through a float64 shadow; returns the new shadow."""
    # Same operation order as ema_update, so both agree bit for bit.
    with torch.no_grad():
        if shadow is None:
            shadow = parameters_to_vector(teacher.parameters()).to(torch.float64)
        s = parameters_to_vector(student.parameters()).to(torch.float64)
        shadow = shadow * alpha + s * (1.0 - alpha)
        vector_to_parameters(shadow.to(_module_dtype(teacher)), teacher.parameters())
    return shadow



def pseudo_ground_truth(
    teacher: MiniFPN, images: torch.Tensor, sharpening: SharpeningConfig
) -> torch.Tensor:
    """Sharpened teacher maps of a (B, 1, H, W) batch; constant, float64."""
    with torch.no_grad():
        raw = teacher(images)[:, 0].to(torch.float64).numpy()
    return torch.from_numpy(aals_batch(raw, sharpening))


def _image_tensor(batch: Sequence[Sample], dtype: torch.dtype) -> torch.Tensor:
    stacked = np.stack([s.image for s in batch])[:, None]
    return torch.from_numpy(np.ascontiguousarray(stacked, dtype=np.float32)).to(dtype)


def train_step(state: TrainState, batch: Sequence[Sample], config: TrainConfig) -> LossValue:
    """One optimizer step of the student on a mixed batch; no EMA."""
    if len(batch) == 0:
        raise ConfigError("cannot take a training step on an empty batch")
    images = _image_tensor(batch, config.torch_dtype)
    kinds = [s.label_kind for s in batch]

    targets = torch.zeros(images.shape[0], *images.shape[-2:], dtype=torch.float64)
    positives = [i for i, kind in enumerate(kinds) if kind is LabelKind.POSITIVE]
    for i, sample in enumerate(batch):
        if sample.label_kind is not LabelKind.POSITIVE:
            targets[i] = torch.from_numpy(gt_mask_of(sample).astype(np.float64))
    if positives:
        if state.teacher is None:
            raise ContractError("image-level positives need a teacher for pseudo-GT")
        targets[positives] = pseudo_ground_truth(
            state.teacher, images[positives], config.sharpening
        )

    predictions = state.student(images)[:, 0]
    loss = total_loss(LossBatch(predictions, targets, kinds))
    if not torch.isfinite(loss.total):
        raise NumericalError(
            "non-finite training loss",
            {"step": state.step_index, **loss.as_dict()},
        )
    state.optimizer.zero_grad()
    loss.total.backward()
    state.optimizer.step()
    state.step_index += 1
    return loss


def pretrain_step(state: TrainState, batch: Sequence[Sample], config: TrainConfig) -> LossValue:
    if any(s.label_kind is LabelKind.POSITIVE for s in batch):
        raise ContractError("pretraining uses region-labeled and negative samples only")
    return train_step(state, batch, config)


def distill_step(
    state: TrainState, batch: Sequence[Sample], config: TrainConfig
) -> Tuple[TrainState, LossValue]:
    """Student step on BCE + KL to sharpened pseudo-GT, then the teacher EMA."""
    if state.teacher is None:
        raise ContractError("distillation state has no teacher")
    loss = train_step(state, batch, config)
    state.teacher_shadow = _ema_modules(
        state.teacher, state.student, config.ema_alpha, state.teacher_shadow
    )
    return state, loss


# =============================================================================
# Trainer
# =============================================================================

def improves_on(candidate: Tuple[float, float], best: Tuple[float, float]) -> bool:
    """
    Strict lexicographic comparison of (val AUROC, val FROC score).

    NaN counts as the worst value, so an undefined FROC never wins a tie.
    """

    def key(pair: Tuple[float, float]) -> Tuple[float, float]:
        return tuple(-math.inf if math.isnan(v) else v for v in pair)  # type: ignore[return-value]

    return key(candidate) > key(best)


StepCallback = Callable[[TrainState, LossValue], None]
EpochCallback = Callable[[TrainState, Dict[str, Any]], None]


@dataclass
class TrainedResult:
    best_checkpoint: ModelCheckpoint
    history: List[Dict[str, Any]]
    best_validation_auroc: float
    best_validation_froc: float
    pretrained_checkpoint: ModelCheckpoint
    state: TrainState = field(repr=False)


class DistillationTrainer:
    """
    Runs pretraining and distillation epochs over a SyntheticDataset.

    Args:
        dataset: Training pools plus a validation split with both classes
        config: Training configuration
        step_callback: Called after every optimizer step
        epoch_callback: Called after every epoch with the new history row
    """

    def __init__(
        self,
        dataset: SyntheticDataset,
        config: TrainConfig,
        step_callback: Optional[StepCallback] = None,
        epoch_callback: Optional[EpochCallback] = None,
    ):
        if not dataset.region:
            raise ConfigError("training needs at least one region-labeled sample")
        labels = {s.is_positive for s in dataset.val}
        if labels != {True, False}:
            raise ConfigError("the validation split needs both positive and negative images")
        self.dataset = dataset
        self.config = config
        self.step_callback = step_callback
        self.epoch_callback = epoch_callback
        self.pools: Dict[LabelKind, List[Sample]] = {
            LabelKind.REGION: dataset.region,
            LabelKind.POSITIVE: dataset.positive,
            LabelKind.NEGATIVE: dataset.negative,
        }

    @property
    def distills(self) -> bool:
        return bool(self.dataset.positive) and self.config.epochs_distill > 0

    @property
    def total_epochs(self) -> int:
        return self.config.epochs_pretrain + (self.config.epochs_distill if self.distills else 0)

    def initial_state(self) -> TrainState:
        init = init_parameters(self.config.architecture, self.config.seed)
        student = build_module(init, self.config.torch_dtype)
        return TrainState(student=student, optimizer=make_optimizer(student, self.config))

    def enter_distillation(self, state: TrainState) -> TrainState:
        """Restart teacher and student from the best pretrained weights."""
        if state.best_checkpoint is None:
            raise ContractError("distillation needs a pretrained checkpoint")
        dtype = self.config.torch_dtype
        student = build_module(state.best_checkpoint, dtype)
        teacher = _freeze(build_module(state.best_checkpoint, dtype))
        logger.info(
            "Starting distillation from pretrained weights (val AUROC %.4f)",
            state.best_validation_auroc,
        )
        return replace(
            state,
            student=student,
            teacher=teacher,
            optimizer=make_optimizer(student, self.config),
            stage=STAGE_DISTILL,
            pretrained_checkpoint=state.best_checkpoint.copy(),
            teacher_shadow=torch.from_numpy(
                np.array(state.best_checkpoint.parameters, dtype=np.float64)
            ),
        )

    def _stage_epoch(self, state: TrainState, epoch: int) -> int:
        if state.stage == STAGE_PRETRAIN:
            return epoch
        return epoch - self.config.epochs_pretrain

    def run_epoch(self, state: TrainState, epoch: int) -> Dict[str, Any]:
        """Train one epoch, validate, update model selection; returns the history row."""
        config = self.config
        stage = state.stage
        stage_epoch = self._stage_epoch(state, epoch)
        code = STAGE_CODES[stage]
        plan_rng = np.random.default_rng([config.seed, code, stage_epoch, 0])
        augment_rng = np.random.default_rng([config.seed, code, stage_epoch, 1])

        sizes = {kind: len(pool) for kind, pool in self.pools.items()}
        if stage == STAGE_PRETRAIN:
            sizes[LabelKind.POSITIVE] = 0
        plan = plan_epoch(
            sizes,
            config.batch_size,
            plan_rng,
            min_region=config.min_region_per_batch,
            batch_mix=config.batch_mix,
            steps=config.steps_per_epoch,
        )

        sums: Dict[str, float] = defaultdict(float)
        for step, slots in enumerate(plan):
            batch = [augment(self.pools[kind][i], augment_rng, config.augment) for kind, i in slots]
            if stage == STAGE_PRETRAIN:
                loss = pretrain_step(state, batch, config)
            else:
                state, loss = distill_step(state, batch, config)
            for key, value in loss.as_dict().items():
                sums[key] += value
            if self.step_callback is not None:
                self.step_callback(state, loss)
            if config.log_every and (step + 1) % config.log_every == 0:
                logger.debug(
                    "%s epoch %d step %d/%d loss=%.5f",
                    stage, stage_epoch + 1, step + 1, len(plan), loss.as_dict()["loss_total"],
                )

        evaluated = state.student
        if stage == STAGE_DISTILL and config.eval_model == "teacher":
            evaluated = state.teacher
        report = evaluate(evaluated, self.dataset.val)
        candidate = (report.auroc, report.froc_score)
        improved = improves_on(candidate, (state.best_validation_auroc, state.best_validation_froc))
        if improved:
            state.best_validation_auroc, state.best_validation_froc = candidate
            state.best_checkpoint = checkpoint_from_module(evaluated, state.step_index)

        row: Dict[str, Any] = {
            "epoch": epoch + 1,
            "stage": stage,
            "stage_epoch": stage_epoch + 1,
            "steps": len(plan),
            **{key: total / len(plan) for key, total in sorted(sums.items())},
            "val_auroc": report.auroc,
            "val_froc": report.froc_score,
            "best_val_auroc": state.best_validation_auroc,
            "best_val_froc": state.best_validation_froc,
            "is_best": bool(improved),
        }
        state.history.append(row)
        state.next_epoch = epoch + 1
        logger.info(
            "%s epoch %d: loss=%.5f (sup %.5f, semi %.5f) val AUROC=%.4f FROC=%.4f%s",
            stage,
            stage_epoch + 1,
            row["loss_total"],
            row["loss_supervised"],
            row["loss_semi"],
            report.auroc,
            report.froc_score,
            " *" if improved else "",
        )
        return row

    def train(self, state: Optional[TrainState] = None) -> TrainedResult:
        """Run (or continue) every remaining epoch."""
        state = state if state is not None else self.initial_state()
        if not self.dataset.positive and self.config.epochs_distill:
            logger.info("No image-level positives; skipping distillation")
        for epoch in range(state.next_epoch, self.total_epochs):
            if epoch == self.config.epochs_pretrain and state.stage == STAGE_PRETRAIN:
                state = self.enter_distillation(state)
            row = self.run_epoch(state, epoch)
            if self.epoch_callback is not None:
                self.epoch_callback(state, row)

        if state.best_checkpoint is None:
            raise ContractError("training finished without a validated checkpoint")
        return TrainedResult(
            best_checkpoint=state.best_checkpoint,
            history=list(state.history),
            best_validation_auroc=state.best_validation_auroc,
            best_validation_froc=state.best_validation_froc,
            pretrained_checkpoint=state.pretrained_checkpoint or state.best_checkpoint,
            state=state,
        )


def pretrain(dataset: SyntheticDataset, config: TrainConfig) -> ModelCheckpoint:
    """Supervised pretraining on R and N; returns the best-validated checkpoint."""
    rn_only = replace(dataset, positive=[])
    return DistillationTrainer(rn_only, replace(config, epochs_distill=0)).train().best_checkpoint


def train(
    dataset: SyntheticDataset,
    config: TrainConfig,
    step_callback: Optional[StepCallback] = None,
    epoch_callback: Optional[EpochCallback] = None,
) -> TrainedResult:
    """Pretraining followed by distillation (skipped when P is empty)."""
    return DistillationTrainer(dataset, config, step_callback, epoch_callback).train()
