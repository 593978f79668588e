"""Stage 2: knowledge-enhanced vision-language pretraining."""

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from cpheno.config import VLPTrainConfig
from cpheno.corpus.images import load_image
from cpheno.corpus.records import ImageCaptionPair
from cpheno.errors import InputError, InvariantViolation, PreconditionError, TrainingDivergedError
from cpheno.losses import vlp_loss_terms
from cpheno.models.teacher import TeacherCache, TeacherHandle
from cpheno.models.vl_model import VLModel
from cpheno.trainers.loss_history import LossHistory
from cpheno.trainers.prefetch import prefetch
from cpheno.trainers.schedule import effective_warmup, lr_schedule

logger = logging.getLogger(__name__)

STAGE = "train-vlp"


@dataclass
class VLPBatch:
    indices: List[int]
    pixels: torch.Tensor
    captions: List[str]
    teacher: Optional[torch.Tensor]

    def to_dict(self, pairs: Sequence[ImageCaptionPair]) -> dict:
        return {
            "pair_ids": [pairs[i].pair_id for i in self.indices],
            "captions": self.captions,
        }


class VLPTrainer:
    def __init__(
        self,
        pairs: Sequence[ImageCaptionPair],
        model: VLModel,
        config: VLPTrainConfig,
        teacher: Optional[TeacherHandle] = None,
        root: Optional[str] = None,
        out_dir: Optional[str] = None,
        seed: Optional[int] = None,
    ):
        """
        Initialize the Stage-2 trainer

        Parameters:
            pairs (list): ImageCaptionPair training records
            model (VLModel): Student model, trained in place
            config (VLPTrainConfig): Stage-2 hyperparameters
            teacher (TeacherHandle): Frozen Stage-1 encoder, required when config.kd_enabled
            root (str): Corpus root of relative image references
            out_dir (str): Checkpoint directory, nothing is written when None
            seed (int): Overrides config.seed
        """
        self.pairs = list(pairs)
        self.model = model
        self.config = config
        self.teacher = teacher
        self.root = root
        self.out_dir = out_dir
        self.seed = seed if seed is not None else (config.seed or 0)
        self.history = LossHistory()
        self.usable: List[int] = []
        self.skipped: Dict[str, str] = {}
        self.cache = None
        self.optimizer = None

    @property
    def use_kd(self) -> bool:
        return self.config.kd_enabled

    def setup_training(self):
        """Check preconditions, drop unreadable images and build the optimizer"""
        if self.use_kd:
            if self.teacher is None:
                raise PreconditionError("kd_enabled requires a teacher")
            if self.teacher.dim != self.model.dim and self.model.kd_projection is None:
                raise PreconditionError(
                    f"teacher dim {self.teacher.dim} differs from model dim {self.model.dim} "
                    "and the model has no kd_projection"
                )
            cache_path = os.path.join(self.out_dir, "teacher_cache.jsonl") if self.out_dir else None
            self.cache = TeacherCache(self.teacher, cache_path)

        self.usable, self.skipped = [], {}
        for index, pair in enumerate(self.pairs):
            try:
                load_image(pair.image_ref, self.root)
            except InputError as e:
                if self.config.fail_fast_images:
                    raise
                self.skipped[pair.pair_id] = str(e)
                continue
            self.usable.append(index)
        if self.skipped:
            logger.warning(f"Skipping {len(self.skipped)} pairs with unreadable images")

        torch.manual_seed(self.seed)
        self.optimizer = torch.optim.AdamW(
            [p for p in self.model.parameters() if p.requires_grad],
            lr=self.config.lr,
            weight_decay=self.config.weight_decay,
        )

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.usable) / self.config.batch) if self.usable else 0

    def _batches(self) -> Iterator[Tuple[int, VLPBatch]]:
        rng = np.random.default_rng(self.seed)
        order = np.asarray(self.usable)
        for epoch in range(self.config.epochs):
            shuffled = order[rng.permutation(len(order))]
            for start in range(0, len(shuffled), self.config.batch):
                indices = [int(i) for i in shuffled[start : start + self.config.batch]]
                pixels = torch.stack(
                    [self.model.preprocess(load_image(self.pairs[i].image_ref, self.root)) for i in indices]
                )
                captions = [self.pairs[i].caption for i in indices]
                teacher = self.cache.lookup(captions) if self.use_kd else None
                yield epoch, VLPBatch(indices, pixels, captions, teacher)

    def _dump_batch(self, step: int, batch: VLPBatch) -> Optional[str]:
        if not self.out_dir:
            return None
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, f"diverged_batch_step{step}.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump(dict(step=step, **batch.to_dict(self.pairs)), f, indent=2)
        return path

    def _save_checkpoint(self, directory: str, epoch: int):
        self.model.save(
            directory,
            metadata={
                "config": dataclasses.asdict(self.config),
                "seed": self.seed,
                "epoch": epoch,
                "steps": len(self.history),
                "final_loss": self.history.final_loss,
                "skipped_pairs": len(self.skipped),
            },
        )
        torch.save(self.optimizer.state_dict(), os.path.join(directory, "optimizer.pt"))

    def run_training(self) -> Tuple[VLModel, LossHistory]:
        """Run all epochs; returns the trained model and its loss history"""
        if self.optimizer is None:
            self.setup_training()

        config = self.config
        total_steps = config.epochs * self.steps_per_epoch
        warmup = effective_warmup(config.warmup_steps, total_steps)
        teacher_checksum = self.teacher.checksum() if self.teacher is not None else None
        logger.info(
            f"Stage 2: {len(self.usable)} pairs, B={config.batch}, {total_steps} steps, "
            f"kd={'on' if self.use_kd else 'off'}, alpha={config.alpha}"
        )

        self.model.train()
        progress = tqdm(total=total_steps, desc="train-vlp", unit="step", disable=None)
        last_epoch = -1
        for step, (epoch, batch) in enumerate(prefetch(self._batches(), config.prefetch)):
            if epoch != last_epoch and last_epoch >= 0:
                self._end_epoch(last_epoch)
            last_epoch = epoch

            lr = lr_schedule(step, warmup, total_steps, config.lr)
            for group in self.optimizer.param_groups:
                group["lr"] = lr

            V = self.model.forward_images(batch.pixels)
            T = self.model.forward_texts(batch.captions)
            tau2, tau3 = self.model.temperatures()
            loss, l_m, l_kd = vlp_loss_terms(
                V,
                T,
                batch.teacher,
                tau2,
                tau3,
                config.alpha,
                self.model.kd_projection,
            )
            if not torch.isfinite(loss):
                raise TrainingDivergedError(STAGE, step, self._dump_batch(step, batch))

            self.optimizer.zero_grad()
            loss.backward()
            self.optimizer.step()
            self.history.record(
                step,
                epoch,
                lr,
                loss=loss.item(),
                loss_contrastive=l_m.item(),
                loss_kd=l_kd.item() if l_kd is not None else None,
            )
            progress.update(1)
            progress.set_postfix(loss=f"{loss.item():.4f}")
        progress.close()
        if last_epoch >= 0:
            self._end_epoch(last_epoch)
        self.model.eval()

        if teacher_checksum is not None and self.teacher.checksum() != teacher_checksum:
            raise InvariantViolation("teacher parameters changed during Stage 2")
        if self.out_dir:
            self._save_checkpoint(self.out_dir, max(last_epoch, 0))
            self.history.save_csv(os.path.join(self.out_dir, "loss_history.csv"))
            self.history.plot(os.path.join(self.out_dir, "loss_history.png"), title="Stage 2 VLP loss")
            logger.info(f"Saved VLP model to {self.out_dir}")
        return self.model, self.history

    def _end_epoch(self, epoch: int):
        rows = [r for r in self.history.rets if r["epoch"] == epoch]
        if rows:
            logger.info(f"epoch {epoch}: mean loss {np.mean([r['loss'] for r in rows]):.4f}")
        if self.out_dir:
            self._save_checkpoint(os.path.join(self.out_dir, f"epoch_{epoch}"), epoch)


def train_vlp(
    config: VLPTrainConfig,
    pairs: Sequence[ImageCaptionPair],
    model: VLModel,
    teacher: Optional[TeacherHandle] = None,
    out_dir: Optional[str] = None,
    root: Optional[str] = None,
    seed: Optional[int] = None,
) -> Tuple[VLModel, LossHistory]:
    """Train `model` on `pairs`; see VLPTrainer"""
    trainer = VLPTrainer(pairs, model, config, teacher, root, out_dir, seed)
    trainer.setup_training()
    return trainer.run_training()


__all__ = ["VLPBatch", "VLPTrainer", "train_vlp"]
