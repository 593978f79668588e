"""Stage 1: phenotype knowledge encoder.

Each batch holds B distinct phenotypes with two sampled attribute texts
each; the encoder learns to place attributes of the same phenotype
together with an in-batch InfoNCE loss.
"""

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from cpheno.config import KG_COMPONENT_EXCLUSIONS, KnowledgeTrainConfig
from cpheno.errors import ParameterError, TrainingDivergedError
from cpheno.losses import knowledge_infonce_loss
from cpheno.models.text_encoder import TextEncoderHandle
from cpheno.ontology import AttributeText, PhenotypeGraph, eligible_terms, graph_fingerprint, sample_attribute_pair
from cpheno.trainers.loss_history import LossHistory
from cpheno.trainers.prefetch import prefetch

logger = logging.getLogger(__name__)

STAGE = "train-knowledge"


@dataclass
class KnowledgeBatch:
    texts: List[str]
    pairing: List[int]
    term_ids: List[str]
    attributes: List[AttributeText]

    def __iter__(self):
        # unpacks as (texts, pairing)
        return iter((self.texts, self.pairing))

    def to_dict(self) -> dict:
        return {
            "texts": self.texts,
            "pairing": self.pairing,
            "term_ids": self.term_ids,
            "kinds": [a.kind for a in self.attributes],
        }


def build_knowledge_batch(
    graph: PhenotypeGraph,
    B: int,
    rng: np.random.Generator,
    exclude_kinds: Sequence[str] = (),
    terminal_only: bool = False,
    terms: Optional[Sequence[str]] = None,
) -> KnowledgeBatch:
    """
    Sample B distinct phenotypes and two attribute texts for each

    Texts are interleaved (a_1, a_1+, a_2, a_2+, ...) and pairing maps
    every row to its partner: [1, 0, 3, 2, ...].
    """
    if B < 2:
        raise ParameterError(f"batch needs at least 2 phenotypes, got B={B}")
    if terms is None:
        terms = eligible_terms(graph, terminal_only)
    if len(terms) < B:
        raise ParameterError(f"only {len(terms)} eligible phenotypes for B={B}")

    chosen = rng.choice(len(terms), size=B, replace=False)
    texts, pairing, term_ids, attributes = [], [], [], []
    for slot, index in enumerate(chosen):
        term_id = terms[int(index)]
        first, second = sample_attribute_pair(graph, term_id, rng, exclude_kinds)
        texts.extend([first.text, second.text])
        attributes.extend([first, second])
        term_ids.extend([term_id, term_id])
        pairing.extend([2 * slot + 1, 2 * slot])
    return KnowledgeBatch(texts, pairing, term_ids, attributes)


def _dump_batch(out_dir: Optional[str], step: int, batch: KnowledgeBatch) -> Optional[str]:
    if not out_dir:
        return None
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"diverged_batch_step{step}.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(dict(step=step, **batch.to_dict()), f, indent=2)
    return path


def train_knowledge_encoder(
    config: KnowledgeTrainConfig,
    graph: PhenotypeGraph,
    encoder: TextEncoderHandle,
    out_dir: Optional[str] = None,
    seed: Optional[int] = None,
    terminal_only: bool = False,
    on_batch: Optional[Callable[[KnowledgeBatch], None]] = None,
) -> Tuple[TextEncoderHandle, LossHistory]:
    """
    Train the knowledge encoder

    Runs epochs x ceil(#eligible terms / B) AdamW steps at a constant
    learning rate.

    Parameters:
        config (KnowledgeTrainConfig): Stage-1 hyperparameters
        graph (PhenotypeGraph): Source of attribute texts
        encoder (TextEncoderHandle): Encoder trained in place
        out_dir (str): Checkpoint directory, nothing is written when None
        seed (int): Overrides config.seed
        terminal_only (bool): Sample terminal phenotypes only
        on_batch (callable): Called with every batch before its step

    Returns:
        tuple: (encoder, LossHistory)
    """
    seed = seed if seed is not None else (config.seed or 0)
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)

    exclude_kinds = KG_COMPONENT_EXCLUSIONS[config.kg_components]
    terms = eligible_terms(graph, terminal_only)
    steps_per_epoch = math.ceil(len(terms) / config.batch_phenotypes) if terms else 0
    total_steps = config.epochs * steps_per_epoch
    logger.info(
        f"Stage 1: {len(terms)} phenotypes, B={config.batch_phenotypes}, "
        f"{total_steps} steps, kg_components={config.kg_components}"
    )

    def batches() -> Iterator[Tuple[int, KnowledgeBatch]]:
        for epoch in range(config.epochs):
            for _ in range(steps_per_epoch):
                yield epoch, build_knowledge_batch(
                    graph, config.batch_phenotypes, rng, exclude_kinds, terms=terms
                )

    optimizer = torch.optim.AdamW(
        encoder.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    history = LossHistory()
    encoder.module.train()
    progress = tqdm(total=total_steps, desc="train-knowledge", unit="step", disable=None)
    for step, (epoch, batch) in enumerate(prefetch(batches(), config.prefetch)):
        if on_batch is not None:
            on_batch(batch)
        Z = encoder.forward_texts(batch.texts)
        loss = knowledge_infonce_loss(Z, batch.pairing, config.temperature)
        if not torch.isfinite(loss):
            path = _dump_batch(out_dir, step, batch)
            raise TrainingDivergedError(STAGE, step, path)

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.record(step, epoch, config.learning_rate, loss=loss.item())
        progress.update(1)
        progress.set_postfix(loss=f"{loss.item():.4f}")
    progress.close()
    encoder.module.eval()

    if out_dir:
        encoder.save(
            out_dir,
            metadata={
                "config": dataclasses.asdict(config),
                "seed": seed,
                "steps": len(history),
                "final_loss": history.final_loss,
                "graph_hash": graph_fingerprint(graph),
            },
        )
        history.save_csv(os.path.join(out_dir, "loss_history.csv"))
        history.plot(os.path.join(out_dir, "loss_history.png"), title="Stage 1 knowledge loss")
        logger.info(f"Saved knowledge encoder to {out_dir}")
    return encoder, history


__all__ = [
    "KnowledgeBatch",
    "build_knowledge_batch",
    "train_knowledge_encoder",
]
