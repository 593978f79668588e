from cpheno.trainers.knowledge_trainer import KnowledgeBatch, build_knowledge_batch, train_knowledge_encoder
from cpheno.trainers.loss_history import LossHistory
from cpheno.trainers.schedule import effective_warmup, lr_schedule
from cpheno.trainers.vlp_trainer import VLPTrainer, train_vlp

__all__ = [
    "KnowledgeBatch",
    "LossHistory",
    "VLPTrainer",
    "build_knowledge_batch",
    "effective_warmup",
    "lr_schedule",
    "train_knowledge_encoder",
    "train_vlp",
]
