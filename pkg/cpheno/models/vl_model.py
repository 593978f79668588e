import copy
import json
import logging
import math
import os
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from cpheno.corpus.images import load_image, preprocess_image
from cpheno.errors import InputError, ParameterError
from cpheno.models.text_encoder import TextEncoderHandle, TinyTextEncoder
from cpheno.models.tokenizer import HashingTokenizer
from cpheno.models.vision_encoder import TinyVisionEncoder

logger = logging.getLogger(__name__)


class VLModel(nn.Module):
    """
    Dual encoder projecting images and captions onto a shared unit sphere

    A linear kd_projection maps text embeddings into the teacher space when
    the teacher width differs. With learnable temperatures, tau2 and tau3 are
    stored as log-parameters.
    """

    def __init__(
        self,
        vision: TinyVisionEncoder,
        text: TinyTextEncoder,
        tokenizer: HashingTokenizer,
        teacher_dim: Optional[int] = None,
        learnable_temperature: bool = False,
        tau2: float = 0.07,
        tau3: float = 0.07,
        image_size: int = 224,
        image_mean: Sequence[float] = (0.5, 0.5, 0.5),
        image_std: Sequence[float] = (0.5, 0.5, 0.5),
    ):
        super(VLModel, self).__init__()
        if vision.dim != text.dim:
            raise ParameterError(f"vision dim {vision.dim} != text dim {text.dim}")
        self.vision = vision
        self.text = text
        self.tokenizer = tokenizer
        self.teacher_dim = teacher_dim
        self.kd_projection = None
        if teacher_dim is not None and teacher_dim != text.dim:
            self.kd_projection = nn.Linear(text.dim, teacher_dim, bias=False)

        self.learnable_temperature = learnable_temperature
        self.tau2, self.tau3 = tau2, tau3
        if learnable_temperature:
            self.log_tau2 = nn.Parameter(torch.tensor(math.log(tau2)))
            self.log_tau3 = nn.Parameter(torch.tensor(math.log(tau3)))

        self.image_size = image_size
        self.image_mean = list(image_mean)
        self.image_std = list(image_std)

    @property
    def dim(self) -> int:
        return self.text.dim

    def temperatures(self) -> Tuple[Union[float, torch.Tensor], Union[float, torch.Tensor]]:
        if self.learnable_temperature:
            return self.log_tau2.exp(), self.log_tau3.exp()
        return self.tau2, self.tau3

    def preprocess(self, image: Image.Image) -> torch.Tensor:
        return preprocess_image(image, self.image_size, self.image_mean, self.image_std)

    def forward_images(self, pixels: torch.Tensor) -> torch.Tensor:
        return self.vision(pixels)

    def forward_texts(self, texts: Sequence[str]) -> torch.Tensor:
        ids, mask = self.tokenizer(texts)
        return self.text(ids, mask)

    def config_dict(self) -> dict:
        return {
            "vision": self.vision.arch,
            "text": self.text.arch,
            "tokenizer": self.tokenizer.to_dict(),
            "teacher_dim": self.teacher_dim,
            "learnable_temperature": self.learnable_temperature,
            "tau2": self.tau2,
            "tau3": self.tau3,
            "image_size": self.image_size,
            "image_mean": self.image_mean,
            "image_std": self.image_std,
        }

    def save(self, directory: str, metadata: Optional[dict] = None) -> None:
        os.makedirs(directory, exist_ok=True)
        torch.save(self.state_dict(), os.path.join(directory, "model.pt"))
        payload = {"model": self.config_dict()}
        payload.update(metadata or {})
        with open(os.path.join(directory, "model.json"), "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory: str) -> "VLModel":
        meta_path = os.path.join(directory, "model.json")
        weights_path = os.path.join(directory, "model.pt")
        if not os.path.exists(meta_path) or not os.path.exists(weights_path):
            raise InputError(f"not a VLP checkpoint: {directory}")
        with open(meta_path, "r", encoding="utf-8") as f:
            cfg = json.load(f)["model"]
        model = cls(
            TinyVisionEncoder(**cfg["vision"]),
            TinyTextEncoder(**cfg["text"]),
            HashingTokenizer(**cfg["tokenizer"]),
            teacher_dim=cfg["teacher_dim"],
            learnable_temperature=cfg["learnable_temperature"],
            tau2=cfg["tau2"],
            tau3=cfg["tau3"],
            image_size=cfg["image_size"],
            image_mean=cfg["image_mean"],
            image_std=cfg["image_std"],
        )
        model.load_state_dict(torch.load(weights_path, map_location="cpu"))
        model.eval()
        return model


def build_vl_model(
    vlp_config,
    knowledge_config,
    text_init: Optional[TextEncoderHandle] = None,
    teacher_dim: Optional[int] = None,
    seed: Optional[int] = None,
) -> VLModel:
    """
    Assemble a VLModel for Stage 2

    Parameters:
        vlp_config (VLPTrainConfig): init, embed_dim, vision_width, temperatures, preprocessing
        knowledge_config (KnowledgeTrainConfig): Text encoder architecture for scratch init
        text_init (TextEncoderHandle): Stage-1 encoder copied into the student when init=pretrained
        teacher_dim (int): Width of the teacher embeddings, None without KD
        seed (int): Seed of the random initialisation
    """
    if seed is not None:
        torch.manual_seed(seed)
    if vlp_config.init == "pretrained" and text_init is not None:
        text = copy.deepcopy(text_init.module)
        # the source may already be frozen as the teacher
        text.requires_grad_(True)
        tokenizer = text_init.tokenizer
    else:
        if vlp_config.init == "pretrained":
            logger.warning("No Stage-1 encoder given, initialising the text encoder from scratch")
        text = TinyTextEncoder(
            vocab_size=knowledge_config.vocab_size,
            embed_dim=knowledge_config.embed_dim,
            hidden_dim=knowledge_config.hidden_dim,
            num_layers=knowledge_config.num_layers,
            num_heads=knowledge_config.num_heads,
            max_tokens=vlp_config.max_tokens,
        )
        tokenizer = HashingTokenizer(knowledge_config.vocab_size, vlp_config.max_tokens)
    text.train()

    embed_dim = vlp_config.embed_dim or text.dim
    if embed_dim != text.dim:
        text.reset_projection(embed_dim)
    vision = TinyVisionEncoder(embed_dim, vlp_config.vision_width)
    return VLModel(
        vision,
        text,
        tokenizer,
        teacher_dim=teacher_dim,
        learnable_temperature=vlp_config.learnable_temperature,
        tau2=vlp_config.tau2,
        tau3=vlp_config.tau3,
        image_size=vlp_config.image_size,
        image_mean=vlp_config.image_mean,
        image_std=vlp_config.image_std,
    )


def encode_image(
    model: VLModel,
    images: Sequence[Union[str, Image.Image]],
    root: Optional[str] = None,
    batch_size: int = 64,
) -> Tuple[np.ndarray, Dict[int, str]]:
    """
    Unit-norm image embeddings, input order

    Parameters:
        images: PIL images or image references
        root (str): Corpus root of relative references

    Returns:
        tuple: (n x d matrix, {index: error}); rows of unreadable images are NaN
    """
    vectors = np.full((len(images), model.dim), np.nan, dtype=np.float32)
    errors: Dict[int, str] = {}
    tensors: List[Tuple[int, torch.Tensor]] = []
    for index, item in enumerate(images):
        try:
            image = load_image(item, root) if isinstance(item, str) else item
            tensors.append((index, model.preprocess(image)))
        except InputError as e:
            errors[index] = str(e)
    if errors:
        logger.warning(f"{len(errors)} of {len(images)} images could not be read")

    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            for start in range(0, len(tensors), batch_size):
                chunk = tensors[start : start + batch_size]
                out = model.forward_images(torch.stack([t for _, t in chunk]))
                vectors[[i for i, _ in chunk]] = out.cpu().numpy()
    finally:
        model.train(was_training)
    return vectors, errors


def encode_text(model: VLModel, captions: Sequence[str], batch_size: int = 256) -> np.ndarray:
    """Unit-norm caption embeddings, input order"""
    if len(captions) == 0:
        return np.zeros((0, model.dim), dtype=np.float32)
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            chunks = [
                model.forward_texts(list(captions[i : i + batch_size]))
                for i in range(0, len(captions), batch_size)
            ]
    finally:
        model.train(was_training)
    return torch.cat(chunks).cpu().numpy()
