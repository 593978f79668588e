# Configuration File

import copy
import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import yaml

from cpheno.errors import ConfigError


@dataclass
class OntologyConfig:
    # Ontology input (OBO subset)
    obo_path: Optional[str] = None
    # Train Stage 1 on terminal phenotypes only
    terminal_only: bool = False


@dataclass
class CurationConfig:
    # Corpus Configuration
    corpus_path: Optional[str] = None
    corpus_root: Optional[str] = None  # Base directory for relative image paths
    keeplist_path: Optional[str] = None
    enabled: bool = True  # False keeps raw figure-caption pairs (curation ablation)

    # Cluster filter
    k1: int = 20
    k2: int = 20
    embed_dim: int = 64
    refilter_subfigures: bool = True

    # Subfigure splitting and caption refinement
    split_subfigures: bool = True
    detector_threshold: float = 0.5
    caption_max_tokens: int = 256
    strict_keywords: bool = False

    # External model clients
    mock_llm: bool = False
    llm_url: Optional[str] = None
    mllm_url: Optional[str] = None
    api_key: Optional[str] = None
    timeout: float = 60.0
    retries: int = 2
    max_in_flight: int = 4
    workers: int = 1

    # Benchmark split
    holdout_fraction: float = 0.2
    holdout_ids: List[str] = field(default_factory=list)
    seed: Optional[int] = None


@dataclass
class KnowledgeTrainConfig:
    batch_phenotypes: int = 256
    temperature: float = 0.07
    learning_rate: float = 1e-5
    weight_decay: float = 0.01
    epochs: int = 10
    seed: Optional[int] = None
    max_tokens: int = 256
    prefetch: int = 2

    # Text encoder architecture
    vocab_size: int = 8192  # hashing tokenizer buckets
    embed_dim: int = 256
    hidden_dim: int = 128
    num_layers: int = 2
    num_heads: int = 4

    # Ablation: full | no-def | no-syn | no-rel
    kg_components: str = "full"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("knowledge.temperature must be positive")
        if self.batch_phenotypes < 2:
            raise ConfigError("knowledge.batch_phenotypes must be at least 2")
        if self.kg_components not in KG_COMPONENT_EXCLUSIONS:
            raise ConfigError(f"unknown kg_components: {self.kg_components}")


@dataclass
class VLPTrainConfig:
    batch: int = 256
    alpha: float = 0.3
    tau2: float = 0.07
    tau3: float = 0.07
    learnable_temperature: bool = False
    lr: float = 1e-5
    weight_decay: float = 0.01
    warmup_steps: int = 500
    epochs: int = 10
    seed: Optional[int] = None
    image_size: int = 224
    max_tokens: int = 256
    kd_enabled: bool = True
    init: str = "pretrained"  # pretrained | scratch text encoder
    embed_dim: Optional[int] = None  # None: same as the knowledge encoder
    vision_width: int = 32
    image_mean: List[float] = field(default_factory=lambda: [0.5, 0.5, 0.5])
    image_std: List[float] = field(default_factory=lambda: [0.5, 0.5, 0.5])
    fail_fast_images: bool = False
    prefetch: int = 2

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("vlp.alpha must be nonnegative")
        if self.tau2 <= 0 or self.tau3 <= 0:
            raise ConfigError("vlp.tau2 and vlp.tau3 must be positive")
        if self.init not in ("pretrained", "scratch"):
            raise ConfigError(f"unknown vlp.init: {self.init}")


@dataclass
class EvalConfig:
    tasks: List[str] = field(
        default_factory=lambda: ["zs", "i2t", "t2i", "i2p", "p2i", "match", "probe"]
    )
    k_values: List[int] = field(default_factory=lambda: [10, 50])
    hit_mode: str = "any"  # any | all
    matching_k: Optional[int] = None  # None: per-image truth-set size
    average: str = "micro"  # micro | macro
    probe_ratios: List[float] = field(default_factory=lambda: [0.01, 0.1, 1.0])
    probe_weight_decay: float = 1e-4
    probe_max_iter: int = 1000
    templates_path: Optional[str] = None
    plots: bool = True

    def __post_init__(self):
        unknown = set(self.tasks) - set(EVAL_TASKS)
        if unknown:
            raise ConfigError(f"unknown evaluation tasks: {sorted(unknown)}")
        if self.hit_mode not in ("any", "all"):
            raise ConfigError(f"unknown hit_mode: {self.hit_mode}")
        if self.average not in ("micro", "macro"):
            raise ConfigError(f"unknown average: {self.average}")


EVAL_TASKS = ("zs", "i2t", "t2i", "i2p", "p2i", "match", "probe")

# Attribute kinds removed by each KG-component ablation
KG_COMPONENT_EXCLUSIONS = {
    "full": (),
    "no-def": ("definition",),
    "no-syn": ("synonym",),
    "no-rel": ("relation",),
}


@dataclass
class RunConfig:
    seed: int = 0
    output_root: str = "runs/default"
    ontology: OntologyConfig = field(default_factory=OntologyConfig)
    curation: CurationConfig = field(default_factory=CurationConfig)
    knowledge: KnowledgeTrainConfig = field(default_factory=KnowledgeTrainConfig)
    vlp: VLPTrainConfig = field(default_factory=VLPTrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def stage_seed(self, section: str) -> int:
        """Seed of a section, falling back to the global seed"""
        seed = getattr(getattr(self, section), "seed", None)
        return self.seed if seed is None else seed

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def section_hash(self, *sections: str) -> str:
        payload = {"seed": self.seed}
        for name in sections:
            payload[name] = dataclasses.asdict(getattr(self, name))
        blob = json.dumps(payload, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def _coerce(name: str, value: Any, default: Any) -> Any:
    """Coerce a YAML scalar to the type of the field default"""
    if value is None or default is None:
        return value
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            if str(value).lower() in ("true", "yes", "on", "1"):
                return True
            if str(value).lower() in ("false", "no", "off", "0"):
                return False
            raise ValueError(value)
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(float(value)):
                raise ValueError(value)
            return int(float(value))
        if isinstance(default, float):
            return float(value)
        if isinstance(default, list):
            if isinstance(value, str):
                value = [v.strip() for v in value.split(",") if v.strip()]
            if not isinstance(value, list):
                raise ValueError(value)
            if default:
                return [_coerce(name, v, default[0]) for v in value]
            return list(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {name}: {value!r}")
    return value


def _prototype(annotation: Any) -> Any:
    """Zero value of the inner type of Optional[X]; None when X is not a scalar or list"""
    args = [a for a in typing.get_args(annotation) if a is not type(None)]
    inner = args[0] if len(args) == 1 else annotation
    if inner in (bool, int, float):
        return inner()
    if typing.get_origin(inner) is list:
        return []
    return None


def _build(cls, data: Dict[str, Any], prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"section {prefix or '<root>'} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {[prefix + k for k in unknown]}")

    defaults = cls()
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name, value in data.items():
        default = getattr(defaults, name)
        if default is None:
            default = _prototype(hints.get(name))
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value or {}, prefix + name + ".")
        else:
            kwargs[name] = _coerce(prefix + name, value, default)
    return cls(**kwargs)


def config_from_dict(data: Optional[Dict[str, Any]]) -> RunConfig:
    return _build(RunConfig, data or {})


def apply_overrides(cfg: RunConfig, overrides: List[str]) -> RunConfig:
    """
    Apply `section.key=value` overrides on top of a config

    Parameters:
        cfg (RunConfig): Base configuration
        overrides (list): Override strings, later ones win

    Returns:
        RunConfig: New configuration object
    """
    data = copy.deepcopy(cfg.to_dict())
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item}")
        key, raw = item.split("=", 1)
        node = data
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"unknown config section in override: {key}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key in override: {key}")
        node[parts[-1]] = yaml.safe_load(raw) if raw.strip() else None
    return config_from_dict(data)


def load_config(path: Optional[str], overrides: Optional[List[str]] = None) -> RunConfig:
    """Load a YAML run configuration, defaults for anything not given"""
    data = {}
    if path:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    cfg = config_from_dict(data)
    return apply_overrides(cfg, overrides or [])


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def save_config(cfg: RunConfig, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_config(cfg))


# Create global configuration instance
config = RunConfig()

# Bundled fixtures
DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
TOY_ONTOLOGY = os.path.join(DATA_DIR, "toy_ontology.obo")
TOY_CORPUS = os.path.join(DATA_DIR, "toy_corpus.jsonl")
TOY_KEEPLIST = os.path.join(DATA_DIR, "toy_keeplist.txt")
TOY_CONFIG = os.path.join(DATA_DIR, "toy_config.yaml")
PROMPT_TEMPLATES = os.path.join(DATA_DIR, "prompt_templates.txt")


def resolve_path(path: Optional[str], base_dir: Optional[str] = None) -> Optional[str]:
    """Relative config paths resolve against the directory of the config file"""
    if not path or os.path.isabs(path) or base_dir is None:
        return path
    return os.path.join(base_dir, path)
