from cpheno.evaluation.analyzer import Analyzer
from cpheno.evaluation.encoders import ModelEncoder, as_encoder
from cpheno.evaluation.evaluator import evaluate_model
from cpheno.evaluation.metrics import (
    MatchingScores,
    matching_metrics,
    predicted_sets,
    recall_curve,
    retrieval_recall_at_k,
)
from cpheno.evaluation.probe import LabeledFeatureSet, ProbeResult, linear_probe, stratified_subsample
from cpheno.evaluation.prompts import PLACEHOLDER, PromptTemplateSet
from cpheno.evaluation.retrieval import (
    PhenotypeScores,
    RetrievalReport,
    cross_modal_retrieval,
    phenotype_matching,
    phenotype_retrieval,
    phenotype_similarity,
)
from cpheno.evaluation.zero_shot import ZeroShotResult, class_embedding, class_embeddings, zero_shot_classify

__all__ = [
    "Analyzer",
    "LabeledFeatureSet",
    "MatchingScores",
    "ModelEncoder",
    "PLACEHOLDER",
    "PhenotypeScores",
    "ProbeResult",
    "PromptTemplateSet",
    "RetrievalReport",
    "ZeroShotResult",
    "as_encoder",
    "class_embedding",
    "class_embeddings",
    "cross_modal_retrieval",
    "evaluate_model",
    "linear_probe",
    "matching_metrics",
    "phenotype_matching",
    "phenotype_retrieval",
    "phenotype_similarity",
    "predicted_sets",
    "recall_curve",
    "retrieval_recall_at_k",
    "stratified_subsample",
    "zero_shot_classify",
]
