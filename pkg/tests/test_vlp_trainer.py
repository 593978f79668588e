import json

import numpy as np
import pytest

from cpheno.config import KnowledgeTrainConfig, VLPTrainConfig
from cpheno.corpus.records import ImageCaptionPair
from cpheno.errors import InputError, PreconditionError
from cpheno.evaluation.metrics import retrieval_recall_at_k
from cpheno.models import TeacherHandle, TextEncoderHandle, VLModel, build_vl_model, encode_image, encode_text
from cpheno.synthetic import ClusteredTeacher, planted_pairs
from cpheno.trainers import VLPTrainer, train_vlp

CLASS_IDS = ["HP:0001166", "HP:0002650", "HP:0000545", "HP:0001083"]
CLASS_NAMES = ["Arachnodactyly", "Scoliosis", "Myopia", "Ectopia lentis"]


def knowledge_config():
    return KnowledgeTrainConfig(vocab_size=1024, embed_dim=16, hidden_dim=16, num_layers=1, num_heads=2, max_tokens=32)


def vlp_config(**changes):
    options = dict(
        batch=8,
        epochs=1,
        lr=1e-3,
        warmup_steps=2,
        image_size=32,
        max_tokens=32,
        vision_width=8,
        kd_enabled=False,
        prefetch=1,
    )
    options.update(changes)
    return VLPTrainConfig(**options)


def model_for(config, teacher_dim=None, text_init=None, seed=0):
    return build_vl_model(config, knowledge_config(), text_init=text_init, teacher_dim=teacher_dim, seed=seed)


@pytest.fixture
def pairs():
    return planted_pairs(CLASS_IDS, CLASS_NAMES, n=16)


# -------------------------------------------------------------------------------------------------
# Preconditions
# -------------------------------------------------------------------------------------------------


class TestSetup:
    def test_kd_needs_teacher(self, pairs):
        config = vlp_config(kd_enabled=True)
        with pytest.raises(PreconditionError):
            VLPTrainer(pairs, model_for(config), config).setup_training()

    def test_kd_needs_matching_width_or_projection(self, pairs):
        config = vlp_config(kd_enabled=True)
        teacher = TeacherHandle(ClusteredTeacher(CLASS_NAMES, dim=32))
        with pytest.raises(PreconditionError):
            VLPTrainer(pairs, model_for(config), config, teacher).setup_training()
        # a projection head resolves the mismatch
        VLPTrainer(pairs, model_for(config, teacher_dim=32), config, teacher).setup_training()

    def test_unreadable_images_are_skipped(self, pairs, tmp_path):
        broken = ImageCaptionPair("X/fig1", "X", "fig1", "missing.png", "Myopia", ("HP:0000545",))
        config = vlp_config()
        trainer = VLPTrainer(pairs + [broken], model_for(config), config, root=str(tmp_path))
        trainer.setup_training()
        assert list(trainer.skipped) == ["X/fig1"]
        assert trainer.usable == list(range(len(pairs)))
        assert trainer.steps_per_epoch == 2

    def test_fail_fast_images(self, pairs, tmp_path):
        broken = ImageCaptionPair("X/fig1", "X", "fig1", "missing.png", "Myopia", ("HP:0000545",))
        config = vlp_config(fail_fast_images=True)
        with pytest.raises(InputError):
            VLPTrainer([broken] + pairs, model_for(config), config, root=str(tmp_path)).setup_training()


# -------------------------------------------------------------------------------------------------
# Training loop
# -------------------------------------------------------------------------------------------------


class TestRunTraining:
    def test_without_distillation(self, pairs):
        config = vlp_config(epochs=2)
        _, history = train_vlp(config, pairs, model_for(config), seed=0)
        frame = history.get_analysis()
        assert len(frame) == 4
        assert "loss_kd" not in frame.columns
        assert np.allclose(frame["loss"], frame["loss_contrastive"])
        assert frame["lr"].iloc[0] == 0.0

    def test_distillation_term_is_weighted(self, pairs):
        config = vlp_config(kd_enabled=True, alpha=0.5)
        teacher = TeacherHandle(ClusteredTeacher(CLASS_NAMES, dim=16))
        _, history = train_vlp(config, pairs, model_for(config, teacher_dim=16), teacher, seed=0)
        frame = history.get_analysis()
        assert np.allclose(frame["loss"], frame["loss_contrastive"] + 0.5 * frame["loss_kd"], atol=1e-5)

    def test_alpha_zero_still_reports_distillation(self, pairs):
        config = vlp_config(kd_enabled=True, alpha=0.0)
        teacher = TeacherHandle(ClusteredTeacher(CLASS_NAMES, dim=16))
        _, history = train_vlp(config, pairs, model_for(config, teacher_dim=16), teacher, seed=0)
        frame = history.get_analysis()
        assert (frame["loss"] == frame["loss_contrastive"]).all()
        assert "loss_kd" in frame.columns

    def test_teacher_stays_frozen(self, pairs):
        knowledge = knowledge_config()
        stage1 = TextEncoderHandle.build(knowledge, seed=0)
        teacher = TeacherHandle(stage1)
        before = teacher.checksum()
        config = vlp_config(kd_enabled=True, epochs=2)
        model = model_for(config, teacher_dim=teacher.dim, text_init=stage1)
        train_vlp(config, pairs, model, teacher, seed=0)
        assert teacher.checksum() == before
        # the student copy moved away from the teacher
        from cpheno.models.text_encoder import parameter_checksum

        assert parameter_checksum(model.text) != before

    def test_deterministic(self, pairs):
        config = vlp_config(epochs=2, prefetch=0)
        _, first = train_vlp(config, pairs, model_for(config), seed=3)
        _, second = train_vlp(config, pairs, model_for(config), seed=3)
        assert first.losses == second.losses

    def test_checkpoints(self, pairs, tmp_path):
        config = vlp_config(kd_enabled=True, epochs=2)
        teacher = TeacherHandle(ClusteredTeacher(CLASS_NAMES, dim=16))
        model, history = train_vlp(config, pairs, model_for(config, teacher_dim=16), teacher, out_dir=str(tmp_path))
        for name in ("model.pt", "model.json", "optimizer.pt", "loss_history.csv", "teacher_cache.jsonl"):
            assert (tmp_path / name).exists()
        assert (tmp_path / "epoch_0" / "model.pt").exists()
        assert (tmp_path / "epoch_1" / "model.pt").exists()
        with open(tmp_path / "model.json", encoding="utf-8") as f:
            meta = json.load(f)
        assert meta["steps"] == len(history) == 4
        assert meta["config"]["alpha"] == config.alpha
        loaded = VLModel.load(str(tmp_path))
        captions = [p.caption for p in pairs]
        assert np.allclose(encode_text(loaded, captions), encode_text(model, captions), atol=1e-6)


# -------------------------------------------------------------------------------------------------
# Sanity runs
# -------------------------------------------------------------------------------------------------


def recall_at_1(model, pairs):
    V, errors = encode_image(model, [p.image_ref for p in pairs])
    assert errors == {}
    T = encode_text(model, [p.caption for p in pairs])
    return retrieval_recall_at_k(V @ T.T, [[i] for i in range(len(pairs))], 1)


def intra_class_cosine(model, pairs):
    T = encode_text(model, [p.caption for p in pairs])
    labels = np.array([p.phenotype_ids[0] for p in pairs])
    scores = []
    for label in set(labels):
        rows = T[labels == label]
        sims = rows @ rows.T
        n = len(rows)
        scores.append((sims.sum() - n) / (n * (n - 1)))
    return float(np.mean(scores))


@pytest.mark.slow
def test_planted_pairs_are_learnable():
    pairs = planted_pairs(CLASS_IDS, CLASS_NAMES, n=64)
    config = vlp_config(batch=64, epochs=500, lr=2e-3, warmup_steps=20, vision_width=16)
    model, history = train_vlp(config, pairs, model_for(config), seed=0)
    assert len(history) == 500
    assert recall_at_1(model, pairs) >= 0.95


@pytest.fixture(scope="module")
def distilled_models():
    """Models trained on the same pairs and seed, with and without distillation"""
    pairs = planted_pairs(CLASS_IDS, CLASS_NAMES, n=32)
    teacher = TeacherHandle(ClusteredTeacher(CLASS_NAMES, dim=16))
    models = {}
    for kd in (False, True):
        config = vlp_config(batch=32, epochs=150, lr=2e-3, warmup_steps=10, kd_enabled=kd, alpha=1.0)
        models[kd], _ = train_vlp(config, pairs, model_for(config, teacher_dim=16), teacher if kd else None, seed=0)
    return pairs, models


def image_to_phenotype_recall(model, pairs):
    V, errors = encode_image(model, [p.image_ref for p in pairs])
    assert errors == {}
    C = encode_text(model, CLASS_NAMES)
    truth = [[CLASS_IDS.index(p.phenotype_ids[0])] for p in pairs]
    return retrieval_recall_at_k(V @ C.T, truth, 1)


@pytest.mark.slow
def test_distillation_tightens_classes(distilled_models):
    pairs, models = distilled_models
    assert intra_class_cosine(models[True], pairs) > intra_class_cosine(models[False], pairs)


@pytest.mark.slow
def test_distillation_does_not_hurt_phenotype_retrieval(distilled_models):
    pairs, models = distilled_models
    assert image_to_phenotype_recall(models[True], pairs) >= image_to_phenotype_recall(models[False], pairs)
