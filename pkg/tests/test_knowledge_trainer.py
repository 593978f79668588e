import io
import json
import math

import numpy as np
import pytest
import torch

from cpheno.config import KnowledgeTrainConfig
from cpheno.errors import ParameterError, TrainingDivergedError
from cpheno.models import TextEncoderHandle
from cpheno.ontology import graph_fingerprint, parse_ontology
from cpheno.trainers import build_knowledge_batch, train_knowledge_encoder
from cpheno.trainers import knowledge_trainer

from conftest import EYE


def small_config(**changes):
    options = dict(
        batch_phenotypes=4,
        learning_rate=1e-3,
        epochs=2,
        vocab_size=512,
        embed_dim=16,
        hidden_dim=16,
        num_layers=1,
        num_heads=2,
        max_tokens=32,
        prefetch=2,
    )
    options.update(changes)
    return KnowledgeTrainConfig(**options)


@pytest.fixture(scope="module")
def word_graph():
    """20 unrelated phenotypes whose name, definition and synonym share no words"""
    stanzas = [
        f'[Term]\nid: W:{i:03d}\nname: alpha{i} bravo{i}\n'
        f'def: "charlie{i} delta{i} echo{i}" []\nsynonym: "foxtrot{i} golf{i}" EXACT []'
        for i in range(20)
    ]
    return parse_ontology(io.StringIO("format-version: 1.2\n\n" + "\n\n".join(stanzas) + "\n"))


# -------------------------------------------------------------------------------------------------
# Batches
# -------------------------------------------------------------------------------------------------


class TestKnowledgeBatch:
    def test_structure(self, toy_graph, rng):
        batch = build_knowledge_batch(toy_graph, 4, rng)
        texts, pairing = batch
        assert len(texts) == 8
        assert pairing == [1, 0, 3, 2, 5, 4, 7, 6]
        assert len(set(batch.term_ids[::2])) == 4
        assert batch.term_ids[::2] == batch.term_ids[1::2]
        for attribute, term_id in zip(batch.attributes, batch.term_ids):
            assert attribute.term_id == term_id

    def test_pair_texts_differ_when_possible(self, toy_graph, rng):
        batch = build_knowledge_batch(toy_graph, 7, rng)
        # the eye group has a name and three child relations
        slot = batch.term_ids[::2].index(EYE)
        assert batch.texts[2 * slot] != batch.texts[2 * slot + 1]

    def test_terminal_only(self, toy_graph, rng):
        from cpheno.ontology import terminal_nodes

        batch = build_knowledge_batch(toy_graph, 5, rng, terminal_only=True)
        assert set(batch.term_ids) == terminal_nodes(toy_graph)

    def test_excluded_kinds(self, toy_graph, rng):
        for _ in range(10):
            batch = build_knowledge_batch(toy_graph, 7, rng, exclude_kinds=("synonym", "definition"))
            assert {a.kind for a in batch.attributes} <= {"name", "relation"}

    def test_terms_are_drawn_uniformly(self, toy_graph):
        rng = np.random.default_rng(0)
        draws = 2000
        counts = {}
        for _ in range(draws):
            for term_id in set(build_knowledge_batch(toy_graph, 4, rng).term_ids):
                counts[term_id] = counts.get(term_id, 0) + 1
        assert len(counts) == 7
        for count in counts.values():
            assert abs(count / draws - 4 / 7) <= 0.04

    def test_batch_size_checks(self, toy_graph, rng):
        with pytest.raises(ParameterError):
            build_knowledge_batch(toy_graph, 1, rng)
        with pytest.raises(ParameterError):
            build_knowledge_batch(toy_graph, 8, rng)


# -------------------------------------------------------------------------------------------------
# Training
# -------------------------------------------------------------------------------------------------


class TestTrainKnowledgeEncoder:
    def test_steps_and_finite_losses(self, toy_graph):
        config = small_config()
        encoder = TextEncoderHandle.build(config, seed=0)
        _, history = train_knowledge_encoder(config, toy_graph, encoder, seed=0)
        # ceil(7 / 4) steps per epoch
        assert len(history) == 4
        assert all(np.isfinite(history.losses))
        assert history.get_analysis()["epoch"].tolist() == [0, 0, 1, 1]

    def test_no_rel_never_samples_relations(self, toy_graph):
        config = small_config(kg_components="no-rel", epochs=3)
        kinds = set()
        train_knowledge_encoder(
            config,
            toy_graph,
            TextEncoderHandle.build(config, seed=0),
            seed=0,
            on_batch=lambda batch: kinds.update(a.kind for a in batch.attributes),
        )
        assert "relation" not in kinds
        assert "name" in kinds

    def test_first_loss_is_uniform(self, word_graph):
        config = small_config(batch_phenotypes=8, epochs=1, num_layers=2, embed_dim=32, hidden_dim=32)
        _, history = train_knowledge_encoder(config, word_graph, TextEncoderHandle.build(config, seed=0), seed=0)
        assert history.losses[0] == pytest.approx(math.log(15), rel=0.1)

    def test_zero_epochs_leave_encoder_unchanged(self, word_graph):
        config = small_config(epochs=0)
        encoder = TextEncoderHandle.build(config, seed=0)
        before = encoder.checksum()
        trained, history = train_knowledge_encoder(config, word_graph, encoder, seed=0)
        assert len(history) == 0
        assert trained.checksum() == before

    @pytest.mark.slow
    def test_attributes_of_a_phenotype_cluster(self, word_graph):
        config = small_config(
            batch_phenotypes=8, epochs=67, learning_rate=3e-3, num_layers=2, embed_dim=32, hidden_dim=32, vocab_size=2048
        )
        encoder, history = train_knowledge_encoder(config, word_graph, TextEncoderHandle.build(config, seed=0), seed=0)
        assert len(history) == 201
        texts, owners = [], []
        for index, term in enumerate(word_graph.terms.values()):
            for text in (term.name, term.definition) + term.synonyms:
                texts.append(text)
                owners.append(index)
        Z = encoder.encode(texts)
        S = Z @ Z.T
        owners = np.asarray(owners)
        same = owners[:, None] == owners[None, :]
        off_diagonal = ~np.eye(len(texts), dtype=bool)
        intra = S[same & off_diagonal].mean()
        inter = S[~same].mean()
        assert intra - inter >= 0.3

    def test_deterministic(self, toy_graph):
        config = small_config(prefetch=0)
        first, h1 = train_knowledge_encoder(config, toy_graph, TextEncoderHandle.build(config, seed=0), seed=5)
        second, h2 = train_knowledge_encoder(config, toy_graph, TextEncoderHandle.build(config, seed=0), seed=5)
        assert h1.losses == h2.losses
        assert first.checksum() == second.checksum()

    def test_loss_decreases(self, toy_graph):
        config = small_config(epochs=60, learning_rate=3e-3)
        _, history = train_knowledge_encoder(config, toy_graph, TextEncoderHandle.build(config, seed=0), seed=0)
        losses = history.losses
        assert np.mean(losses[-20:]) < np.mean(losses[:20])

    def test_checkpoint(self, toy_graph, tmp_path):
        config = small_config()
        encoder, history = train_knowledge_encoder(
            config, toy_graph, TextEncoderHandle.build(config, seed=0), out_dir=str(tmp_path), seed=0
        )
        with open(tmp_path / "encoder.json", encoding="utf-8") as f:
            meta = json.load(f)
        assert meta["graph_hash"] == graph_fingerprint(toy_graph)
        assert meta["steps"] == len(history)
        assert meta["config"]["kg_components"] == "full"
        assert (tmp_path / "loss_history.csv").exists()
        loaded = TextEncoderHandle.load(str(tmp_path))
        assert loaded.checksum() == encoder.checksum()

    def test_divergence_dumps_batch(self, toy_graph, tmp_path, monkeypatch):
        monkeypatch.setattr(
            knowledge_trainer, "knowledge_infonce_loss", lambda Z, pairing, tau: Z.sum() * float("nan")
        )
        config = small_config()
        with pytest.raises(TrainingDivergedError) as info:
            train_knowledge_encoder(
                config, toy_graph, TextEncoderHandle.build(config, seed=0), out_dir=str(tmp_path), seed=0
            )
        assert info.value.step == 0
        with open(info.value.dump_path, encoding="utf-8") as f:
            assert len(json.load(f)["texts"]) == 8

    def test_encoder_left_in_eval_mode(self, toy_graph):
        config = small_config(epochs=1)
        encoder, _ = train_knowledge_encoder(config, toy_graph, TextEncoderHandle.build(config, seed=0), seed=0)
        assert not encoder.module.training
        assert isinstance(encoder.forward_texts(["myopia"]), torch.Tensor)
