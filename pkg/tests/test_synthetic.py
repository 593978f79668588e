import numpy as np
import pytest

from cpheno.corpus.images import load_image
from cpheno.errors import ParameterError
from cpheno.synthetic import ClusteredTeacher, clustered_features, planted_alignment, planted_pairs

CLASS_IDS = ["HP:0001166", "HP:0002650", "HP:0000545"]
CLASS_NAMES = ["Arachnodactyly", "Scoliosis", "Myopia"]


class TestPlantedPairs:
    def test_layout(self):
        pairs = planted_pairs(CLASS_IDS, CLASS_NAMES, n=7)
        assert len(pairs) == 7
        assert [p.phenotype_ids[0] for p in pairs] == [CLASS_IDS[i % 3] for i in range(7)]
        assert len({p.caption for p in pairs}) == 7
        assert len({p.image_ref for p in pairs}) == 7
        assert pairs[4].caption == "Scoliosis case 4"

    def test_images_render(self):
        pairs = planted_pairs(CLASS_IDS, CLASS_NAMES, n=2)
        first, second = (np.asarray(load_image(p.image_ref)) for p in pairs)
        assert first.shape == second.shape
        assert not np.array_equal(first, second)

    def test_seed_changes_images(self):
        a = planted_pairs(CLASS_IDS, CLASS_NAMES, n=3, seed=0)
        b = planted_pairs(CLASS_IDS, CLASS_NAMES, n=3, seed=1)
        assert {p.image_ref for p in a}.isdisjoint(p.image_ref for p in b)

    def test_misaligned_classes(self):
        with pytest.raises(ParameterError):
            planted_pairs(CLASS_IDS, CLASS_NAMES[:2])
        with pytest.raises(ParameterError):
            planted_pairs([], [])


class TestClusteredTeacher:
    def test_class_lookup(self):
        teacher = ClusteredTeacher(["fingers", "spider fingers"], dim=4)
        assert teacher.class_of("Long SPIDER FINGERS on both hands") == "spider fingers"
        assert teacher.class_of("fingers only") == "fingers"
        assert teacher.class_of("unrelated") is None

    def test_embeddings(self):
        teacher = ClusteredTeacher(CLASS_NAMES, dim=8)
        rows = teacher.encode(["Myopia case 1", "severe myopia", "Scoliosis case 2", "no class here"])
        assert rows.shape == (4, 8)
        assert rows.dtype == np.float32
        assert np.allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-5)
        assert np.allclose(rows[0], rows[1])
        assert abs(float(rows[0] @ rows[2])) < 1e-5
        # unknown captions get a stable direction
        assert np.allclose(teacher.encode(["no class here"])[0], rows[3])

    def test_empty_batch(self):
        assert ClusteredTeacher(CLASS_NAMES, dim=8).encode([]).shape == (0, 8)

    def test_checksum(self):
        assert ClusteredTeacher(CLASS_NAMES, 8).checksum() == ClusteredTeacher(CLASS_NAMES, 8).checksum()
        assert ClusteredTeacher(CLASS_NAMES, 8).checksum() != ClusteredTeacher(CLASS_NAMES, 8, seed=1).checksum()

    def test_too_many_classes(self):
        with pytest.raises(ParameterError):
            ClusteredTeacher(CLASS_NAMES, dim=2)


class TestPlantedAlignment:
    def test_captions_embed_onto_their_images(self):
        fixture = planted_alignment(CLASS_IDS, CLASS_NAMES, per_class=3, dim=8)
        assert len(fixture.pairs) == 9
        V, errors = fixture.encoder.encode_images([p.image_ref for p in fixture.pairs])
        T = fixture.encoder.encode_texts([p.caption for p in fixture.pairs])
        assert errors == {}
        assert np.allclose(V, T)
        assert np.allclose(np.linalg.norm(V, axis=1), 1.0)

    def test_prompts_resolve_to_class_vectors(self):
        fixture = planted_alignment(CLASS_IDS, CLASS_NAMES, dim=8)
        rows = fixture.encoder.encode_texts(["a photo of Myopia", "Myopia"])
        assert np.allclose(rows[0], rows[1])
        assert np.allclose(rows[0], fixture.encoder.class_vectors["Myopia"])

    def test_unknown_inputs(self):
        fixture = planted_alignment(CLASS_IDS, CLASS_NAMES, dim=8)
        V, errors = fixture.encoder.encode_images(["synth:1x1:999999"])
        assert list(errors) == [0]
        assert np.isnan(V).all()
        with pytest.raises(ParameterError):
            fixture.encoder.encode_texts(["Ectopia lentis"])

    def test_dim_too_small(self):
        with pytest.raises(ParameterError):
            planted_alignment(CLASS_IDS, CLASS_NAMES, dim=2)


def test_clustered_features():
    centers = np.array([[0.0, 0.0], [10.0, 10.0]])
    features, labels = clustered_features(5, centers, scale=0.1, seed=0)
    assert features.shape == (10, 2)
    assert labels.tolist() == [0] * 5 + [1] * 5
    assert np.allclose(features[labels == 1].mean(axis=0), [10.0, 10.0], atol=0.5)
    again, _ = clustered_features(5, centers, scale=0.1, seed=0)
    assert np.array_equal(features, again)
