"""Tests for input-matrix assembly: idf, mixture, ensemble, bundles."""

import math

import numpy as np
import pytest

from mrnn.autodiff import ConfigError, DomainError, ShapeError
from mrnn.embeddings import (
    BundleMeta,
    DataError,
    EmbeddingBundle,
    IdfTable,
    MixtureSourceSpec,
    MixtureSpec,
    StaticTable,
    SyntheticSource,
    TextEmbedder,
    compute_idf,
    embed_text,
    ensemble,
    generate_synthetic_bundle,
    load_bundle,
    load_idf_table,
    load_static_table,
    mixture,
    save_bundle,
    save_idf_table,
)


class TestComputeIdf:
    def setup_method(self):
        self.corpus = [["a", "b"], ["a", "c"], ["a", "b", "b"]]
        self.idf = compute_idf(self.corpus)

    def test_token_in_every_document(self):
        assert self.idf.weight("a") == pytest.approx(1.0, abs=1e-12)

    def test_token_in_one_of_three(self):
        assert self.idf.weight("c") == pytest.approx(math.log(4 / 2) + 1, abs=1e-12)
        assert self.idf.weight("c") == pytest.approx(1.6931471805599453, abs=1e-9)

    def test_unseen_token(self):
        assert self.idf.weight("zzz") == pytest.approx(math.log(4 / 1) + 1, abs=1e-12)
        assert self.idf.weight("zzz") == pytest.approx(2.386294361119891, abs=1e-9)

    def test_df_counts_documents_not_occurrences(self):
        # "b" appears 3 times but only in 2 documents
        assert self.idf.weight("b") == pytest.approx(math.log(4 / 3) + 1, abs=1e-12)

    def test_empty_corpus_rejected(self):
        with pytest.raises(DomainError):
            compute_idf([])

    def test_weights_positive(self):
        assert all(w > 0 for w in self.idf.weights.values())


class TestMixture:
    def test_single_layer_sum_unchanged(self):
        layer = np.array([1.0, -2.0, 3.0])
        spec = MixtureSourceSpec("static", m=[1.0], idf=False, op="sum")
        assert np.array_equal(mixture([layer], spec), layer)

    def test_last_layer_sum_with_idf(self):
        layers = [np.ones(3), 2 * np.ones(3), np.array([1.0, 2.0, 3.0])]
        spec = MixtureSourceSpec("ctx3", m=[0.0, 0.0, 1.0], idf=True, op="sum")
        out = mixture(layers, spec, idf_weight=1.5)
        np.testing.assert_allclose(out, 1.5 * layers[2], atol=1e-15)

    def test_two_layer_mean(self):
        layers = [np.array([2.0, 4.0]), np.array([6.0, 0.0])]
        spec = MixtureSourceSpec("s", m=[0.5, 0.5], idf=False, op="sum")
        np.testing.assert_allclose(mixture(layers, spec), [4.0, 2.0], atol=1e-15)

    def test_concat_drops_zero_weighted_layers(self):
        layers = [np.ones(2), 2 * np.ones(2), 3 * np.ones(2)]
        spec = MixtureSourceSpec("deep", m=[0.5, 0.0, 0.25], idf=False, op="concat")
        out = mixture(layers, spec)
        np.testing.assert_allclose(out, [0.5, 0.5, 0.75, 0.75], atol=1e-15)

    def test_weight_count_mismatch(self):
        with pytest.raises(ShapeError):
            mixture([np.ones(2)], MixtureSourceSpec("s", m=[1.0, 1.0]), 1.0)

    def test_sum_unequal_dims_rejected(self):
        spec = MixtureSourceSpec("s", m=[1.0, 1.0], op="sum")
        with pytest.raises(ShapeError):
            mixture([np.ones(2), np.ones(3)], spec)

    def test_linearity_in_each_layer(self):
        rng = np.random.default_rng(0)
        layers = [rng.normal(size=4) for _ in range(3)]
        spec = MixtureSourceSpec("s", m=[0.3, 0.5, 0.2], idf=False, op="sum")
        base = mixture(layers, spec)
        scaled = mixture([layers[0] * 7.0, layers[1], layers[2]], spec)
        np.testing.assert_allclose(scaled - base, 0.3 * 6.0 * layers[0], atol=1e-12)


class TestEnsemble:
    def test_thirds_concat(self):
        parts = [np.array([3.0]), np.array([6.0]), np.array([9.0])]
        out = ensemble(parts, [1 / 3, 1 / 3, 1 / 3], "concat")
        np.testing.assert_allclose(out, [1.0, 2.0, 3.0], atol=1e-15)

    def test_single_part_identity(self):
        part = np.array([1.0, 2.0])
        assert np.array_equal(ensemble([part], [1.0], "concat"), part)

    def test_concat_dim_law(self):
        parts = [np.zeros(3), np.zeros(2), np.zeros(1)]
        out = ensemble(parts, [1.0, 1.0, 1.0], "concat")
        assert out.shape == (6,)

    def test_concat_order_preserved(self):
        out = ensemble([np.array([1.0]), np.array([2.0])], [1.0, 1.0], "concat")
        assert np.array_equal(out, [1.0, 2.0])

    def test_sum_requires_equal_dims(self):
        with pytest.raises(ShapeError):
            ensemble([np.zeros(3), np.zeros(2)], [1.0, 1.0], "sum")

    def test_sum_combines(self):
        out = ensemble([np.array([1.0, 0.0]), np.array([0.0, 2.0])], [2.0, 3.0], "sum")
        np.testing.assert_allclose(out, [2.0, 6.0], atol=1e-15)


def toy_sources_and_spec():
    """Tiny three-source configuration mirroring the default assembly."""
    deep = EmbeddingBundle(
        BundleMeta("deep", layers=4, dim=2),
        {
            ("ex1", 0): np.arange(8.0).reshape(4, 2),
            ("ex1", 1): np.arange(8.0, 16.0).reshape(4, 2),
        },
    )
    ctx3 = EmbeddingBundle(
        BundleMeta("ctx3", layers=3, dim=2),
        {
            ("ex1", 0): np.ones((3, 2)),
            ("ex1", 1): 2 * np.ones((3, 2)),
        },
    )
    static = StaticTable({"hello": np.array([1.0, 0.0])}, fallback=np.array([0.5, 0.5]))
    sources = {"deep": deep, "ctx3": ctx3, "static": static}
    spec = MixtureSpec(
        sources=[
            MixtureSourceSpec("deep", m=[0.25, 0.25, 0.25, 0.25], idf=False, op="concat"),
            MixtureSourceSpec("ctx3", m=[0.0, 0.0, 1.0], idf=True, op="sum"),
            MixtureSourceSpec("static", m=[1.0], idf=True, op="sum"),
        ],
        u=[1 / 3, 1 / 3, 1 / 3],
        ensemble_op="concat",
    )
    idf = IdfTable({"hello": 1.2, "world": 2.0}, n_documents=3)
    return sources, spec, idf


class TestEmbedText:
    def test_output_shape_law(self):
        sources, spec, idf = toy_sources_and_spec()
        out = embed_text("ex1", ["hello", "world"], sources, spec, idf)
        # deep concat keeps 4 layers of dim 2 -> 8; ctx3 sum -> 2; static -> 2
        assert out.shape == (2, 12)

    def test_identity_pipeline_single_source(self):
        src = SyntheticSource(dim=5, seed=3)
        spec = MixtureSpec(sources=[MixtureSourceSpec("s", m=[1.0], op="sum")], u=[1.0])
        out = embed_text("e", ["a", "b", "a"], {"s": src}, spec)
        np.testing.assert_allclose(out[0], src.token_vectors("a")[0], atol=1e-15)
        np.testing.assert_allclose(out[2], out[0], atol=1e-15)

    def test_full_config_matches_stepwise_oracle(self):
        sources, spec, idf = toy_sources_and_spec()
        out = embed_text("ex1", ["hello", "world"], sources, spec, idf)
        for pos, token in enumerate(["hello", "world"]):
            deep_layers = sources["deep"].lookup("ex1", pos, token)
            part1 = np.concatenate([0.25 * deep_layers[i] for i in range(4)])
            ctx_layers = sources["ctx3"].lookup("ex1", pos, token)
            part2 = idf.weight(token) * ctx_layers[2]
            part3 = idf.weight(token) * sources["static"].lookup("ex1", pos, token)[0]
            expect = np.concatenate([p / 3 for p in (part1, part2, part3)])
            np.testing.assert_allclose(out[pos], expect, atol=1e-12)

    def test_missing_bundle_record_names_position(self):
        sources, spec, idf = toy_sources_and_spec()
        with pytest.raises(DataError, match=r"ex1.*position 2"):
            embed_text("ex1", ["a", "b", "c"], sources, spec, idf)

    def test_permutation_faithful(self):
        src = SyntheticSource(dim=4, seed=1)
        spec = MixtureSpec(sources=[MixtureSourceSpec("s", m=[1.0], op="sum")], u=[1.0])
        fwd = embed_text("e", ["x", "y", "z"], {"s": src}, spec)
        rev = embed_text("e", ["z", "y", "x"], {"s": src}, spec)
        np.testing.assert_allclose(rev, fwd[::-1], atol=1e-15)


class TestTextEmbedder:
    def test_output_dim_is_pure_function_of_spec(self):
        sources, spec, idf = toy_sources_and_spec()
        embedder = TextEmbedder(sources, spec, idf)
        assert embedder.output_dim == 12

    def test_idf_required_when_flagged(self):
        sources, spec, _ = toy_sources_and_spec()
        with pytest.raises(ConfigError):
            TextEmbedder(sources, spec, idf=None)

    def test_layer_weight_count_validated(self):
        src = SyntheticSource(dim=4, seed=1, layers=2)
        spec = MixtureSpec(sources=[MixtureSourceSpec("s", m=[1.0], op="sum")], u=[1.0])
        with pytest.raises(ConfigError):
            TextEmbedder({"s": src}, spec)

    def test_embed_caches_by_example(self):
        src = SyntheticSource(dim=4, seed=1)
        spec = MixtureSpec(sources=[MixtureSourceSpec("s", m=[1.0], op="sum")], u=[1.0])
        embedder = TextEmbedder({"s": src}, spec)
        a = embedder.embed("e", ["a", "b"])
        b = embedder.embed("e", ["a", "b"])
        assert a is b


class TestBundleIO:
    def test_round_trip(self, tmp_path):
        bundle = generate_synthetic_bundle({"q1": ["a", "b"], "d7": ["c"]}, dim=6, seed=11)
        save_bundle(bundle, str(tmp_path / "bundle"))
        loaded = load_bundle(str(tmp_path / "bundle"))
        assert loaded.meta.synthetic is True
        assert loaded.meta.layers == 1 and loaded.meta.dim == 6
        assert set(loaded.records) == set(bundle.records)
        for key in bundle.records:
            np.testing.assert_allclose(loaded.records[key], bundle.records[key], atol=1e-15)

    def test_synthetic_vectors_unit_norm_and_seeded(self):
        a = SyntheticSource(dim=8, seed=5).token_vectors("tok")
        b = SyntheticSource(dim=8, seed=5).token_vectors("tok")
        c = SyntheticSource(dim=8, seed=6).token_vectors("tok")
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert np.linalg.norm(a[0]) == pytest.approx(1.0, abs=1e-12)

    def test_malformed_record_reports_line(self, tmp_path):
        d = tmp_path / "bundle"
        d.mkdir()
        (d / "meta.json").write_text('{"source": "s", "layers": 1, "dim": 2}')
        (d / "records.jsonl").write_text('{"example": "e", "position": 0, "layers": [[1.0]]}\n')
        with pytest.raises(DataError, match="records.jsonl:1"):
            load_bundle(str(d))

    def test_record_dim_validated_on_construction(self):
        with pytest.raises(DataError):
            EmbeddingBundle(BundleMeta("s", layers=2, dim=3), {("e", 0): np.zeros((1, 3))})


class TestStaticTableIO:
    def test_round_trip_and_fallback(self, tmp_path):
        path = tmp_path / "table.vec"
        path.write_text("<unk> 0.5 0.5\nhello 1.0 0.0\n")
        table = load_static_table(str(path))
        assert np.array_equal(table.lookup("e", 0, "hello")[0], [1.0, 0.0])
        assert np.array_equal(table.lookup("e", 0, "missing")[0], [0.5, 0.5])

    def test_missing_fallback_rejected(self, tmp_path):
        path = tmp_path / "table.vec"
        path.write_text("hello 1.0 0.0\n")
        with pytest.raises(DataError):
            load_static_table(str(path))

    def test_mixed_dims_rejected(self):
        with pytest.raises(DataError):
            StaticTable({"a": np.zeros(2), "b": np.zeros(3)}, fallback=np.zeros(2))


class TestIdfIO:
    def test_round_trip(self, tmp_path):
        idf = compute_idf([["a", "b"], ["a"]])
        path = tmp_path / "idf.txt"
        save_idf_table(idf, str(path))
        loaded = load_idf_table(str(path))
        assert loaded.n_documents == 2
        assert loaded.weight("a") == pytest.approx(idf.weight("a"), abs=1e-15)
        assert loaded.weight("never-seen") == pytest.approx(idf.weight("never-seen"), abs=1e-15)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "idf.txt"
        path.write_text("a 1.0\n")
        with pytest.raises(DataError):
            load_idf_table(str(path))
