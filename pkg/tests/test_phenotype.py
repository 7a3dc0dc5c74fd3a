import numpy as np
import pytest

from embedding_space import pca_transform, scaler_apply
from exceptions import DimensionMismatchError, ExportError, ValidationError
from gmm import GmmConfig, GmmModel, gmm_posterior
from phenotype import (
    LinearEmbedder,
    Phenotype,
    StyleModel,
    build_style_model,
    embed,
    export_pgm,
    fitness,
    generate,
    generate_batch,
    generator_new,
    make_fitness,
    sample_embeddings,
    to_gray_bytes,
)


class TestGenerator:

    def test_same_seed_same_weights(self):
        a = generator_new(7, 4, 5, 3, 2)
        b = generator_new(7, 4, 5, 3, 2)
        for name in ("w1", "b1", "w2", "b2"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_different_seeds_differ(self):
        for seed in range(10):
            a = generator_new(seed, 4, 5, 3, 2)
            b = generator_new(seed + 1000, 4, 5, 3, 2)
            assert not np.array_equal(a.w1, b.w1) or not np.array_equal(a.w2, b.w2)

    def test_minimal_dimensions(self):
        g = generator_new(3, 1, 1, 1, 1)
        assert g.w1.shape == (1, 1) and g.b1.shape == (1,)
        assert g.w2.shape == (1, 1) and g.b2.shape == (1,)
        assert generate(g, [0.25]).pixels.shape == (1, 1)

    def test_weight_draw_order_and_scaling(self):
        g = generator_new(99, 3, 4, 2, 5)
        rng = np.random.default_rng(99)
        np.testing.assert_array_equal(g.w1, rng.standard_normal((4, 3)) / np.sqrt(3))
        np.testing.assert_array_equal(g.b1, rng.standard_normal(4) / np.sqrt(3))
        np.testing.assert_array_equal(g.w2, rng.standard_normal((10, 4)) / np.sqrt(4))
        np.testing.assert_array_equal(g.b2, rng.standard_normal(10) / np.sqrt(4))

    @pytest.mark.parametrize("dims", [(0, 1, 1, 1), (1, 0, 1, 1), (1, 1, 0, 1), (1, 1, 1, 0)])
    def test_rejects_empty_dimensions(self, dims):
        with pytest.raises(ValidationError):
            generator_new(1, *dims)


class TestGenerate:

    def test_zero_latent_forward_pass(self, generator):
        expected = np.tanh(generator.w2 @ np.tanh(generator.b1) + generator.b2).reshape(3, 5)
        np.testing.assert_allclose(generate(generator, np.zeros(4)).pixels, expected, rtol=0, atol=1e-15)

    def test_pixels_within_unit_range(self, generator):
        for z in np.random.default_rng(1).normal(scale=3.0, size=(50, 4)):
            pixels = generate(generator, z).pixels
            assert np.all(np.abs(pixels) <= 1.0)

    def test_pure(self, generator):
        z = np.random.default_rng(2).standard_normal(4)
        np.testing.assert_array_equal(generate(generator, z).pixels, generate(generator, z).pixels)

    def test_batch_matches_single(self, generator):
        Z = np.random.default_rng(3).standard_normal((6, 4))
        flat = generate_batch(generator, Z)
        for z, row in zip(Z, flat):
            np.testing.assert_allclose(generate(generator, z).pixels.reshape(-1), row, atol=1e-12)

    def test_rejects_wrong_length(self, generator):
        with pytest.raises(DimensionMismatchError):
            generate(generator, np.zeros(5))

    def test_rejects_non_finite(self, generator):
        with pytest.raises(ValidationError):
            generate(generator, [0.0, np.inf, 0.0, 0.0])

    def test_phenotype_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            Phenotype(np.array([[0.0, 1.5]]))


class TestEmbed:

    def test_zero_phenotype(self, embedder):
        np.testing.assert_array_equal(embed(embedder, Phenotype(np.zeros((3, 5)))), np.zeros(7))

    def test_linearity(self, embedder):
        rng = np.random.default_rng(4)
        p1, p2 = rng.uniform(-1, 1, (3, 5)), rng.uniform(-1, 1, (3, 5))
        np.testing.assert_allclose(embed(embedder, p1) + embed(embedder, p2), embed(embedder, p1 + p2), atol=1e-12)

    def test_matches_matrix_multiply(self, embedder):
        grid = np.random.default_rng(5).uniform(-1, 1, (3, 5))
        projection = np.random.default_rng(6).standard_normal((7, 15)) / np.sqrt(15)
        np.testing.assert_allclose(embed(embedder, Phenotype(grid)), projection @ grid.reshape(-1), atol=1e-12)

    def test_dimension_mismatch(self, embedder):
        with pytest.raises(DimensionMismatchError):
            embed(embedder, np.zeros((5, 3)))


class TestFitness:

    def test_single_style_is_always_one(self, generator, embedder):
        _, embeddings = sample_embeddings(generator, embedder, 50, np.random.default_rng(7))
        style_model = build_style_model(embeddings, 0.9, GmmConfig(n_components=1))
        for z in np.random.default_rng(8).standard_normal((10, 4)):
            assert fitness(style_model, generator, embedder, z, 0) == pytest.approx(1.0, abs=1e-15)

    def test_matches_explicit_composition(self, style_setup, generator, embedder):
        style_model, latents, _ = style_setup
        z = latents[0]
        reduced = pca_transform(style_model.pca, scaler_apply(style_model.scaler, embed(embedder, generate(generator, z))))
        for t in range(3):
            assert fitness(style_model, generator, embedder, z, t) == gmm_posterior(style_model.gmm, reduced)[t]

    def test_training_latent_scores_its_dataset_posterior(self, style_setup, generator, embedder):
        style_model, latents, embeddings = style_setup
        posteriors = style_model.posteriors(embeddings)
        t = int(np.argmax(np.bincount(np.argmax(posteriors, axis=1), minlength=3)))
        best = int(np.argmax(posteriors[:, t]))
        assert fitness(style_model, generator, embedder, latents[best], t) == pytest.approx(posteriors[best, t], abs=1e-12)

    def test_near_one_at_a_separated_component_mean(self, style_setup, generator, embedder):
        style_model, latents, embeddings = style_setup
        centers = style_model.reduce(embeddings[:3])
        gaps = [np.linalg.norm(centers[i] - centers[j]) for i in range(3) for j in range(i + 1, 3)]
        variance = (min(gaps) / 10.0) ** 2
        q = centers.shape[1]
        separated = StyleModel(
            scaler=style_model.scaler,
            pca=style_model.pca,
            gmm=GmmModel(weights=np.full(3, 1.0 / 3.0), means=centers,
                         covariances=np.repeat(variance * np.eye(q)[None], 3, axis=0)),
        )
        for t in range(3):
            assert fitness(separated, generator, embedder, latents[t], t) >= 0.99

    def test_simplex(self, style_setup, generator, embedder):
        style_model, _, _ = style_setup
        fns = [make_fitness(style_model, generator, embedder, t) for t in range(3)]
        for z in np.random.default_rng(9).standard_normal((20, 4)):
            assert sum(f(z) for f in fns) == pytest.approx(1.0, abs=1e-9)

    def test_continuity(self, style_setup, generator, embedder):
        style_model, _, _ = style_setup
        f = make_fitness(style_model, generator, embedder, 0)
        rng = np.random.default_rng(10)
        for z in rng.standard_normal((20, 4)):
            delta = rng.standard_normal(4)
            delta *= 1e-6 / np.linalg.norm(delta)
            assert abs(f(z + delta) - f(z)) <= 1e-3

    def test_rejects_bad_target(self, style_setup, generator, embedder):
        style_model, _, _ = style_setup
        with pytest.raises(ValidationError):
            make_fitness(style_model, generator, embedder, 3)

    def test_rejects_mismatched_embedder(self, style_setup, generator):
        style_model, _, _ = style_setup
        with pytest.raises(DimensionMismatchError):
            make_fitness(style_model, generator, LinearEmbedder(6, 9, 3, 5), 0)

    def test_style_model_checks_chain(self, style_setup):
        style_model, _, _ = style_setup
        other = build_style_model(np.random.default_rng(11).standard_normal((40, 9)), 0.9, GmmConfig(n_components=2))
        with pytest.raises(DimensionMismatchError):
            StyleModel(scaler=other.scaler, pca=style_model.pca, gmm=style_model.gmm)


class TestExport:

    def test_gray_levels(self):
        np.testing.assert_array_equal(to_gray_bytes([-1.0, 0.0, 1.0]), [0, 128, 255])

    def test_single_pixel_file(self, tmp_path):
        path = tmp_path / "one.pgm"
        export_pgm(Phenotype(np.array([[0.0]])), path)
        data = path.read_bytes()
        assert data == b"P5\n1 1\n255\n" + bytes([128])

    def test_header_is_width_then_height(self, tmp_path):
        path = tmp_path / "wide.pgm"
        grid = np.linspace(-1, 1, 6).reshape(2, 3)
        export_pgm(Phenotype(grid), path)
        data = path.read_bytes()
        assert data.startswith(b"P5\n3 2\n255\n")
        assert data[len(b"P5\n3 2\n255\n"):] == to_gray_bytes(grid).tobytes()

    def test_reexport_is_identical(self, tmp_path, generator):
        p = generate(generator, np.full(4, 0.3))
        export_pgm(p, tmp_path / "a.pgm")
        export_pgm(p, tmp_path / "b.pgm")
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(ExportError) as info:
            export_pgm(Phenotype(np.zeros((2, 2))), tmp_path / "missing" / "x.pgm")
        assert "missing" in str(info.value)
