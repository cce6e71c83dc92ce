"""Colorization tests: closed-form gradients against central differences,
cluster statistics, and the output-range contract."""

import numpy as np
import pytest

from hypercf import viz
from hypercf.viz import VizError, embedding_to_color, write_colors_csv


def small_instance(seed=0, n=6, d=5):
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, 1.0, size=(n, d))
    palette = np.array([[0.9, 0.1, 0.1], [0.1, 0.1, 0.9]])
    params = viz._init_params(d, n, rng)
    return x, palette, params


class TestManualGradients:
    def test_matches_central_differences(self):
        x, palette, params = small_instance()
        mu = 0.7
        viz._loss_and_grads(params, x, palette, mu)
        analytic = {k: p.grad.copy() for k, p in params.items()}

        eps = 1e-6
        for name, p in params.items():
            numeric = np.zeros_like(p.value)
            flat = p.value.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = viz._loss_and_grads(params, x, palette, mu)
                flat[i] = orig - eps
                down = viz._loss_and_grads(params, x, palette, mu)
                flat[i] = orig
                numeric.ravel()[i] = (up - down) / (2 * eps)
            scale = np.maximum(np.abs(analytic[name]), np.abs(numeric))
            err = np.abs(analytic[name] - numeric) / np.maximum(scale, 1e-8)
            assert err.max() < 1e-5, f"{name}: max rel err {err.max():.2e}"

    def test_loss_decreases_over_training(self):
        x, palette, params = small_instance(seed=3)
        from hypercf.trainer import Adam
        opt = Adam(params, lr=1e-2)
        first = viz._loss_and_grads(params, x, palette, 1.0)
        for _ in range(100):
            viz._loss_and_grads(params, x, palette, 1.0)
            opt.step(params)
        last = viz._loss_and_grads(params, x, palette, 1.0)
        assert last < first


class TestEmbeddingToColor:
    def test_cluster_variance_oracle(self):
        rng = np.random.default_rng(0)
        a = rng.normal(+2.0, 0.05, size=(10, 8))
        b = rng.normal(-2.0, 0.05, size=(10, 8))
        colors = embedding_to_color(np.vstack([a, b]),
                                    palette=[[0.9, 0.1, 0.1], [0.1, 0.1, 0.9]],
                                    steps=300, seed=0)
        ca, cb = colors[:10], colors[10:]
        intra = 0.5 * (np.mean(np.sum((ca - ca.mean(0)) ** 2, axis=1)) +
                       np.mean(np.sum((cb - cb.mean(0)) ** 2, axis=1)))
        centroids = np.vstack([ca.mean(0), cb.mean(0)])
        inter = np.mean(np.sum((centroids - centroids.mean(0)) ** 2, axis=1))
        assert intra < inter

    def test_identical_embeddings_identical_colors(self):
        x = np.tile(np.linspace(-1.0, 1.0, 6), (8, 1))
        colors = embedding_to_color(x, steps=50, seed=1)
        assert np.all(colors == colors[0])

    def test_range_and_shape(self):
        rng = np.random.default_rng(2)
        colors = embedding_to_color(rng.normal(size=(7, 4)), steps=20)
        assert colors.shape == (7, 3)
        assert colors.min() >= 0.0 and colors.max() <= 1.0

    def test_deterministic_under_seed(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(5, 4))
        first = embedding_to_color(x, steps=30, seed=9)
        second = embedding_to_color(x, steps=30, seed=9)
        assert np.array_equal(first, second)

    def test_rejects_small_palette(self):
        with pytest.raises(VizError, match="at least 2"):
            embedding_to_color(np.ones((3, 4)), palette=[[0.5, 0.5, 0.5]])

    def test_rejects_bad_inputs(self):
        with pytest.raises(VizError, match="2-D"):
            embedding_to_color(np.ones(4))
        with pytest.raises(VizError, match="NaN"):
            embedding_to_color(np.array([[np.nan, 1.0]]))
        with pytest.raises(VizError, match="\\[0, 1\\]"):
            embedding_to_color(np.ones((3, 4)), palette=[[2.0, 0.0, 0.0],
                                                         [0.0, 1.0, 0.0]])


class TestColorsCsv:
    def test_round_trip(self, tmp_path):
        colors = np.array([[0.25, 0.5, 0.75], [1.0, 0.0, 0.5]])
        path = tmp_path / "colors.csv"
        write_colors_csv(str(path), colors, item_ids=[10, 11])
        text = path.read_text()
        lines = text.strip().split("\n")
        assert lines[0] == "item-id,r,g,b"
        assert lines[1].startswith("10,0.25,0.5,0.75")
        assert len(lines) == 3
        assert "\r" not in text

    def test_rejects_misaligned_ids(self, tmp_path):
        with pytest.raises(VizError, match="align"):
            write_colors_csv(str(tmp_path / "x.csv"), np.ones((2, 3)),
                             item_ids=[1, 2, 3])
