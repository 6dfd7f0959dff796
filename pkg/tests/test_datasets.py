import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvgf.datasets import (
    Dataset,
    DatasetFormatError,
    Provenance,
    diffuse,
    generate_source_localization,
    read_dataset,
    write_dataset,
)
from nvgf.graph_core import Graph, build_shift, generate_connected_er
from nvgf.model import BANK, DENSE, LayerSpec, init_parameters
from nvgf.training import TrainConfig, evaluate, train


def path_graph(n):
    return Graph(n, tuple((i, i + 1, 1.0) for i in range(n - 1)))


def test_time_zero_is_a_delta():
    g = generate_connected_er(8, 0.4, 0)
    for diffusion in ("adjacency", "scaled_adjacency"):
        np.testing.assert_array_equal(diffuse(g, 3, 0, diffusion=diffusion), np.eye(8)[3])


def test_path_example():
    np.testing.assert_array_equal(diffuse(path_graph(3), 0, 1), [0, 1, 0])
    np.testing.assert_array_equal(diffuse(path_graph(3), 0, 2), [1, 0, 1])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 20), st.integers(0, 2**32 - 1), st.data())
def test_diffusion_matches_matrix_power(n, seed, data):
    g = generate_connected_er(n, 0.4, seed)
    c = data.draw(st.integers(0, n - 1))
    t = data.draw(st.integers(0, n - 1))
    for diffusion in ("adjacency", "scaled_adjacency"):
        w = build_shift(g, diffusion).matrix
        expected = np.linalg.matrix_power(w, t)[:, c]
        scale = max(1.0, np.abs(expected).max())
        np.testing.assert_allclose(diffuse(g, c, t, diffusion=diffusion), expected, rtol=0, atol=1e-9 * scale)


def test_unit_l2_normalization():
    g = generate_connected_er(15, 0.4, 7)
    d = generate_source_localization(g, 50, 0, normalization="unit_l2", seed=0)
    np.testing.assert_allclose(np.linalg.norm(d.train_x, axis=1), 1.0, atol=1e-12)
    assert np.linalg.norm(diffuse(g, 2, 4, "unit_l2")) == pytest.approx(1.0)


def test_noise_only_on_test_split_with_requested_variance():
    g = generate_connected_er(15, 0.4, 7)
    sigma2 = 0.01
    noisy = generate_source_localization(g, 100, 1000, sigma2=sigma2, seed=4)
    clean = generate_source_localization(g, 100, 1000, sigma2=0.0, seed=4)
    np.testing.assert_array_equal(noisy.train_x, clean.train_x)
    np.testing.assert_array_equal(noisy.test_y, clean.test_y)
    resid = (noisy.test_x - clean.test_x).ravel()
    assert resid.size >= 10_000
    assert abs(resid.var() - sigma2) <= 0.1 * sigma2
    assert abs(resid.mean()) < 4 * np.sqrt(sigma2 / resid.size)


def test_labels_are_sources_and_provenance_replays():
    g = generate_connected_er(12, 0.4, 3)
    d = generate_source_localization(g, 40, 10, seed=1)
    assert d.num_classes == d.num_nodes == 12
    for s in d.samples("train"):
        assert s.label == s.provenance.source
        assert 0 <= s.provenance.time <= 11
        np.testing.assert_array_equal(s.signal, diffuse(g, s.label, s.provenance.time, diffusion="scaled_adjacency"))
    assert [s.provenance.noise_id for s in d.samples("test")] == list(range(10))


def test_max_time():
    g = generate_connected_er(12, 0.4, 3)
    d = generate_source_localization(g, 60, 0, seed=1, max_time=0)
    np.testing.assert_array_equal(d.train_x, np.eye(12)[d.train_y])


def test_generation_is_deterministic():
    g = generate_connected_er(10, 0.4, 3)
    a = generate_source_localization(g, 30, 20, sigma2=0.1, seed=9)
    b = generate_source_localization(g, 30, 20, sigma2=0.1, seed=9)
    c = generate_source_localization(g, 30, 20, sigma2=0.1, seed=10)
    np.testing.assert_array_equal(a.train_x, b.train_x)
    np.testing.assert_array_equal(a.test_x, b.test_x)
    assert not np.array_equal(a.test_x, c.test_x)


def test_generation_errors():
    g = generate_connected_er(10, 0.4, 3)
    with pytest.raises(ValueError):
        generate_source_localization(g, 5, 5, sigma2=-1.0)
    with pytest.raises(ValueError):
        generate_source_localization(g, 5, 5, normalization="max")
    with pytest.raises(ValueError):
        generate_source_localization(g, 5, 5, diffusion="laplacian")


def test_round_trip(tmp_path):
    g = generate_connected_er(10, 0.4, 3)
    d = generate_source_localization(g, 15, 6, sigma2=1e-3, seed=2)
    path = tmp_path / "d.txt"
    write_dataset(d, path)
    back = read_dataset(path)
    np.testing.assert_array_equal(back.train_x, d.train_x)
    np.testing.assert_array_equal(back.test_x, d.test_x)
    np.testing.assert_array_equal(back.train_y, d.train_y)
    np.testing.assert_array_equal(back.test_y, d.test_y)
    assert (back.sigma2, back.normalization, back.graph_hash, back.diffusion) == \
        (d.sigma2, d.normalization, g.digest, "scaled_adjacency")
    assert back.train_provenance == d.train_provenance
    assert back.test_provenance == d.test_provenance
    write_dataset(back, tmp_path / "again.txt")
    assert (tmp_path / "again.txt").read_bytes() == path.read_bytes()


def test_provenance_comment():
    p = Provenance(3, 7, None)
    assert p.to_comment() == "c=3 t=7 noise=-"
    assert Provenance.from_comment(p.to_comment()) == p
    assert Provenance.from_comment("c=1 t=0 noise=4") == Provenance(1, 0, 4)
    with pytest.raises(DatasetFormatError):
        Provenance.from_comment("c=x")


@pytest.mark.parametrize("text,match", [
    ("", "empty"),
    ("dataset 3 3 1 0\n", "header"),
    ("dataset 3 3 1 0 0.0 none\ntrain 0 1.0 2.0\n", "expected N=3"),
    ("dataset 3 3 1 0 0.0 none\ntrain 5 1.0 2.0 3.0\n", "label 5"),
    ("dataset 3 3 2 0 0.0 none\ntrain 0 1.0 2.0 3.0\n", "promises 2"),
    ("dataset 3 3 1 0 0.0 none\nvalid 0 1.0 2.0 3.0\n", "split"),
    ("dataset 3 3 1 0 0.0 none\ntrain 0 1.0 x 3.0\n", ":2:"),
    ("dataset 3 3 1 0 0.0 max\n", "normalization"),
])
def test_read_errors(tmp_path, text, match):
    path = tmp_path / "bad.txt"
    path.write_text(text)
    with pytest.raises(DatasetFormatError, match=match):
        read_dataset(path)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(3, 2, np.zeros((2, 3)), [0], np.zeros((0, 3)), [])
    with pytest.raises(ValueError):
        Dataset(3, 2, np.zeros((1, 3)), [2], np.zeros((0, 3)), [])


def test_hand_built_fixture_trains_end_to_end(tmp_path):
    # 4-node path; class = which half the (undiffused) source sits in
    g = path_graph(4)
    rows = []
    for k in range(40):
        c = k % 4
        rows.append((c // 2, np.eye(4)[c] * (1 + 0.1 * (k % 3))))
    text = "dataset 4 2 32 8 0.0 none\n" + "".join(
        f"{'train' if k < 32 else 'test'} {label} " + " ".join(repr(float(v)) for v in x) + "\n"
        for k, (label, x) in enumerate(rows)
    )
    path = tmp_path / "toy.txt"
    path.write_text(text)
    data = read_dataset(path)
    assert data.num_classes == 2 and len(data.train_y) == 32 and len(data.test_y) == 8
    specs = [LayerSpec(BANK, order=2, features_out=4), LayerSpec(DENSE, features_out=8)]
    m = init_parameters(specs, g, 2, seed=0)
    m, metrics = train(m, data, TrainConfig(learning_rate=0.05, epochs=60, batch_size=8, dropout_p=0.0))
    assert metrics.epoch_losses[-1] < metrics.epoch_losses[0]
    assert evaluate(m, data).test_accuracy == 1.0
