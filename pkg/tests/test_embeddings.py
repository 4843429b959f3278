import numpy as np
import pytest

from funnellens import autodiff as ad
from funnellens.data import ItemVocab
from funnellens.embeddings import init_cold, load_warm, save_warm
from funnellens.errors import ConfigError, DataError


def write_warm(path, dim, rows):
    lines = [f"dim={dim}"] + [name + " " + " ".join(str(v) for v in vec) for name, vec in rows]
    path.write_text("\n".join(lines) + "\n")


class TestColdStart:
    def test_deterministic(self):
        a = init_cold("item", 4, 3, seed=7)
        b = init_cold("item", 4, 3, seed=7)
        assert np.array_equal(a.matrix.data, b.matrix.data)

    def test_seed_changes_values(self):
        a = init_cold("item", 4, 3, seed=7)
        b = init_cold("item", 4, 3, seed=8)
        assert not np.array_equal(a.matrix.data, b.matrix.data)

    def test_range(self):
        t = init_cold("user", 50, 20, seed=0)
        assert np.all(t.matrix.data >= -0.05)
        assert np.all(t.matrix.data <= 0.05)

    def test_mean_near_zero(self):
        t = init_cold("item", 1000, 10, seed=3)
        assert abs(float(t.matrix.data.mean())) < 0.005

    def test_bad_shape_rejected(self):
        with pytest.raises(ConfigError):
            init_cold("item", 0, 3, seed=0)


class TestLookup:
    def test_identity_table_row(self):
        t = init_cold("item", 3, 3, seed=0)
        t.matrix.data[:] = np.eye(3)
        assert np.array_equal(t.lookup(2).data, [0.0, 0.0, 1.0])

    def test_gradient_hits_only_selected_row(self):
        t = init_cold("item", 5, 4, seed=0)
        vec = t.lookup(1)
        loss = ad.mean(vec)
        loss.backward()
        grad = t.matrix.grad
        assert np.allclose(grad[1], 0.25)
        mask = np.ones(5, dtype=bool)
        mask[1] = False
        assert np.all(grad[mask] == 0.0)

    def test_out_of_range(self):
        t = init_cold("item", 3, 2, seed=0)
        with pytest.raises(IndexError):
            t.lookup(3)
        with pytest.raises(IndexError):
            t.lookup(-1)

    def test_frozen_lookup_is_detached(self):
        t = init_cold("item", 3, 2, seed=0)
        t.trainable = False
        vec = t.lookup(0)
        assert vec.parents == ()
        ad.mean(vec).backward()
        assert np.all(t.matrix.grad == 0.0)
        assert t.parameters() == []

    def test_trainable_table_exposes_parameter(self):
        t = init_cold("item", 3, 2, seed=0)
        assert t.parameters() == [t.matrix]


class TestWarmStart:
    def test_full_coverage_loads_exact_values(self, tmp_path):
        vocab = ItemVocab(["apple", "pear"])
        path = tmp_path / "vec.txt"
        write_warm(path, 3, [("apple", [0.1, 0.2, 0.3]), ("pear", [-1.0, 0.5, 2.0])])
        t = load_warm(path, vocab, dim=3, fine_tune=True)
        assert t.n_cold_rows == 3  # only the reserved rows
        assert np.array_equal(t.matrix.data[vocab.index_of("apple")], [0.1, 0.2, 0.3])
        assert np.array_equal(t.matrix.data[vocab.index_of("pear")], [-1.0, 0.5, 2.0])

    def test_missing_items_fall_back_to_cold(self, tmp_path):
        vocab = ItemVocab(["apple", "pear", "fig"])
        path = tmp_path / "vec.txt"
        write_warm(path, 2, [("apple", [1.0, 2.0])])
        t = load_warm(path, vocab, dim=2, fine_tune=True, seed=5)
        assert t.n_cold_rows == 5  # pear, fig and 3 reserved rows
        fig_row = t.matrix.data[vocab.index_of("fig")]
        assert np.all(np.abs(fig_row) <= 0.05)

    def test_dim_mismatch_fatal(self, tmp_path):
        vocab = ItemVocab(["apple"])
        path = tmp_path / "vec.txt"
        write_warm(path, 2, [("apple", [1.0, 2.0])])
        with pytest.raises(ConfigError, match="dim"):
            load_warm(path, vocab, dim=3, fine_tune=True)

    def test_row_width_mismatch_fatal(self, tmp_path):
        vocab = ItemVocab(["itemX"])
        path = tmp_path / "vec.txt"
        path.write_text("dim=3\nitemX 0.1 0.2\n")
        with pytest.raises(DataError, match="itemX"):
            load_warm(path, vocab, dim=3, fine_tune=True)

    def test_missing_header_fatal(self, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("apple 0.1 0.2\n")
        with pytest.raises(DataError, match="dim="):
            load_warm(path, ItemVocab(["apple"]), dim=2, fine_tune=True)

    def test_unreadable_file_fatal(self, tmp_path):
        with pytest.raises(DataError):
            load_warm(tmp_path / "nope.txt", ItemVocab(["a"]), dim=2, fine_tune=True)

    def test_fine_tune_flag_controls_trainable(self, tmp_path):
        vocab = ItemVocab(["apple"])
        path = tmp_path / "vec.txt"
        write_warm(path, 2, [("apple", [1.0, 2.0])])
        frozen = load_warm(path, vocab, dim=2, fine_tune=False)
        assert frozen.trainable is False
        live = load_warm(path, vocab, dim=2, fine_tune=True)
        assert live.trainable is True

    def test_frozen_table_unchanged_by_optimizer(self, tmp_path):
        vocab = ItemVocab(["apple", "pear"])
        path = tmp_path / "vec.txt"
        write_warm(path, 2, [("apple", [1.0, 2.0]), ("pear", [3.0, 4.0])])
        table = load_warm(path, vocab, dim=2, fine_tune=False)
        before = table.matrix.data.copy()
        extra = ad.Tensor(np.ones(2))
        opt = ad.RMSprop(table.parameters() + [extra])
        for _ in range(100):
            opt.zero_grad()
            loss = ad.mean(ad.mul(table.lookup(3), extra))
            loss.backward()
            opt.step()
        assert np.array_equal(table.matrix.data, before)
        assert not np.array_equal(extra.data, np.ones(2))

    def test_save_load_round_trip(self, tmp_path, rng):
        vocab = ItemVocab([f"p{i}" for i in range(20)])
        table = init_cold("item", len(vocab), 6, seed=9)
        table.matrix.data[:] = rng.normal(size=table.matrix.data.shape)
        path = tmp_path / "vec.txt"
        save_warm(path, vocab, table)
        back = load_warm(path, vocab, dim=6, fine_tune=True)
        for item in vocab.items:
            idx = vocab.index_of(item)
            assert np.array_equal(back.matrix.data[idx], table.matrix.data[idx])
