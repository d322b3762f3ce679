import numpy as np
import pytest

from synthid.datagen import (
    GeneratorModel,
    LabeledDataset,
    derive_subset,
    fit_generator,
    make_authentic,
    read_dataset_csv,
    sample_synthetic,
    write_dataset_csv,
)
from synthid.errors import ConfigError, InputError, ProtocolError


def mean_prototype_cosine(gen, authentic):
    means = authentic.class_means()
    p = means / np.linalg.norm(means, axis=1, keepdims=True)
    return float(np.mean(np.sum(p * gen.prototypes, axis=1)))


class TestAuthentic:
    def test_zero_noise_gives_prototypes(self):
        ds = make_authentic(5, 4, 16, 0.0, seed=1)
        for c in range(5):
            rows = ds.samples[ds.class_indices(c)]
            assert np.all(rows == rows[0])
        np.testing.assert_allclose(np.linalg.norm(ds.samples, axis=1), 1.0, atol=1e-15)

    def test_deterministic(self):
        a = make_authentic(10, 5, 16, 0.3, seed=4)
        b = make_authentic(10, 5, 16, 0.3, seed=4)
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_within_class_closer_than_between(self):
        ds = make_authentic(100, 6, 64, 0.3, seed=0)
        cos = ds.samples @ ds.samples.T
        same = ds.labels[:, None] == ds.labels[None, :]
        off_diag = ~np.eye(len(ds), dtype=bool)
        assert cos[same & off_diag].mean() > cos[~same].mean() + 0.1

    def test_class_major_layout(self):
        ds = make_authentic(3, 4, 8, 0.1, seed=0)
        np.testing.assert_array_equal(ds.labels, np.repeat(np.arange(3), 4))

    def test_identity_subspace(self):
        ds = make_authentic(20, 5, 16, 0.0, seed=2, identity_dim=4)
        assert np.all(ds.samples[:, 4:] == 0.0)
        noisy = make_authentic(20, 5, 16, 0.0, seed=2, identity_dim=4, nuisance=0.5)
        assert np.any(noisy.samples[:, 4:] != 0.0)

    @pytest.mark.parametrize(
        "args,kwargs",
        [
            ((1, 5, 16, 0.1, 0), {}),
            ((5, 1, 16, 0.1, 0), {}),
            ((5, 5, 4, 0.1, 0), {}),
            ((5, 5, 16, -0.1, 0), {}),
            ((5, 5, 16, 0.1, 0), dict(identity_dim=1)),
            ((5, 5, 16, 0.1, 0), dict(nuisance=0.2)),
        ],
    )
    def test_invalid(self, args, kwargs):
        with pytest.raises(ConfigError):
            make_authentic(*args, **kwargs)


class TestGenerator:
    def test_full_leakage_reproduces_class_means(self):
        auth = make_authentic(10, 5, 16, 0.2, seed=0)
        gen = fit_generator(auth, 1.0, 0.2, seed=1)
        means = auth.class_means()
        np.testing.assert_allclose(gen.prototypes, means / np.linalg.norm(means, axis=1, keepdims=True), atol=1e-15)

    def test_leakage_monotone(self):
        auth = make_authentic(200, 4, 64, 0.2, seed=0)
        cos = [mean_prototype_cosine(fit_generator(auth, lam, 0.2, seed=9), auth) for lam in (0, 0.25, 0.5, 0.75, 1)]
        assert all(b >= a for a, b in zip(cos, cos[1:]))
        assert abs(cos[0]) < 0.05 and cos[0] < cos[2] < cos[4]

    def test_fitted_fresh_identities_are_unit_and_independent(self):
        auth = make_authentic(200, 4, 32, 0.2, seed=0, identity_dim=8, nuisance=0.3)
        gen = fit_generator(auth, 0.0, 0.2, seed=3, fresh="fitted", reproduce_variation=1.0)
        np.testing.assert_allclose(np.linalg.norm(gen.prototypes, axis=1), 1.0, atol=1e-12)
        assert abs(mean_prototype_cosine(gen, auth)) < 0.1
        assert gen.variation_factor.shape == (32, 32)

    def test_invalid(self):
        auth = make_authentic(5, 4, 16, 0.2, seed=0)
        with pytest.raises(ConfigError):
            fit_generator(auth, 1.5, 0.2, seed=0)
        with pytest.raises(ConfigError):
            fit_generator(auth, 0.5, 0.2, seed=0, fresh="other")
        with pytest.raises(InputError):
            GeneratorModel(np.ones((3, 4)), 0.1, 0.5, 0)


class TestSampling:
    def test_counts(self):
        gen = fit_generator(make_authentic(10, 5, 16, 0.2, seed=0), 0.5, 0.2, seed=1)
        syn = sample_synthetic(gen, 60, seed=2)
        assert len(syn) == 600 and syn.provenance == "synthetic"
        np.testing.assert_array_equal(syn.class_counts(), np.full(10, 60))

    def test_zero_noise_samples_identical(self):
        gen = fit_generator(make_authentic(4, 5, 16, 0.2, seed=0), 0.5, 0.0, seed=1)
        syn = sample_synthetic(gen, 5, seed=2)
        for c in range(4):
            rows = syn.samples[syn.class_indices(c)]
            assert np.all(rows == rows[0])

    def test_seeds(self):
        gen = fit_generator(make_authentic(4, 5, 16, 0.2, seed=0), 0.5, 0.2, seed=1)
        a, b = sample_synthetic(gen, 5, seed=2), sample_synthetic(gen, 5, seed=3)
        assert not np.array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert sample_synthetic(gen, 5, seed=2).samples.tobytes() == a.samples.tobytes()


class TestSubset:
    def setup_method(self):
        gen = fit_generator(make_authentic(6, 5, 16, 0.2, seed=0), 0.5, 0.2, seed=1)
        self.ds = sample_synthetic(gen, 60, seed=2)

    def test_full_subset_is_identity(self):
        sub = derive_subset(self.ds, 60)
        assert sub.samples.tobytes() == self.ds.samples.tobytes()

    def test_nesting_and_counts(self):
        subs = [derive_subset(self.ds, n) for n in (10, 20, 40, 60)]
        assert len(subs[0]) == 60
        for small, big in zip(subs, subs[1:]):
            rows = {r.tobytes() for r in big.samples}
            assert all(r.tobytes() in rows for r in small.samples)

    def test_interleaved_order(self):
        ds = LabeledDataset(np.arange(12.0).reshape(6, 2), [1, 0, 1, 0, 0, 1], 2)
        sub = derive_subset(ds, 2)
        np.testing.assert_array_equal(sub.labels, [1, 0, 1, 0])

    def test_insufficient(self):
        with pytest.raises(ProtocolError):
            derive_subset(self.ds, 61)


class TestCsv:
    def test_round_trip_and_byte_stable(self, tmp_path):
        ds = make_authentic(4, 3, 8, 0.3, seed=5)
        write_dataset_csv(tmp_path / "a.csv", ds)
        back = read_dataset_csv(tmp_path / "a.csv")
        assert back.samples.tobytes() == ds.samples.tobytes()
        np.testing.assert_array_equal(back.labels, ds.labels)
        write_dataset_csv(tmp_path / "b.csv", back)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.csv").read_text().startswith("label,f0,f1,")

    def test_ragged_row(self, tmp_path):
        (tmp_path / "x.csv").write_text("label,f0,f1\n0,1.0\n")
        with pytest.raises(InputError):
            read_dataset_csv(tmp_path / "x.csv")
