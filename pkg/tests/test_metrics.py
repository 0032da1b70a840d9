import numpy as np
import pytest
import torch
from scipy import stats as scipy_stats
from skimage.metrics import structural_similarity as skimage_ssim

from arlatent.errors import (
    ContractError,
    UndefinedCorrelationError,
    UndefinedMetricError,
)
from arlatent.metrics import (
    CodesTable,
    MetricsReport,
    evaluate_model,
    interpretability_score,
    modularity_metric,
    sap_metric,
    scc_metric,
    spearman,
    ssim,
)
from arlatent.perceptual import PerceptualDistance, perceptual_feature_distance
from arlatent import synth


class TestSSIM:
    def test_identity_is_one(self, rng):
        x = rng.random((2, 1, 32, 32))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_constant_zero_vs_one(self):
        x = np.zeros((32, 32))
        y = np.ones((32, 32))
        expected = 1e-4 / 1.0001
        assert ssim(x, y) == pytest.approx(expected, abs=1e-9)

    def test_symmetry(self, rng):
        x = rng.random((1, 1, 24, 24))
        y = rng.random((1, 1, 24, 24))
        assert ssim(x, y) == pytest.approx(ssim(y, x), abs=1e-12)

    def test_window_larger_than_image(self):
        with pytest.raises(ContractError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_matches_skimage_reference(self, rng):
        for _ in range(5):
            x = rng.random((28, 34))
            y = np.clip(x + 0.2 * rng.random((28, 34)), 0, 1)
            ours = ssim(x, y)
            theirs = skimage_ssim(
                x, y, win_size=11, gaussian_weights=True, sigma=1.5,
                use_sample_covariance=False, data_range=1.0, K1=0.01, K2=0.03,
            )
            assert ours == pytest.approx(theirs, abs=1e-7)

    def test_batch_is_mean_of_images(self, rng):
        x = rng.random((3, 2, 16, 16))
        y = rng.random((3, 2, 16, 16))
        per_image = [ssim(x[i, c], y[i, c]) for i in range(3) for c in range(2)]
        assert ssim(x, y) == pytest.approx(np.mean(per_image), abs=1e-12)


class TestPerceptualDistance:
    def test_identity_zero(self, rng):
        x = rng.random((2, 2, 32, 32)).astype(np.float32)
        assert perceptual_feature_distance(x, x) == 0.0

    def test_symmetric(self, rng):
        x = rng.random((1, 1, 32, 32)).astype(np.float32)
        y = rng.random((1, 1, 32, 32)).astype(np.float32)
        assert perceptual_feature_distance(x, y) == pytest.approx(
            perceptual_feature_distance(y, x), rel=1e-6
        )

    def test_positive_for_distinct(self, rng):
        x = rng.random((1, 1, 32, 32)).astype(np.float32)
        y = x.copy()
        y[0, 0, 3, 7] += 0.25
        assert perceptual_feature_distance(x, y) > 0.0

    def test_deterministic_across_instances(self, rng):
        x = rng.random((1, 2, 32, 32)).astype(np.float32)
        y = rng.random((1, 2, 32, 32)).astype(np.float32)
        a = PerceptualDistance()
        b = PerceptualDistance()
        with torch.no_grad():
            va = float(a(torch.from_numpy(x), torch.from_numpy(y)))
            vb = float(b(torch.from_numpy(x), torch.from_numpy(y)))
        assert va == vb

    def test_shuffle_costs_more_than_blur(self):
        from scipy.ndimage import gaussian_filter

        record = synth.rasterize(
            synth.sample_shape_spec(4), (64, 64)
        )
        x = record.image[None]
        blurred = gaussian_filter(x, sigma=(0, 0, 0.7, 0.7))
        flat = x.reshape(-1).copy()
        np.random.default_rng(0).shuffle(flat)
        shuffled = flat.reshape(x.shape)
        assert perceptual_feature_distance(x, shuffled) > perceptual_feature_distance(x, blurred)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            perceptual_feature_distance(np.zeros((1, 1, 16, 16)), np.zeros((1, 1, 16, 8)))


class TestSpearman:
    def test_monotone_identity(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == 1.0

    def test_three_point_fixture(self):
        # ranks differ by (-2, 1, 1): rho = 1 - 6*6/(3*8) = -0.5
        assert spearman([1, 2, 3], [30, 10, 20]) == pytest.approx(-0.5, abs=1e-12)

    def test_rank_invariance_under_exp(self, rng):
        u = rng.normal(size=50)
        assert spearman(u, np.exp(u)) == pytest.approx(1.0, abs=1e-12)

    def test_ties_use_average_ranks(self):
        u = [1.0, 2.0, 2.0, 3.0, 5.0]
        v = [2.0, 1.0, 4.0, 4.0, 8.0]
        ours = spearman(u, v)
        theirs = scipy_stats.spearmanr(u, v).statistic
        assert ours == pytest.approx(theirs, abs=1e-12)

    def test_matches_scipy_on_random(self, rng):
        for _ in range(10):
            u = rng.integers(0, 6, size=40).astype(float)  # plenty of ties
            v = rng.normal(size=40)
            assert spearman(u, v) == pytest.approx(
                scipy_stats.spearmanr(u, v).statistic, abs=1e-12
            )

    def test_constant_rejected(self):
        with pytest.raises(UndefinedCorrelationError):
            spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_too_short(self):
        with pytest.raises(ContractError):
            spearman([1.0, 2.0], [2.0, 1.0])


def perfect_table(n=1000, d=16, m=6, noise=1e-3, seed=0) -> CodesTable:
    rng = np.random.default_rng(seed)
    attrs = rng.normal(size=(n, m))
    codes = rng.normal(size=(n, d))
    codes[:, :m] = attrs + noise * rng.normal(size=(n, m))
    return CodesTable(codes, attrs, tuple(f"a{i}_ed" if i % 2 == 0 else f"a{i}_es" for i in range(m)))


def noise_table(n=1000, d=16, m=6, seed=1) -> CodesTable:
    rng = np.random.default_rng(seed)
    return CodesTable(
        rng.normal(size=(n, d)),
        rng.normal(size=(n, m)),
        tuple(f"a{i}_ed" for i in range(m)),
    )


class TestSCC:
    def test_perfect_codes(self):
        table = perfect_table(noise=0.0)
        assert scc_metric(table) == pytest.approx(1.0, abs=1e-12)

    def test_independent_codes_low(self):
        assert scc_metric(noise_table()) < 0.15

    def test_sign_flip_invariant(self):
        table = perfect_table(noise=0.0)
        flipped = CodesTable(
            table.codes * np.where(np.arange(table.n_dims) % 2 == 0, -1, 1),
            table.attributes,
            table.attribute_names,
        )
        assert scc_metric(flipped) == pytest.approx(scc_metric(table), abs=1e-12)

    def test_dimension_permutation_invariant(self, rng):
        table = perfect_table()
        perm = rng.permutation(table.n_dims)
        permuted = CodesTable(table.codes[:, perm], table.attributes, table.attribute_names)
        assert scc_metric(permuted) == pytest.approx(scc_metric(table), abs=1e-12)

    def test_increasing_transform_of_attributes_invariant(self):
        table = perfect_table()
        transformed = CodesTable(
            table.codes, np.exp(table.attributes), table.attribute_names
        )
        assert scc_metric(transformed) == pytest.approx(scc_metric(table), abs=1e-12)


class TestInterpretability:
    def test_exact_dimension_scores_one(self):
        mean, per_attr, groups = interpretability_score(perfect_table(noise=0.0))
        assert mean == pytest.approx(1.0, abs=1e-12)
        assert np.all(per_attr == 1.0)
        assert groups["ed"] == pytest.approx(1.0)
        assert groups["es"] == pytest.approx(1.0)

    def test_affine_transform_still_one(self):
        table = perfect_table(noise=0.0)
        scaled = CodesTable(2.0 * table.codes + 1.0, table.attributes, table.attribute_names)
        mean, _, _ = interpretability_score(scaled)
        assert mean == pytest.approx(1.0, abs=1e-12)

    def test_noise_codes_score_near_zero(self):
        mean, _, _ = interpretability_score(noise_table())
        assert mean < 0.05

    def test_split_too_small(self):
        rng = np.random.default_rng(0)
        table = CodesTable(rng.normal(size=(10, 3)), rng.normal(size=(10, 2)), ("x_ed", "y_es"))
        table.codes = table.codes[:9]
        table.attributes = table.attributes[:9]
        with pytest.raises(ContractError):
            interpretability_score(table)


class TestSAP:
    def test_single_predictive_dimension(self):
        rng = np.random.default_rng(3)
        attrs = rng.normal(size=(1000, 1))
        codes = rng.normal(size=(1000, 8))
        codes[:, 2] = attrs[:, 0]
        table = CodesTable(codes, attrs, ("a0_ed",))
        assert sap_metric(table) == pytest.approx(1.0, abs=0.05)

    def test_duplicated_predictive_dimensions_zero_gap(self):
        rng = np.random.default_rng(4)
        attrs = rng.normal(size=(500, 1))
        codes = rng.normal(size=(500, 4))
        codes[:, 0] = attrs[:, 0]
        codes[:, 1] = attrs[:, 0]
        table = CodesTable(codes, attrs, ("a0_ed",))
        assert sap_metric(table) == pytest.approx(0.0, abs=1e-9)

    def test_all_noise_near_zero(self):
        assert sap_metric(noise_table()) == pytest.approx(0.0, abs=0.05)


class TestModularity:
    def test_one_hot_dependence(self):
        # Off-template rank correlations of independent attributes vanish
        # only as N grows; 1e-3 at N=1000 is the finite-sample residue.
        table = perfect_table(noise=0.0, d=6, m=6)
        assert modularity_metric(table) == pytest.approx(1.0, abs=1e-3)

    def test_shared_dimension_penalty(self):
        rng = np.random.default_rng(5)
        n, m = 2000, 6
        attrs = rng.normal(size=(n, m))
        codes = np.zeros((n, 1))
        codes[:, 0] = attrs[:, 0] + attrs[:, 1]
        table = CodesTable(codes, attrs, tuple(f"a{i}_ed" for i in range(m)))
        assert modularity_metric(table) == pytest.approx(1.0 - 1.0 / (m - 1), abs=0.05)

    def test_single_attribute_is_one(self, rng):
        table = CodesTable(rng.normal(size=(100, 4)), rng.normal(size=(100, 1)), ("a0_ed",))
        assert modularity_metric(table) == 1.0

    def test_all_inactive_raises(self):
        rng = np.random.default_rng(6)
        n = 200_000  # huge N so null correlations stay below threshold
        codes = rng.normal(size=(n, 2))
        attrs = rng.normal(size=(n, 3))
        table = CodesTable(codes, attrs, ("a_ed", "b_ed", "c_es"))
        with pytest.raises(UndefinedMetricError):
            modularity_metric(table)

    def test_sign_flip_invariant(self):
        table = perfect_table()
        flipped = CodesTable(-table.codes, table.attributes, table.attribute_names)
        assert modularity_metric(flipped) == pytest.approx(modularity_metric(table), abs=1e-12)


class TestSharedInvariances:
    def test_latent_metrics_invariant_under_dim_permutation(self, rng):
        table = perfect_table(n=400)
        perm = rng.permutation(table.n_dims)
        permuted = CodesTable(table.codes[:, perm], table.attributes, table.attribute_names)
        assert scc_metric(permuted) == pytest.approx(scc_metric(table), abs=1e-12)
        assert sap_metric(permuted) == pytest.approx(sap_metric(table), abs=1e-12)
        assert modularity_metric(permuted) == pytest.approx(modularity_metric(table), abs=1e-12)
        assert interpretability_score(permuted)[0] == pytest.approx(
            interpretability_score(table)[0], abs=1e-12
        )

    def test_rank_metrics_invariant_under_attribute_transform(self):
        table = perfect_table(n=400)
        cubed = CodesTable(
            table.codes, table.attributes**3 + 2.0, table.attribute_names
        )  # strictly increasing map
        assert scc_metric(cubed) == pytest.approx(scc_metric(table), abs=1e-12)
        assert modularity_metric(cubed) == pytest.approx(modularity_metric(table), abs=1e-12)

    def test_interpretability_invariant_under_affine_attribute_transform(self):
        table = perfect_table(n=400)
        affine = CodesTable(table.codes, -3.0 * table.attributes + 5.0, table.attribute_names)
        assert interpretability_score(affine)[0] == pytest.approx(
            interpretability_score(table)[0], abs=1e-9
        )


class TestPerfectFixtureThresholds:
    def test_all_three_metrics_above_095(self):
        table = perfect_table(n=1000)
        assert scc_metric(table) >= 0.95
        assert interpretability_score(table)[0] >= 0.95
        assert modularity_metric(table) >= 0.95


@pytest.fixture(scope="module")
def dataset():
    return synth.generate_dataset(
        80, seed=21, canvas=(32, 32), variation=synth.scaled_variation((32, 32))
    )


class TestEvaluateModel:

    def test_identity_reconstruction_stub(self, dataset):
        # A stub whose decode returns exactly the encoded batch's images.
        class IdentityStub:
            class config:
                phase = "both"
                num_regularized_dims = 6
                latent_dim = 16

            def eval(self):
                return self

            def encode(self, x):
                self._x = x
                mu = torch.zeros(x.shape[0], 16)
                mu[:, 0] = x.mean(dim=(1, 2, 3))  # non-constant codes
                mu += 1e-3 * torch.arange(x.shape[0], dtype=torch.float32)[:, None]
                return mu, torch.zeros_like(mu)

            def decode(self, z):
                return self._x

        report = evaluate_model(IdentityStub(), dataset, split="test")
        assert report.ssim_all == pytest.approx(1.0, abs=1e-9)
        assert report.pfd_all == 0.0

    def test_report_round_trips_through_json(self, tmp_path, dataset, tiny_model_config):
        from arlatent.models import build_model

        model = build_model(tiny_model_config, seed=0)
        report = evaluate_model(model, dataset, split="test", regularized=True)
        path = tmp_path / "report.json"
        report.to_json(path)
        back = MetricsReport.from_json(path)
        assert back.to_dict() == report.to_dict()
        assert -1.0 <= report.ssim_all <= 1.0
        assert report.pfd_all >= 0.0
        assert 0.0 <= report.scc <= 1.0
        assert 0.0 <= report.sap <= 1.0
        assert 0.0 <= report.interp_all <= 1.0
        assert set(report.per_attribute) == set(dataset.attribute_names)
