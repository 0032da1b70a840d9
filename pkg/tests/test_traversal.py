import numpy as np
import pytest
import torch
from scipy.ndimage import gaussian_filter

from arlatent import synth
from arlatent.errors import ContractError
from arlatent.models import build_model
from arlatent.traversal import (
    measure_decoded_attribute,
    sample_base_codes,
    save_traversal_report,
    traversal_monotonicity,
    traverse,
)


@pytest.fixture()
def model(tiny_model_config):
    m = build_model(tiny_model_config, seed=0)
    m.eval()
    return m


class TestTraverse:
    def test_linspace_values(self, model):
        grid = traverse(model, np.zeros(8), dim=2, value_range=(-3, 3), steps=9)
        assert np.allclose(grid.values, np.linspace(-3, 3, 9))
        assert (np.diff(grid.values) > 0).all()

    def test_decoded_count_matches_steps(self, model):
        for steps in (3, 5, 9):
            grid = traverse(model, np.zeros(8), dim=0, steps=steps)
            assert grid.decoded.shape == (steps, 2, 32, 32)

    def test_center_step_equals_base_decode(self, model):
        # Batched and single decodes reorder conv reductions, so equality is
        # up to float32 rounding rather than bitwise.
        base = np.zeros(8, dtype=np.float32)
        grid = traverse(model, base, dim=3, value_range=(-2, 2), steps=3)
        with torch.no_grad():
            direct = model.decode(torch.from_numpy(base[None])).numpy()
        assert np.allclose(grid.decoded[1], direct[0], atol=1e-6)

    def test_dim_out_of_bounds(self, model):
        with pytest.raises(ContractError):
            traverse(model, np.zeros(8), dim=8)

    def test_too_few_steps(self, model):
        with pytest.raises(ContractError):
            traverse(model, np.zeros(8), dim=0, steps=2)

    def test_deterministic(self, model):
        a = traverse(model, np.full(8, 0.3), dim=1)
        b = traverse(model, np.full(8, 0.3), dim=1)
        assert np.array_equal(a.decoded, b.decoded)


@pytest.fixture(scope="module")
def big_record():
    spec = synth.ShapeSpec(
        lv_semiaxes_ed=(16.0, 13.0),
        lv_semiaxes_es=(12.0, 9.75),
        myo_thickness_ed=4.0,
        myo_thickness_es=4.8,
        rv_semiaxes_ed=(11.0, 15.0),
        rv_semiaxes_es=(8.5, 11.5),
        center=(64.0, 76.0),
        rv_offset=-34.0,
        rotation=0.0,
    )
    return synth.rasterize(spec, (128, 128))


class TestMeasureDecodedAttribute:
    def test_ground_truth_measures_exactly(self, big_record):
        for name in synth.ATTRIBUTE_NAMES:
            assert measure_decoded_attribute(big_record.image, name) == big_record.attributes[name]

    def test_all_zero_image(self):
        assert measure_decoded_attribute(np.zeros((2, 64, 64)), "lv_area_ed") == 0.0

    def test_blurred_ground_truth_within_15_percent(self, big_record):
        # Edge loss scales with perimeter/area, so the bound is asserted on
        # the compact dilated-phase regions.
        blurred = gaussian_filter(big_record.image, sigma=(0, 1.0, 1.0))
        for name in ("lv_area_ed", "rv_area_ed"):
            stored = big_record.attributes[name]
            measured = measure_decoded_attribute(blurred, name)
            assert abs(measured - stored) / stored < 0.15

    def test_unknown_attribute(self):
        with pytest.raises(ContractError):
            measure_decoded_attribute(np.zeros((2, 64, 64)), "septum_area_ed")

    def test_channel_selection(self, big_record):
        es = measure_decoded_attribute(big_record.image, "lv_area_es")
        assert es == big_record.attributes["lv_area_es"]
        assert es != big_record.attributes["lv_area_ed"]


class _OracleDecoder:
    """Stub whose decoded disc area grows monotonically with one coordinate."""

    def __init__(self, dim, latent_dim=8, size=64):
        class config:
            pass

        self.config = config()
        self.config.latent_dim = latent_dim
        self.config.phase = "both"
        self.dim = dim
        self.size = size

    def eval(self):
        return self

    def decode(self, z):
        z = z.detach().numpy()
        out = np.zeros((z.shape[0], 2, self.size, self.size), dtype=np.float32)
        rows = np.arange(self.size)[:, None] - self.size / 2
        cols = np.arange(self.size)[None, :] - self.size / 2
        for i, code in enumerate(z):
            radius = 8.0 + 1.5 * code[self.dim]
            mask = rows**2 + cols**2 <= max(radius, 1.0) ** 2
            out[i, 0][mask] = 1.0
            out[i, 1][mask] = 1.0
        return torch.from_numpy(out)


class _ConstantDecoder(_OracleDecoder):
    def decode(self, z):
        return torch.zeros(z.shape[0], 2, self.size, self.size)


class TestMonotonicity:
    def test_oracle_decoder_scores_one(self):
        stub = _OracleDecoder(dim=2)
        result = traversal_monotonicity(stub, 2, "lv_area_ed", np.zeros((4, 8)))
        assert result.score == 1.0
        assert result.n_degenerate == 0

    def test_constant_decoder_flagged_zero(self):
        stub = _ConstantDecoder(dim=0)
        result = traversal_monotonicity(stub, 0, "lv_area_ed", np.zeros((3, 8)))
        assert result.score == 0.0
        assert result.n_degenerate == 3
        assert float(result) == 0.0

    def test_untrained_model_reported_not_asserted(self, model, small_dataset):
        bases = sample_base_codes(model, small_dataset, n_bases=3, seed=0)
        result = traversal_monotonicity(model, 0, "lv_area_ed", bases)
        assert -1.0 <= result.score <= 1.0


class TestReportEmission:
    def test_png_and_json_written(self, tmp_path, model):
        grids = {d: traverse(model, np.zeros(8), d, steps=5) for d in (0, 1)}
        png, record = save_traversal_report(
            grids, {0: "lv_area_ed", 1: "lv_area_es"}, tmp_path
        )
        assert png.is_file() and png.stat().st_size > 0
        import json

        data = json.loads(record.read_text())
        assert set(data) == {"0", "1"}
        assert data["0"]["attribute"] == "lv_area_ed"
        assert len(data["0"]["values"]) == 5
        assert len(data["0"]["measured_area"]) == 5


def test_sample_base_codes_on_manifold(model, small_dataset):
    bases = sample_base_codes(model, small_dataset, n_bases=5, seed=1)
    assert bases.shape == (5, 8)
    again = sample_base_codes(model, small_dataset, n_bases=5, seed=1)
    assert np.array_equal(bases, again)
