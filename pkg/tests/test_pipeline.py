"""End-to-end pipeline tests: fitting, detection, the binary model
container, and the sectioned config file."""

import hashlib
import struct

import numpy as np
import pytest

from fenkit.autoencoder import TrainConfig, Variant
from fenkit.datasets import SyntheticConfig, generate_synthetic
from fenkit.detectors import DetectorBankConfig
from fenkit.pipeline import (
    DEFAULT_LAYER_TEMPLATE,
    FORMAT_VERSION,
    MAGIC,
    DetectionResult,
    DetectionSummary,
    PipelineConfig,
    detect,
    fit,
    load,
    read_pipeline_config,
    resolve_layer_configs,
    save,
    write_pipeline_config,
)
from fenkit.transform import LayerConfig

SMALL_TEMPLATE = LayerConfig(
    window_width=20,
    subset_size=3,
    max_subsets=10,
    code_dim=4,
    training=TrainConfig(epochs=60),
    hidden_dims=(16, 8),
)


def small_config(**overrides) -> PipelineConfig:
    settings = dict(l_max=2, layer_template=SMALL_TEMPLATE, master_seed=3)
    settings.update(overrides)
    return PipelineConfig(**settings)


def synthetic_pair(fault_type="step", amplitude=4.0, seed=42):
    config = SyntheticConfig(
        n_variables=6, n_train=160, n_test=140, fault_type=fault_type,
        fault_amplitude=amplitude, fault_channels=(1, 4), fault_onset=60,
        seed=seed,
    )
    return generate_synthetic(config).split(config.n_train)


@pytest.fixture(scope="module")
def data_pair():
    return synthetic_pair()


@pytest.fixture(scope="module")
def fitted(data_pair):
    train, _ = data_pair
    return fit(train, small_config())


class TestPipelineConfig:
    def test_defaults(self):
        """The default recipe is two layers over the full bank."""
        config = PipelineConfig()
        assert config.l_max == 2
        assert config.layer_template == DEFAULT_LAYER_TEMPLATE
        assert config.layers == ()
        assert config.confidence == 0.99
        assert config.norm_order == 1

    def test_negative_depth_rejected(self):
        with pytest.raises(ValueError, match="l_max"):
            PipelineConfig(l_max=-1)

    def test_layer_count_must_match_depth(self):
        with pytest.raises(ValueError, match="l_max"):
            PipelineConfig(l_max=2, layers=(SMALL_TEMPLATE,))

    def test_confidence_bounds(self):
        with pytest.raises(ValueError, match="confidence"):
            PipelineConfig(confidence=1.0)

    def test_norm_order_bounds(self):
        with pytest.raises(ValueError, match="norm_order"):
            PipelineConfig(norm_order=0)

    def test_template_resolution_derives_distinct_seeds(self):
        """Each layer gets its own subset seed and training seed, all
        reproducible from the master seed."""
        config = small_config()
        first = resolve_layer_configs(config)
        second = resolve_layer_configs(config)
        assert first == second
        assert len(first) == 2
        seeds = {c.seed for c in first} | {c.training.seed for c in first}
        assert len(seeds) == 4
        other = resolve_layer_configs(small_config(master_seed=4))
        assert first[0].seed != other[0].seed

    def test_explicit_layers_pass_through(self):
        layers = (SMALL_TEMPLATE, LayerConfig(window_width=15, subset_size=2))
        config = small_config(layers=layers)
        assert resolve_layer_configs(config) == list(layers)


class TestFit:
    def test_depth_accounting(self, fitted, data_pair):
        """Each layer consumes window_width - 1 rows; the fitted chain
        reports per-layer feature widths via its stored layers."""
        assert len(fitted.layers) == 2
        assert fitted.layers[0].input_features == 7
        assert fitted.layers[1].input_features == 4
        assert fitted.decision.code_dim == 4

    def test_faulty_training_labels_rejected(self, data_pair):
        _, test = data_pair
        with pytest.raises(ValueError, match="all-normal"):
            fit(test, small_config())

    def test_too_short_training_names_layer(self):
        train, _ = synthetic_pair(fault_type="none")
        short = train.split(30)[0]
        with pytest.raises(ValueError, match="layer 1"):
            fit(short, small_config())

    def test_zero_depth_skips_transform(self, data_pair):
        """l_max=0 calibrates the decision directly on the seven bank
        features."""
        train, _ = data_pair
        model = fit(train, small_config(l_max=0))
        assert model.layers == ()
        assert model.decision.code_dim == 7

    def test_refit_is_deterministic(self, data_pair, fitted):
        train, _ = data_pair
        again = fit(train, small_config())
        for left, right in zip(fitted.layers, again.layers):
            assert left.subsets == right.subsets
            for a, b in zip(left.autoencoder.encoder_layers,
                            right.autoencoder.encoder_layers):
                assert np.array_equal(a.weights, b.weights)
        assert again.decision.limit == fitted.decision.limit

    def test_master_seed_changes_weights(self, data_pair, fitted):
        train, _ = data_pair
        other = fit(train, small_config(master_seed=99))
        assert not np.array_equal(
            other.layers[0].autoencoder.encoder_layers[0].weights,
            fitted.layers[0].autoencoder.encoder_layers[0].weights,
        )

    def test_shallower_fit_is_a_prefix_of_deeper(self, data_pair, fitted):
        """Layer l depends only on the master seed and layer index, so a
        depth-1 fit reproduces the deeper model's first layer exactly."""
        train, _ = data_pair
        shallow = fit(train, small_config(l_max=1))
        assert shallow.layers[0].subsets == fitted.layers[0].subsets
        for a, b in zip(shallow.layers[0].autoencoder.encoder_layers,
                        fitted.layers[0].autoencoder.encoder_layers):
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.bias, b.bias)


class TestDetect:
    def test_scored_length_and_offset(self, fitted, data_pair):
        """Two stacked width-20 windows leave n - 38 scored rows."""
        _, test = data_pair
        result = detect(fitted, test)
        assert result.valid_from == 38
        assert result.index_values.shape == (test.n_samples - 38,)
        assert result.flags.shape == result.index_values.shape
        assert result.limit == fitted.decision.limit

    def test_flags_match_limit(self, fitted, data_pair):
        _, test = data_pair
        result = detect(fitted, test)
        np.testing.assert_array_equal(
            result.flags, result.index_values > result.limit)

    def test_summary_matches_flags(self, fitted, data_pair):
        _, test = data_pair
        result = detect(fitted, test)
        labels = test.labels[result.valid_from:]
        fault = labels > 0
        assert result.summary.fault_rows == int(fault.sum())
        assert result.summary.normal_rows == int((~fault).sum())
        assert result.summary.fdr == pytest.approx(result.flags[fault].mean())
        assert result.summary.far == pytest.approx(result.flags[~fault].mean())

    def test_summary_rate_none_without_fault_rows(self, fitted, data_pair):
        train, _ = data_pair
        result = detect(fitted, train)
        assert result.summary.fdr is None
        assert result.summary.fault_rows == 0
        assert result.summary.far is not None

    def test_detects_large_step(self, data_pair):
        """The direct bank index flags a 4-sigma step almost everywhere,
        with a quiet pre-onset region. Stacked layers need full-width
        windows for reliable detection, so depth 0 carries this check."""
        train, test = data_pair
        model = fit(train, small_config(l_max=0))
        result = detect(model, test)
        assert result.flags[-40:].mean() > 0.9
        assert result.summary.far < 0.3

    def test_variable_count_mismatch(self, fitted):
        wrong = generate_synthetic(
            SyntheticConfig(n_variables=5, n_train=60, n_test=20, seed=1))
        with pytest.raises(ValueError, match="5 variables"):
            detect(fitted, wrong)

    def test_zero_depth_scores_every_row(self, data_pair):
        train, test = data_pair
        model = fit(train, small_config(l_max=0))
        result = detect(model, test)
        assert result.valid_from == 0
        assert result.index_values.shape == (test.n_samples,)

    def test_detection_is_frozen(self, fitted, data_pair):
        """Repeated detection on the same data is bit-identical."""
        _, test = data_pair
        first = detect(fitted, test)
        second = detect(fitted, test)
        np.testing.assert_array_equal(first.index_values, second.index_values)
        np.testing.assert_array_equal(first.flags, second.flags)


class TestModelFile:
    def test_round_trip_detection_is_bit_identical(self, fitted, data_pair,
                                                   tmp_path):
        _, test = data_pair
        path = tmp_path / "model.fenet"
        save(fitted, path)
        restored = load(path)
        original = detect(fitted, test)
        replayed = detect(restored, test)
        np.testing.assert_array_equal(original.index_values,
                                      replayed.index_values)
        np.testing.assert_array_equal(original.flags, replayed.flags)
        assert replayed.valid_from == original.valid_from

    def test_save_is_deterministic(self, fitted, data_pair, tmp_path):
        """Saving the same fit twice, and saving a reloaded model, all
        produce byte-identical files."""
        first = tmp_path / "a.fenet"
        second = tmp_path / "b.fenet"
        third = tmp_path / "c.fenet"
        save(fitted, first)
        save(fitted, second)
        save(load(first), third)
        assert first.read_bytes() == second.read_bytes()
        assert first.read_bytes() == third.read_bytes()

    def test_refit_writes_identical_bytes(self, data_pair, fitted, tmp_path):
        train, _ = data_pair
        again = fit(train, small_config())
        first = tmp_path / "a.fenet"
        second = tmp_path / "b.fenet"
        save(fitted, first)
        save(again, second)
        assert first.read_bytes() == second.read_bytes()

    def test_restored_config_round_trips(self, fitted, tmp_path):
        """The loaded model carries explicit per-layer configs equal to
        the resolved originals."""
        path = tmp_path / "model.fenet"
        save(fitted, path)
        restored = load(path)
        assert restored.config.layers == tuple(
            resolve_layer_configs(fitted.config))
        assert restored.config.bank == fitted.config.bank
        assert restored.config.master_seed == fitted.config.master_seed
        assert restored.format_version == FORMAT_VERSION

    def test_corrupt_byte_rejected(self, fitted, tmp_path):
        path = tmp_path / "model.fenet"
        save(fitted, path)
        data = bytearray(path.read_bytes())
        index = len(data) // 2
        data[index] ^= 0xFF
        path.write_bytes(bytes(data))
        with pytest.raises(ValueError, match="checksum"):
            load(path)

    def test_truncated_file_rejected(self, fitted, tmp_path):
        path = tmp_path / "model.fenet"
        save(fitted, path)
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with pytest.raises(ValueError, match="checksum"):
            load(path)

    def test_wrong_magic_rejected(self, fitted, tmp_path):
        path = tmp_path / "model.fenet"
        save(fitted, path)
        data = path.read_bytes()
        path.write_bytes(b"NOTMODEL" + data[8:])
        with pytest.raises(ValueError, match="not a model file"):
            load(path)

    def test_short_file_rejected(self, tmp_path):
        path = tmp_path / "model.fenet"
        path.write_bytes(MAGIC)
        with pytest.raises(ValueError, match="not a model file"):
            load(path)

    def test_future_version_rejected(self, fitted, tmp_path):
        """A file from a newer format fails with an explicit version
        message, not a parse error."""
        path = tmp_path / "model.fenet"
        save(fitted, path)
        body = bytearray(path.read_bytes()[:-32])
        struct.pack_into("<I", body, len(MAGIC), FORMAT_VERSION + 1)
        tampered = bytes(body)
        path.write_bytes(tampered + hashlib.sha256(tampered).digest())
        with pytest.raises(ValueError, match="version 2"):
            load(path)


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        """Writing and re-reading a template-based config preserves every
        semantic field."""
        config = PipelineConfig(
            bank=DetectorBankConfig(members=("pca", "md1"),
                                    pca_variance_fraction=0.8, dpca_lags=3),
            l_max=1,
            layer_template=LayerConfig(
                window_width=25, subset_size=2, max_subsets=5,
                pca_variance_fraction=0.9, code_dim=3,
                ae_variant=Variant("sparse", rho=0.1, beta=2.0),
                training=TrainConfig(epochs=10, learning_rate=0.01),
                hidden_dims=(8,),
            ),
            confidence=0.95, norm_order=2, master_seed=17,
        )
        path = tmp_path / "pipeline.ini"
        write_pipeline_config(config, path)
        assert read_pipeline_config(path) == config

    def test_defaults_round_trip(self, tmp_path):
        path = tmp_path / "pipeline.ini"
        write_pipeline_config(PipelineConfig(), path)
        assert read_pipeline_config(path) == PipelineConfig()

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_pipeline_config(tmp_path / "absent.ini")

    def test_missing_section(self, tmp_path):
        path = tmp_path / "pipeline.ini"
        path.write_text("[pipeline]\nl_max = 1\n")
        with pytest.raises(ValueError, match="detectors"):
            read_pipeline_config(path)


class TestResultTypes:
    def test_flag_length_mismatch(self):
        with pytest.raises(ValueError, match="equal length"):
            DetectionResult(np.zeros(4), 1.0, np.zeros(3, dtype=bool), 0,
                            DetectionSummary(None, 0.0, 0, 3))

    def test_arrays_read_only(self):
        result = DetectionResult(np.zeros(3), 1.0, np.zeros(3, dtype=bool), 0,
                                 DetectionSummary(None, 0.0, 0, 3))
        with pytest.raises(ValueError):
            result.index_values[0] = 5.0
