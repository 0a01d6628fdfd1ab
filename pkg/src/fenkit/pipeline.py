"""End-to-end orchestration: detector bank, stacked transformation
layers, decision model; fitting, detection, and a checksummed binary
model container.

The master seed deterministically derives every per-layer seed, so a
model refitted on equal data with an equal config is byte-identical on
disk.
"""

import configparser
import hashlib
import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from .autoencoder import Autoencoder, Layer, TrainConfig, Variant
from .datasets import ProcessDataset, ScalerStats
from .decision import DecisionModel, alarms, detection_index, fit_decision
from .detectors import (
    DetectorBank,
    DetectorBankConfig,
    MdDetector,
    PcaDetector,
    fit_detector_bank,
)
from .ensemble import FeatureMatrix, build_feature_matrix
from .transform import (
    LayerConfig,
    PcaReduction,
    TransformLayer,
    apply_layer,
    derive_seed,
    fit_layer,
)

MAGIC = b"FENETAE1"
FORMAT_VERSION = 1

DEFAULT_LAYER_TEMPLATE = LayerConfig(window_width=150, subset_size=5)


@dataclass(frozen=True)
class PipelineConfig:
    """Full fitting recipe.

    Per-layer configs come either from `layers` (one per layer) or are
    derived from `layer_template` with seeds spawned from master_seed.
    """

    bank: DetectorBankConfig = DetectorBankConfig()
    l_max: int = 2
    layer_template: LayerConfig = DEFAULT_LAYER_TEMPLATE
    layers: tuple = ()
    confidence: float = 0.99
    norm_order: int = 1
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.l_max < 0:
            raise ValueError("l_max must be non-negative")
        if self.layers and len(self.layers) != self.l_max:
            raise ValueError(
                f"{len(self.layers)} layer configs given but l_max={self.l_max}"
            )
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must lie in (0, 1)")
        if self.norm_order < 1:
            raise ValueError("norm_order must be at least 1")
        if not (0 <= self.master_seed < 2**64):
            raise ValueError("master_seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class DetectionSummary:
    """Detection and false-alarm rates over the scored region; a rate is
    None when its row class is absent."""

    fdr: float | None
    far: float | None
    fault_rows: int
    normal_rows: int


@dataclass(frozen=True)
class DetectionResult:
    index_values: np.ndarray
    limit: float
    flags: np.ndarray
    valid_from: int
    summary: DetectionSummary

    def __post_init__(self):
        index_values = np.array(self.index_values, dtype=np.float64)
        flags = np.array(self.flags, dtype=bool)
        if flags.shape != index_values.shape:
            raise ValueError("flags and index_values must have equal length")
        index_values.setflags(write=False)
        flags.setflags(write=False)
        object.__setattr__(self, "index_values", index_values)
        object.__setattr__(self, "flags", flags)


@dataclass(frozen=True)
class FenetModel:
    bank: DetectorBank
    layers: tuple
    decision: DecisionModel
    config: PipelineConfig
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))


def resolve_layer_configs(config: PipelineConfig) -> list:
    """Explicit per-layer configs, deriving seeds from the master seed
    when only a template is given."""
    if config.layers:
        return list(config.layers)
    resolved = []
    for index in range(config.l_max):
        training = replace(config.layer_template.training,
                           seed=derive_seed(config.master_seed, index, 1))
        resolved.append(replace(config.layer_template,
                                seed=derive_seed(config.master_seed, index),
                                training=training))
    return resolved


def fit(train: ProcessDataset, config: PipelineConfig = PipelineConfig()) -> FenetModel:
    """Fit the bank, the transformation stack, and the decision model on
    all-normal training data."""
    if train.labels.any():
        raise ValueError("training data must be all-normal (labels all zero)")
    layer_configs = resolve_layer_configs(config)

    rows = train.n_samples
    for index, layer_config in enumerate(layer_configs):
        if rows < layer_config.window_width + 1:
            raise ValueError(
                f"training too short: layer {index} needs more than "
                f"{layer_config.window_width} rows, has {rows}"
            )
        rows = rows - layer_config.window_width + 1
    if rows < 2:
        raise ValueError("training too short: fewer than 2 rows reach the decision layer")

    bank = fit_detector_bank(train, config.bank)
    features = build_feature_matrix(bank, train)
    layers = []
    for index, layer_config in enumerate(layer_configs):
        try:
            layer, features = fit_layer(features, layer_config)
        except ValueError as error:
            raise ValueError(f"layer {index}: {error}") from error
        layers.append(layer)

    decision = fit_decision(features.values, config.confidence, config.norm_order)
    return FenetModel(bank, tuple(layers), decision, config)


def _bank_input_width(bank: DetectorBank) -> int:
    first = bank.detectors[0]
    width = first.scaler.mean.shape[0]
    if isinstance(first, PcaDetector) and first.lags > 0:
        return width // (first.lags + 1)
    return width


def detect(model: FenetModel, test: ProcessDataset) -> DetectionResult:
    """Apply the frozen chain; rows before the first full window chain
    are not scored (valid_from gives their count)."""
    expected = _bank_input_width(model.bank)
    if test.n_variables != expected:
        raise ValueError(
            f"test data has {test.n_variables} variables, model expects {expected}"
        )
    features = build_feature_matrix(model.bank, test)
    for layer in model.layers:
        features = apply_layer(layer, features)
    index_values = detection_index(model.decision, features.values)
    index_values = np.atleast_1d(index_values)
    flags = alarms(model.decision, index_values)
    valid_from = features.sample_offset

    labels = test.labels[valid_from:]
    fault = labels > 0
    normal = ~fault
    fdr = float(flags[fault].mean()) if fault.any() else None
    far = float(flags[normal].mean()) if normal.any() else None
    summary = DetectionSummary(fdr, far, int(fault.sum()), int(normal.sum()))
    return DetectionResult(index_values, model.decision.limit, flags,
                           valid_from, summary)


def _train_config_dict(config: TrainConfig) -> dict:
    return {
        "epochs": config.epochs, "learning_rate": config.learning_rate,
        "l1_weight": config.l1_weight, "beta1": config.beta1,
        "beta2": config.beta2, "eps_adam": config.eps_adam,
        "full_batch": config.full_batch, "seed": config.seed,
    }


def _train_config_from(data: dict) -> TrainConfig:
    return TrainConfig(**data)


def _variant_dict(variant: Variant) -> dict:
    return {"kind": variant.kind, "rho": variant.rho, "beta": variant.beta}


def _layer_config_dict(config: LayerConfig) -> dict:
    return {
        "window_width": config.window_width, "subset_size": config.subset_size,
        "max_subsets": config.max_subsets,
        "pca_variance_fraction": config.pca_variance_fraction,
        "code_dim": config.code_dim, "ae_variant": _variant_dict(config.ae_variant),
        "training": _train_config_dict(config.training),
        "hidden_dims": list(config.hidden_dims), "seed": config.seed,
    }


def _layer_config_from(data: dict) -> LayerConfig:
    return LayerConfig(
        window_width=data["window_width"], subset_size=data["subset_size"],
        max_subsets=data["max_subsets"],
        pca_variance_fraction=data["pca_variance_fraction"],
        code_dim=data["code_dim"], ae_variant=Variant(**data["ae_variant"]),
        training=_train_config_from(data["training"]),
        hidden_dims=tuple(data["hidden_dims"]), seed=data["seed"],
    )


def _pipeline_config_dict(config: PipelineConfig, resolved_layers) -> dict:
    return {
        "bank": {
            "members": list(config.bank.members),
            "pca_variance_fraction": config.bank.pca_variance_fraction,
            "md2_variance_fraction": config.bank.md2_variance_fraction,
            "dpca_lags": config.bank.dpca_lags,
        },
        "l_max": config.l_max,
        "layers": [_layer_config_dict(c) for c in resolved_layers],
        "confidence": config.confidence,
        "norm_order": config.norm_order,
        "master_seed": config.master_seed,
    }


def _pipeline_config_from(data: dict) -> PipelineConfig:
    return PipelineConfig(
        bank=DetectorBankConfig(
            members=tuple(data["bank"]["members"]),
            pca_variance_fraction=data["bank"]["pca_variance_fraction"],
            md2_variance_fraction=data["bank"]["md2_variance_fraction"],
            dpca_lags=data["bank"]["dpca_lags"],
        ),
        l_max=data["l_max"],
        layers=tuple(_layer_config_from(c) for c in data["layers"]),
        confidence=data["confidence"],
        norm_order=data["norm_order"],
        master_seed=data["master_seed"],
    )


class _BlobWriter:
    def __init__(self):
        self._chunks = []
        self._size = 0

    def ref(self, array) -> dict:
        arr = np.ascontiguousarray(np.asarray(array, dtype=np.float64))
        data = arr.tobytes()
        ref = {"shape": list(arr.shape), "offset": self._size}
        self._chunks.append(data)
        self._size += len(data)
        return ref

    def blob(self) -> bytes:
        return b"".join(self._chunks)


class _BlobReader:
    def __init__(self, blob: bytes):
        self._blob = blob

    def array(self, ref: dict) -> np.ndarray:
        shape = tuple(int(s) for s in ref["shape"])
        count = int(np.prod(shape)) if shape else 1
        needed = ref["offset"] + count * 8
        if needed > len(self._blob):
            raise ValueError("model file is corrupt: array extends past the data block")
        flat = np.frombuffer(self._blob, dtype="<f8", count=count,
                             offset=int(ref["offset"]))
        return flat.reshape(shape).copy()


def _scaler_dict(scaler, writer) -> dict:
    return {"mean": writer.ref(scaler.mean), "std": writer.ref(scaler.std)}


def _scaler_from(data, reader):
    return ScalerStats(reader.array(data["mean"]), reader.array(data["std"]))


def _detector_dict(detector, writer) -> dict:
    if isinstance(detector, PcaDetector):
        return {
            "kind": "pca", "projection": writer.ref(detector.projection),
            "eigenvalues": writer.ref(detector.retained_eigenvalues),
            "scaler": _scaler_dict(detector.scaler, writer),
            "t": detector.t, "lags": detector.lags,
        }
    if isinstance(detector, MdDetector):
        return {
            "kind": "md", "variant": detector.variant,
            "mean": writer.ref(detector.mean),
            "inverse_covariance": writer.ref(detector.inverse_covariance),
            "scaler": _scaler_dict(detector.scaler, writer),
            "projection": None if detector.projection is None
            else writer.ref(detector.projection),
        }
    raise TypeError(f"cannot serialize detector type {type(detector).__name__}")


def _detector_from(data: dict, reader):
    if data["kind"] == "pca":
        return PcaDetector(
            reader.array(data["projection"]), reader.array(data["eigenvalues"]),
            _scaler_from(data["scaler"], reader), t=data["t"], lags=data["lags"],
        )
    if data["kind"] == "md":
        projection = None if data["projection"] is None \
            else reader.array(data["projection"])
        return MdDetector(
            data["variant"], reader.array(data["mean"]),
            reader.array(data["inverse_covariance"]),
            _scaler_from(data["scaler"], reader), projection,
        )
    raise ValueError(f"unknown detector kind {data['kind']!r} in model file")


def _autoencoder_dict(ae: Autoencoder, writer) -> dict:
    def stack(layers):
        return [{"weights": writer.ref(l.weights), "bias": writer.ref(l.bias),
                 "activation": l.activation} for l in layers]

    return {"variant": _variant_dict(ae.variant), "code_dim": ae.code_dim,
            "encoder": stack(ae.encoder_layers), "decoder": stack(ae.decoder_layers)}


def _autoencoder_from(data: dict, reader) -> Autoencoder:
    def stack(entries):
        return tuple(Layer(reader.array(e["weights"]), reader.array(e["bias"]),
                           e["activation"]) for e in entries)

    return Autoencoder(stack(data["encoder"]), stack(data["decoder"]),
                       Variant(**data["variant"]), data["code_dim"])


def _layer_dict(layer: TransformLayer, writer) -> dict:
    return {
        "config": _layer_config_dict(layer.config),
        "input_features": layer.input_features,
        "subsets": [list(s) for s in layer.subsets],
        "reduction_mean": writer.ref(layer.reduction.mean),
        "reduction_projection": writer.ref(layer.reduction.projection),
        "score_scale": writer.ref(layer.score_scale),
        "autoencoder": _autoencoder_dict(layer.autoencoder, writer),
        "code_mean": writer.ref(layer.code_mean),
        "code_std": writer.ref(layer.code_std),
    }


def _layer_from(data: dict, reader) -> TransformLayer:
    return TransformLayer(
        config=_layer_config_from(data["config"]),
        input_features=data["input_features"],
        subsets=tuple(tuple(s) for s in data["subsets"]),
        reduction=PcaReduction(reader.array(data["reduction_mean"]),
                               reader.array(data["reduction_projection"])),
        score_scale=reader.array(data["score_scale"]),
        autoencoder=_autoencoder_from(data["autoencoder"], reader),
        code_mean=reader.array(data["code_mean"]),
        code_std=reader.array(data["code_std"]),
    )


def save(model: FenetModel, path) -> None:
    """Single self-describing binary: magic, version, JSON header, raw
    float64 block, trailing content checksum."""
    writer = _BlobWriter()
    header = {
        "config": _pipeline_config_dict(model.config,
                                        [l.config for l in model.layers]
                                        if model.layers else
                                        resolve_layer_configs(model.config)),
        "bank": {
            "detectors": [_detector_dict(d, writer) for d in model.bank.detectors],
            "feature_names": list(model.bank.feature_names),
        },
        "layers": [_layer_dict(l, writer) for l in model.layers],
        "decision": {
            "mean": writer.ref(model.decision.mean),
            "std": writer.ref(model.decision.std),
            "norm_order": model.decision.norm_order,
            "limit": model.decision.limit,
            "confidence": model.decision.confidence,
        },
    }
    header_bytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    body = (MAGIC + struct.pack("<I", FORMAT_VERSION)
            + struct.pack("<Q", len(header_bytes)) + header_bytes + writer.blob())
    with open(path, "wb") as handle:
        handle.write(body)
        handle.write(hashlib.sha256(body).digest())


def load(path) -> FenetModel:
    """Checksum is verified before anything is parsed; corrupt or
    truncated files never yield a partial model."""
    with open(path, "rb") as handle:
        data = handle.read()
    if len(data) < len(MAGIC) + 12 + 32 or not data.startswith(MAGIC):
        raise ValueError(f"{path}: not a model file")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ValueError(f"{path}: checksum mismatch, file is corrupt or truncated")
    version = struct.unpack_from("<I", body, len(MAGIC))[0]
    if version > FORMAT_VERSION:
        raise ValueError(
            f"{path}: model format version {version} is newer than the supported "
            f"version {FORMAT_VERSION}"
        )
    header_len = struct.unpack_from("<Q", body, len(MAGIC) + 4)[0]
    header_start = len(MAGIC) + 12
    header = json.loads(body[header_start:header_start + header_len].decode("utf-8"))
    reader = _BlobReader(body[header_start + header_len:])

    bank = DetectorBank(
        tuple(_detector_from(d, reader) for d in header["bank"]["detectors"]),
        tuple(header["bank"]["feature_names"]),
    )
    layers = tuple(_layer_from(l, reader) for l in header["layers"])
    decision = DecisionModel(
        reader.array(header["decision"]["mean"]),
        reader.array(header["decision"]["std"]),
        header["decision"]["norm_order"], header["decision"]["limit"],
        header["decision"]["confidence"],
    )
    config = _pipeline_config_from(header["config"])
    return FenetModel(bank, layers, decision, config, format_version=version)


def write_pipeline_config(config: PipelineConfig, path) -> None:
    """Sectioned key = value rendering of a template-based config."""
    template = config.layers[0] if config.layers else config.layer_template
    parser = configparser.ConfigParser()
    parser["pipeline"] = {
        "l_max": str(config.l_max),
        "confidence": repr(config.confidence),
        "norm_order": str(config.norm_order),
        "master_seed": str(config.master_seed),
    }
    parser["detectors"] = {
        "members": " ".join(config.bank.members),
        "pca_variance_fraction": repr(config.bank.pca_variance_fraction),
        "md2_variance_fraction": repr(config.bank.md2_variance_fraction),
        "dpca_lags": str(config.bank.dpca_lags),
    }
    parser["layer"] = {
        "window_width": str(template.window_width),
        "subset_size": str(template.subset_size),
        "max_subsets": str(template.max_subsets),
        "pca_variance_fraction": repr(template.pca_variance_fraction),
        "code_dim": str(template.code_dim),
        "variant": template.ae_variant.kind,
        "sparse_rho": repr(template.ae_variant.rho),
        "sparse_beta": repr(template.ae_variant.beta),
        "hidden_dims": " ".join(str(d) for d in template.hidden_dims),
    }
    parser["training"] = {
        "epochs": str(template.training.epochs),
        "learning_rate": repr(template.training.learning_rate),
        "l1_weight": repr(template.training.l1_weight),
        "beta1": repr(template.training.beta1),
        "beta2": repr(template.training.beta2),
        "eps_adam": repr(template.training.eps_adam),
    }
    with open(path, "w", encoding="utf-8") as handle:
        parser.write(handle)


def read_pipeline_config(path) -> PipelineConfig:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"config file not found: {path}")
    for section in ("pipeline", "detectors", "layer", "training"):
        if section not in parser:
            raise ValueError(f"{path}: missing [{section}] section")
    return pipeline_config_from_parser(parser)


def pipeline_config_from_parser(parser: configparser.ConfigParser) -> PipelineConfig:
    """Config from already-parsed sections; absent sections fall back to
    defaults, so embedding files may carry only the overrides."""
    def section(name):
        if name in parser:
            return parser[name]
        fallback = configparser.ConfigParser()
        fallback.add_section(name)
        return fallback[name]

    pipe, det, layer, training = (section("pipeline"), section("detectors"),
                                  section("layer"), section("training"))
    train_config = TrainConfig(
        epochs=training.getint("epochs", 2000),
        learning_rate=training.getfloat("learning_rate", 0.001),
        l1_weight=training.getfloat("l1_weight", 1.0),
        beta1=training.getfloat("beta1", 0.9),
        beta2=training.getfloat("beta2", 0.999),
        eps_adam=training.getfloat("eps_adam", 1e-8),
    )
    variant = Variant(
        kind=layer.get("variant", "plain"),
        rho=layer.getfloat("sparse_rho", 0.05),
        beta=layer.getfloat("sparse_beta", 1.0),
    )
    hidden = tuple(int(tok) for tok in layer.get("hidden_dims", "128 64").split())
    template = LayerConfig(
        window_width=layer.getint("window_width", 150),
        subset_size=layer.getint("subset_size", 5),
        max_subsets=layer.getint("max_subsets", 30),
        pca_variance_fraction=layer.getfloat("pca_variance_fraction", 0.95),
        code_dim=layer.getint("code_dim", 20),
        ae_variant=variant,
        training=train_config,
        hidden_dims=hidden,
    )
    bank = DetectorBankConfig(
        members=tuple(det.get("members", " ".join(("pca", "dpca", "md1", "md2",
                                                   "md3"))).split()),
        pca_variance_fraction=det.getfloat("pca_variance_fraction", 0.9),
        md2_variance_fraction=det.getfloat("md2_variance_fraction", 0.95),
        dpca_lags=det.getint("dpca_lags", 2),
    )
    return PipelineConfig(
        bank=bank,
        l_max=pipe.getint("l_max", 2),
        layer_template=template,
        confidence=pipe.getfloat("confidence", 0.99),
        norm_order=pipe.getint("norm_order", 1),
        master_seed=int(pipe.get("master_seed", "0")),
    )
