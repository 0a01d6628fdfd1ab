"""Fully connected autoencoder with hand-derived reverse-mode gradients
and an Adam optimizer, written directly against numpy.

Three variants share one architecture: plain (reconstruction + L1 code
penalty), sparse (sigmoid code layer with a KL activity penalty toward a
target rate rho), and variational (encoder emits mean and log-variance,
code sampled by reparameterization during training, posterior mean at
inference).  Training is full-batch and fully deterministic for a given
seed.
"""

from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("linear", "relu", "sigmoid")
VARIANT_KINDS = ("plain", "sparse", "variational")

DEFAULT_HIDDEN_DIMS = (128, 64)


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss or a gradient stops being finite.

    Carries the loss history collected up to the point of divergence.
    """

    def __init__(self, history):
        super().__init__("training diverged: loss is no longer finite")
        self.history = np.asarray(history, dtype=np.float64)


@dataclass(frozen=True)
class Layer:
    """One affine map followed by an elementwise activation."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        bias = np.array(self.bias, dtype=np.float64)
        if weights.ndim != 2 or bias.shape != (weights.shape[1],):
            raise ValueError(
                f"layer shapes disagree: weights {weights.shape}, bias {bias.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise ValueError("layer parameters must be finite")
        weights.setflags(write=False)
        bias.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", bias)


@dataclass(frozen=True)
class Variant:
    """Loss-family tag; rho/beta only matter for the sparse kind."""

    kind: str
    rho: float = 0.05
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ValueError(f"variant must be one of {VARIANT_KINDS}, got {self.kind!r}")
        if self.kind == "sparse":
            if not (0.0 < self.rho < 1.0):
                raise ValueError(f"sparse target rate must lie in (0, 1), got {self.rho}")
            if self.beta < 0:
                raise ValueError("sparse penalty weight must be non-negative")


@dataclass(frozen=True)
class Autoencoder:
    encoder_layers: tuple
    decoder_layers: tuple
    variant: Variant
    code_dim: int

    def __post_init__(self):
        object.__setattr__(self, "encoder_layers", tuple(self.encoder_layers))
        object.__setattr__(self, "decoder_layers", tuple(self.decoder_layers))
        if not self.encoder_layers or not self.decoder_layers:
            raise ValueError("encoder and decoder each need at least one layer")
        if self.code_dim < 1:
            raise ValueError("code_dim must be positive")
        chain = list(self.encoder_layers) + list(self.decoder_layers)
        for prev, nxt in zip(chain[:-1], chain[1:]):
            # The variational head is the one legal width break: the
            # encoder emits mean plus log-variance and the decoder
            # consumes the sampled code.
            if prev is self.encoder_layers[-1] and self.variant.kind == "variational":
                continue
            if prev.weights.shape[1] != nxt.weights.shape[0]:
                raise ValueError(
                    f"layer dimensions do not chain: {prev.weights.shape} -> {nxt.weights.shape}"
                )
        head_dim = self.encoder_layers[-1].weights.shape[1]
        expected = 2 * self.code_dim if self.variant.kind == "variational" else self.code_dim
        if head_dim != expected:
            raise ValueError(f"encoder head emits {head_dim} values, expected {expected}")
        if self.decoder_layers[0].weights.shape[0] != self.code_dim:
            raise ValueError("decoder input dim must equal code_dim")
        if self.decoder_layers[-1].weights.shape[1] != self.input_dim:
            raise ValueError("decoder output dim must equal encoder input dim")

    @property
    def input_dim(self) -> int:
        return self.encoder_layers[0].weights.shape[0]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    learning_rate: float = 0.001
    l1_weight: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    full_batch: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l1_weight < 0:
            raise ValueError("l1_weight must be non-negative")
        if not self.full_batch:
            raise ValueError("only full-batch training is implemented")


@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step: int = 0


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z: np.ndarray, tag: str) -> np.ndarray:
    if tag == "linear":
        return z
    if tag == "relu":
        return np.maximum(z, 0.0)
    return _sigmoid(z)


def _activation_derivative(z: np.ndarray, tag: str) -> np.ndarray:
    if tag == "linear":
        return np.ones_like(z)
    if tag == "relu":
        return (z > 0.0).astype(np.float64)
    s = _sigmoid(z)
    return s * (1.0 - s)


def init_autoencoder(input_dim: int, code_dim: int, variant: Variant, seed: int,
                     hidden_dims: tuple = DEFAULT_HIDDEN_DIMS) -> Autoencoder:
    """Symmetric funnel: input -> hidden_dims -> code and its mirror.

    Hidden layers use ReLU; code and output layers are linear, except the
    sparse variant whose code layer is sigmoid so activation rates stay in
    (0, 1).  The variational head doubles the final encoder width to emit
    mean and log-variance.  Weights draw uniformly from the symmetric
    fan-balanced range +-sqrt(6/(fan_in+fan_out)); biases start at zero.
    """
    if input_dim < 1 or code_dim < 1:
        raise ValueError("input_dim and code_dim must be positive")
    rng = np.random.default_rng(seed)

    def make_layer(fan_in, fan_out, activation):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        return Layer(weights, np.zeros(fan_out), activation)

    head_dim = 2 * code_dim if variant.kind == "variational" else code_dim
    code_activation = "sigmoid" if variant.kind == "sparse" else "linear"

    encoder = []
    fan_in = input_dim
    for width in hidden_dims:
        encoder.append(make_layer(fan_in, width, "relu"))
        fan_in = width
    encoder.append(make_layer(fan_in, head_dim, code_activation))

    decoder = []
    fan_in = code_dim
    for width in reversed(hidden_dims):
        decoder.append(make_layer(fan_in, width, "relu"))
        fan_in = width
    decoder.append(make_layer(fan_in, input_dim, "linear"))

    return Autoencoder(tuple(encoder), tuple(decoder), variant, code_dim)


def _as_specs(layers) -> list:
    return [(layer.weights, layer.bias, layer.activation) for layer in layers]


def _run_stack(specs, batch):
    """Forward through a layer stack, caching inputs and pre-activations."""
    caches = []
    a = batch
    for weights, bias, activation in specs:
        z = a @ weights + bias
        caches.append((a, z))
        a = _activate(z, activation)
    return a, caches


def _backprop_stack(specs, caches, upstream):
    """Gradient of the stack given dLoss/d(stack output); returns
    per-layer (dW, db) plus dLoss/d(stack input)."""
    grads = [None] * len(specs)
    da = upstream
    for k in range(len(specs) - 1, -1, -1):
        weights, _, activation = specs[k]
        a_prev, z = caches[k]
        delta = da * _activation_derivative(z, activation)
        grads[k] = (a_prev.T @ delta, delta.sum(axis=0))
        da = delta @ weights.T
    return grads, da


def _split_head(head, code_dim):
    return head[:, :code_dim], head[:, code_dim:]


def _evaluate(enc_specs, dec_specs, variant, code_dim, batch, l1_weight, noise,
              want_grads):
    """Shared forward/backward core for loss() and gradients().

    Reconstruction error and the variational KL sum over dimensions and
    average over batch rows; the code L1 penalty averages over rows and
    code dimensions; the sparse KL sums per-unit activity penalties.
    """
    batch = np.asarray(batch, dtype=np.float64)
    n_rows, n_dims = batch.shape

    # Overflow surfaces as non-finite values that callers detect and
    # report; the IEEE warnings would only duplicate that.
    with np.errstate(over="ignore", invalid="ignore"):
        return _evaluate_unchecked(enc_specs, dec_specs, variant, code_dim, batch,
                                   l1_weight, noise, want_grads, n_rows)


def _evaluate_unchecked(enc_specs, dec_specs, variant, code_dim, batch, l1_weight,
                        noise, want_grads, n_rows):
    head, enc_caches = _run_stack(enc_specs, batch)
    mu = logvar = sigma = None
    if variant.kind == "variational":
        mu, logvar = _split_head(head, code_dim)
        sigma = np.exp(0.5 * logvar)
        code = mu if noise is None else mu + sigma * noise
    else:
        code = head
    recon, dec_caches = _run_stack(dec_specs, code)

    err = recon - batch
    mse = float((err * err).sum() / n_rows)
    parts = {"mse": mse}
    if variant.kind == "plain":
        parts["l1"] = float(l1_weight * np.mean(np.abs(code)))
    elif variant.kind == "sparse":
        rho_hat = code.mean(axis=0)
        if np.any(rho_hat <= 0.0) or np.any(rho_hat >= 1.0):
            raise ValueError(
                "sparse activity rate left (0, 1); the code layer must be sigmoid"
            )
        rho = variant.rho
        kl = rho * np.log(rho / rho_hat) + (1 - rho) * np.log((1 - rho) / (1 - rho_hat))
        parts["kl_sparse"] = float(variant.beta * kl.sum())
    else:
        kl_terms = 0.5 * (mu * mu + np.exp(logvar) - 1.0 - logvar)
        parts["kl_vae"] = float(kl_terms.sum() / n_rows)
    total = float(sum(parts.values()))

    if not want_grads:
        return total, parts, None

    d_recon = 2.0 * err / n_rows
    dec_grads, d_code = _backprop_stack(dec_specs, dec_caches, d_recon)

    if variant.kind == "plain":
        d_code = d_code + l1_weight * np.sign(code) / code.size
        d_head = d_code
    elif variant.kind == "sparse":
        rho = variant.rho
        d_rho_hat = variant.beta * (-rho / rho_hat + (1 - rho) / (1 - rho_hat))
        d_code = d_code + d_rho_hat / n_rows
        d_head = d_code
    else:
        d_mu = d_code + mu / n_rows
        d_logvar = 0.5 * (np.exp(logvar) - 1.0) / n_rows
        if noise is not None:
            d_logvar = d_logvar + d_code * 0.5 * sigma * noise
        d_head = np.concatenate([d_mu, d_logvar], axis=1)

    enc_grads, _ = _backprop_stack(enc_specs, enc_caches, d_head)

    flat = []
    for dw, db in enc_grads + dec_grads:
        flat.extend((dw, db))
    return total, parts, flat


def _check_batch(ae: Autoencoder, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] < 1:
        raise ValueError(f"batch must be a non-empty 2-d matrix, got shape {batch.shape}")
    if batch.shape[1] != ae.input_dim:
        raise ValueError(
            f"batch has {batch.shape[1]} columns, autoencoder expects {ae.input_dim}"
        )
    return batch


def forward(ae: Autoencoder, x: np.ndarray) -> tuple:
    """Inference pass: (code, reconstruction), sampling-free.

    The variational code is the posterior mean.  Accepts a single vector
    or a matrix of row vectors.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = _check_batch(ae, x[None, :] if single else x)

    with np.errstate(over="ignore", invalid="ignore"):
        head, _ = _run_stack(_as_specs(ae.encoder_layers), batch)
        code = (_split_head(head, ae.code_dim)[0]
                if ae.variant.kind == "variational" else head)
        recon, _ = _run_stack(_as_specs(ae.decoder_layers), code)
    if not (np.all(np.isfinite(code)) and np.all(np.isfinite(recon))):
        raise ValueError("non-finite values in forward pass")
    if single:
        return code[0], recon[0]
    return code, recon


def loss(ae: Autoencoder, batch, l1_weight: float = 1.0, noise=None) -> tuple:
    """Variant loss as (total, parts); parts always sum to the total.

    noise is the variational reparameterization draw (rows x code_dim);
    omitted, the code is the posterior mean, which keeps evaluation
    deterministic.
    """
    batch = _check_batch(ae, batch)
    total, parts, _ = _evaluate(
        _as_specs(ae.encoder_layers), _as_specs(ae.decoder_layers),
        ae.variant, ae.code_dim, batch, l1_weight, noise, want_grads=False,
    )
    return total, parts


def gradients(ae: Autoencoder, batch, l1_weight: float = 1.0, noise=None) -> list:
    """Analytic loss gradients, ordered like parameters(): encoder then
    decoder, weights before bias within each layer.  The L1 subgradient
    at zero is zero."""
    batch = _check_batch(ae, batch)
    _, _, grads = _evaluate(
        _as_specs(ae.encoder_layers), _as_specs(ae.decoder_layers),
        ae.variant, ae.code_dim, batch, l1_weight, noise, want_grads=True,
    )
    names = _parameter_names(ae)
    for name, grad in zip(names, grads):
        if not np.all(np.isfinite(grad)):
            raise ValueError(f"non-finite gradient for {name}")
    return grads


def parameters(ae: Autoencoder) -> list:
    """Flat parameter list: encoder then decoder, weights then bias."""
    flat = []
    for layer in ae.encoder_layers + ae.decoder_layers:
        flat.extend((layer.weights, layer.bias))
    return flat


def _parameter_names(ae: Autoencoder) -> list:
    names = []
    for side, stack in (("encoder", ae.encoder_layers), ("decoder", ae.decoder_layers)):
        for k in range(len(stack)):
            names.extend((f"{side}[{k}].weights", f"{side}[{k}].bias"))
    return names


def with_parameters(ae: Autoencoder, params: list) -> Autoencoder:
    """Rebuild the autoencoder around a parameters()-ordered list."""
    expected = len(parameters(ae))
    if len(params) != expected:
        raise ValueError(f"expected {expected} parameter arrays, got {len(params)}")
    stacks = []
    cursor = 0
    for stack in (ae.encoder_layers, ae.decoder_layers):
        rebuilt = []
        for layer in stack:
            weights, bias = params[cursor], params[cursor + 1]
            cursor += 2
            rebuilt.append(Layer(weights, bias, layer.activation))
        stacks.append(tuple(rebuilt))
    return Autoencoder(stacks[0], stacks[1], ae.variant, ae.code_dim)


def init_adam(params: list) -> AdamState:
    return AdamState(
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
        step=0,
    )


def adam_step(params: list, grads: list, state: AdamState, learning_rate: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple:
    """One bias-corrected Adam update; returns (new params, new state)."""
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ValueError("parameter, gradient and moment counts disagree")
    t = state.step + 1
    new_params, first, second = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + eps))
        first.append(m)
        second.append(v)
    return new_params, AdamState(first, second, t)


def train(ae: Autoencoder, data, config: TrainConfig) -> tuple:
    """Full-batch training; returns (trained autoencoder, loss history).

    The history holds the loss at the start of each epoch.  A non-finite
    loss or gradient aborts with TrainingDivergedError carrying the
    history collected so far.
    """
    batch = _check_batch(ae, data)
    rng = np.random.default_rng(config.seed)
    enc_specs = _as_specs(ae.encoder_layers)
    dec_specs = _as_specs(ae.decoder_layers)
    params = [spec[i] for spec in enc_specs + dec_specs for i in (0, 1)]
    state = init_adam(params)
    history = []

    for _ in range(config.epochs):
        noise = None
        if ae.variant.kind == "variational":
            noise = rng.standard_normal((batch.shape[0], ae.code_dim))
        total, _, grads = _evaluate(enc_specs, dec_specs, ae.variant, ae.code_dim,
                                    batch, config.l1_weight, noise, want_grads=True)
        if not np.isfinite(total):
            raise TrainingDivergedError(history)
        history.append(total)
        if any(not np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergedError(history)
        params, state = adam_step(params, grads, state, config.learning_rate,
                                  config.beta1, config.beta2, config.eps_adam)
        it = iter(params)
        enc_specs = [(next(it), next(it), spec[2]) for spec in enc_specs]
        dec_specs = [(next(it), next(it), spec[2]) for spec in dec_specs]

    if any(not np.all(np.isfinite(p)) for p in params):
        raise TrainingDivergedError(history)
    return with_parameters(ae, params), np.asarray(history, dtype=np.float64)
