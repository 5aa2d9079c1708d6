"""The 8-layer galaxy CNN: assembly, SGD-with-momentum training, evaluation.

Layer stack (fixed)::

    input -> conv (96 filters) -> relu -> maxpool 2x2 -> dense (24) -> relu
          -> dense (3) -> softmax
"""

import logging
import math
from collections import namedtuple
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import _rng
from .errors import ConfigError, InvalidShapeError, NonFiniteError, NumericDivergenceError
from .layers import (
    ConvParams,
    DenseParams,
    conv_backward,
    conv_forward,
    dense_backward,
    dense_forward,
    he_init,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
)
from .metrics import evaluate_predictions, median
from .tensor import as_tensor, output_extent

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkConfig:
    input_height: int = 64
    input_width: int = 64
    input_channels: int = 3
    conv_filters: int = 96
    conv_kernel: int = 5
    conv_stride: int = 1
    conv_padding: int = 0
    fc1_units: int = 24
    num_classes: int = 3

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ConfigError(f"{f.name} must be an integer, got {v!r}")
        positive = ("input_height", "input_width", "conv_filters", "conv_kernel", "conv_stride", "fc1_units")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.conv_padding < 0:
            raise ConfigError("conv_padding must be >= 0")
        if self.input_channels not in (1, 3):
            raise ConfigError("input_channels must be 1 or 3")
        if self.num_classes != 3:
            raise ConfigError("num_classes must be 3 (elliptical, spiral, irregular)")
        if self.input_height % 2 or self.input_width % 2:
            raise ConfigError("input_height and input_width must be even")
        ch, cw = self.conv_shape
        if ch < 1 or cw < 1:
            raise ConfigError(f"conv kernel {self.conv_kernel} does not fit the {self.input_height}x{self.input_width} input")
        if ch % 2 or cw % 2:
            raise ConfigError(f"conv output {ch}x{cw} is not even; the 2x2 pool needs even extents")

    @property
    def conv_shape(self):
        k, s, p = self.conv_kernel, self.conv_stride, self.conv_padding
        return output_extent(self.input_height, k, s, p), output_extent(self.input_width, k, s, p)

    @property
    def pool_shape(self):
        ch, cw = self.conv_shape
        return ch // 2, cw // 2

    @property
    def flat_features(self):
        ph, pw = self.pool_shape
        return self.conv_filters * ph * pw

    def to_dict(self):
        return asdict(self)


PROFILES = {
    "default64": NetworkConfig(),
    "fast32": NetworkConfig(input_height=32, input_width=32),
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    shuffle_each_epoch: bool = True

    def __post_init__(self):
        # 0 is accepted (a null update); the CLI insists on > 0
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


TrainRecord = namedtuple("TrainRecord", "iteration epoch batch_loss running_train_accuracy")
ValidationRecord = namedtuple("ValidationRecord", "epoch val_accuracy")
LayerInfo = namedtuple("LayerInfo", "kind size")


class DeepGalaxyNet:
    """Parameters of the fixed 8-layer stack plus its config."""

    def __init__(self, config, conv, fc1, fc2):
        self.config = config
        self.conv = conv
        self.fc1 = fc1
        self.fc2 = fc2

    def layers(self):
        cfg = self.config
        return [
            LayerInfo("input", (cfg.input_channels, cfg.input_height, cfg.input_width)),
            LayerInfo("conv", cfg.conv_filters),
            LayerInfo("relu", None),
            LayerInfo("maxpool", 2),
            LayerInfo("dense", cfg.fc1_units),
            LayerInfo("relu", None),
            LayerInfo("dense", cfg.num_classes),
            LayerInfo("softmax", cfg.num_classes),
        ]

    def parameters(self):
        """Name -> live parameter array, in checkpoint order."""
        return {
            "conv.weight": self.conv.weights,
            "conv.bias": self.conv.bias,
            "fc1.weight": self.fc1.weights,
            "fc1.bias": self.fc1.bias,
            "fc2.weight": self.fc2.weights,
            "fc2.bias": self.fc2.bias,
        }

    def copy(self):
        c = self.conv
        return DeepGalaxyNet(
            self.config,
            ConvParams(c.weights.copy(), c.bias.copy(), c.stride, c.padding),
            DenseParams(self.fc1.weights.copy(), self.fc1.bias.copy()),
            DenseParams(self.fc2.weights.copy(), self.fc2.bias.copy()),
        )

    @classmethod
    def from_parameters(cls, config, params):
        expected = _param_shapes(config)
        if set(params) != set(expected):
            raise ConfigError(f"parameter names {sorted(params)} do not match {sorted(expected)}")
        for name, shape in expected.items():
            if tuple(params[name].shape) != shape:
                raise ConfigError(f"{name} has shape {tuple(params[name].shape)}, expected {shape}")
        return cls(
            config,
            ConvParams(params["conv.weight"], params["conv.bias"], config.conv_stride, config.conv_padding),
            DenseParams(params["fc1.weight"], params["fc1.bias"]),
            DenseParams(params["fc2.weight"], params["fc2.bias"]),
        )


def _param_shapes(cfg):
    k = cfg.conv_kernel
    return {
        "conv.weight": (cfg.conv_filters, cfg.input_channels, k, k),
        "conv.bias": (cfg.conv_filters,),
        "fc1.weight": (cfg.fc1_units, cfg.flat_features),
        "fc1.bias": (cfg.fc1_units,),
        "fc2.weight": (cfg.num_classes, cfg.fc1_units),
        "fc2.bias": (cfg.num_classes,),
    }


def build_network(cfg, rng):
    """He-initialized network.  ``rng`` is a numpy Generator or an integer seed."""
    if not isinstance(rng, np.random.Generator):
        rng = _rng.derive_rng(rng, _rng.INIT)
    shapes = _param_shapes(cfg)
    params = {}
    for name, shape in shapes.items():
        params[name] = he_init(shape, rng) if name.endswith("weight") else np.zeros(shape)
    return DeepGalaxyNet.from_parameters(cfg, params)


def _check_batch(net, x):
    x = as_tensor(x)
    cfg = net.config
    want = (cfg.input_channels, cfg.input_height, cfg.input_width)
    if x.ndim != 4 or x.shape[1:] != want:
        raise InvalidShapeError(f"batch has shape {x.shape}, network expects N x {want[0]} x {want[1]} x {want[2]}")
    return x


def _forward(net, x):
    conv_out, conv_c = conv_forward(x, net.conv)
    relu1, relu1_c = relu_forward(conv_out)
    pooled, pool_c = maxpool_forward(relu1)
    flat = pooled.reshape(x.shape[0], -1)
    fc1_out, fc1_c = dense_forward(flat, net.fc1)
    relu2, relu2_c = relu_forward(fc1_out)
    logits, fc2_c = dense_forward(relu2, net.fc2)
    acts = {"conv": conv_out, "relu1": relu1, "pool": pooled, "fc1": fc1_out, "relu2": relu2, "logits": logits}
    caches = (conv_c, relu1_c, pool_c, fc1_c, relu2_c, fc2_c)
    return acts, caches


def activations(net, batch):
    """Intermediate outputs keyed conv, relu1, pool, fc1, relu2, logits, probs."""
    acts, _ = _forward(net, _check_batch(net, batch))
    acts["probs"] = softmax(acts["logits"])
    return acts


def forward(net, batch):
    """Class-membership probabilities, one row per sample."""
    acts, _ = _forward(net, _check_batch(net, batch))
    return softmax(acts["logits"])


def predict(net, batch):
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(forward(net, batch), axis=1)


def loss_and_grads(net, batch, labels):
    """Mean cross-entropy, probabilities, and the gradient of every parameter."""
    x = _check_batch(net, batch)
    acts, (conv_c, relu1_c, pool_c, fc1_c, relu2_c, fc2_c) = _forward(net, x)
    loss, probs, dlogits = softmax_cross_entropy(acts["logits"], labels)
    d_relu2, g_fc2w, g_fc2b = dense_backward(dlogits, fc2_c, net.fc2)
    d_fc1 = relu_backward(d_relu2, relu2_c)
    d_flat, g_fc1w, g_fc1b = dense_backward(d_fc1, fc1_c, net.fc1)
    d_pool = d_flat.reshape(acts["pool"].shape)
    d_relu1 = maxpool_backward(d_pool, pool_c)
    d_conv = relu_backward(d_relu1, relu1_c)
    _, g_convw, g_convb = conv_backward(d_conv, conv_c, net.conv, need_dx=False)
    grads = {
        "conv.weight": g_convw,
        "conv.bias": g_convb,
        "fc1.weight": g_fc1w,
        "fc1.bias": g_fc1b,
        "fc2.weight": g_fc2w,
        "fc2.bias": g_fc2b,
    }
    return loss, probs, grads


class OptimizerState:
    """Momentum buffers (zero at start) and the count of completed iterations."""

    def __init__(self, net):
        self.velocity = {name: np.zeros_like(p) for name, p in net.parameters().items()}
        self.iteration = 0


def _step(net, batch, labels, opt, tc):
    try:
        with np.errstate(invalid="ignore", over="ignore"):
            loss, probs, grads = loss_and_grads(net, batch, labels)
    except NonFiniteError:
        raise NumericDivergenceError(opt.iteration + 1, opt.iteration) from None
    if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
        raise NumericDivergenceError(opt.iteration + 1, opt.iteration)
    for name, w in net.parameters().items():
        v = opt.velocity[name]
        v *= tc.momentum
        v += grads[name]
        w -= tc.learning_rate * v
        if not np.isfinite(w).all():
            raise NumericDivergenceError(opt.iteration + 1, opt.iteration)
    opt.iteration += 1
    return loss, probs


def train_step(net, batch, labels, opt, tc):
    """One SGD-with-momentum update, in place; returns the batch loss.

    ``v <- momentum * v + g``, then ``w <- w - learning_rate * v``.
    """
    return _step(net, batch, labels, opt, tc)[0]


def train(net, train_set, val_set, tc, on_record=None, opt=None):
    """Train in place for ``tc.epochs`` epochs.

    Returns ``(net, records, validation)``: one :class:`TrainRecord` per
    iteration, one :class:`ValidationRecord` per epoch (empty when there is
    no validation data).  The batch size is capped at the training-set size.
    Pass ``opt`` to keep (or resume from) the momentum buffers.
    """
    n = len(train_set)
    if n == 0:
        raise ConfigError("training set is empty")
    batch_size = min(tc.batch_size, n)
    if batch_size < tc.batch_size:
        log.warning("batch_size %d exceeds the %d training samples; using %d", tc.batch_size, n, n)
    if opt is None:
        opt = OptimizerState(net)
    records, validation = [], []
    for epoch in range(1, tc.epochs + 1):
        if tc.shuffle_each_epoch:
            order = _rng.derive_rng(tc.seed, _rng.SHUFFLE, epoch).permutation(n)
        else:
            order = np.arange(n)
        seen = correct = 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            labels = train_set.labels[idx]
            loss, probs = _step(net, train_set.images[idx], labels, opt, tc)
            seen += len(idx)
            correct += int((np.argmax(probs, axis=1) == labels).sum())
            rec = TrainRecord(opt.iteration, epoch, loss, correct / seen)
            records.append(rec)
            if on_record is not None:
                on_record(rec)
        if val_set is not None and len(val_set):
            try:
                acc = evaluate(net, val_set).accuracy
            except NonFiniteError:
                # the last update left finite weights that overflow in the forward pass
                raise NumericDivergenceError(opt.iteration, opt.iteration - 1) from None
            validation.append(ValidationRecord(epoch, acc))
            log.info("epoch %d: train acc %.4f, val acc %.4f", epoch, correct / seen, acc)
    return net, records, validation


def predict_dataset(net, dataset, batch_size=64):
    out = np.empty(len(dataset), dtype=np.int64)
    for start in range(0, len(dataset), batch_size):
        out[start:start + batch_size] = predict(net, dataset.images[start:start + batch_size])
    return out


def evaluate(net, dataset, batch_size=64):
    if len(dataset) == 0:
        raise ConfigError("cannot evaluate on an empty dataset")
    return evaluate_predictions(predict_dataset(net, dataset, batch_size), dataset.labels)


ProtocolResult = namedtuple("ProtocolResult", "median_accuracy per_run")


def run_protocol(splits, net_cfg, tc, n_runs=5, on_run=None):
    """Train ``n_runs`` independent networks and report the median test accuracy.

    ``splits`` is ``(train, val, test)``.  Run ``i`` uses seed ``tc.seed + i``
    for both initialization and shuffling.
    """
    if n_runs < 1 or n_runs % 2 == 0:
        raise ConfigError("n_runs must be an odd number >= 1")
    train_set, val_set, test_set = splits
    per_run = []
    for i in range(n_runs):
        run_tc = replace(tc, seed=tc.seed + i)
        net = build_network(net_cfg, run_tc.seed)
        try:
            train(net, train_set, val_set, run_tc)
        except NumericDivergenceError as exc:
            raise NumericDivergenceError(exc.iteration, exc.last_good, run_index=i) from exc
        acc = evaluate(net, test_set).accuracy
        per_run.append(acc)
        if on_run is not None:
            on_run(i, acc)
    return ProtocolResult(median(per_run), per_run)
