"""Reference two-layer spiking network and its Q1.15 quantization.

Topology: flatten -> linear (input->hidden) -> LIF -> linear (hidden->output)
-> LIF, run for ``timesteps`` steps. The class prediction is the argmax of
output spike counts with ties going to the lowest index.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .encoding import SpikeTrain
from .fixedpoint import Q1_15, QFormat, QValue, dequantize_array, quantize, quantize_array
from .neuron import RESET_ZERO, NeuronParams, lif_layer_step

# beta/threshold usable in both float and Q1.15 mode (threshold must stay below 1.0)
DEFAULT_LAYER_PARAMS = NeuronParams(beta=0.95, threshold=0.5)


class DimensionError(ValueError):
    pass


class WeightFileError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 4096
    hidden_size: int = 512
    output_size: int = 2
    timesteps: int = 25
    hidden: NeuronParams = DEFAULT_LAYER_PARAMS
    output: NeuronParams = DEFAULT_LAYER_PARAMS
    refractory_steps: int = 0
    dropout_rate: float = 0.25

    def __post_init__(self):
        if min(self.input_size, self.hidden_size, self.output_size) < 1:
            raise ValueError("layer sizes must be >= 1")
        if self.timesteps < 1:
            raise ValueError("timesteps must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.refractory_steps < 0:
            raise ValueError("refractory_steps must be >= 0")
        # the config-level refractory length applies to both layers
        object.__setattr__(self, "hidden", replace(self.hidden, refractory_steps=self.refractory_steps))
        object.__setattr__(self, "output", replace(self.output, refractory_steps=self.refractory_steps))

    @property
    def layer_sizes(self):
        return (self.input_size, self.hidden_size, self.output_size)

    @property
    def layer_params(self):
        return (self.hidden, self.output)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("hidden", "output"):
            if key in d and isinstance(d[key], dict):
                d[key] = NeuronParams(**d[key])
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "NetworkConfig":
        return cls.from_json(Path(path).read_text())


@dataclass
class LayerWeights:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise DimensionError(f"bias shape {self.bias.shape} does not match weights {self.weights.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("weights and biases must be finite")


@dataclass
class FloatNetwork:
    config: NetworkConfig
    layers: list  # [LayerWeights, LayerWeights]

    def __post_init__(self):
        sizes = self.config.layer_sizes
        if len(self.layers) != 2:
            raise DimensionError("network must have exactly two weight layers")
        for k, layer in enumerate(self.layers):
            if layer.weights.shape != (sizes[k + 1], sizes[k]):
                raise DimensionError(
                    f"layer {k} weights are {layer.weights.shape}, config expects {(sizes[k + 1], sizes[k])}"
                )

    @classmethod
    def init_random(cls, config: NetworkConfig, seed: int = 0, scale: float | None = None):
        """Uniform init in +-1/sqrt(fan_in) (or +-scale)."""
        rng = np.random.default_rng(seed)
        layers = []
        sizes = config.layer_sizes
        for k in range(2):
            bound = scale if scale is not None else 1.0 / np.sqrt(sizes[k])
            w = rng.uniform(-bound, bound, size=(sizes[k + 1], sizes[k]))
            b = rng.uniform(-bound, bound, size=sizes[k + 1])
            layers.append(LayerWeights(w, b))
        return cls(config, layers)

    def copy(self):
        return FloatNetwork(self.config, [LayerWeights(l.weights.copy(), l.bias.copy()) for l in self.layers])

    def save_npz(self, path):
        np.savez(path, w1=self.layers[0].weights, b1=self.layers[0].bias,
                 w2=self.layers[1].weights, b2=self.layers[1].bias,
                 config=np.array(self.config.to_json()))

    @classmethod
    def load_npz(cls, path, config: NetworkConfig | None = None):
        with np.load(path) as z:
            if config is None:
                config = NetworkConfig.from_json(str(z["config"])) if "config" in z else None
            layers = [LayerWeights(z["w1"], z["b1"]), LayerWeights(z["w2"], z["b2"])]
        if config is None:
            config = NetworkConfig(layers[0].weights.shape[1], layers[0].weights.shape[0], layers[1].weights.shape[0])
        return cls(config, layers)


@dataclass
class ForwardResult:
    spike_counts: np.ndarray
    prediction: int
    trace: dict | None = None


def predict_from_counts(counts) -> np.ndarray:
    # np.argmax returns the first maximum, which is the lowest-index tie rule
    return np.argmax(np.asarray(counts), axis=-1)


def _check_input(config: NetworkConfig, timesteps: int, neurons: int):
    if neurons != config.input_size:
        raise DimensionError(f"spike train has {neurons} neurons, network expects input_size={config.input_size}")
    if timesteps != config.timesteps:
        raise DimensionError(f"spike train has T={timesteps}, network expects timesteps={config.timesteps}")


def run_float(net: FloatNetwork, bits: np.ndarray, record: bool = False):
    """Batched float forward on ``bits`` of shape (B, T, N).

    Returns ``(counts (B, out), trace)``; the trace holds pre-reset membrane
    candidates and spikes per step when ``record`` is set.
    """
    cfg = net.config
    B, T, N = bits.shape
    _check_input(cfg, T, N)
    (l1, l2) = net.layers
    hp, op = cfg.layer_params
    u1 = np.zeros((B, cfg.hidden_size))
    r1 = np.zeros((B, cfg.hidden_size), dtype=np.int64)
    u2 = np.zeros((B, cfg.output_size))
    r2 = np.zeros((B, cfg.output_size), dtype=np.int64)
    counts = np.zeros((B, cfg.output_size), dtype=np.int64)
    trace = None
    if record:
        trace = {
            "hidden_mem": np.zeros((B, T, cfg.hidden_size)),
            "hidden_spk": np.zeros((B, T, cfg.hidden_size), dtype=np.uint8),
            "out_mem": np.zeros((B, T, cfg.output_size)),
            "out_spk": np.zeros((B, T, cfg.output_size), dtype=np.uint8),
        }
    x = bits.astype(np.float64)
    for t in range(T):
        i1 = x[:, t, :] @ l1.weights.T + l1.bias
        if record:
            trace["hidden_mem"][:, t] = hp.beta * u1 + i1 - hp.u_rest
        u1, r1, s1 = lif_layer_step(u1, r1, i1, hp.beta, hp.threshold, hp.refractory_steps, hp.reset_mode, hp.u_rest)
        i2 = s1 @ l2.weights.T + l2.bias
        if record:
            trace["out_mem"][:, t] = op.beta * u2 + i2 - op.u_rest
        u2, r2, s2 = lif_layer_step(u2, r2, i2, op.beta, op.threshold, op.refractory_steps, op.reset_mode, op.u_rest)
        counts += s2
        if record:
            trace["hidden_spk"][:, t] = s1
            trace["out_spk"][:, t] = s2
    return counts, trace


def forward(net: FloatNetwork, spikes: SpikeTrain, trace: bool = False) -> ForwardResult:
    counts, tr = run_float(net, spikes.bits[None, :, :], record=trace)
    if tr is not None:
        tr = {k: v[0] for k, v in tr.items()}
    return ForwardResult(counts[0], int(predict_from_counts(counts[0])), tr)


# -- quantization ---------------------------------------------------------------


@dataclass(frozen=True)
class QNeuronParams:
    beta: QValue
    threshold: QValue
    u_rest: QValue
    refractory_steps: int = 0
    reset_mode: str = RESET_ZERO


@dataclass
class QuantizedLayer:
    weights: np.ndarray  # (out, in) int64 raw
    bias: np.ndarray  # (out,) int64 raw


@dataclass
class QuantizedNetwork:
    config: NetworkConfig
    layers: list  # [QuantizedLayer, QuantizedLayer]
    params: tuple  # (QNeuronParams hidden, QNeuronParams output)
    fmt: QFormat = Q1_15


@dataclass
class QuantizationReport:
    saturated_weights: int = 0
    saturated_biases: int = 0
    saturated_params: int = 0

    @property
    def total(self) -> int:
        return self.saturated_weights + self.saturated_biases + self.saturated_params


def quantize_params(p: NeuronParams, fmt: QFormat = Q1_15):
    saturated = 0
    qs = []
    for v in (p.beta, p.threshold, p.u_rest):
        if not fmt.min_value <= v <= fmt.max_value:
            saturated += 1
        qs.append(quantize(v, fmt))
    return QNeuronParams(qs[0], qs[1], qs[2], p.refractory_steps, p.reset_mode), saturated


def quantize_network(net: FloatNetwork, fmt: QFormat = Q1_15):
    """Quantize every weight, bias and neuron parameter; returns ``(qnet, report)``."""
    report = QuantizationReport()
    layers = []
    for layer in net.layers:
        w, sw = quantize_array(layer.weights, fmt)
        b, sb = quantize_array(layer.bias, fmt)
        report.saturated_weights += sw
        report.saturated_biases += sb
        layers.append(QuantizedLayer(w, b))
    params = []
    for p in net.config.layer_params:
        qp, sp = quantize_params(p, fmt)
        report.saturated_params += sp
        params.append(qp)
    return QuantizedNetwork(net.config, layers, tuple(params), fmt), report


def dequantize_network(qnet: QuantizedNetwork) -> FloatNetwork:
    """Float network carrying exactly the quantized values (weights and neuron params)."""
    f = qnet.fmt
    layers = [LayerWeights(dequantize_array(l.weights, f), dequantize_array(l.bias, f)) for l in qnet.layers]
    cfg = qnet.config
    new_params = []
    for p, qp in zip(cfg.layer_params, qnet.params):
        new_params.append(replace(p, beta=float(qp.beta), threshold=float(qp.threshold), u_rest=float(qp.u_rest)))
    cfg = replace(cfg, hidden=new_params[0], output=new_params[1])
    return FloatNetwork(cfg, layers)


# -- op counting ----------------------------------------------------------------


@dataclass(frozen=True)
class OpCounts:
    synaptic_per_step: int
    neuron_per_step: int
    timesteps: int

    @property
    def per_step(self) -> int:
        return self.synaptic_per_step + self.neuron_per_step

    @property
    def synaptic_total(self) -> int:
        return self.synaptic_per_step * self.timesteps

    @property
    def neuron_total(self) -> int:
        return self.neuron_per_step * self.timesteps

    @property
    def total(self) -> int:
        return self.per_step * self.timesteps


def count_ops(cfg: NetworkConfig) -> OpCounts:
    """One synaptic accumulate = 1 op, one neuron update = 1 op."""
    syn = cfg.input_size * cfg.hidden_size + cfg.hidden_size * cfg.output_size
    return OpCounts(syn, cfg.hidden_size + cfg.output_size, cfg.timesteps)


# -- SNNW weight file -----------------------------------------------------------

SNNW_MAGIC = b"SNNW"
SNNW_VERSION = 1
_SNNW_HEADER = struct.Struct("<4sHH")
_SNNW_LAYER = struct.Struct("<II")


def weights_to_bytes(layers) -> bytes:
    out = [_SNNW_HEADER.pack(SNNW_MAGIC, SNNW_VERSION, len(layers))]
    for layer in layers:
        w = np.asarray(layer.weights)
        b = np.asarray(layer.bias)
        if w.min(initial=0) < -32768 or w.max(initial=0) > 32767 or b.min(initial=0) < -32768 or b.max(initial=0) > 32767:
            raise WeightFileError("raw values do not fit signed 16-bit")
        out.append(_SNNW_LAYER.pack(*w.shape))
        out.append(w.astype("<i2").tobytes())
        out.append(b.astype("<i2").tobytes())
    return b"".join(out)


def weights_from_bytes(data: bytes):
    if len(data) < _SNNW_HEADER.size:
        raise WeightFileError("weight file shorter than its header")
    magic, version, count = _SNNW_HEADER.unpack_from(data)
    if magic != SNNW_MAGIC:
        raise WeightFileError(f"bad magic {magic!r}, expected {SNNW_MAGIC!r}")
    if version != SNNW_VERSION:
        raise WeightFileError(f"unsupported weight file version {version}")
    pos = _SNNW_HEADER.size
    layers = []
    for k in range(count):
        if len(data) < pos + _SNNW_LAYER.size:
            raise WeightFileError(f"truncated header for layer {k} at byte {pos}")
        rows, cols = _SNNW_LAYER.unpack_from(data, pos)
        pos += _SNNW_LAYER.size
        need = 2 * (rows * cols + rows)
        if len(data) < pos + need:
            raise WeightFileError(f"truncated data for layer {k} ({rows}x{cols}) at byte {pos}")
        w = np.frombuffer(data, dtype="<i2", count=rows * cols, offset=pos).reshape(rows, cols)
        pos += 2 * rows * cols
        b = np.frombuffer(data, dtype="<i2", count=rows, offset=pos)
        pos += 2 * rows
        layers.append(QuantizedLayer(w.astype(np.int64), b.astype(np.int64)))
    if pos != len(data):
        raise WeightFileError(f"{len(data) - pos} trailing bytes after last layer")
    return layers


def save_quantized(path, qnet: QuantizedNetwork):
    Path(path).write_bytes(weights_to_bytes(qnet.layers))


def load_quantized(path, config: NetworkConfig | None = None) -> QuantizedNetwork:
    """Read an SNNW file; neuron parameters come from ``config`` (defaults otherwise)."""
    layers = weights_from_bytes(Path(path).read_bytes())
    if len(layers) != 2:
        raise WeightFileError(f"expected 2 layers, file has {len(layers)}")
    shapes = (layers[0].weights.shape, layers[1].weights.shape)
    if shapes[0][0] != shapes[1][1]:
        raise WeightFileError(f"layer shapes {shapes[0]} and {shapes[1]} do not chain")
    sizes = (shapes[0][1], shapes[0][0], shapes[1][0])
    if config is None:
        config = NetworkConfig(*sizes)
    elif config.layer_sizes != sizes:
        raise DimensionError(f"weight file is {sizes[0]}-{sizes[1]}-{sizes[2]}, config is "
                             f"{config.input_size}-{config.hidden_size}-{config.output_size}")
    params = tuple(quantize_params(p)[0] for p in config.layer_params)
    return QuantizedNetwork(config, layers, params)
