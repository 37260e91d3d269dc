"""Bit-accurate model of the FPGA inference datapath.

Per timestep and per neuron: the binary input spikes gate Q1.15 weights into
a pairwise adder tree with a 28-bit (Q12.15) accumulator, the Q1.15 bias is
widened and added after the tree, the sum is clamped back into Q1.15 and fed
to the neuron hardware unit (NHU):

    candidate = sat(sat(beta * u) + i - u_rest)
    spike     = candidate >= threshold   (unless refractory)

Output spikes are shifted into a per-neuron register of length T; the final
comparator picks the neuron with the most ones.

The cycle model is a parametric estimate of the phase structure, not a
measurement of any device.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .encoding import SpikeTrain
from .fixedpoint import (
    Q1_15,
    Q12_15,
    QValue,
    narrow_saturating,
    sat_add,
    sat_mul,
    sat_sub,
    widen,
)
from .network import (
    DimensionError,
    NetworkConfig,
    QNeuronParams,
    QuantizedNetwork,
    count_ops,
    predict_from_counts,
)
from .neuron import RESET_SUBTRACT

PHASES = ("load", "accumulate", "neuron_update", "readout")


@dataclass(frozen=True)
class AdderTreeResult:
    acc: QValue  # Q12.15
    depth: int
    peak: int = 0  # largest |node| seen in the tree, raw units
    overflow_nodes: int = 0


@dataclass(frozen=True)
class HwNeuronState:
    u: QValue = QValue(0, Q1_15)
    refractory_remaining: int = 0


def adder_tree(spikes, weights) -> AdderTreeResult:
    """Sum the weights selected by binary ``spikes`` through a pairwise tree.

    ``weights`` holds Q1.15 raw integers (or :class:`QValue` items).
    """
    s = np.asarray(spikes).reshape(-1)
    if len(weights) and isinstance(weights[0], QValue):
        weights = [w.raw for w in weights]
    w = np.asarray(weights, dtype=np.int64).reshape(-1)
    if s.shape != w.shape:
        raise DimensionError(f"spikes ({s.size}) and weights ({w.size}) differ in length")
    if s.size < 1:
        raise DimensionError("adder tree needs at least one input")
    if np.any((s != 0) & (s != 1)):
        raise ValueError("spikes must be binary")
    acc, peak, overflow = adder_tree_batch(s[None, :], w[None, :])
    return AdderTreeResult(QValue(int(acc[0]), Q12_15), kernels.tree_depth(s.size), int(peak[0]), int(overflow[0]))


def adder_tree_batch(spikes, weights):
    """Vectorized trees over rows: returns ``(acc, peak, overflow_nodes)`` int64 arrays.

    ``weights`` may be a single row shared by every spike row.
    """
    s = np.ascontiguousarray(spikes, dtype=np.uint8)
    w = np.asarray(weights, dtype=np.int64)
    if w.ndim == 1:
        w = np.broadcast_to(w, s.shape)
    w = np.ascontiguousarray(w)
    if w.shape != s.shape:
        raise DimensionError(f"spikes {s.shape} and weights {w.shape} differ in shape")
    return kernels.tree_reduce(s, w)


def nhu_step(acc, bias: QValue, state: HwNeuronState, params: QNeuronParams):
    """One neuron hardware unit update; returns ``(state, spike)``.

    ``acc`` is an :class:`AdderTreeResult` or a Q12.15 :class:`QValue`.
    """
    acc_q = acc.acc if isinstance(acc, AdderTreeResult) else acc
    i = narrow_saturating(sat_add(acc_q, widen(bias, acc_q.fmt)), Q1_15)
    candidate = sat_sub(sat_add(sat_mul(params.beta, state.u), i), params.u_rest)
    if state.refractory_remaining > 0:
        return HwNeuronState(candidate, state.refractory_remaining - 1), 0
    if candidate.raw >= params.threshold.raw:
        u = sat_sub(candidate, params.threshold) if params.reset_mode == RESET_SUBTRACT else QValue.zero(Q1_15)
        return HwNeuronState(u, params.refractory_steps), 1
    return HwNeuronState(candidate, 0), 0


class OutputShiftRegister:
    """Per-output-neuron bit queue of length T; readout counts the ones."""

    def __init__(self, n_outputs: int, length: int):
        self.regs = [deque([0] * length, maxlen=length) for _ in range(n_outputs)]

    def shift_in(self, bits):
        for reg, b in zip(self.regs, bits):
            reg.append(int(b))

    def counts(self) -> np.ndarray:
        return np.array([sum(reg) for reg in self.regs], dtype=np.int64)

    def contents(self) -> np.ndarray:
        return np.array([list(reg) for reg in self.regs], dtype=np.uint8)


# -- cycle / throughput model ---------------------------------------------------


@dataclass(frozen=True)
class CycleParams:
    parallel_neurons: int = 32  # P: neurons sharing one accumulate/update slot
    load_cycles: int = 1  # per timestep, fetch of the input spike row
    readout_cycles: int = 1  # per timestep, shift-register append

    def __post_init__(self):
        if self.parallel_neurons < 1 or self.load_cycles < 0 or self.readout_cycles < 0:
            raise ValueError("invalid cycle parameters")


@dataclass
class CycleReport:
    cycles_per_inference: int
    ops_total: int
    phases: dict
    timesteps: int
    cycles_per_step: int
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def cycle_model(cfg: NetworkConfig, params: CycleParams = CycleParams()) -> CycleReport:
    """Per timestep: load, then for each layer ceil(n_out / P) neuron groups that
    each spend max(1, tree depth) accumulate cycles and 1 update cycle, then readout."""
    P = params.parallel_neurons
    accumulate = 0
    update = 0
    sizes = cfg.layer_sizes
    for fan_in, n_out in zip(sizes[:-1], sizes[1:]):
        groups = math.ceil(n_out / P)
        accumulate += groups * max(1, kernels.tree_depth(fan_in))
        update += groups
    per_step = {"load": params.load_cycles, "accumulate": accumulate,
                "neuron_update": update, "readout": params.readout_cycles}
    T = cfg.timesteps
    phases = {k: v * T for k, v in per_step.items()}
    step_total = sum(per_step.values())
    return CycleReport(
        cycles_per_inference=step_total * T,
        ops_total=count_ops(cfg).total,
        phases=phases,
        timesteps=T,
        cycles_per_step=step_total,
        params=asdict(params),
    )


@dataclass(frozen=True)
class Metrics:
    frequency_hz: float | None
    power_w: float
    gops: float
    gops_per_watt: float
    latency_s: float | None = None

    def to_dict(self):
        return asdict(self)


def _positive(**kw):
    for name, v in kw.items():
        if v is None or not math.isfinite(v) or v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")


def metrics(report: CycleReport, frequency_hz: float, power_w: float) -> Metrics:
    _positive(frequency_hz=frequency_hz, power_w=power_w)
    latency = report.cycles_per_inference / frequency_hz
    gops = report.ops_total / latency / 1e9
    return Metrics(frequency_hz, power_w, gops, gops / power_w, latency)


def metrics_from_gops(gops: float, power_w: float, frequency_hz: float | None = None) -> Metrics:
    """Metrics from a throughput figure measured elsewhere."""
    _positive(gops=gops, power_w=power_w)
    if frequency_hz is not None:
        _positive(frequency_hz=frequency_hz)
    return Metrics(frequency_hz, power_w, gops, gops / power_w)


def format_metrics_table(m: Metrics, label: str = "SNN") -> str:
    freq = "n/a" if m.frequency_hz is None else f"{m.frequency_hz / 1e6:.0f}"
    rows = [
        ("Power (mW)", f"{m.power_w * 1e3:.0f}"),
        ("Performance (GOPS)", f"{m.gops:.0f}"),
        ("Frequency (MHz)", freq),
        ("Energy Efficiency (GOPS/W)", f"{m.gops_per_watt:.0f}"),
    ]
    width = max(len(r[0]) for r in rows)
    vwidth = max(len(label), *(len(r[1]) for r in rows))
    lines = [f"{'':<{width}}  {label:>{vwidth}}"]
    lines += [f"{name:<{width}}  {val:>{vwidth}}" for name, val in rows]
    return "\n".join(lines)


# -- full inference -------------------------------------------------------------


@dataclass
class HwResult:
    spike_counts: np.ndarray
    prediction: int
    report: CycleReport
    shift_register: np.ndarray  # (outputs, T)
    trace: dict
    tally: dict


def pack_params(p: QNeuronParams) -> np.ndarray:
    return np.array([p.beta.raw, p.threshold.raw, p.u_rest.raw, p.refractory_steps,
                     int(p.reset_mode == RESET_SUBTRACT)], dtype=np.int64)


def hw_forward(qnet: QuantizedNetwork, spikes: SpikeTrain, cycle_params: CycleParams = CycleParams()) -> HwResult:
    cfg = qnet.config
    if qnet.fmt != Q1_15:
        raise ValueError("the hardware pipeline runs in Q1.15 only")
    if spikes.neurons != cfg.input_size:
        raise DimensionError(f"spike train has {spikes.neurons} neurons, network expects input_size={cfg.input_size}")
    if spikes.timesteps != cfg.timesteps:
        raise DimensionError(f"spike train has T={spikes.timesteps}, network expects timesteps={cfg.timesteps}")
    l1, l2 = qnet.layers
    hmem, hspk, omem, ospk, tally = kernels.hw_run(
        np.ascontiguousarray(l1.weights, dtype=np.int64), np.ascontiguousarray(l1.bias, dtype=np.int64),
        np.ascontiguousarray(l2.weights, dtype=np.int64), np.ascontiguousarray(l2.bias, dtype=np.int64),
        np.ascontiguousarray(spikes.bits, dtype=np.uint8),
        pack_params(qnet.params[0]), pack_params(qnet.params[1]),
    )
    sreg = OutputShiftRegister(cfg.output_size, cfg.timesteps)
    for t in range(cfg.timesteps):
        sreg.shift_in(ospk[t])
    counts = sreg.counts()
    return HwResult(
        spike_counts=counts,
        prediction=int(predict_from_counts(counts)),
        report=cycle_model(cfg, cycle_params),
        shift_register=sreg.contents(),
        trace={"hidden_mem": hmem, "hidden_spk": hspk, "out_mem": omem, "out_spk": ospk},
        tally={
            "tree_adds": int(tally[kernels.TALLY_TREE_ADDS]),
            "bias_adds": int(tally[kernels.TALLY_BIAS_ADDS]),
            "neuron_mults": int(tally[kernels.TALLY_NEURON_MULTS]),
            "synaptic_mults": int(tally[kernels.TALLY_SYNAPTIC_MULTS]),
            "narrow_saturations": int(tally[kernels.TALLY_NARROW_SATURATIONS]),
        },
    )
