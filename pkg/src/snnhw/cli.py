"""``snnhw`` command line: encode, infer, compare, bench, train-toy.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
Every run records a manifest (command, arguments, seeds, paths, version,
timestamp): printed under ``"manifest"`` for commands that report on stdout,
written next to the output file otherwise.
"""
from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend_name
from .encoding import PGMError, SpikeFileError, normalize_image, rate_encode, read_pgm, read_spikes, resize_nearest, write_spikes
from .fixedpoint import Q1_15, dequantize_array
from .hwmodel import CycleParams, cycle_model, format_metrics_table, hw_forward, metrics, metrics_from_gops
from .network import (
    DimensionError,
    FloatNetwork,
    NetworkConfig,
    QuantizationReport,
    WeightFileError,
    count_ops,
    dequantize_network,
    forward,
    load_quantized,
    quantize_network,
    save_quantized,
)
from .trainer import TrainConfig, TrainingDivergedError, make_toy_dataset, toy_network_config, train, train_config_dict, write_history_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

OP_CONVENTION = "1 synaptic accumulate = 1 op; 1 neuron update = 1 op"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed {v} is outside the unsigned 64-bit range")
    return v


def manifest(args, command, inputs=(), outputs=(), seeds=None):
    return {
        "command": command,
        "argv": list(getattr(args, "_argv", [])),
        "config": getattr(args, "config", None),
        "seeds": seeds or {},
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "backend": backend_name(),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def _write_manifest(out_path, m):
    Path(str(out_path) + ".manifest.json").write_text(json.dumps(m, indent=2) + "\n")


def _load_config(args):
    return NetworkConfig.load(args.config) if args.config else None


def _load_network(path, config):
    """Return ``(qnet, float_source_or_None, quantization_report)`` from a .snnw or .npz file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"network file not found: {path}")
    if path.suffix == ".npz":
        fnet = FloatNetwork.load_npz(path, config)
        qnet, report = quantize_network(fnet)
        return qnet, fnet, report
    return load_quantized(path, config), None, QuantizationReport()


def _input_side(cfg: NetworkConfig | None, size_flag):
    if size_flag:
        return size_flag
    n = 4096 if cfg is None else cfg.input_size
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise UsageError(f"input_size {n} is not a square image; pass --size")
    return side


# -- commands -----------------------------------------------------------------


def cmd_encode(args):
    cfg = _load_config(args)
    T = args.timesteps or (cfg.timesteps if cfg else 25)
    side = _input_side(cfg, args.size)
    path = Path(args.image)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    pixels = resize_nearest(read_pgm(path), side, side)
    train = rate_encode(normalize_image(pixels), T, args.seed)
    write_spikes(args.out, train)
    _write_manifest(args.out, manifest(args, "encode", [path], [args.out], {"seed": args.seed}))
    print(json.dumps({"out": str(args.out), "timesteps": T, "neurons": train.neurons,
                      "spikes": int(train.bits.sum())}))
    return EXIT_OK


def _trace_dict(trace, dequant):
    conv = (lambda a: dequantize_array(a, Q1_15).tolist()) if dequant else (lambda a: np.asarray(a).tolist())
    return {
        "hidden_mem": conv(trace["hidden_mem"]),
        "hidden_spk": np.asarray(trace["hidden_spk"]).tolist(),
        "out_mem": conv(trace["out_mem"]),
        "out_spk": np.asarray(trace["out_spk"]).tolist(),
    }


def cmd_infer(args):
    cfg = _load_config(args)
    if not Path(args.spikes).exists():
        raise FileNotFoundError(f"spike file not found: {args.spikes}")
    qnet, fnet, qreport = _load_network(args.net, cfg)
    spikes = read_spikes(args.spikes)
    out = {"mode": args.mode}
    if args.mode == "hw":
        res = hw_forward(qnet, spikes, CycleParams(parallel_neurons=args.parallel))
        out.update(prediction=res.prediction, spike_counts=res.spike_counts.tolist(),
                   cycle_report=res.report.to_dict(), op_tally=res.tally)
        if args.trace:
            out["trace"] = _trace_dict(res.trace, dequant=True)
    else:
        net = fnet if fnet is not None else dequantize_network(qnet)
        res = forward(net, spikes, trace=args.trace)
        out.update(prediction=res.prediction, spike_counts=res.spike_counts.tolist())
        if args.trace:
            out["trace"] = _trace_dict(res.trace, dequant=False)
    out["manifest"] = manifest(args, "infer", [args.net, args.spikes])
    print(json.dumps(out))
    return EXIT_OK


def compare_runs(qnet, spikes, tolerance, qreport=None):
    """Run float (on dequantized weights) and hw; report membrane divergence."""
    fres = forward(dequantize_network(qnet), spikes, trace=True)
    hres = hw_forward(qnet, spikes)
    divergences = 0
    first = None
    max_diff = 0.0
    for layer in ("hidden", "out"):
        f = fres.trace[f"{layer}_mem"]
        h = dequantize_array(hres.trace[f"{layer}_mem"], Q1_15)
        diff = np.abs(f - h)
        max_diff = max(max_diff, float(diff.max()))
        bad = np.argwhere(diff > tolerance)
        divergences += len(bad)
        if len(bad):
            t, n = (int(v) for v in bad[0])
            cand = {"step": t, "layer": layer, "neuron": n, "float": float(f[t, n]), "hw": float(h[t, n])}
            if first is None or (t, layer != "hidden") < (first["step"], first["layer"] != "hidden"):
                first = cand
    spike_mismatch = int((fres.trace["hidden_spk"] != hres.trace["hidden_spk"]).sum()
                         + (fres.trace["out_spk"] != hres.trace["out_spk"]).sum())
    qreport = qreport or QuantizationReport()
    return {
        "tolerance": tolerance,
        "divergences": divergences,
        "first_divergence": first,
        "max_abs_membrane_diff": max_diff,
        "spike_mismatches": spike_mismatch,
        "saturation": {
            "quantized_weights": qreport.saturated_weights,
            "quantized_biases": qreport.saturated_biases,
            "quantized_params": qreport.saturated_params,
            "accumulator_narrowing": hres.tally["narrow_saturations"],
        },
        "float": {"prediction": fres.prediction, "spike_counts": fres.spike_counts.tolist()},
        "hw": {"prediction": hres.prediction, "spike_counts": hres.spike_counts.tolist()},
        "prediction_match": fres.prediction == hres.prediction,
    }


def cmd_compare(args):
    cfg = _load_config(args)
    if not Path(args.spikes).exists():
        raise FileNotFoundError(f"spike file not found: {args.spikes}")
    if args.tolerance < 0:
        raise UsageError("--tolerance must be >= 0")
    qnet, _, qreport = _load_network(args.net, cfg)
    out = compare_runs(qnet, read_spikes(args.spikes), args.tolerance, qreport)
    out["manifest"] = manifest(args, "compare", [args.net, args.spikes])
    print(json.dumps(out))
    return EXIT_OK


def cmd_bench(args):
    for name in ("gops", "power_mw", "freq_mhz"):
        v = getattr(args, name)
        if v is not None and not v > 0:
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    power_w = args.power_mw / 1e3
    freq_hz = args.freq_mhz * 1e6 if args.freq_mhz else None
    out = {"op_convention": OP_CONVENTION}
    if args.gops is not None:
        m = metrics_from_gops(args.gops, power_w, freq_hz)
    else:
        cfg = _load_config(args) or NetworkConfig()
        if freq_hz is None:
            raise UsageError("--freq-mhz is required when --gops is not given")
        report = cycle_model(cfg, CycleParams(parallel_neurons=args.parallel))
        m = metrics(report, freq_hz, power_w)
        ops = count_ops(cfg)
        out["cycle_report"] = report.to_dict()
        out["ops"] = {"synaptic_per_step": ops.synaptic_per_step, "neuron_per_step": ops.neuron_per_step,
                      "total": ops.total}
    out["metrics"] = m.to_dict()
    out["manifest"] = manifest(args, "bench")
    if args.json:
        print(json.dumps(out))
    else:
        print(format_metrics_table(m))
        print(f"# ops: {OP_CONVENTION}")
    return EXIT_OK


def cmd_train_toy(args):
    net_cfg = _load_config(args) or toy_network_config(size=args.size, hidden=args.hidden, timesteps=args.timesteps)
    tcfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                       timesteps=net_cfg.timesteps, seed=args.seed)
    side = _input_side(net_cfg, None)
    data = make_toy_dataset(args.seed, args.samples, size=side)
    result = train(FloatNetwork.init_random(net_cfg, seed=args.seed), data, tcfg)
    qnet, qreport = quantize_network(result.network)
    save_quantized(args.out, qnet)
    outputs = [args.out]
    cfg_path = Path(str(args.out) + ".config.json")
    net_cfg.save(cfg_path)
    outputs.append(cfg_path)
    csv_path = Path(args.csv) if args.csv else Path(str(args.out) + ".csv")
    write_history_csv(csv_path, result.history)
    outputs.append(csv_path)
    if args.float_out:
        result.network.save_npz(args.float_out)
        outputs.append(args.float_out)
    m = manifest(args, "train-toy", outputs=outputs, seeds={"seed": args.seed})
    m["train_config"] = train_config_dict(tcfg)
    _write_manifest(args.out, m)
    last = result.history[-1]
    print(json.dumps({"out": str(args.out), "epochs": len(result.history), "final": last,
                      "saturated_on_quantize": qreport.total}))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="snnhw", description="Bit-accurate SNN accelerator model")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("encode", help="rate-code a P5 PGM image into an SPKT spike file")
    e.add_argument("image")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=_u64, required=True)
    e.add_argument("--timesteps", type=int)
    e.add_argument("--size", type=int, help="square side to resize to (default: from config or 64)")
    e.add_argument("--config")
    e.set_defaults(func=cmd_encode)

    i = sub.add_parser("infer", help="classify a spike file with the float or hardware model")
    i.add_argument("net", help=".snnw (quantized) or .npz (float) weights")
    i.add_argument("spikes")
    i.add_argument("--mode", choices=("float", "hw"), default="hw")
    i.add_argument("--config")
    i.add_argument("--trace", action="store_true")
    i.add_argument("--parallel", type=int, default=CycleParams().parallel_neurons)
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("compare", help="run both models and report membrane divergence")
    c.add_argument("net")
    c.add_argument("spikes")
    c.add_argument("--config")
    c.add_argument("--tolerance", type=float, default=1e-3)
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("bench", help="throughput and energy-efficiency table")
    b.add_argument("--config")
    b.add_argument("--gops", type=float)
    b.add_argument("--power-mw", type=float, required=True)
    b.add_argument("--freq-mhz", type=float)
    b.add_argument("--parallel", type=int, default=CycleParams().parallel_neurons)
    b.add_argument("--json", action="store_true")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train-toy", help="train the toy two-class network and save SNNW weights")
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--csv")
    t.add_argument("--float-out")
    t.add_argument("--seed", type=_u64, default=0)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--lr", type=float, default=TrainConfig().learning_rate)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--samples", type=int, default=400)
    t.add_argument("--size", type=int, default=8)
    t.add_argument("--hidden", type=int, default=32)
    t.add_argument("--timesteps", type=int, default=25)
    t.set_defaults(func=cmd_train_toy)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"snnhw: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"snnhw: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, PGMError, SpikeFileError, WeightFileError, DimensionError) as exc:
        print(f"snnhw: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"snnhw: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
