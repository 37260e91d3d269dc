import json
import subprocess
import sys

import numpy as np
import pytest

from snnhw.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from snnhw.encoding import SpikeTrain, read_spikes, write_pgm, write_spikes
from snnhw.network import FloatNetwork, LayerWeights, NetworkConfig, load_quantized, quantize_network, save_quantized

from test_network import TOY_CFG, TOY_X, random_net, toy_net


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def toy_files(tmp_path):
    net = toy_net()
    q, _ = quantize_network(net)
    save_quantized(tmp_path / "toy.snnw", q)
    net.config.save(tmp_path / "toy.json")
    net.save_npz(tmp_path / "toy.npz")
    write_spikes(tmp_path / "toy.spkt", SpikeTrain(np.array(TOY_X, dtype=np.uint8)))
    return tmp_path


# -- encode -------------------------------------------------------------------------


@pytest.mark.parametrize("level, expect", [(0, 0), (255, 1)])
def test_encode_extremes(tmp_path, capsys, level, expect):
    write_pgm(tmp_path / "img.pgm", np.full((64, 64), level, dtype=np.uint8))
    code, out, _ = run(capsys, "encode", tmp_path / "img.pgm", "--out", tmp_path / "s.spkt", "--seed", 3)
    assert code == EXIT_OK
    bits = read_spikes(tmp_path / "s.spkt").bits
    assert bits.shape == (25, 4096)
    assert np.all(bits == expect)
    assert json.loads(out)["spikes"] == expect * 25 * 4096


def test_encode_byte_identical_and_manifest(tmp_path, capsys):
    img = np.random.default_rng(0).integers(0, 256, (64, 64)).astype(np.uint8)
    write_pgm(tmp_path / "img.pgm", img)
    blobs = []
    for name in ("a.spkt", "b.spkt"):
        assert run(capsys, "encode", tmp_path / "img.pgm", "--out", tmp_path / name, "--seed", 2**64 - 1)[0] == 0
        blobs.append((tmp_path / name).read_bytes())
    assert blobs[0] == blobs[1]
    m = json.loads((tmp_path / "a.spkt.manifest.json").read_text())
    assert m["command"] == "encode" and m["seeds"] == {"seed": 2**64 - 1}
    assert m["tool_version"] and m["timestamp"]
    run(capsys, "encode", tmp_path / "img.pgm", "--out", tmp_path / "c.spkt", "--seed", 7)
    assert (tmp_path / "c.spkt").read_bytes() != blobs[0]


def test_encode_resizes_and_respects_config(tmp_path, capsys, toy_files):
    write_pgm(tmp_path / "img.pgm", np.full((5, 9), 255, dtype=np.uint8))
    code, out, _ = run(capsys, "encode", tmp_path / "img.pgm", "--out", tmp_path / "s.spkt", "--seed", 0,
                       "--timesteps", 6, "--size", 4)
    assert code == 0 and read_spikes(tmp_path / "s.spkt").bits.shape == (6, 16)


def test_encode_bad_pgm_reports_offset(tmp_path, capsys):
    (tmp_path / "bad.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    code, _, err = run(capsys, "encode", tmp_path / "bad.pgm", "--out", tmp_path / "s.spkt", "--seed", 0)
    assert code == EXIT_DATA
    assert "byte offset 11" in err


@pytest.mark.parametrize("seed", ["-1", str(2**64)])
def test_encode_rejects_out_of_range_seed(tmp_path, capsys, seed):
    with pytest.raises(SystemExit) as exc:
        main(["encode", "x.pgm", "--out", str(tmp_path / "s"), "--seed", seed])
    assert exc.value.code == EXIT_USAGE


# -- infer ----------------------------------------------------------------------------


def test_infer_hw_matches_float_on_toy(toy_files, capsys):
    d = toy_files
    code, out, _ = run(capsys, "infer", d / "toy.snnw", d / "toy.spkt", "--mode", "hw", "--config", d / "toy.json")
    assert code == 0
    hw = json.loads(out)
    code, out, _ = run(capsys, "infer", d / "toy.snnw", d / "toy.spkt", "--mode", "float", "--config", d / "toy.json")
    fl = json.loads(out)
    assert hw["spike_counts"] == fl["spike_counts"] == [4, 2]
    assert hw["prediction"] == fl["prediction"] == 0
    assert hw["cycle_report"]["cycles_per_inference"] > 0
    assert hw["op_tally"]["synaptic_mults"] == 0
    assert hw["manifest"]["inputs"] == [str(d / "toy.snnw"), str(d / "toy.spkt")]


def test_infer_accepts_float_weights(toy_files, capsys):
    d = toy_files
    code, out, _ = run(capsys, "infer", d / "toy.npz", d / "toy.spkt", "--mode", "hw")
    assert code == 0 and json.loads(out)["spike_counts"] == [4, 2]


def test_infer_trace(toy_files, capsys):
    d = toy_files
    code, out, _ = run(capsys, "infer", d / "toy.snnw", d / "toy.spkt", "--config", d / "toy.json", "--trace")
    tr = json.loads(out)["trace"]
    assert len(tr["hidden_mem"]) == 4 and len(tr["hidden_mem"][0]) == 2
    assert np.array(tr["out_spk"]).sum(axis=0).tolist() == [4, 2]


@pytest.mark.parametrize("which", ["net", "spikes"])
def test_infer_missing_file(toy_files, capsys, which):
    d = toy_files
    net = d / ("gone.snnw" if which == "net" else "toy.snnw")
    spk = d / ("gone.spkt" if which == "spikes" else "toy.spkt")
    code, _, err = run(capsys, "infer", net, spk, "--config", d / "toy.json")
    assert code == EXIT_DATA
    assert "gone." in err


def test_infer_dimension_mismatch_names_shapes(toy_files, capsys):
    d = toy_files
    write_spikes(d / "wide.spkt", SpikeTrain(np.zeros((4, 3), dtype=np.uint8)))
    code, _, err = run(capsys, "infer", d / "toy.snnw", d / "wide.spkt", "--config", d / "toy.json")
    assert code == EXIT_DATA
    assert "3" in err and "input_size=2" in err


def test_infer_bad_mode(toy_files):
    with pytest.raises(SystemExit) as exc:
        main(["infer", "a", "b", "--mode", "gpu"])
    assert exc.value.code == EXIT_USAGE


# -- compare ----------------------------------------------------------------------------


def test_compare_representable_net(toy_files, capsys):
    # grid weights and small drive: every membrane stays inside [-1, 1) and beta*u is exact
    d = toy_files
    small = FloatNetwork(TOY_CFG, [LayerWeights([[0.25, 0.125], [0.125, 0.375]], [0.0, 0.0625]),
                                   LayerWeights([[0.375, 0.25], [0.25, -0.125]], [0.0, 0.0625])])
    q, _ = quantize_network(small)
    save_quantized(d / "small.snnw", q)
    code, out, _ = run(capsys, "compare", d / "small.snnw", d / "toy.spkt", "--config", d / "toy.json",
                       "--tolerance", 0)
    rep = json.loads(out)
    assert code == 0
    assert rep["divergences"] == 0 and rep["first_divergence"] is None
    assert rep["max_abs_membrane_diff"] == 0.0
    assert rep["saturation"]["accumulator_narrowing"] == 0
    assert rep["prediction_match"] is True and sum(rep["hw"]["spike_counts"]) > 0


def test_compare_flags_range_clipping(toy_files, capsys):
    # the original toy drives a hidden candidate to 1.3125, which Q1.15 clips
    d = toy_files
    rep = json.loads(run(capsys, "compare", d / "toy.snnw", d / "toy.spkt", "--config", d / "toy.json")[1])
    assert rep["first_divergence"]["step"] == 1 and rep["first_divergence"]["layer"] == "hidden"
    assert rep["first_divergence"]["float"] == 1.3125
    assert rep["saturation"]["accumulator_narrowing"] > 0
    assert rep["spike_mismatches"] == 0 and rep["prediction_match"] is True


def test_compare_reports_saturation(toy_files, capsys):
    d = toy_files
    net = toy_net()
    net.layers[0].weights[0, 0] = 1.3
    net.save_npz(d / "big.npz")
    code, out, _ = run(capsys, "compare", d / "big.npz", d / "toy.spkt")
    rep = json.loads(out)
    assert code == 0
    assert rep["saturation"]["quantized_weights"] >= 1


def test_compare_zero_tolerance_counts_every_difference(tmp_path, capsys):
    cfg = NetworkConfig(16, 16, 2, timesteps=25)
    q, _ = quantize_network(random_net(cfg, 4, -0.1, 0.1))
    save_quantized(tmp_path / "n.snnw", q)
    cfg.save(tmp_path / "n.json")
    write_spikes(tmp_path / "s.spkt", SpikeTrain(np.random.default_rng(4).integers(0, 2, (25, 16)).astype(np.uint8)))
    net_args = [tmp_path / "n.snnw", tmp_path / "s.spkt", "--config", tmp_path / "n.json"]
    strict = json.loads(run(capsys, "compare", *net_args, "--tolerance", 0)[1])
    # independent count from the two inference traces
    fl = json.loads(run(capsys, "infer", *net_args, "--mode", "float", "--trace")[1])["trace"]
    hw = json.loads(run(capsys, "infer", *net_args, "--mode", "hw", "--trace")[1])["trace"]
    differ = sum(int((np.array(fl[k]) != np.array(hw[k])).sum()) for k in ("hidden_mem", "out_mem"))
    assert strict["divergences"] == differ > 0
    assert {"step", "layer", "neuron", "float", "hw"} <= set(strict["first_divergence"])
    at_max = json.loads(run(capsys, "compare", *net_args, "--tolerance", strict["max_abs_membrane_diff"])[1])
    assert at_max["divergences"] == 0
    assert run(capsys, "compare", *net_args, "--tolerance", -1)[0] == EXIT_USAGE


# -- bench ------------------------------------------------------------------------------


@pytest.mark.parametrize("gops, mw, expect", [(541, 495, 1093), (329, 2300, 143), (250, 1000, 250)])
def test_bench_table(capsys, gops, mw, expect):
    code, out, _ = run(capsys, "bench", "--gops", gops, "--power-mw", mw)
    assert code == 0
    eff = [l for l in out.splitlines() if l.startswith("Energy Efficiency")][0]
    assert abs(int(eff.split()[-1]) - expect) <= 1
    assert "1 synaptic accumulate = 1 op" in out


def test_bench_json_and_cycle_mode(capsys):
    code, out, _ = run(capsys, "bench", "--power-mw", 495, "--freq-mhz", 67, "--json")
    rep = json.loads(out)
    assert code == 0
    assert rep["ops"]["synaptic_per_step"] == 2_098_176
    m = rep["metrics"]
    assert m["gops_per_watt"] == pytest.approx(m["gops"] / 0.495)


@pytest.mark.parametrize("argv", [
    ["--gops", "541", "--power-mw", "0"],
    ["--gops", "-1", "--power-mw", "495"],
    ["--power-mw", "495"],
    ["--power-mw", "495", "--freq-mhz", "0"],
])
def test_bench_rejects_bad_input(capsys, argv):
    assert run(capsys, "bench", *argv)[0] == EXIT_USAGE


# -- train-toy ---------------------------------------------------------------------------


def test_train_toy_small(tmp_path, capsys):
    out = tmp_path / "toy.snnw"
    code, text, _ = run(capsys, "train-toy", "--out", out, "--epochs", 3, "--samples", 40, "--hidden", 8,
                        "--timesteps", 5, "--float-out", tmp_path / "f.npz")
    assert code == 0
    summary = json.loads(text)
    assert summary["epochs"] == 3
    lines = (tmp_path / "toy.snnw.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,train_acc,test_acc" and len(lines) == 4
    q = load_quantized(out, NetworkConfig.load(tmp_path / "toy.snnw.config.json"))
    assert q.config.hidden_size == 8
    assert FloatNetwork.load_npz(tmp_path / "f.npz").config.timesteps == 5
    m = json.loads((tmp_path / "toy.snnw.manifest.json").read_text())
    assert m["train_config"]["learning_rate"] == 5e-4


def test_train_toy_clipping_survives_huge_lr(tmp_path, capsys):
    code, _, _ = run(capsys, "train-toy", "--out", tmp_path / "x.snnw", "--epochs", 2, "--samples", 20,
                     "--hidden", 4, "--timesteps", 3, "--lr", "1e308")
    assert code == EXIT_OK


def test_train_toy_divergence_exit_code(tmp_path, capsys, monkeypatch):
    from snnhw import cli
    from snnhw.trainer import TrainingDivergedError

    def diverge(*_a, **_k):
        raise TrainingDivergedError(7, float("nan"))

    monkeypatch.setattr(cli, "train", diverge)
    code, _, err = run(capsys, "train-toy", "--out", tmp_path / "x.snnw", "--epochs", 1, "--samples", 20)
    assert code == EXIT_NUMERIC
    assert "epoch 7" in err


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "snnhw.cli", "bench", "--gops", "541", "--power-mw", "495"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "1093" in r.stdout
