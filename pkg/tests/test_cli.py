import subprocess
import sys

import numpy as np
import pytest

from lvqlab.cli import main
from lvqlab.entropy import Bitstream
from lvqlab.model import load_model
from lvqlab.sources import read_vectors, write_vectors

SRC = "ar1:n=8,rho=0.9,count=3000"


def run(args, capsys):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    model = d / "m.slvm"
    assert main(["train", "--source", SRC, "--quantizer", "salvq", "--lambdas", "0.004,0.01",
                 "--iters", "200", "--seed", "3", "--out", str(model)]) == 0
    vectors = d / "x.lvqv"
    assert main(["gen", "--source", "ar1:n=8,rho=0.9,count=1000", "--seed", "11", "--out", str(vectors)]) == 0
    return d, model, vectors


def test_train_writes_model(trained):
    _, model, _ = trained
    assert model.read_bytes()[:4] == b"SLVM"
    assert load_model(model).gains.size == 2


def test_train_e8_needs_multiple_of_eight(tmp_path, capsys):
    code, out, err = run(["train", "--source", "ar1:n=10,count=100", "--quantizer", "e8",
                          "--lambda", "0.01", "--out", tmp_path / "m"], capsys)
    assert code == 2 and "divisible by 8" in err and out == ""


def test_train_requires_lambda(tmp_path, capsys):
    code, _, err = run(["train", "--source", SRC, "--out", tmp_path / "m"], capsys)
    assert code == 2 and "lambda" in err


def test_bad_flag_exit_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 2


def test_compress_decompress_roundtrip(trained, tmp_path, capsys):
    _, model, vectors = trained
    stream, recon = tmp_path / "x.slvq", tmp_path / "y.lvqv"
    assert run(["compress", "--model", model, "--input", vectors, "--target", 1, "--out", stream], capsys)[0] == 0
    assert stream.read_bytes()[:4] == b"SLVQ"
    assert run(["decompress", "--model", model, "--input", stream, "--out", recon], capsys)[0] == 0
    m = load_model(model)
    X = read_vectors(vectors)
    expected = m.reconstruct(m.quantize(X, 1), 1)
    np.testing.assert_array_equal(read_vectors(recon), expected.astype(np.float32))
    assert Bitstream.from_bytes(stream.read_bytes()).step_scale == m.gains.gain(1)


def test_compress_bad_target(trained, tmp_path, capsys):
    _, model, vectors = trained
    code, _, err = run(["compress", "--model", model, "--input", vectors, "--target", 2,
                        "--out", tmp_path / "s"], capsys)
    assert code == 2 and "target" in err


def test_compress_empty_input(trained, tmp_path, capsys):
    _, model, _ = trained
    empty = tmp_path / "e.lvqv"
    write_vectors(empty, np.zeros((0, 8)))
    stream, recon = tmp_path / "e.slvq", tmp_path / "r.lvqv"
    assert run(["compress", "--model", model, "--input", empty, "--out", stream], capsys)[0] == 0
    assert Bitstream.from_bytes(stream.read_bytes()).payload == b""
    assert run(["decompress", "--model", model, "--input", stream, "--out", recon], capsys)[0] == 0
    assert read_vectors(recon).shape == (0, 8)


def test_decompress_bad_magic(trained, tmp_path, capsys):
    _, model, vectors = trained
    code, _, _ = run(["decompress", "--model", model, "--input", vectors, "--out", tmp_path / "o"], capsys)
    assert code == 2
    code, _, _ = run(["decompress", "--model", vectors, "--input", vectors, "--out", tmp_path / "o"], capsys)
    assert code == 2


def test_decompress_truncated_exit_one(trained, tmp_path, capsys):
    _, model, vectors = trained
    stream = tmp_path / "x.slvq"
    run(["compress", "--model", model, "--input", vectors, "--out", stream], capsys)
    cut = tmp_path / "cut.slvq"
    cut.write_bytes(stream.read_bytes()[:-4])
    code, out, err = run(["decompress", "--model", model, "--input", cut, "--out", tmp_path / "o"], capsys)
    assert code == 1 and "CorruptStream" in err and out == ""


def test_eval_csv(trained, capsys):
    _, model, _ = trained
    code, out, err = run(["eval", "--model", model, "--source", SRC], capsys)
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "lambda,target,bits_per_vector,mse,psnr_db" and len(lines) == 3
    assert err.startswith("# lvqlab eval ")


def test_bdrate_same_curve(trained, tmp_path, capsys):
    curve = tmp_path / "c.csv"
    curve.write_text(
        "lambda,target,bits_per_vector,mse,psnr_db\n"
        "0.002,0,40,0.01,32\n0.004,0,30,0.02,29\n0.008,0,22,0.04,26\n0.015,0,15,0.08,23\n"
    )
    code, out, _ = run(["bdrate", curve, curve], capsys)
    assert code == 0 and out == "bd_rate\n0.00%\n"


def test_bdrate_malformed_csv(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("rate,psnr\n1,2\n")
    code, out, _ = run(["bdrate", bad, bad], capsys)
    assert code == 2 and out == ""


def test_nsm_zn(capsys):
    code, out, _ = run(["nsm", "zn", "2", "1000000"], capsys)
    header, row = out.strip().splitlines()
    assert header == "lattice,dim,samples,nsm,stderr"
    assert float(row.split(",")[3]) == pytest.approx(1 / 12, abs=1e-3)


def test_sweep_five_lambdas(capsys):
    code, out, _ = run(["sweep", "--source", "ar1:n=8,rho=0.9,count=5000", "--quantizer", "usq",
                        "--lambdas", "0.002,0.004,0.008,0.015,0.025", "--iters", "300"], capsys)
    rows = out.strip().splitlines()[1:]
    assert code == 0 and len(rows) == 5
    by_lambda = sorted((float(r.split(",")[0]), float(r.split(",")[2])) for r in rows)
    rates = [r for _, r in by_lambda]
    assert all(a > b for a, b in zip(rates, rates[1:]))


def test_sweep_duplicate_lambdas(capsys):
    code, _, _ = run(["sweep", "--source", SRC, "--lambdas", "0.01,0.01", "--iters", "1"], capsys)
    assert code == 2


def test_config_precedence(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nseed = 5\nsamples = 1000\n")
    monkeypatch.setenv("LVQLAB_SEED", "9")
    _, _, err = run(["nsm", "a2", "2", "100"], capsys)
    assert " seed=9 " in err
    _, _, err = run(["nsm", "a2", "2", "100", "--config", cfg], capsys)
    assert " seed=5 " in err
    _, _, err = run(["nsm", "a2", "2", "100", "--config", cfg, "--seed", "2"], capsys)
    assert " seed=2 " in err
    monkeypatch.delenv("LVQLAB_SEED")
    _, _, err = run(["nsm", "a2", "2", "100"], capsys)
    assert " seed=0 " in err


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("seed\n")
    code, _, _ = run(["nsm", "a2", "2", "100", "--config", cfg], capsys)
    assert code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lvqlab", "nsm", "a2", "2", "1000"],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.startswith("lattice,dim,samples,nsm,stderr\n")
    assert proc.stderr.startswith("# lvqlab nsm ")
