import csv
import subprocess
import sys

import numpy as np
import pytest
from scipy.io import wavfile

from noisykws.cli import main
from noisykws.dsp import AudioClip, decode_wav, write_wav

TINY_CONFIG = """\
model: {width: 8, depth: 1, latent_dim: 8, proj_dim: 8}
train: {batch_size: 8, epochs: 1, lr_init: 0.001}
eval: {category_map: {"white_*": white, "pink_*": pink, "brown_*": brown, "band_*": band}}
"""


@pytest.fixture(scope="module")
def trained(toy_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    cfg = out / "tiny.yaml"
    cfg.write_text(TINY_CONFIG)
    code = main(["train", "--config", str(cfg), "--data-dir", str(toy_data.corpus), "--noise-dir",
                 str(toy_data.noise_train), "--regularizer", "i2cr", "--out-dir", str(out), "--seed", "1"])
    assert code == 0
    return out, cfg


def test_train_outputs(trained):
    out, _ = trained
    run = out / "i2cr"
    for name in ("metrics.csv", "epochs.csv", "best.pt", "best.json", "last.pt", "config.yaml"):
        assert (run / name).exists()
    with open(run / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4  # 32 clips / batch 8


def test_train_zero_epochs_is_usage_error(toy_data, tmp_path, capsys):
    code = main(["train", "--data-dir", str(toy_data.corpus), "--epochs", "0", "--out-dir", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err
    assert "epochs" in err and len(err.strip().splitlines()) == 1


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--learning-rate", "1"])
    assert exc.value.code == 2


def test_unknown_config_key_exits_2(toy_data, tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("train: {warmup: 5}\n")
    assert main(["train", "--config", str(cfg), "--data-dir", str(toy_data.corpus)]) == 2


def test_missing_data_is_runtime_error(tmp_path, capsys):
    code = main(["make-manifest", "--data-dir", str(tmp_path / "nowhere"), "--subset", "10"])
    assert code == 1
    assert "does not exist" in capsys.readouterr().err


def test_evaluate_grid_columns(trained, toy_data, capsys):
    out, cfg = trained
    code = main(["evaluate", "--config", str(cfg), "--data-dir", str(toy_data.corpus), "--noise-dir",
                 str(toy_data.noise_eval), "--regularizer", "i2cr", "--snrs", "-10,-5,0,20", "--out-dir", str(out)])
    assert code == 0
    with open(out / "i2cr" / "grid.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    by_source = {}
    for r in rows:
        by_source.setdefault(r["noise_source"], []).append(r["snr_db"])
    assert by_source.pop("clean") == ["clean"]
    assert set(by_source) == {"white", "pink", "brown", "band"}
    for snrs in by_source.values():
        assert snrs == ["-10.0", "-5.0", "0.0", "20.0"]
    for r in rows:
        assert float(r["accuracy"]) == int(r["correct"]) / int(r["n"])
    table = (out / "i2cr" / "grid.txt").read_text()
    assert "(I2CR Reg.)" in table
    assert table in capsys.readouterr().out + "\n"


def test_evaluate_repeatable(trained, toy_data, tmp_path):
    out, cfg = trained
    args = ["evaluate", "--config", str(cfg), "--data-dir", str(toy_data.corpus), "--noise-dir",
            str(toy_data.noise_eval), "--snrs", "0", "--out-dir", str(out)]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_export_embeddings(trained, toy_data, tmp_path):
    out, cfg = trained
    base = tmp_path / "emb"
    code = main(["export-embeddings", "--config", str(cfg), "--data-dir", str(toy_data.corpus), "--noise-dir",
                 str(toy_data.noise_eval), "--snr", "0", "--out-dir", str(out), "--out", str(base)])
    assert code == 0
    assert np.load(base.with_suffix(".npy")).shape == (24, 8)
    assert len(base.with_suffix(".pca.tsv").read_text().splitlines()) == 25


def test_evaluate_without_checkpoint(toy_data, tmp_path):
    assert main(["evaluate", "--data-dir", str(toy_data.corpus), "--out-dir", str(tmp_path)]) == 2


def test_make_manifest(toy_data, tmp_path, capsys):
    out = tmp_path / "m.jsonl"
    code = main(["make-manifest", "--data-dir", str(toy_data.corpus), "--out", str(out),
                 "--noise-dir", str(toy_data.noise_eval), "--partition", "eval"])
    assert code == 0
    assert len(out.read_text().splitlines()) == 4 * 17
    assert (tmp_path / "noise_noise_eval.jsonl").exists()
    assert "train/val/test = 32/12/24" in capsys.readouterr().out


def test_mix_demo_equal_rms_gives_unit_gain(tmp_path, capsys):
    rng = np.random.default_rng(0)
    speech = rng.uniform(-0.3, 0.3, 16000)
    noise = rng.uniform(-0.3, 0.3, 16000)
    noise *= np.sqrt(np.mean(speech**2) / np.mean(noise**2))
    # float WAVs keep the equal RMS through the file round trip
    wavfile.write(str(tmp_path / "s.wav"), 16000, speech.astype(np.float32))
    wavfile.write(str(tmp_path / "n.wav"), 16000, noise.astype(np.float32))
    code = main(["mix-demo", "--speech", str(tmp_path / "s.wav"), "--noise", str(tmp_path / "n.wav"),
                 "--snr", "0", "--out", str(tmp_path / "mix.wav")])
    assert code == 0
    gain = float(capsys.readouterr().out.split("gain=")[1].split()[0])
    assert gain == pytest.approx(1.0, abs=1e-6)
    mixed = decode_wav(tmp_path / "mix.wav")
    assert len(mixed) == 16000


def test_mix_demo_negative_snr(tmp_path):
    write_wav(tmp_path / "s.wav", AudioClip(np.sin(np.arange(8000) / 5) * 0.2))
    write_wav(tmp_path / "n.wav", AudioClip(np.random.default_rng(1).normal(0, 0.1, 20000)))
    code = main(["mix-demo", "--speech", str(tmp_path / "s.wav"), "--noise", str(tmp_path / "n.wav"),
                 "--snr", "-10", "--out", str(tmp_path / "m.wav")])
    assert code == 0 and len(decode_wav(tmp_path / "m.wav")) == 8000


def test_module_entry_point():
    done = subprocess.run([sys.executable, "-m", "noisykws", "--help"], capture_output=True, text=True)
    assert done.returncode == 0
    for cmd in ("train", "evaluate", "export-embeddings", "mix-demo", "make-manifest"):
        assert cmd in done.stdout
