import numpy as np
import pytest
from scipy.io import wavfile

from noisykws import dataio, toy

SR = 16000


def write_tone(path, seconds=1.0, freq=440.0, rate=SR, amp=0.3, channels=1, dtype=np.int16):
    path.parent.mkdir(parents=True, exist_ok=True)
    t = np.arange(int(round(seconds * rate))) / rate
    x = amp * np.sin(2 * np.pi * freq * t)
    if channels > 1:
        x = np.stack([x * (k + 1) / channels for k in range(channels)], axis=1)
    if dtype == np.int16:
        x = np.round(x * 32767).astype(np.int16)
    else:
        x = x.astype(dtype)
    wavfile.write(str(path), rate, x)
    return path


@pytest.fixture
def tone_writer():
    return write_tone


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    """A small synthetic corpus shared across tests (read-only)."""
    root = tmp_path_factory.mktemp("toy")
    return toy.make_toy_dataset(root, n_train=8, n_val=3, n_test=6, n_noise=2, seed=7)


@pytest.fixture(scope="session")
def toy_manifest(toy_data):
    subset = dataio.corpus_classes(toy_data.corpus)
    return dataio.assign_official_splits(dataio.scan_keyword_corpus(toy_data.corpus, subset))


@pytest.fixture(scope="session")
def toy_banks(toy_data):
    train = dataio.scan_noise_bank(toy_data.noise_train, toy.TOY_CATEGORY_MAP, "train").preload()
    test = dataio.scan_noise_bank(toy_data.noise_eval, toy.TOY_CATEGORY_MAP, "eval").preload()
    return train, test


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{number}] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
