import numpy as np
import pytest

from mdir import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numpy", "cython"])
def backend(request):
    """Run a test once per kernel backend (cython skipped when not built)."""
    if request.param == "cython" and kernels._compiled is None:
        pytest.skip("compiled kernels not built")
    old = kernels.BACKEND
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(old)


@pytest.fixture(scope="session")
def tiny_cir(tmp_path_factory):
    """A 7-category dataset at 32x32: 2 train and 1 test image per category."""
    from mdir.synth.dataset import synth_dataset
    from mdir.synth.scenes import make_scenes
    root = tmp_path_factory.mktemp("cir")
    scenes = [(f"scene{i}", img) for i, img in enumerate(make_scenes(4, 32, seed=0))]
    return synth_dataset(None, root, n_train=2, n_test=1, size=32, seed=0, clean_images=scenes)


@pytest.fixture(scope="session")
def tiny_classifier(tiny_cir):
    from mdir.synth.dataset import load_pairs
    from mdir.train import TrainConfig, train_classifier
    tr, te = load_pairs(tiny_cir, "train"), load_pairs(tiny_cir, "test")
    clf, _ = train_classifier(tr, te, TrainConfig(classifier_epochs=1))
    return clf


def pytest_terminal_summary(terminalreporter):
    from _acceptance_log import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
