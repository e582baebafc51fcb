import numpy as np
import pytest

from hgmdp.data import make_synthetic, train_test_split
from hgmdp.secure_sgd import TrainConfig, train

# criterion number -> (title, outcome); filled by the acceptance module's tests
ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = ACCEPTANCE_MARKERS.get(report.nodeid)
    if marker is None:
        return
    n, title = marker
    prev = ACCEPTANCE.get(n, (title, True))[1]
    ACCEPTANCE[n] = (title, prev and report.outcome == "passed")


ACCEPTANCE_MARKERS = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            ACCEPTANCE_MARKERS[item.nodeid] = m.args


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture(scope="session")
def blobs():
    ds = make_synthetic(300, 4, 3, seed=7, spread=0.15)
    return train_test_split(ds, 0.2, seed=7)


@pytest.fixture(scope="session")
def small_trained(blobs):
    train_ds, _ = blobs
    cfg = TrainConfig(batch_size=16, learning_rate=0.5, steps=40, hidden=(8,), pretrain_steps=20, seed=3)
    return train(cfg, train_ds)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
