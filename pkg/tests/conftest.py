import numpy as np
import pytest

from stagewise.analytic import calibrate_mode_state
from stagewise.dataset import build_hierarchy_dataset
from stagewise.linnet import LinearNet, TrainConfig, fit


VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-length training runs (tens of seconds)")
    config.stash[VERDICTS] = {}


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(VERDICTS, {})
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(verdicts):
        ok, detail = verdicts[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture()
def verdict(request):
    """Record and print one pass/fail line for an acceptance criterion, then assert it."""

    def record(n: int, ok: bool, detail: str) -> None:
        ok = bool(ok)
        request.config.stash[VERDICTS][n] = (ok, detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"

    return record


@pytest.fixture(scope="session")
def ds():
    return build_hierarchy_dataset(3)


@pytest.fixture(scope="session")
def train_cfg():
    return TrainConfig()


@pytest.fixture(scope="session")
def full_trace(ds, train_cfg):
    """Default 10K-epoch run with checkpoints every 50 epochs."""
    return fit(ds, train_cfg)


@pytest.fixture(scope="session")
def calibrated(ds, train_cfg):
    """(ModeState, per-epoch trace) from the default run."""
    return calibrate_mode_state(ds, train_cfg)


@pytest.fixture(scope="session")
def trained_net(full_trace):
    return full_trace.final


@pytest.fixture()
def small_net(ds):
    rng = np.random.default_rng(7)
    return LinearNet(rng.normal(0, 0.3, (3, ds.n_items)), rng.normal(0, 0.3, (ds.n_features, 3)))
