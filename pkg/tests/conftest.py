import numpy as np
import pytest

ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mask_volume(rng, shape, p_obs=0.7):
    return rng.random(shape) < p_obs


@pytest.fixture
def criterion(request):
    """Record one acceptance line, echo it immediately, then assert."""
    log = request.config.stash.setdefault(ACCEPTANCE, [])
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def record(num, name, ok, detail):
        line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        log.append((num, line))
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(ACCEPTANCE, [])
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(log):
        terminalreporter.write_line(line)
