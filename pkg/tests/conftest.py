import pytest

from pivotrl.config import ExperimentConfig

_ACCEPTANCE = {}


@pytest.fixture
def tiny_config():
    """Seconds-scale config for plumbing tests: short episodes, small batches."""
    cfg = ExperimentConfig()
    cfg = cfg.override("task", horizon=20)
    cfg = cfg.override("trpo", episodes_per_iter=3, vf_minibatch=32)
    return cfg.override("experiment", n_iterations=2, eval_trials=4, eval_every=1,
                        sweep_multipliers=(1.0, 3.0))


@pytest.fixture
def acceptance():
    """Record an acceptance verdict; fails the calling test when the criterion is not met."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
