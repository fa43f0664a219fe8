import hypothesis
import numpy as np
import pytest

from vaelf import data

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

_criteria: dict[int, dict] = {}


def pytest_runtest_logreport(report):
    number = getattr(report, "criterion", None)
    if number is None:
        return
    entry = _criteria.setdefault(number[0], {"title": number[1], "ok": True, "ran": False})
    if report.failed:
        entry["ok"] = False
        entry["ran"] = True
    elif report.when == "call" and report.passed:
        entry["ran"] = True


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] and entry["ran"] else ("FAIL" if entry["ran"] else "NOT RUN")
        terminalreporter.write_line(f"AC{number:<2} {status:<7} {entry['title']}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sinusoid_tensor(k=3, n_days=14, m_slots=96, density=None, seed=0):
    """Noise-free daily sinusoid without weekly modulation, normalized."""
    spec = data.SyntheticSpec(
        k=k, n_days=n_days, m_slots=m_slots,
        base=[700.0, 240.0, 760.0][:k], amplitude=[300.0, 4.0, 320.0][:k],
        weekly=[0.0] * k, phase=[0.0, np.pi, 0.3][:k], noise_sigma=[0.0] * k,
    )
    t = data.generate_synthetic(seed=seed, spec=spec)
    if density is not None:
        t = data.apply_sparsity(t, density, seed)
    return data.normalize(t)


@pytest.fixture
def sinusoid():
    return sinusoid_tensor


@pytest.fixture
def small_tensor():
    """Normalized 3 x 7 x 48 synthetic tensor at 50% density with its split."""
    t = data.generate_synthetic(seed=3, spec=data.SyntheticSpec(k=3, n_days=7, m_slots=48))
    t = data.normalize(data.apply_sparsity(t, 0.5, seed=3))
    return t, data.split_entries(t, seed=3)
