import warnings

import pytest

from hiercrop import experiments as X


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-minute end-to-end runs")
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion checked by the test")


_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or rep.outcome != "passed":
        detail = " ".join(f"{k}={v}" for k, v in item.user_properties)
        _criteria[mark.args[0]] = (mark.args[1], rep.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        text, outcome, detail = _criteria[n]
        verdict = {"passed": "PASS", "skipped": "SKIP"}.get(outcome, "FAIL")
        terminalreporter.write_line(f"criterion {n}: {verdict}  {text}" + (f"  [{detail}]" if detail else ""))


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    """Feature cache shared by the session; HIERCROP_CACHE keeps it across runs."""
    import os

    return os.environ.get("HIERCROP_CACHE") or str(tmp_path_factory.mktemp("feature-cache"))


@pytest.fixture(scope="session")
def tiny(cache_dir):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return X.load_preset("tiny", cache_dir)


@pytest.fixture(scope="session")
def tiny_exp(tiny):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return X.experiment(tiny, 0)
