import re

import numpy as np
import pytest

from qualperf.records import RecordSet
from qualperf.synth import SynthConfig, generate_with_angles


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_synth():
    """The default 25-condition synthetic set: (config, records, angles, true quality)."""
    cfg = SynthConfig()
    rs, angles, true_q = generate_with_angles(cfg)
    return cfg, rs, angles, true_q


def make_records(scores, quality, labels, pools=None):
    quality = np.asarray(quality, dtype=float)
    if quality.ndim == 1:
        quality = quality[:, None]
    return RecordSet(scores=np.asarray(scores, dtype=float), quality=quality,
                     is_match=np.asarray(labels, dtype=bool), pool_ids=pools)


# One summary line per acceptance criterion, collected from test_acceptance.py.
_CRITERION = re.compile(r"test_criterion_(\d+)_")
_acceptance: dict[int, tuple[str, str]] = {}
_setup_time: dict[str, float] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or "test_acceptance.py" not in report.nodeid:
        return
    n = int(m.group(1))
    name = report.nodeid.split("::")[-1]
    if report.when == "setup":
        # Shared fixtures (such as the trained model) count toward the criterion.
        _setup_time[report.nodeid] = report.duration
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.outcome == "passed" else report.outcome.upper()
        total = report.duration + (_setup_time.get(report.nodeid, 0.0) if report.when == "call" else 0.0)
        _acceptance[n] = (status, f"{name} ({total:.2f}s)")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        status, name = _acceptance[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {name}")
