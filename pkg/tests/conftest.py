import numpy as np
import pytest

from hairline.synth import SynthParams, generate_cohort

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.fixture(scope="session")
def small_cohort():
    """Two cohorts, 12 subjects x 6 images, images included."""
    return generate_cohort(
        SynthParams(subjects=12, images_per_subject=6, dim=32, fh_offset=0.4, seed=11, cohorts=("AAM", "CM"), image_size=48)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None and (report.when == "call" or report.failed):
        number, title = marker.args
        detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
        outcome = "PASS" if report.passed else "FAIL"
        previous = _ACCEPTANCE.get(number)
        if previous is not None:
            outcome = "FAIL" if "FAIL" in (previous[1], outcome) else "PASS"
            detail = " | ".join(d for d in (previous[2], detail) if d)
        _ACCEPTANCE[number] = (title, outcome, detail)
    return report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, outcome, detail = _ACCEPTANCE[number]
        line = f"criterion {number} {outcome}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
