import pytest

_RESULTS = pytest.StashKey[dict]()

CRITERIA = {
    1: "gradient correctness",
    2: "filter response",
    3: "windowing oracle",
    4: "balancing exactness",
    5: "metric oracle on reference confusion counts",
    6: "end-to-end synthetic experiment",
    7: "single-batch overfit",
    8: "determinism of the end-to-end run",
    9: "protocol conformance",
    10: "checkpoint round trip",
}


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """Record, print and assert one acceptance criterion outcome."""

    def record(number: int, ok: bool, detail: str):
        line = f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {CRITERIA[number]}: {detail}"
        request.config.stash[_RESULTS][number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(results.get(n, f"[criterion {n:2d}] NOT RUN  {CRITERIA[n]}"))
