import pytest

_criteria = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = ""):
    _criteria[number] = (title, passed, detail)


@pytest.fixture
def criterion(request):
    """Context manager that records the pass/fail line for one acceptance criterion."""

    class _Ctx:
        def __call__(self, number, title):
            self.number, self.title, self.detail = number, title, ""
            return self

        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            passed = exc_type is None
            record_criterion(self.number, self.title, passed, self.detail)
            line = f"[{'PASS' if passed else 'FAIL'}] criterion {self.number}: {self.title}"
            if self.detail:
                line += f" ({self.detail})"
            print(line)
            return False

    return _Ctx()


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        title, passed, detail = _criteria[n]
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {n}: {title}"
        if detail:
            line += f" ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_world(tmp_path_factory):
    """A reduced synthetic world shared by the synth, train and CLI tests."""
    from geoat.synth import WorldSpec, generate_world

    out = tmp_path_factory.mktemp("world")
    generate_world(WorldSpec(clips_per_class=8, seed=11), out)
    return out
