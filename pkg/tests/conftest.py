import sys

import pytest

from voldepth import deflate, scene


@pytest.fixture(params=deflate.available_backends())
def backend(request):
    return deflate.get_backend(request.param)


@pytest.fixture
def python_backend():
    previous = deflate.use_backend("python")
    yield
    deflate.use_backend(previous)


@pytest.fixture(scope="session")
def small_params():
    return scene.SceneParams(width=64, height=48, target_change_fraction=0.10, seed=3)


@pytest.fixture(scope="session")
def default_stream_300():
    return scene.generate_stream(scene.SceneParams(seed=11), 300)


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in list(sys.modules.items()) if name.endswith("test_acceptance")), None)
    results = getattr(module, "RESULTS", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in results.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
