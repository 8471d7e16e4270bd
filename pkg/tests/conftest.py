import numpy as np
import pytest
from hypothesis import settings

from pevit.config import TINY, ModelConfig

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


def fd_grad(f, x, step=1e-4):
    """Central differences of scalar ``f()`` w.r.t. every entry of array ``x`` (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        up = f()
        x[idx] = orig - step
        down = f()
        x[idx] = orig
        g[idx] = (up - down) / (2 * step)
    return g


def rel_err(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


# d=8, L=4: small enough for exhaustive finite differences of whole tensors
MICRO = ModelConfig(image_size=8, patch_size=4, in_channels=3, embed_dim=8, depth=4,
                    num_heads=2, mlp_hidden=32, num_classes=5, drop_path_rate=0.1)


@pytest.fixture
def micro():
    return MICRO


@pytest.fixture
def tiny():
    return TINY


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------------------------ acceptance report

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    ok, _, details = _CRITERIA.get(number, (True, title, []))
    details = details + [f"{k}={v}" for k, v in item.user_properties]
    _CRITERIA[number] = (ok and rep.passed, title, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, title, details = _CRITERIA[number]
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title}"
        tr.write_line(line + (f" [{', '.join(details)}]" if details else ""))
    tr.write_line("criterion 11 NOT REPRODUCED: full-scale ImageNet accuracies, peak epochs, "
                  "gaps and curves need full-scale training; covered indirectly by 1-10")
