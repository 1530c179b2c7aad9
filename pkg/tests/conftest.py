import numpy as np
import pytest

from underreport.likelihood import ParamLayout
from underreport.links import Link
from underreport.model import Dataset

LINKS = list(Link)
MODES = ["single", "dual", "known"]


def random_instance(rng, link, mode, n=25, d=None):
    """Small random dataset with a matching layout and parameter vector."""
    d = int(rng.integers(0, 4)) if d is None else d
    x = rng.standard_normal((n, d))
    a_obs = rng.integers(0, 2, n)
    a_obs2 = rng.integers(0, 2, n) if mode == "dual" else None
    data = Dataset(x=x, y=rng.integers(0, 2, n), a_obs=a_obs, a_obs2=a_obs2)
    fixed = (float(rng.uniform(0, 0.9)),) if mode == "known" else None
    layout = ParamLayout(
        d=d,
        n_tau=2 if mode == "dual" else 1,
        fixed_tau=fixed,
        link_propensity=link,
        link_outcome=link,
    )
    u = 0.7 * rng.standard_normal(layout.size)
    return data, layout, u


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
