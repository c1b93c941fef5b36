import warnings

import pytest

warnings.filterwarnings("ignore", message=".*TBB.*")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: full acceptance criteria (slow)")


@pytest.fixture(scope="session")
def tight_budget():
    from fracinit import EvalBudget

    return EvalBudget(rel_tol=1e-10, max_terms=2_000_000)
