import numpy as np
import pytest

import graphrbm as g


@pytest.fixture(scope="session")
def demo():
    return g.demo_graph()


@pytest.fixture(scope="session")
def partition(demo):
    return g.demo_partition(demo)


@pytest.fixture(scope="session")
def option1():
    return g.batch_option_one()


@pytest.fixture(scope="session")
def option2():
    return g.batch_option_two()


@pytest.fixture(scope="session")
def solution(demo):
    return g.demo_solution(demo)


@pytest.fixture(scope="session")
def problem(solution):
    return g.derive_data(solution)


@pytest.fixture(scope="session")
def single_batch(partition):
    """One batch containing every part: forces equivalence with the full solve."""
    return g.batch_family([list(range(partition.n_parts))], [1.0], partition.n_parts)


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(key=20240809))
