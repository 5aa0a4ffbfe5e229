import numpy as np
import pytest

from ecsi.fields import Grid, VelocityField, project


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_field(grid: Grid, rng: np.random.Generator) -> VelocityField:
    n = grid.n
    return VelocityField(grid, rng.standard_normal((n, n)), rng.standard_normal((n, n)))


def random_divfree_field(grid: Grid, rng: np.random.Generator) -> VelocityField:
    return project(random_field(grid, rng))


def dense_divergence_matrix(n: int) -> np.ndarray:
    """Divergence stencil as an explicit (n^2, 2 n^2) matrix, u before v."""
    h = 2.0 * np.pi / n
    m = np.zeros((n * n, 2 * n * n))

    def uid(i, j):
        return (i % n) * n + (j % n)

    def vid(i, j):
        return n * n + (i % n) * n + (j % n)

    for i in range(n):
        for j in range(n):
            row = i * n + j
            m[row, uid(i, j)] += 1.0 / h
            m[row, uid(i - 1, j)] -= 1.0 / h
            m[row, vid(i, j)] += 1.0 / h
            m[row, vid(i, j - 1)] -= 1.0 / h
    return m


def field_to_vec(q: VelocityField) -> np.ndarray:
    return np.concatenate([q.u.ravel(), q.v.ravel()])


def vec_to_field(grid: Grid, vec: np.ndarray) -> VelocityField:
    n = grid.n
    return VelocityField(grid, vec[: n * n].reshape(n, n), vec[n * n:].reshape(n, n))
