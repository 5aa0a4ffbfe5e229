import numpy as np
import pytest

from ecsi.fields import (
    ChannelStats,
    ConfigError,
    Grid,
    ScalarField,
    TrajectoryDataset,
    VelocityField,
    destandardize,
    divergence,
    face_average,
    gradient,
    kinetic_energy,
    project,
    standardize,
)
from conftest import (
    dense_divergence_matrix,
    field_to_vec,
    random_divfree_field,
    random_field,
    vec_to_field,
)


def test_grid_invariants():
    g = Grid(32)
    assert g.h * g.n == pytest.approx(2 * np.pi, abs=1e-14)
    with pytest.raises(ConfigError):
        Grid(2)
    with pytest.raises(ConfigError):
        Grid(12)  # not a power of two


def test_divergence_of_uniform_field_is_zero():
    g = Grid(8)
    q = VelocityField(g, np.ones((8, 8)), np.zeros((8, 8)))
    assert np.abs(divergence(q).values).max() == 0.0


def test_divergence_of_gradient_matches_dense_stencil(rng):
    # div(grad(phi)) must equal the dense M M^T product on a 4x4 grid
    g = Grid(4)
    m = dense_divergence_matrix(4)
    phi = rng.standard_normal((4, 4))
    got = divergence(gradient(ScalarField(g, phi))).values.ravel()
    want = m @ m.T @ phi.ravel()
    assert np.abs(got - want).max() < 1e-12


def test_divergence_after_projection_is_tiny(rng):
    g = Grid(16)
    q = random_field(g, rng)
    scale = max(1.0, max(np.abs(q.u).max(), np.abs(q.v).max()))
    div = divergence(project(q)).values
    assert np.abs(div).max() <= 1e-10 * scale / g.h


def test_project_leaves_divergence_free_fields_unchanged(rng):
    g = Grid(16)
    q = random_divfree_field(g, rng)
    p = project(q)
    ref = max(np.abs(q.u).max(), np.abs(q.v).max())
    assert np.abs(p.u - q.u).max() <= 1e-12 * ref
    assert np.abs(p.v - q.v).max() <= 1e-12 * ref


def test_project_annihilates_gradient_fields(rng):
    g = Grid(16)
    q = gradient(ScalarField(g, rng.standard_normal((16, 16))))
    p = project(q)
    assert np.abs(p.u).max() < 1e-12 * np.abs(q.u).max()
    assert np.abs(p.v).max() < 1e-12 * np.abs(q.u).max()


def test_project_is_idempotent(rng):
    g = Grid(32)
    p1 = project(random_field(g, rng))
    p2 = project(p1)
    ref = max(np.abs(p1.u).max(), np.abs(p1.v).max())
    assert np.abs(p2.u - p1.u).max() <= 1e-12 * ref
    assert np.abs(p2.v - p1.v).max() <= 1e-12 * ref


def test_project_is_a_contraction(rng):
    g = Grid(16)
    for _ in range(10):
        q = random_field(g, rng)
        assert kinetic_energy(project(q)) <= kinetic_energy(q) * (1 + 1e-14)


def test_project_matches_dense_pseudoinverse_oracle(rng):
    g = Grid(4)
    m = dense_divergence_matrix(4)
    pi_dense = np.eye(32) - m.T @ np.linalg.pinv(m @ m.T) @ m
    for _ in range(5):
        vec = rng.standard_normal(32)
        got = field_to_vec(project(vec_to_field(g, vec)))
        assert np.abs(got - pi_dense @ vec).max() < 1e-10


def test_kinetic_energy_examples(rng):
    g = Grid(4)
    assert kinetic_energy(VelocityField.zeros(g)) == 0.0
    q = VelocityField(g, np.ones((4, 4)), np.zeros((4, 4)))
    assert kinetic_energy(q) == pytest.approx(32.0 / np.pi**2, rel=1e-12)
    q2 = random_field(Grid(8), rng)
    a = rng.uniform(0.5, 3.0)
    qa = VelocityField(q2.grid, a * q2.u, a * q2.v)
    assert kinetic_energy(qa) == pytest.approx(a**2 * kinetic_energy(q2), rel=1e-12)


def test_face_average_uniform_field():
    g = Grid(16)
    q = VelocityField(g, np.full((16, 16), 2.5), np.full((16, 16), -1.0))
    c = face_average(q, 4)
    assert c.grid.n == 4
    assert np.abs(c.u - 2.5).max() < 1e-14
    assert np.abs(c.v + 1.0).max() < 1e-14


def test_face_average_single_column_mean():
    # one fine u-column on a coarse face set to (1, 2, 3, 4) -> mean 2.5
    g = Grid(4)
    u = np.zeros((4, 4))
    u[3, :] = [1.0, 2.0, 3.0, 4.0]  # fine column of the coarse u-face (factor 4)
    q = VelocityField(g, u, np.zeros((4, 4)))
    with pytest.raises(ConfigError):
        face_average(q, 3)
    g8 = Grid(8)
    u8 = np.zeros((8, 8))
    u8[3, 0:4] = [1.0, 2.0, 3.0, 4.0]
    c = face_average(VelocityField(g8, u8, np.zeros((8, 8))), 4)
    assert c.u[0, 0] == pytest.approx(2.5, abs=1e-14)


def test_face_average_preserves_divergence_free(rng):
    g = Grid(32)
    for _ in range(100):
        q = random_divfree_field(g, rng)
        c = face_average(q, 4)
        scale = max(1.0, max(np.abs(q.u).max(), np.abs(q.v).max()))
        assert np.abs(divergence(c).values).max() <= 1e-10 * scale / c.grid.h


def test_face_average_rejects_bad_factor(rng):
    q = random_field(Grid(8), rng)
    with pytest.raises(ConfigError):
        face_average(q, 3)
    with pytest.raises(ConfigError):
        face_average(q, 1)


def _dataset(states):
    return TrajectoryDataset(Grid(states.shape[-1]), states, dt=0.1)


def test_standardize_round_trip(rng):
    states = rng.standard_normal((2, 5, 2, 8, 8)) * 3.0 + 1.5
    ds = _dataset(states)
    std, stats = standardize(ds)
    back = destandardize(std)
    assert np.abs(back.states - states).max() < 1e-12
    flat = std.states.reshape(-1, 2, 64)
    assert abs(flat[:, 0].mean()) < 1e-12 and abs(flat[:, 1].mean()) < 1e-12
    assert flat[:, 0].std() == pytest.approx(1.0, abs=1e-12)


def test_standardize_already_standardized_is_identity(rng):
    states = rng.standard_normal((1, 50, 2, 8, 8))
    first, stats1 = standardize(_dataset(states))
    second, stats2 = standardize(_dataset(first.states))
    assert np.abs(stats2.mean).max() < 1e-12
    assert np.abs(stats2.std - 1.0).max() < 1e-12
    assert np.abs(second.states - first.states).max() < 1e-10


def test_standardize_constant_channel_clamps_std():
    states = np.zeros((1, 3, 2, 4, 4))
    states[:, :, 0] = 5.0
    std, stats = standardize(_dataset(states))
    assert stats.mean[0] == pytest.approx(5.0)
    assert stats.std[0] == 1.0
    assert bool(stats.clamped[0]) is True
    assert np.abs(std.states[:, :, 0]).max() == 0.0


def test_channel_stats_round_trip():
    stats = ChannelStats(np.array([1.0, 2.0]), np.array([3.0, 4.0]),
                         np.array([False, True]))
    back = ChannelStats.from_dict(stats.to_dict())
    assert np.array_equal(back.mean, stats.mean)
    assert np.array_equal(back.std, stats.std)
    assert np.array_equal(back.clamped, stats.clamped)
