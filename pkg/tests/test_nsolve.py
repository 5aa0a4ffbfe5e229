import numpy as np
import pytest

from ecsi.fields import Grid, VelocityField, divergence, kinetic_energy, project
from ecsi.nsolve import (
    CflError,
    DataGenConfig,
    NsConfig,
    generate_dataset,
    random_solenoidal_field,
    rhs,
    step,
)


def taylor_green(grid: Grid) -> VelocityField:
    n, h = grid.n, grid.h
    i = np.arange(n)
    xu, yu = (i[:, None] + 1.0) * h, (i[None, :] + 0.5) * h
    xv, yv = (i[:, None] + 0.5) * h, (i[None, :] + 1.0) * h
    return VelocityField(grid, np.cos(xu) * np.sin(yu), -np.sin(xv) * np.cos(yv))


def test_rhs_zero_field_forcing_off():
    g = Grid(16)
    cfg = NsConfig(grid=g, re=100.0, dt=1e-3, forcing_on=False)
    r = rhs(VelocityField.zeros(g), cfg)
    assert np.abs(r.u).max() == 0.0 and np.abs(r.v).max() == 0.0


def test_rhs_zero_field_forcing_on():
    g = Grid(16)
    cfg = NsConfig(grid=g, re=100.0, dt=1e-3, forcing_on=True)
    r = rhs(VelocityField.zeros(g), cfg)
    y = (np.arange(16) + 0.5) * g.h
    assert np.abs(r.u - np.sin(4 * y)[None, :]).max() < 1e-14
    assert np.abs(r.v).max() == 0.0


def test_rhs_uniform_field_is_steady_without_forcing():
    g = Grid(16)
    cfg = NsConfig(grid=g, re=50.0, dt=1e-3, forcing_on=False)
    q = VelocityField(g, np.full((16, 16), 0.7), np.zeros((16, 16)))
    r = rhs(q, cfg)
    assert np.abs(r.u).max() < 1e-13 and np.abs(r.v).max() < 1e-13


def test_step_zero_field_is_fixed_point():
    g = Grid(8)
    cfg = NsConfig(grid=g, re=100.0, dt=1e-3, forcing_on=False)
    q = step(VelocityField.zeros(g), cfg)
    assert np.abs(q.u).max() == 0.0 and np.abs(q.v).max() == 0.0


def test_step_output_is_divergence_free(rng):
    g = Grid(32)
    cfg = NsConfig(grid=g, re=500.0, dt=1e-3, forcing_on=True)
    q = random_solenoidal_field(g, rng)
    for _ in range(5):
        q = step(q, cfg)
        assert np.abs(divergence(q).values).max() < 1e-9


def test_step_rejects_cfl_violation():
    g = Grid(32)
    cfg = NsConfig(grid=g, re=100.0, dt=0.5, forcing_on=False)
    q = VelocityField(g, np.ones((32, 32)), np.zeros((32, 32)))
    with pytest.raises(CflError):
        step(q, cfg)


def test_taylor_green_energy_decay():
    # analytic decay E(t) = E(0) exp(-4 t / Re)
    g = Grid(64)
    re, dt, t_end = 100.0, 1e-3, 0.5
    cfg = NsConfig(grid=g, re=re, dt=dt, forcing_on=False)
    q = project(taylor_green(g))
    e0 = kinetic_energy(q)
    for _ in range(int(round(t_end / dt))):
        q = step(q, cfg)
    ratio = kinetic_energy(q) / e0
    assert ratio == pytest.approx(np.exp(-4 * t_end / re), rel=1e-3)


def test_inviscid_energy_conservation(rng):
    g = Grid(64)
    cfg = NsConfig(grid=g, re=np.inf, dt=1e-3, forcing_on=False)
    q = random_solenoidal_field(g, rng)
    e0 = kinetic_energy(q)
    for _ in range(100):
        q = step(q, cfg)
    assert abs(kinetic_energy(q) - e0) / e0 <= 1e-5


def test_forced_flow_energy_stays_bounded(rng):
    # statistically stationary long run: energy within [0.1, 10] x its mean
    g = Grid(32)
    cfg = NsConfig(grid=g, re=1000.0, dt=5e-3, forcing_on=True)
    q = random_solenoidal_field(g, rng)
    energies = []
    for k in range(5000):
        q = step(q, cfg)
        if k % 10 == 0:
            energies.append(kinetic_energy(q))
    tail = np.array(energies[len(energies) // 5:])
    e_ref = tail.mean()
    assert np.all(tail >= 0.1 * e_ref) and np.all(tail <= 10.0 * e_ref)


def _tiny_configs(n=32, factor=2):
    ns = NsConfig(grid=Grid(n), re=400.0, dt=4e-3, forcing_on=True, seed=11)
    gen = DataGenConfig(burn_in=0.2, stride=4, n_train_traj=1, n_test_traj=1,
                        n_train_steps=3, n_test_steps=2, coarsen_factor=factor)
    return ns, gen


def test_generate_dataset_shapes_and_divergence():
    ns, gen = _tiny_configs()
    ds = generate_dataset(ns, gen, "train")
    assert ds.states.shape == (1, 3, 2, 16, 16)
    assert ds.dt == pytest.approx(ns.dt * gen.stride)
    h = ds.grid.h
    for s in ds.states.reshape(-1, 2, 16, 16):
        q = VelocityField.from_array(ds.grid, s)
        assert np.abs(divergence(q).values).max() < 1e-9


def test_generate_dataset_is_deterministic():
    ns, gen = _tiny_configs()
    a = generate_dataset(ns, gen, "train")
    b = generate_dataset(ns, gen, "train")
    assert np.array_equal(a.states, b.states)
    c = generate_dataset(ns, gen, "test")
    assert a.states.shape[1] != c.states.shape[1] or not np.array_equal(
        a.states[:, : c.states.shape[1]], c.states
    )


def test_generate_dataset_coarsening_arithmetic():
    ns, gen = _tiny_configs(n=64, factor=8)
    ds = generate_dataset(ns, gen, "train")
    assert ds.grid.n == 8
