import csv

import numpy as np
import pytest

from fluctua import engine, oracle
from fluctua.coupling import chi_at, lorentz_imchi_factor
from fluctua.errors import ConfigurationError
from fluctua.model import LorentzOscillator, make_matsubara_grid


def small_lattice(temperature=0.25):
    return oracle.LatticeModel(
        n_x=12, spacing=0.7, boundary="dirichlet", mass=0.3,
        matter_sites=((3, "A1"), (4, "A1"), (7, "A2")),
        nu=np.array([0.8, 1.6]),
        g=np.array([[1.3, 0.9], [1.3, 0.9], [1.1, 1.4]]),
        temperature=temperature,
    )


def test_laplacian_hand_examples():
    a2 = 0.5 * 0.5
    dirichlet = oracle.lattice_laplacian(4, 0.5, "dirichlet")
    want = np.array([[2, -1, 0, 0], [-1, 2, -1, 0],
                     [0, -1, 2, -1], [0, 0, -1, 2]]) / a2
    assert np.array_equal(dirichlet, want)
    periodic = oracle.lattice_laplacian(4, 0.5, "periodic")
    want[0, 3] = want[3, 0] = -1.0 / a2
    assert np.array_equal(periodic, want)


def test_field_operator_spd():
    lat = small_lattice()
    for omega in (0.0, 0.7, 3.0):
        a = oracle.field_operator(lat, omega)
        assert np.array_equal(a, a.T)
        assert np.linalg.eigvalsh(a).min() > 0.0


def test_lattice_chi_matches_line_model():
    lat = small_lattice()
    omega = 1.3
    chi = oracle.lattice_chi(lat, omega)
    line = oracle.LatticeLineModel(nu=lat.nu, g=lat.g[2])
    assert chi[7] == line.chi_at_imag(omega)
    assert chi[0] == 0.0
    want = float(np.sum(lat.g[0] ** 2 / (omega**2 + lat.nu**2)))
    assert np.isclose(chi[3], want, rtol=1e-15)


def test_quadratic_form_blocks():
    lat = small_lattice()
    n = 2
    omega = 2.0 * np.pi * n * lat.temperature
    beta = lat.beta
    q = oracle.build_quadratic_form(lat, n)
    n_x, n_nu = lat.n_x, lat.nu.size
    assert q.shape == (n_x + 3 * n_nu, n_x + 3 * n_nu)
    assert np.allclose(q[:n_x, :n_x], beta * oracle.field_operator(lat, omega))
    diag = beta * (omega**2 + np.tile(lat.nu**2, 3))
    assert np.allclose(np.diag(q[n_x:, n_x:]), diag)
    for row, (site, _) in enumerate(lat.matter_sites):
        for k in range(n_nu):
            col = n_x + row * n_nu + k
            assert q[site, col] == beta * omega * lat.g[row, k]
            assert q[col, site] == -beta * omega * lat.g[row, k]
    # the zero mode decouples: no coupling block at all
    q0 = oracle.build_quadratic_form(lat, 0)
    assert np.array_equal(q0[:n_x, n_x:], np.zeros((n_x, 3 * n_nu)))
    with pytest.raises(ConfigurationError):
        oracle.build_quadratic_form(lat, -1)


def test_factorization_identity_per_mode():
    lat = small_lattice()
    for n in range(9):
        row = oracle.factorization_check(lat, n)
        assert row.residual < 1e-12
        total = row.logdet_field + row.logdet_matter + row.logdet_eff
        assert np.isclose(row.logdet_full, total, rtol=1e-12)
    assert oracle.factorization_check(lat, 0).logdet_eff == 0.0


def test_mean_force_decomposition():
    lat = small_lattice()
    grid = make_matsubara_grid(lat.temperature, 24)
    report = oracle.mean_force_check(lat, grid)
    assert report.mean_force_residual < 1e-12
    assert report.factorization_residual < 1e-12
    assert np.isclose(report.f_star, report.f_eff + report.f_m, rtol=1e-12)
    with pytest.raises(ConfigurationError):
        oracle.mean_force_check(lat, make_matsubara_grid(0.4, 24))


def test_shift_body2():
    lat = small_lattice()
    moved = oracle.shift_body2(lat, 2)
    assert moved.body_sites("A1") == [3, 4]
    assert moved.body_sites("A2") == [9]
    with pytest.raises(ConfigurationError, match="leaves the lattice invalid"):
        oracle.shift_body2(lat, 100)


def test_force_equivalence_residual_small():
    rng = np.random.default_rng(5)
    for _ in range(5):
        lat = oracle.random_lattice(rng)
        grid = make_matsubara_grid(lat.temperature, 24)
        assert oracle.force_equivalence_check(lat, grid, shift=1) < 1e-9


def test_lattice_equivalent_scene_matches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(5):
        lat = oracle.random_lattice(rng)
        grid = make_matsubara_grid(lat.temperature, 24)
        report = oracle.mean_force_check(lat, grid)
        scene, g0_builder = oracle.lattice_equivalent_scene(lat)
        res = engine.free_energy_eff(scene, grid, g0_builder=g0_builder,
                                     _fixed_n=grid.n_max + 1)
        denom = max(abs(report.f_eff), 1e-300)
        assert abs(res.total - report.f_eff) / denom < 1e-9


def test_bridge_rejects_inhomogeneous_coupling():
    lat = small_lattice()
    g = lat.g.copy()
    g[1, 0] = 2.0  # second A1 site now couples differently
    broken = oracle.LatticeModel(n_x=lat.n_x, spacing=lat.spacing,
                                 boundary=lat.boundary, mass=lat.mass,
                                 matter_sites=lat.matter_sites, nu=lat.nu,
                                 g=g, temperature=lat.temperature)
    with pytest.raises(ConfigurationError, match="homogeneous"):
        oracle.lattice_equivalent_scene(broken)


def test_line_sum_is_riemann_discretization_of_spectral_integral():
    # a stack of lines with midpoint-rule weights converges to the
    # continuous spectral representation as the nu grid refines
    model = LorentzOscillator(plasma_sq=1.0, resonance=1.0, damping=0.4)
    omega = 0.9
    exact = chi_at(model, omega)[0, 0]
    errors = []
    for n_lines in (200, 400, 800):
        edges = np.linspace(0.0, 60.0, n_lines + 1)
        nu = 0.5 * (edges[:-1] + edges[1:])
        dnu = edges[1] - edges[0]
        w = (2.0 / np.pi) * nu * lorentz_imchi_factor(model, nu) * dnu
        line = oracle.LatticeLineModel(nu=nu, g=np.sqrt(w))
        errors.append(abs(line.chi_at_imag(omega) - exact) / abs(exact))
    assert errors[0] > errors[1] > errors[2]
    assert errors[2] < 1e-4


def test_random_lattice_bounds_and_determinism():
    rng = np.random.default_rng(31)
    for _ in range(40):
        lat = oracle.random_lattice(rng)
        assert 8 <= lat.n_x <= 64
        assert 1 <= lat.nu.size <= 8
        for label in ("A1", "A2"):
            rows = [i for i, (_, l) in enumerate(lat.matter_sites) if l == label]
            assert rows
            assert np.all(lat.g[rows] == lat.g[rows[0]])
        oracle.shift_body2(lat, 1)  # shift room is guaranteed
    a = oracle.random_lattice(np.random.default_rng(7))
    b = oracle.random_lattice(np.random.default_rng(7))
    assert (a.n_x, a.spacing, a.boundary, a.mass, a.matter_sites,
            a.temperature) == (b.n_x, b.spacing, b.boundary, b.mass,
                               b.matter_sites, b.temperature)
    assert np.array_equal(a.nu, b.nu)
    assert np.array_equal(a.g, b.g)


def test_oracle_suite_and_negative_control():
    results = oracle.oracle_suite(3, 4)
    assert len(results) == 4
    assert all(r.ok for r in results)
    assert results == oracle.oracle_suite(3, 4)
    corrupted = oracle.oracle_suite(3, 4, corrupt=True)
    assert not any(r.ok for r in corrupted)
    assert all(c.factorization_residual > r.factorization_residual
               for c, r in zip(corrupted, results))
    with pytest.raises(ConfigurationError):
        oracle.oracle_suite(3, 0)


def test_report_to_csv_round_trip(tmp_path):
    lat = small_lattice()
    grid = make_matsubara_grid(lat.temperature, 6)
    report = oracle.mean_force_check(lat, grid)
    path = tmp_path / "report.csv"
    oracle.report_to_csv(report, path)
    with open(path, newline="") as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["n", "omega", "logdet_full", "logdet_field",
                       "logdet_matter", "logdet_eff", "residual"]
    assert len(rows) == 1 + grid.n_max + 1
    for text, row in zip(rows[1:], report.rows):
        assert int(text[0]) == row.n
        assert float(text[2]) == row.logdet_full
        assert float(text[3]) == row.logdet_field
        assert float(text[4]) == row.logdet_matter
        assert float(text[5]) == row.logdet_eff


def test_voxel_factorization_rejects_zero_mode():
    from conftest import pair_scene

    with pytest.raises(ConfigurationError, match="omega > 0"):
        oracle.voxel_factorization_check(pair_scene(2.0, 0.4, 0.6), 0.0)
