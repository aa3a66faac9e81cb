"""Microscopic lattice oracle for the trace-log machinery.

A finite 1D lattice realization of the full field-plus-matter Gaussian
model: one scalar field line with a small mass (evading the 1D zero-mode
singularity), matter lines nu_k attached at chosen sites through velocity
couplings. Every determinant identity the engine relies on is checked here
against the exact quadratic form, with no shared code path:

  * factorization: logdet(full form) = logdet(field) + logdet(matter)
    + logdet(1 + omega^2 G0 chi), a pure Schur-complement identity;
  * mean force: F* = -T ln(Z/Z_field) decomposes as F_eff + F_m;
  * force equivalence: translating one body changes F* and F_eff by the
    same amount (the matter self energy is translation invariant).

The velocity coupling pairs conjugate Matsubara components with a factor
i omega, so the real quadratic form carries skew off-diagonal coupling
blocks [[A, +omega g], [-omega g^T, D]]; its determinant equals that of
the Hermitian form and produces the plus sign in 1 + omega^2 G0 chi. That
sign is asserted by the factorization check, not assumed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SingularModeError
from .kernel import build_g0
from .model import Body, FieldKernelSpec, Scene

__all__ = [
    "LatticeModel",
    "LatticeLineModel",
    "ModeRow",
    "OracleReport",
    "InstanceResult",
    "lattice_laplacian",
    "field_operator",
    "lattice_chi",
    "build_quadratic_form",
    "factorization_check",
    "mean_force_check",
    "force_equivalence_check",
    "shift_body2",
    "lattice_equivalent_scene",
    "voxel_factorization_check",
    "random_lattice",
    "oracle_suite",
    "report_to_csv",
]


@dataclass(frozen=True)
class LatticeModel:
    """One Matsubara-sector family of exact lattice quadratic forms.

    matter_sites is a tuple of (site_index, body_label) pairs; g holds one
    row of coupling values per matter site (already including the sqrt of
    the nu-grid weight, so chi_lat = sum_k g_k^2/(omega^2 + nu_k^2)).
    """

    n_x: int
    spacing: float
    boundary: str
    mass: float
    matter_sites: tuple
    nu: np.ndarray
    g: np.ndarray
    temperature: float

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        g = np.asarray(self.g, dtype=float)
        nu.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "matter_sites", tuple(
            (int(s), str(l)) for s, l in self.matter_sites))
        if self.boundary not in ("dirichlet", "periodic"):
            raise ConfigurationError("boundary must be 'dirichlet' or 'periodic'")
        if np.any(nu <= 0.0):
            raise ConfigurationError("matter frequencies nu must be strictly positive")
        if g.shape != (len(self.matter_sites), nu.size):
            raise ConfigurationError("g must have shape (n_matter_sites, n_nu)")
        if self.temperature <= 0.0:
            raise ConfigurationError("lattice temperature must be > 0")
        lo = 1 if self.boundary == "dirichlet" else 0
        hi = self.n_x - 2 if self.boundary == "dirichlet" else self.n_x - 1
        sites = [s for s, _ in self.matter_sites]
        if len(set(sites)) != len(sites):
            raise ConfigurationError("matter sites must be distinct")
        if any(s < lo or s > hi for s in sites):
            raise ConfigurationError("matter sites out of lattice bounds (boundary layer excluded)")

    @property
    def beta(self):
        return 1.0 / self.temperature

    def body_sites(self, label):
        return [s for s, l in self.matter_sites if l == label]


@dataclass(frozen=True)
class LatticeLineModel:
    """Susceptibility of a homogeneous stack of matter lines.

    chi(i omega) = sum_k g_k^2 / (omega^2 + nu_k^2), exposed through the
    chi_at_imag hook so the engine can run on lattice-equivalent scenes.
    """

    nu: np.ndarray
    g: np.ndarray

    def chi_at_imag(self, omega):
        return float(np.sum(self.g * self.g / (omega * omega + self.nu * self.nu)))


@dataclass(frozen=True)
class ModeRow:
    n: int
    omega: float
    logdet_full: float
    logdet_field: float
    logdet_matter: float
    logdet_eff: float
    residual: float


@dataclass(frozen=True)
class OracleReport:
    rows: tuple
    f_star: float
    f_m: float
    f_eff: float
    factorization_residual: float
    mean_force_residual: float


@dataclass(frozen=True)
class InstanceResult:
    index: int
    n_sites: int
    n_nu: int
    factorization_residual: float
    mean_force_residual: float
    force_residual: float
    ok: bool


def lattice_laplacian(n_x, spacing, boundary):
    """Second-difference operator, row [-1, 2, -1]/a^2, chosen closure."""
    a2 = spacing * spacing
    lap = np.zeros((n_x, n_x))
    idx = np.arange(n_x)
    lap[idx, idx] = 2.0 / a2
    lap[idx[:-1], idx[1:]] = -1.0 / a2
    lap[idx[1:], idx[:-1]] = -1.0 / a2
    if boundary == "periodic":
        lap[0, n_x - 1] += -1.0 / a2
        lap[n_x - 1, 0] += -1.0 / a2
    return lap


def field_operator(lat, omega):
    """(omega^2 + m^2) + L on the lattice; its inverse is the lattice G0."""
    return ((omega * omega + lat.mass ** 2) * np.eye(lat.n_x)
            + lattice_laplacian(lat.n_x, lat.spacing, lat.boundary))


def lattice_chi(lat, omega):
    """Per-site susceptibility chi_s = sum_k g_sk^2 / (omega^2 + nu_k^2)."""
    chi = np.zeros(lat.n_x)
    props = 1.0 / (omega * omega + lat.nu * lat.nu)
    for row, (site, _) in enumerate(lat.matter_sites):
        chi[site] = np.sum(lat.g[row] * lat.g[row] * props)
    return chi


def build_quadratic_form(lat, n):
    """Exact quadratic form of the n-th Matsubara sector.

    Field block beta (omega_n^2 + m^2 + L); matter block
    beta (omega_n^2 + nu_k^2) diagonal, one line per (site, k); coupling
    blocks +/- beta omega_n g_k in the skew positions. At n = 0 the
    coupling vanishes identically and the sectors decouple.
    """
    n = int(n)
    if n < 0:
        raise ConfigurationError("mode index must be >= 0")
    omega = 2.0 * np.pi * n * lat.temperature
    beta = lat.beta
    n_x = lat.n_x
    n_m = len(lat.matter_sites) * lat.nu.size
    q = np.zeros((n_x + n_m, n_x + n_m))
    q[:n_x, :n_x] = beta * field_operator(lat, omega)
    diag = (omega * omega + np.tile(lat.nu * lat.nu, len(lat.matter_sites)))
    q[n_x:, n_x:] = beta * np.diag(diag)
    for row, (site, _) in enumerate(lat.matter_sites):
        for k in range(lat.nu.size):
            col = n_x + row * lat.nu.size + k
            q[site, col] = beta * omega * lat.g[row, k]
            q[col, site] = -beta * omega * lat.g[row, k]
    return q


def _slogdet_positive(matrix, what):
    sign, logdet = np.linalg.slogdet(matrix)
    if not (sign > 0.0) or not np.isfinite(logdet):
        raise SingularModeError(f"{what}: non-positive determinant")
    return float(logdet)


def factorization_check(lat, n):
    """Per-mode Schur factorization identity, returned with its residual.

    logdet_eff uses the lattice Green's function (omega^2 + m^2 + L)^{-1}
    and the exactly discretized chi_lat, evaluated over the full lattice;
    its restriction to the matter support gives the same determinant.
    """
    n = int(n)
    omega = 2.0 * np.pi * n * lat.temperature
    beta = lat.beta
    q = build_quadratic_form(lat, n)
    ld_full = _slogdet_positive(q, f"full form at n={n}")
    a = field_operator(lat, omega)
    ld_field = _slogdet_positive(beta * a, f"field block at n={n}")
    diag = omega * omega + np.tile(lat.nu * lat.nu, len(lat.matter_sites))
    ld_matter = float(np.sum(np.log(beta * diag)))
    if n == 0:
        ld_eff = 0.0
    else:
        g0_lat = np.linalg.inv(a)
        m_eff = np.eye(lat.n_x) + (omega * omega) * g0_lat * lattice_chi(lat, omega)[None, :]
        ld_eff = _slogdet_positive(m_eff, f"effective block at n={n}")
    denom = max(abs(ld_full), 1e-300)
    residual = abs(ld_full - (ld_field + ld_matter + ld_eff)) / denom
    return ModeRow(n=n, omega=omega, logdet_full=ld_full, logdet_field=ld_field,
                   logdet_matter=ld_matter, logdet_eff=ld_eff, residual=residual)


def mean_force_check(lat, grid):
    """Mean-force decomposition over a Matsubara grid.

    F* = T sum' w (logdet_full - logdet_field) is the free energy of mean
    force (field normalization divided out); F_m and F_eff come from the
    matter and effective factors. The report asserts, as a residual, that
    F* = F_eff + F_m.
    """
    if abs(grid.temperature - lat.temperature) > 1e-12 * lat.temperature:
        raise ConfigurationError("grid temperature must match the lattice temperature")
    rows = tuple(factorization_check(lat, n) for n in range(grid.n_max + 1))
    t = lat.temperature
    w = grid.weights
    f_star = t * float(sum(w[r.n] * (r.logdet_full - r.logdet_field) for r in rows))
    f_m = t * float(sum(w[r.n] * r.logdet_matter for r in rows))
    f_eff = t * float(sum(w[r.n] * r.logdet_eff for r in rows))
    residual = abs(f_star - (f_eff + f_m)) / max(abs(f_star), 1e-300)
    return OracleReport(rows=rows, f_star=f_star, f_m=f_m, f_eff=f_eff,
                        factorization_residual=max(r.residual for r in rows),
                        mean_force_residual=residual)


def shift_body2(lat, shift):
    """Lattice with the A2 matter sites translated by `shift` sites."""
    shift = int(shift)
    moved = tuple((s + shift, l) if l == "A2" else (s, l) for s, l in lat.matter_sites)
    try:
        return LatticeModel(n_x=lat.n_x, spacing=lat.spacing, boundary=lat.boundary,
                            mass=lat.mass, matter_sites=moved, nu=lat.nu, g=lat.g,
                            temperature=lat.temperature)
    except ConfigurationError as exc:
        raise ConfigurationError(f"shift {shift} leaves the lattice invalid: {exc}") from exc


def force_equivalence_check(lat, grid, shift):
    """Relative mismatch between Delta F* and Delta F_eff under a body shift.

    F_m is manifestly independent of where the body sits, so the residual
    isolates exactly the claim that the mean force and the effective free
    energy give the same induced force.
    """
    base = mean_force_check(lat, grid)
    moved = mean_force_check(shift_body2(lat, shift), grid)
    d_star = moved.f_star - base.f_star
    d_eff = moved.f_eff - base.f_eff
    return abs(d_star - d_eff) / max(abs(d_star), 1e-30)


def lattice_equivalent_scene(lat):
    """Engine scene reproducing the oracle's effective free energy.

    Matter sites become unit-volume voxels on a line, each body carrying a
    LatticeLineModel susceptibility, and the returned g0_builder feeds the
    engine the lattice Green's function restricted to the matter support.
    Requires each body's sites to share one coupling row (homogeneous
    bodies), which is what random_lattice generates.
    """
    support = []
    bodies = {}
    for label in ("A1", "A2"):
        rows = [i for i, (_, l) in enumerate(lat.matter_sites) if l == label]
        if not rows:
            raise ConfigurationError(f"lattice has no {label} sites")
        g_rows = lat.g[rows]
        if not np.all(g_rows == g_rows[0]):
            raise ConfigurationError("engine bridge needs homogeneous per-body couplings")
        sites = [lat.matter_sites[i][0] for i in rows]
        support.extend(sites)
        centers = np.array([[s * lat.spacing, 0.0, 0.0] for s in sites])
        model = LatticeLineModel(nu=lat.nu, g=g_rows[0])
        bodies[label] = Body(label, centers, np.ones(len(sites)), model)
    spec = FieldKernelSpec(dimension=1, mass=lat.mass, n_internal=1)
    scene = Scene(kernel=spec, body1=bodies["A1"], body2=bodies["A2"],
                  temperature=lat.temperature)
    support = np.asarray(support, dtype=int)

    def g0_builder(_scene, omega):
        g0_full = np.linalg.inv(field_operator(lat, omega))
        return g0_full[np.ix_(support, support)]

    return scene, g0_builder


def voxel_factorization_check(scene, omega, nu=1.0, g0_builder=None):
    """Microscopic per-mode check for voxelized scenes.

    Builds the same field-plus-matter block form directly in the voxel
    basis: field block (G0 W)^{-1}, one auxiliary matter line of frequency
    nu per voxel with coupling chosen so c^2/(omega^2 + nu^2) reproduces
    the voxel's chi(i omega), skew velocity coupling omega c. Returns the
    factorization residual and the microscopically obtained logdet_eff,
    which must match the engine's mode term.
    """
    from . import coupling as _coupling
    from .engine import build_mode_matrix, mode_term

    omega = float(omega)
    if omega <= 0.0:
        raise ConfigurationError("the microscopic check needs omega > 0")
    ni = scene.kernel.n_internal
    if g0_builder is not None:
        g0 = np.asarray(g0_builder(scene, omega), dtype=float)
    else:
        g0 = build_g0(scene, omega).entries
    volumes = scene.all_volumes()
    w = np.diag(np.repeat(volumes, ni))
    n = g0.shape[0]
    k_field = np.linalg.inv(g0 @ w)

    # per-voxel coupling blocks: c = sqrt(omega^2 + nu^2) * chi^{1/2}
    props = omega * omega + nu * nu
    c_blocks = []
    for body in (scene.body1, scene.body2):
        chi = _coupling.chi_at(body.susceptibility, omega)
        if ni == 1:
            c = np.array([[np.sqrt(props * chi[0, 0])]])
        else:
            wv, vv = np.linalg.eigh(0.5 * (chi + chi.T))
            c = (vv * np.sqrt(props * np.clip(wv, 0.0, None))) @ vv.T
        c_blocks.extend([c] * body.n_voxels)
    c_mat = np.zeros((n, n))
    for i, block in enumerate(c_blocks):
        c_mat[i * ni:(i + 1) * ni, i * ni:(i + 1) * ni] = block

    q = np.zeros((2 * n, 2 * n))
    q[:n, :n] = k_field
    q[n:, n:] = props * np.eye(n)
    q[:n, n:] = omega * c_mat
    q[n:, :n] = -omega * c_mat.T
    ld_full = _slogdet_positive(q, "voxel microscopic form")
    ld_field = _slogdet_positive(k_field, "voxel field block")
    ld_matter = float(n * np.log(props))
    ld_eff_micro = ld_full - ld_field - ld_matter
    engine_term = mode_term(build_mode_matrix(scene, omega, g0_builder))
    residual = abs(ld_eff_micro - engine_term) / max(abs(ld_full), 1.0)
    return residual, ld_eff_micro


def random_lattice(rng):
    """Randomized oracle instance: 8 to 64 sites, 1 to 8 matter lines.

    Couplings are drawn strong, temperatures low, and bodies adjacent so
    that induced free energy differences sit far above the roundoff floor
    of the totals; body2 always has room for a one-site shift right.
    """
    for _ in range(200):
        n_x = int(rng.integers(8, 65))
        boundary = "dirichlet" if rng.random() < 0.5 else "periodic"
        # cold, close, strongly coupled: the shifted-body free energy
        # difference must clear the roundoff floor of the full log-dets
        # (~1e-13 absolute), or the force-equivalence residual measures
        # rounding noise instead of the identity
        spacing = float(rng.uniform(0.5, 0.9))
        mass = float(rng.uniform(0.15, 0.5))
        temperature = float(rng.uniform(0.1, 0.3))
        n_nu = int(rng.integers(1, 9))
        nu = np.sort(rng.uniform(0.3, 2.5, size=n_nu))
        size1 = int(rng.integers(1, 4))
        size2 = int(rng.integers(1, 4))
        gap = 0
        lo = 1 if boundary == "dirichlet" else 0
        hi = n_x - 2 if boundary == "dirichlet" else n_x - 1
        span = size1 + gap + size2
        # keep one free site to the right of body2 for the shift check
        if lo + span + 1 > hi:
            continue
        start1 = int(rng.integers(lo, hi - span))
        sites1 = [start1 + i for i in range(size1)]
        start2 = start1 + size1 + gap
        sites2 = [start2 + i for i in range(size2)]
        g1 = rng.uniform(1.2, 2.5, size=n_nu)
        g2 = rng.uniform(1.2, 2.5, size=n_nu)
        matter = tuple((s, "A1") for s in sites1) + tuple((s, "A2") for s in sites2)
        g = np.vstack([np.tile(g1, (size1, 1)), np.tile(g2, (size2, 1))])
        return LatticeModel(n_x=n_x, spacing=spacing, boundary=boundary, mass=mass,
                            matter_sites=matter, nu=nu, g=g, temperature=temperature)
    raise ConfigurationError("failed to draw a feasible lattice")


def oracle_suite(seed, n_instances, corrupt=False, n_check_modes=8, grid_n_max=24,
                 fact_tol=1e-10, mean_tol=1e-10, force_tol=1e-9):
    """Randomized identity suite over fresh lattice instances.

    Per instance: factorization residual over the first n_check_modes
    sectors, mean-force residual, and the force-equivalence residual for a
    one-site shift of body2. corrupt=True flips the sign of the effective
    log-det inside the factorization residual (negative control; the suite
    must then fail).

    Returns a list of InstanceResult; deterministic for a given seed.
    """
    from .model import make_matsubara_grid

    n_instances = int(n_instances)
    if n_instances < 1:
        raise ConfigurationError("n_instances must be >= 1")
    rng = np.random.default_rng(int(seed))
    results = []
    for index in range(n_instances):
        lat = random_lattice(rng)
        rows = [factorization_check(lat, n) for n in range(n_check_modes)]
        if corrupt:
            fact_res = max(
                abs(r.logdet_full - (r.logdet_field + r.logdet_matter - r.logdet_eff))
                / max(abs(r.logdet_full), 1e-300)
                for r in rows
            )
        else:
            fact_res = max(r.residual for r in rows)
        grid = make_matsubara_grid(lat.temperature, grid_n_max)
        report = mean_force_check(lat, grid)
        force_res = force_equivalence_check(lat, grid, shift=1)
        ok = (fact_res <= fact_tol and report.mean_force_residual <= mean_tol
              and force_res <= force_tol)
        results.append(InstanceResult(
            index=index, n_sites=lat.n_x, n_nu=lat.nu.size,
            factorization_residual=fact_res,
            mean_force_residual=report.mean_force_residual,
            force_residual=force_res, ok=ok,
        ))
    return results


def report_to_csv(report, path):
    """Serialize an OracleReport to CSV, one row per mode."""
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["n", "omega", "logdet_full", "logdet_field",
                         "logdet_matter", "logdet_eff", "residual"])
        for r in report.rows:
            writer.writerow([r.n] + [f"{x:.17g}" for x in
                                     (r.omega, r.logdet_full, r.logdet_field,
                                      r.logdet_matter, r.logdet_eff, r.residual)])
