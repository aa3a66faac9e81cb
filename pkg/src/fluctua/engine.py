"""Trace-log engine: per-mode determinants, Matsubara sums, forces.

The per-mode object is M(omega) = 1 + omega^2 X G0 W over (voxel x
internal) space, where X is block-diagonal with each voxel's
susceptibility chi(i omega) and W is the diagonal voxel-volume weight
realizing the continuum position trace as a Riemann sum. The effective
free energy is the primed Matsubara sum of tr ln M; the interaction part
subtracts both single-body self terms per mode, evaluated in a two-body
Schur form that stays accurate when the interaction is many orders below
the self energies (the plain log-det difference would round it away).

Mode terms are evaluated concurrently (dense factorizations release the
GIL) and reduced serially in ascending n, so every output is bitwise
independent of the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import coupling as _coupling
from .errors import (
    ConfigurationError,
    DivergentSeriesError,
    SingularModeError,
)
from .kernel import build_g0
from .model import FreeEnergyResult

__all__ = [
    "ModeMatrix",
    "ForceResult",
    "resolve_threads",
    "build_mode_matrix",
    "mode_term",
    "mode_term_series",
    "spectral_radius",
    "dressed_green",
    "elegant_formula_residual",
    "interaction_mode_term",
    "free_energy_eff",
    "interaction_free_energy",
    "free_energy_zero_temperature",
    "induced_force",
]


@dataclass(frozen=True)
class ModeMatrix:
    """Dense M = 1 + omega^2 X G0 W at one Matsubara frequency.

    n_body1 is the number of leading rows/columns belonging to body1, so
    the two-body block structure is recoverable without the scene.
    """

    matrix: np.ndarray
    omega: float
    n_body1: int
    n_internal: int


@dataclass(frozen=True)
class ForceResult:
    """Central finite difference of the interaction free energy."""

    separation: float
    f_minus: float
    f_center: float
    f_plus: float
    force: float
    step: float
    converged: bool


def resolve_threads(threads=None):
    """Worker count: explicit argument, else FLUCTUA_THREADS, else 1."""
    if threads is None:
        threads = int(os.environ.get("FLUCTUA_THREADS", "1"))
    threads = int(threads)
    if threads < 1:
        raise ConfigurationError("thread count must be >= 1")
    return threads


def _chi_weight_matrices(scene, omega):
    """X (block susceptibility) and W (volume weights) for a scene."""
    ni = scene.kernel.n_internal
    volumes = scene.all_volumes()
    n = volumes.size
    if ni == 1:
        chi1 = _coupling.chi_at(scene.body1.susceptibility, omega)[0, 0]
        chi2 = _coupling.chi_at(scene.body2.susceptibility, omega)[0, 0]
        x_diag = np.concatenate([np.full(scene.body1.n_voxels, chi1),
                                 np.full(scene.body2.n_voxels, chi2)])
        return np.diag(x_diag), np.diag(volumes)
    chi1 = _coupling.chi_at(scene.body1.susceptibility, omega)
    chi2 = _coupling.chi_at(scene.body2.susceptibility, omega)
    x = np.zeros((3 * n, 3 * n))
    for i in range(n):
        block = chi1 if i < scene.body1.n_voxels else chi2
        x[3 * i:3 * i + 3, 3 * i:3 * i + 3] = block
    w = np.kron(np.diag(volumes), np.eye(3))
    return x, w


def _g0_entries(scene, omega, g0_builder):
    if g0_builder is not None:
        return np.asarray(g0_builder(scene, omega), dtype=float)
    return build_g0(scene, omega).entries


def build_mode_matrix(scene, omega, g0_builder=None):
    """Assemble M = 1 + omega^2 X G0 W at one frequency.

    Parameters
    ----------
    scene : Scene
    omega : float
        Matsubara frequency, >= 0. At omega = 0 the prefactor kills the
        coupling and M is exactly the identity.
    g0_builder : callable, optional
        (scene, omega) -> dense propagator entries; substitutes the free
        voxel kernel (used to drive the engine with a lattice propagator).

    Returns
    -------
    ModeMatrix
    """
    omega = float(omega)
    ni = scene.kernel.n_internal
    n1 = scene.body1.n_voxels * ni
    n = scene.n_voxels * ni
    if omega == 0.0:
        return ModeMatrix(matrix=np.eye(n), omega=0.0, n_body1=n1, n_internal=ni)
    g0 = _g0_entries(scene, omega, g0_builder)
    if g0.shape != (n, n):
        raise ConfigurationError(f"propagator shape {g0.shape} does not match scene ({n})")
    x, w = _chi_weight_matrices(scene, omega)
    m = np.eye(n) + (omega * omega) * (x @ g0 @ w)
    return ModeMatrix(matrix=m, omega=omega, n_body1=n1, n_internal=ni)


def _smallest_pivot(matrix):
    lu, _ = scipy.linalg.lu_factor(matrix, check_finite=False)
    return float(np.min(np.abs(np.diag(lu))))


def mode_term(mode):
    """tr ln M = ln det M via a stable factorization.

    Raises
    ------
    SingularModeError
        Non-positive determinant: non-passive input or discretization
        breakdown. The smallest LU pivot is attached for diagnosis.
    """
    sign, logdet = np.linalg.slogdet(mode.matrix)
    if not (sign > 0.0) or not np.isfinite(logdet):
        raise SingularModeError(
            f"mode matrix at omega={mode.omega:.6g} has non-positive determinant "
            f"(smallest pivot {_smallest_pivot(mode.matrix):.3e})",
            smallest_pivot=_smallest_pivot(mode.matrix),
        )
    return float(logdet)


def spectral_radius(matrix, tol=1e-3, max_iter=400):
    """Spectral radius by power iteration with a deterministic start.

    Ratios are averaged over a short window so complex conjugate pairs do
    not stall the estimate; if the iteration has not stabilized to `tol`
    within max_iter it falls back to the exact eigenvalue radius.
    """
    a = np.asarray(matrix, dtype=float)
    n = a.shape[0]
    v = np.ones(n) + np.arange(n) / (10.0 * max(n, 1))
    v /= np.linalg.norm(v)
    ratios = []
    estimate = None
    for _ in range(max_iter):
        w = a @ v
        r = np.linalg.norm(w)
        if r == 0.0:
            return 0.0
        ratios.append(r)
        v = w / r
        if len(ratios) >= 8:
            current = float(np.exp(np.mean(np.log(ratios[-8:]))))
            if estimate is not None and abs(current - estimate) <= tol * max(current, 1e-300):
                return current
            estimate = current
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def mode_term_series(mode, m_max):
    """Susceptibility series sum_{m=1}^{m_max} (-1)^{m-1} tr[(M-1)^m] / m.

    Raises
    ------
    DivergentSeriesError
        If the spectral radius of M - 1 is >= 1; use mode_term instead.
    """
    m_max = int(m_max)
    if m_max < 1:
        raise ConfigurationError("m_max must be >= 1")
    a = mode.matrix - np.eye(mode.matrix.shape[0])
    rho = spectral_radius(a)
    if rho >= 1.0:
        raise DivergentSeriesError(
            f"susceptibility series diverges: spectral radius {rho:.4f} >= 1",
            spectral_radius=rho,
        )
    power = a.copy()
    total = float(np.trace(power))
    for m in range(2, m_max + 1):
        power = power @ a
        total += (-1.0) ** (m - 1) * float(np.trace(power)) / m
    return total


def dressed_green(scene, omega, g0_builder=None):
    """Dressed propagator G = (1 + omega^2 G0 W X)^{-1} G0.

    The weight matrix W sits inside the operator product exactly as in the
    mode matrix, so ln det(G G0^{-1}) = -tr ln M identically.
    """
    omega = float(omega)
    g0 = _g0_entries(scene, omega, g0_builder)
    if omega == 0.0:
        return g0.copy()
    x, w = _chi_weight_matrices(scene, omega)
    a = np.eye(g0.shape[0]) + (omega * omega) * (g0 @ w @ x)
    return np.linalg.solve(a, g0)


def elegant_formula_residual(scene, omega, g0_builder=None):
    """|mode_term + ln det(G G0^{-1})| at one frequency (should vanish)."""
    term = mode_term(build_mode_matrix(scene, omega, g0_builder))
    g0 = _g0_entries(scene, omega, g0_builder)
    g = dressed_green(scene, omega, g0_builder)
    sign_g, logdet_g = np.linalg.slogdet(g)
    sign_0, logdet_0 = np.linalg.slogdet(g0)
    if sign_g <= 0 or sign_0 <= 0:
        raise SingularModeError("propagator with non-positive determinant")
    return abs(term + (logdet_g - logdet_0))


def _log1p_neg_sum(lam):
    """sum_i ln(1 - lam_i) for complex eigenvalues, stable for tiny |lam|."""
    lam = np.asarray(lam, dtype=complex)
    out = np.empty(lam.shape, dtype=complex)
    small = np.abs(lam) < 1e-4
    ls = lam[small]
    # ln(1 - x) = -(x + x^2/2 + x^3/3 + x^4/4) + O(x^5)
    out[small] = -(ls + ls ** 2 / 2.0 + ls ** 3 / 3.0 + ls ** 4 / 4.0)
    out[~small] = np.log(1.0 - lam[~small])
    return float(np.sum(out).real)


def interaction_mode_term(scene, omega, g0_builder=None, method="auto"):
    """Per-mode interaction term: tr ln M - tr ln M11 - tr ln M22.

    The single-body mode matrices are exactly the diagonal blocks of the
    two-body M (the susceptibility and weight factors are block diagonal),
    so the self terms cancel per mode by construction. The default
    evaluation is the algebraically identical two-body Schur form

        ln det(1 - M11^{-1} M12 M22^{-1} M21)
        = sum_i ln(1 - lambda_i(K)),

    computed through log1p-style series for small eigenvalues: the direct
    log-det difference loses the interaction entirely once it drops
    roughly sixteen orders below the self terms, while the round-trip
    eigenvalues stay accurate at any magnitude. method="subtract" forces
    the plain difference (useful as a cross check where it is
    well-conditioned).
    """
    if method not in ("auto", "schur", "subtract"):
        raise ConfigurationError("method must be 'auto', 'schur' or 'subtract'")
    omega = float(omega)
    if omega == 0.0:
        return 0.0
    mode = build_mode_matrix(scene, omega, g0_builder)
    m = mode.matrix
    n1 = mode.n_body1
    m11 = m[:n1, :n1]
    m22 = m[n1:, n1:]
    if method == "subtract":
        return (mode_term(mode)
                - mode_term(ModeMatrix(m11, omega, n1, mode.n_internal))
                - mode_term(ModeMatrix(m22, omega, 0, mode.n_internal)))
    m12 = m[:n1, n1:]
    m21 = m[n1:, :n1]
    k = np.linalg.solve(m11, m12) @ np.linalg.solve(m22, m21)
    lam = np.linalg.eigvals(k)
    if np.max(lam.real) >= 1.0:
        # round trip at or beyond unity: fall back to the direct difference,
        # which is well conditioned in this strong-coupling regime
        return (mode_term(mode)
                - mode_term(ModeMatrix(m11, omega, n1, mode.n_internal))
                - mode_term(ModeMatrix(m22, omega, 0, mode.n_internal)))
    return _log1p_neg_sum(lam)


def _primed_sum(grid, compute, tail_tol, threads, fixed_n=None):
    """Ascending primed Matsubara sum with deterministic early termination.

    compute(omega) -> mode term. Terms are evaluated in chunks of the
    worker count but scanned strictly in ascending n; speculatively
    computed terms past the stopping index are discarded, so the result is
    independent of the thread count. The sum stops once three consecutive
    weighted terms are each <= tail_tol times the partial sum in magnitude
    (non-strict, so an identically zero sum converges immediately).
    """
    t = grid.temperature
    freqs = grid.frequencies
    weights = grid.weights
    n_terms = len(freqs) if fixed_n is None else int(fixed_n)
    terms = []
    partial = 0.0
    streak = 0
    stopped = None
    chunk = max(1, threads)

    def scan(values, start):
        nonlocal partial, streak, stopped
        for offset, value in enumerate(values):
            n = start + offset
            if n >= n_terms:
                return
            terms.append(value)
            contrib = t * weights[n] * value
            partial += contrib
            if fixed_n is None:
                if abs(contrib) <= tail_tol * abs(partial):
                    streak += 1
                else:
                    streak = 0
                if streak >= 3 and n >= 2:
                    stopped = n
                    return

    if threads == 1:
        for n in range(n_terms):
            scan([compute(freqs[n])], n)
            if stopped is not None:
                break
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            start = 0
            while start < n_terms and stopped is None:
                stop = min(start + chunk, n_terms)
                values = list(pool.map(compute, freqs[start:stop]))
                scan(values, start)
                start = stop

    n_used = len(terms)
    last = terms[-1] if terms else 0.0
    prev = terms[-2] if len(terms) >= 2 else 0.0
    if last == 0.0:
        tail = 0.0
    elif prev != 0.0 and abs(last) < abs(prev):
        ratio = abs(last) / abs(prev)
        tail = t * abs(last) * ratio / (1.0 - ratio)
    else:
        tail = t * abs(last)
    converged = stopped is not None if fixed_n is None else True
    return FreeEnergyResult(
        mode_terms=np.asarray(terms),
        total=partial,
        n_used=n_used,
        tail_estimate=tail,
        converged=converged,
    )


def free_energy_eff(scene, grid, tail_tol=1e-10, threads=None, g0_builder=None,
                    _fixed_n=None):
    """Effective free energy F_eff = T sum'_n tr ln M(omega_n).

    Parameters
    ----------
    scene : Scene
    grid : MatsubaraGrid
    tail_tol : float
        Early-termination threshold on weighted terms relative to the
        partial sum; three consecutive sub-threshold terms stop the sum.
    threads : int, optional
        Worker count (default: FLUCTUA_THREADS or 1). The result is
        bitwise identical for any value.

    Returns
    -------
    FreeEnergyResult
        converged is False when n_max was exhausted first; that is a
        result, not an exception.
    """
    threads = resolve_threads(threads)

    def compute(omega):
        return mode_term(build_mode_matrix(scene, omega, g0_builder))

    return _primed_sum(grid, compute, tail_tol, threads, fixed_n=_fixed_n)


def interaction_free_energy(scene, grid, tail_tol=1e-10, threads=None,
                            g0_builder=None, method="auto", _fixed_n=None):
    """Interaction free energy: per-mode two-body term, primed-summed.

    F_int = F_eff(both bodies) - F_eff(body1) - F_eff(body2) with the
    subtraction done inside each mode (see interaction_mode_term), so the
    distance-independent self energies never enter the sum.
    """
    threads = resolve_threads(threads)

    def compute(omega):
        return interaction_mode_term(scene, omega, g0_builder, method)

    return _primed_sum(grid, compute, tail_tol, threads, fixed_n=_fixed_n)


def _zeta_breakpoints(scene):
    centers1 = scene.body1.centers
    centers2 = scene.body2.centers
    diff = centers1[:, None, :] - centers2[None, :, :]
    d = float(np.sqrt(np.sum(diff * diff, axis=-1)).min())
    if d <= 0.0:
        raise ConfigurationError("bodies not disjoint")
    return [0.0] + list(np.geomspace(0.05 / d, 16.0 / d, 14))


def free_energy_zero_temperature(scene, quad=_coupling.SpectralQuadrature(),
                                 kind="interaction", g0_builder=None, method="auto",
                                 return_info=False):
    """Zero-temperature free energy: (1/2 pi) integral of the mode term.

    The Matsubara sum becomes int_0^inf dzeta/(2 pi) of the per-mode term
    at omega = zeta, evaluated by adaptive panels on a logarithmic zeta
    skeleton scaled to the body separation, with geometric tail extension.

    kind = "interaction" integrates the two-body subtracted term (finite
    for any passive scene); kind = "full" integrates tr ln M, which
    converges only when chi(i zeta) decays (for a frequency-independent
    susceptibility the integrand tends to a constant and the quadrature
    reports its budget honestly). With return_info=True a (value, info)
    pair is returned, info carrying the evaluation count and the achieved
    relative tolerance.
    """
    if kind not in ("interaction", "full"):
        raise ConfigurationError("kind must be 'interaction' or 'full'")
    evals = [0]

    if kind == "interaction":
        def integrand(zeta):
            evals[0] += 1
            return interaction_mode_term(scene, zeta, g0_builder, method) / (2.0 * np.pi)
    else:
        def integrand(zeta):
            evals[0] += 1
            return mode_term(build_mode_matrix(scene, zeta, g0_builder)) / (2.0 * np.pi)

    value, achieved = _coupling.adaptive_panel_integral(
        integrand, _zeta_breakpoints(scene), quad.rel_tol,
        max_panels=4000, tail_extend=True,
    )
    if return_info:
        return float(value), {"n_evaluations": evals[0], "achieved_tol": achieved}
    return float(value)


def induced_force(scene, axis, h, grid=None, quad=None, tail_tol=1e-10,
                  threads=None, method="auto", g0_builder=None):
    """Force on body2 along `axis` from the central difference of F_int.

    Exactly one of grid (finite temperature) or quad (zero temperature)
    selects the summation mode. All three evaluations share one geometry
    family (rigid translations of body2) and, at finite temperature, one
    truncation: the displaced sums are forced to the mode count the center
    evaluation settled on, so the difference never mixes truncations.

    Returns
    -------
    ForceResult
        force = -[F_int(d+h) - F_int(d-h)] / (2h); converged mirrors the
        center evaluation.
    """
    if (grid is None) == (quad is None):
        raise ConfigurationError("pass exactly one of grid (finite T) or quad (zero T)")
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        raise ConfigurationError("axis must be a nonzero vector")
    axis = axis / norm
    h = float(h)
    if h <= 0.0:
        raise ConfigurationError("step h must be > 0")
    sep = abs(scene.separation_along(axis))
    if sep > 0 and h >= sep / 10.0:
        raise ConfigurationError(f"step h={h:.3g} must be below a tenth of the separation {sep:.3g}")

    plus = scene.with_body2(scene.body2.translated(h * axis))
    minus = scene.with_body2(scene.body2.translated(-h * axis))

    if grid is not None:
        center = interaction_free_energy(scene, grid, tail_tol, threads, g0_builder, method)
        fixed = center.n_used
        f_plus = interaction_free_energy(plus, grid, tail_tol, threads, g0_builder,
                                         method, _fixed_n=fixed).total
        f_minus = interaction_free_energy(minus, grid, tail_tol, threads, g0_builder,
                                          method, _fixed_n=fixed).total
        f_center = center.total
        converged = center.converged
    else:
        f_center = free_energy_zero_temperature(scene, quad, "interaction", g0_builder, method)
        f_plus = free_energy_zero_temperature(plus, quad, "interaction", g0_builder, method)
        f_minus = free_energy_zero_temperature(minus, quad, "interaction", g0_builder, method)
        converged = True

    force = -(f_plus - f_minus) / (2.0 * h)
    return ForceResult(separation=sep, f_minus=f_minus, f_center=f_center,
                       f_plus=f_plus, force=force, step=h, converged=converged)
