"""Domain types: Matsubara grids, susceptibility models, bodies, scenes.

Everything is in natural units hbar = k_B = c = 1 with one arbitrary length
unit L. Frequencies, masses and temperatures carry 1/L; free energies carry
1/L as well. All types are immutable after construction and safe to share
between threads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

log = logging.getLogger(__name__)

_EYE3 = np.eye(3)


def _as_tensor(value):
    """Coerce a scalar or 3x3 array-like to a float 3x3 ndarray."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * _EYE3.copy()
    if arr.shape != (3, 3):
        raise ConfigurationError(f"expected scalar or 3x3 tensor, got shape {arr.shape}")
    return arr


def is_symmetric_psd(tensor, tol=1e-10):
    """True if `tensor` is symmetric and PSD up to roundoff.

    The PSD slack is tol times the spectral norm, so exact zeros and
    eigenvalues at roundoff level below zero are accepted.
    """
    t = np.asarray(tensor, dtype=float)
    if not np.allclose(t, t.T, rtol=0.0, atol=tol * max(1.0, np.abs(t).max())):
        return False
    w = np.linalg.eigvalsh(0.5 * (t + t.T))
    scale = max(abs(w[-1]), 1.0)
    return w[0] >= -tol * scale


def _is_scalar_like(tensor, tol=1e-12):
    t = np.asarray(tensor, dtype=float)
    return np.allclose(t, t[0, 0] * _EYE3, rtol=0.0, atol=tol * max(1.0, abs(t[0, 0])))


@dataclass(frozen=True)
class MatsubaraGrid:
    """Primed-sum grid omega_n = 2 pi n / beta, n = 0..n_max.

    weights implement the primed sum: the n = 0 term enters with half
    weight, all others with weight one.
    """

    beta: float
    n_max: int
    frequencies: np.ndarray
    weights: np.ndarray

    @property
    def temperature(self):
        return 1.0 / self.beta


def make_matsubara_grid(temperature, n_max):
    """Build the Matsubara grid for a finite-temperature primed sum.

    Parameters
    ----------
    temperature : float
        Temperature in 1/L units, strictly positive. The T = 0 limit is a
        frequency integral, not a grid; see the zero-temperature quadrature.
    n_max : int
        Largest mode index, at least 1.

    Returns
    -------
    MatsubaraGrid
        Frequencies 2 pi n T for n = 0..n_max and primed-sum weights.
    """
    if not temperature > 0.0:
        raise ConfigurationError(
            "temperature must be > 0; the zero-temperature path is the "
            "frequency quadrature, not a Matsubara grid"
        )
    n_max = int(n_max)
    if n_max < 1:
        raise ConfigurationError("n_max must be >= 1")
    n = np.arange(n_max + 1)
    freqs = 2.0 * np.pi * n * float(temperature)
    weights = np.ones(n_max + 1)
    weights[0] = 0.5
    freqs.setflags(write=False)
    weights.setflags(write=False)
    return MatsubaraGrid(beta=1.0 / float(temperature), n_max=n_max,
                         frequencies=freqs, weights=weights)


@dataclass(frozen=True)
class ConstantSusceptibility:
    """Frequency-independent polarizability density alpha (3x3 PSD)."""

    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", _as_tensor(self.alpha))
        self.alpha.setflags(write=False)


@dataclass(frozen=True)
class LorentzOscillator:
    """Single-resonance oscillator response.

    At imaginary frequency the susceptibility is

        chi(i omega) = plasma_sq / (resonance^2 + omega^2 + damping * omega)

    times the orientation tensor, which is real, symmetric, PSD and
    monotonically decaying in omega for any PSD orientation.
    """

    plasma_sq: float
    resonance: float
    damping: float
    orientation: np.ndarray = field(default_factory=lambda: _EYE3.copy())

    def __post_init__(self):
        object.__setattr__(self, "orientation", _as_tensor(self.orientation))
        self.orientation.setflags(write=False)
        if self.plasma_sq < 0 or self.resonance <= 0 or self.damping < 0:
            raise ConfigurationError(
                "LorentzOscillator needs plasma_sq >= 0, resonance > 0, damping >= 0"
            )


@dataclass(frozen=True)
class TabulatedSusceptibility:
    """Dissipation spectrum Im chi sampled on a strictly positive nu grid.

    The imaginary-frequency response is recovered from the samples through
    the spectral integral; evaluation lives in the coupling module.
    """

    nu: np.ndarray
    imchi: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        imchi = np.asarray(self.imchi, dtype=float)
        if nu.ndim != 1 or nu.size < 2:
            raise ConfigurationError("tabulated spectrum needs at least 2 nu samples")
        if np.any(nu <= 0) or np.any(np.diff(nu) <= 0):
            raise ConfigurationError("nu grid must be strictly positive and increasing")
        if imchi.shape != (nu.size, 3, 3):
            raise ConfigurationError(
                f"imchi must have shape ({nu.size}, 3, 3), got {imchi.shape}"
            )
        nu.setflags(write=False)
        imchi.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "imchi", imchi)


@dataclass(frozen=True)
class CouplingSpectrum:
    """Matter-field coupling density g(nu), the tensor root of (2 nu/pi) Im chi.

    Either backed by an arbitrary callable nu -> 3x3 tensor, or by samples on
    a grid. Sample-backed spectra keep the Im chi table they came from so the
    spectral integral can be carried out on the interpolant in closed form.
    """

    fn: object = None
    nu: np.ndarray = None
    g: np.ndarray = None
    imchi: np.ndarray = None

    def __call__(self, nu_value):
        if self.fn is not None:
            return _as_tensor(self.fn(float(nu_value)))
        # interpolate the Im chi table, then take the tensor root, so that
        # g(nu)^2 stays exactly (2 nu/pi) times the interpolated Im chi
        from .coupling import coupling_from_imchi

        nu_value = float(nu_value)
        table = np.array([np.interp(nu_value, self.nu, self.imchi[:, i, j])
                          for i in range(3) for j in range(3)]).reshape(3, 3)
        return coupling_from_imchi(table, nu_value)


@dataclass(frozen=True)
class Body:
    """A rigid set of voxels sharing one susceptibility model.

    The body is the support region of the matter coupling: centers in L,
    volumes in L^3 (or cell lengths in 1D scenes, where the third power is
    never used).
    """

    label: str
    centers: np.ndarray
    volumes: np.ndarray
    susceptibility: object

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        volumes = np.atleast_1d(np.asarray(self.volumes, dtype=float))
        if centers.ndim != 2 or centers.shape[1] != 3:
            raise ConfigurationError("voxel centers must be (n, 3)")
        if volumes.shape != (centers.shape[0],):
            raise ConfigurationError("need one volume per voxel center")
        centers.setflags(write=False)
        volumes.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "volumes", volumes)

    @property
    def n_voxels(self):
        return self.centers.shape[0]

    def centroid(self):
        w = self.volumes / self.volumes.sum()
        return w @ self.centers

    def translated(self, delta):
        """Rigidly translated copy."""
        return Body(self.label, self.centers + np.asarray(delta, dtype=float),
                    self.volumes, self.susceptibility)


@dataclass(frozen=True)
class FieldKernelSpec:
    """Free-field kernel family: Yukawa/Helmholtz in 1 or 3 dimensions.

    n_internal = 1 is a scalar field; n_internal = 3 is a three-component
    field whose free kernel is internally diagonal, so anisotropy enters
    only through the susceptibility tensors.
    """

    dimension: int
    mass: float = 0.0
    n_internal: int = 1

    def __post_init__(self):
        if self.dimension not in (1, 3):
            raise ConfigurationError("dimension must be 1 or 3")
        if self.n_internal not in (1, 3):
            raise ConfigurationError("n_internal must be 1 or 3")
        if self.mass < 0:
            raise ConfigurationError("mass must be >= 0")


@dataclass(frozen=True)
class Scene:
    """Two bodies coupled to one fluctuating field at a temperature."""

    kernel: FieldKernelSpec
    body1: Body
    body2: Body
    temperature: float = 0.0

    @property
    def n_voxels(self):
        return self.body1.n_voxels + self.body2.n_voxels

    def all_centers(self):
        return np.vstack([self.body1.centers, self.body2.centers])

    def all_volumes(self):
        return np.concatenate([self.body1.volumes, self.body2.volumes])

    def with_body2(self, body2):
        return Scene(self.kernel, self.body1, body2, self.temperature)

    def swapped(self):
        """Scene with body labels 1 and 2 exchanged (same geometry)."""
        b1 = Body("A1", self.body2.centers, self.body2.volumes, self.body2.susceptibility)
        b2 = Body("A2", self.body1.centers, self.body1.volumes, self.body1.susceptibility)
        return Scene(self.kernel, b1, b2, self.temperature)

    def translated(self, delta):
        """Both bodies rigidly translated by the same vector."""
        return Scene(self.kernel, self.body1.translated(delta),
                     self.body2.translated(delta), self.temperature)

    def separation_along(self, axis):
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return float((self.body2.centroid() - self.body1.centroid()) @ axis)

    def at_separation(self, d, axis):
        """Body2 rigidly placed so the centroid separation along axis is d."""
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        shift = (float(d) - self.separation_along(axis)) * axis
        return self.with_body2(self.body2.translated(shift))


@dataclass(frozen=True)
class FreeEnergyResult:
    """Outcome of a primed Matsubara sum.

    total is exactly T * sum_n weight(n) * mode_terms[n] accumulated in
    ascending n. tail_estimate bounds the truncated remainder by a geometric
    extrapolation of the last computed term.
    """

    mode_terms: np.ndarray
    total: float
    n_used: int
    tail_estimate: float
    converged: bool


def _scalar_like_susceptibility(model):
    """Check that a susceptibility collapses to a scalar times identity."""
    if isinstance(model, ConstantSusceptibility):
        return _is_scalar_like(model.alpha)
    if isinstance(model, LorentzOscillator):
        return _is_scalar_like(model.orientation)
    if isinstance(model, TabulatedSusceptibility):
        return all(_is_scalar_like(model.imchi[k]) for k in range(model.imchi.shape[0]))
    if hasattr(model, "chi_at_imag"):
        return _is_scalar_like(np.asarray(model.chi_at_imag(1.0), dtype=float))
    return False


def _susceptibility_psd(model):
    if isinstance(model, ConstantSusceptibility):
        return is_symmetric_psd(model.alpha)
    if isinstance(model, LorentzOscillator):
        return is_symmetric_psd(model.orientation)
    if isinstance(model, TabulatedSusceptibility):
        return all(is_symmetric_psd(model.imchi[k]) for k in range(model.imchi.shape[0]))
    return True


def validate_scene(scene):
    """Validate a scene against the type invariants.

    Returns an empty list iff every invariant holds; otherwise one
    diagnostic string per violation, each naming the offending field.
    Sub-voxel body separations that are formally disjoint but closer than
    one voxel diameter are logged as warnings, not reported as violations.
    Side-effect free apart from that logging, and idempotent.
    """
    diags = []
    kernel = scene.kernel
    if kernel.dimension == 1 and kernel.mass == 0.0:
        diags.append("kernel: zero-mode singular configuration (1D massless field)")
    if scene.temperature < 0:
        diags.append("temperature: must be >= 0")

    for name, body in (("body1", scene.body1), ("body2", scene.body2)):
        if body.label not in ("A1", "A2"):
            diags.append(f"{name}.label: must be 'A1' or 'A2', got {body.label!r}")
        if np.any(body.volumes <= 0):
            diags.append(f"{name}.volumes: all voxel volumes must be > 0")
        n = body.n_voxels
        if n > 1:
            d2 = np.sum((body.centers[:, None, :] - body.centers[None, :, :]) ** 2, axis=-1)
            iu = np.triu_indices(n, k=1)
            if np.any(d2[iu] == 0.0):
                diags.append(f"{name}.voxels: voxel centers must be pairwise distinct")
        if not _susceptibility_psd(body.susceptibility):
            diags.append(f"{name}.susceptibility: tensor data must be symmetric PSD")
        if kernel.n_internal == 1 and not _scalar_like_susceptibility(body.susceptibility):
            diags.append(
                f"{name}.susceptibility: must be a scalar multiple of the identity "
                "for a scalar field (n_internal = 1)"
            )
    if scene.body1.label == scene.body2.label:
        diags.append("body2.label: bodies must carry distinct labels")

    cross = scene.body1.centers[:, None, :] - scene.body2.centers[None, :, :]
    cross_d = np.sqrt(np.sum(cross ** 2, axis=-1))
    if np.any(cross_d == 0.0):
        diags.append("bodies not disjoint: body1 and body2 share a voxel center")
    elif cross_d.size:
        # disjoint but possibly under-resolved: warn below one voxel diameter
        dia = 2.0 * (3.0 * scene.all_volumes().max() / (4.0 * np.pi)) ** (1.0 / 3.0)
        dmin = float(cross_d.min())
        if dmin < dia:
            log.warning(
                "bodies closer than one voxel diameter (min separation %.3g, "
                "diameter %.3g); discretization may be under-resolved", dmin, dia,
            )
    return diags
