"""Free-field Green's function on voxel grids.

The free Euclidean kernel at Matsubara frequency omega is the Yukawa /
Helmholtz family with kappa = sqrt(omega^2 + mass^2):

    3D:  e^{-kappa r} / (4 pi r)
    1D:  e^{-kappa |x|} / (2 kappa)

Diagonal (self) entries are volume averages of the pair kernel over the
voxel, with the 3D voxel replaced by the equal-volume sphere. The matrix is
assembled densely; target scenes are at most a few thousand voxels and the
trace-log downstream needs dense factorizations anyway.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ZeroModeError

__all__ = ["Gzero", "g0_pair", "g0_self", "build_g0"]


@dataclass(frozen=True)
class Gzero:
    """Dense symmetric free propagator over (voxel x internal) space."""

    entries: np.ndarray
    omega: float
    spec: object
    n_sites: int
    n_internal: int


def _kappa(omega, spec):
    return float(np.hypot(omega, spec.mass))


def g0_pair(r_a, r_b, omega, spec):
    """Free propagator between two distinct voxel centers.

    Parameters
    ----------
    r_a, r_b : array_like, shape (3,)
        Voxel centers. The kernel depends only on their distance, so 1D
        scenes may embed their sites anywhere on a line.
    omega : float
        Imaginary (Matsubara) frequency, >= 0.
    spec : FieldKernelSpec
        Field family: dimension and mass.

    Returns
    -------
    float
        e^{-kappa r}/(4 pi r) in 3D, e^{-kappa r}/(2 kappa) in 1D, with
        kappa = sqrt(omega^2 + mass^2).
    """
    r = float(np.linalg.norm(np.asarray(r_a, dtype=float) - np.asarray(r_b, dtype=float)))
    kap = _kappa(omega, spec)
    if spec.dimension == 3:
        if r == 0.0:
            raise ConfigurationError("g0_pair needs distinct centers; use g0_self on the diagonal")
        return float(np.exp(-kap * r) / (4.0 * np.pi * r))
    if kap == 0.0:
        raise ZeroModeError("1D massless kernel at omega = 0 has no zero mode inverse")
    return float(np.exp(-kap * r) / (2.0 * kap))


def g0_self(volume, omega, spec):
    """Regularized diagonal entry: voxel volume average of the pair kernel.

    In 3D the voxel is replaced by the equal-volume sphere of radius
    R = (3 dV / 4 pi)^{1/3} and the average is

        [1 - e^{-x}(1 + x)] / (kappa^2 dV),   x = kappa R,

    with the analytic kappa -> 0 limit 3/(8 pi R). In 1D the cell of length
    a is averaged exactly:

        (kappa a - 1 + e^{-kappa a}) / (kappa^3 a^2)
        = 1/(2 kappa) - a/6 + O(kappa a^2),

    which requires kappa > 0. Small arguments switch to series to avoid
    cancellation.
    """
    volume = float(volume)
    if volume <= 0.0:
        raise ConfigurationError("voxel volume must be > 0")
    kap = _kappa(omega, spec)
    if spec.dimension == 3:
        radius = (3.0 * volume / (4.0 * np.pi)) ** (1.0 / 3.0)
        x = kap * radius
        if x <= 0.05:
            bracket = 1.0 - 2.0 * x / 3.0 + x * x / 4.0 - x ** 3 / 15.0 + x ** 4 / 72.0
            return float(radius * radius / (2.0 * volume) * bracket)
        return float((1.0 - np.exp(-x) * (1.0 + x)) / (kap * kap * volume))
    if kap == 0.0:
        raise ZeroModeError("1D massless kernel at omega = 0 has no zero mode inverse")
    a = volume
    y = kap * a
    if y <= 0.05:
        bracket = 1.0 - y / 3.0 + y * y / 12.0 - y ** 3 / 60.0 + y ** 4 / 360.0
        return float(bracket / (2.0 * kap))
    return float((y - 1.0 + np.exp(-y)) / (kap ** 3 * a * a))


def build_g0(scene, omega):
    """Assemble the dense free propagator for every voxel pair of a scene.

    Off-diagonal entries are g0_pair, diagonal entries g0_self. For
    n_internal = 3 the scalar matrix is expanded with an identity on the
    internal index (the free kernel is internally diagonal). Symmetric by
    construction.

    Returns
    -------
    Gzero
    """
    spec = scene.kernel
    centers = scene.all_centers()
    volumes = scene.all_volumes()
    n = centers.shape[0]
    kap = _kappa(omega, spec)
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    if spec.dimension == 3:
        dup = dist.copy()
        np.fill_diagonal(dup, 1.0)  # dummy value, diagonal overwritten below
        if np.any(dup == 0.0):
            raise ConfigurationError("coincident voxel centers in scene")
        entries = np.exp(-kap * dup) / (4.0 * np.pi * dup)
    else:
        if kap == 0.0:
            raise ZeroModeError("1D massless kernel at omega = 0 has no zero mode inverse")
        entries = np.exp(-kap * dist) / (2.0 * kap)
    for i in range(n):
        entries[i, i] = g0_self(volumes[i], omega, spec)
    entries = 0.5 * (entries + entries.T)  # exact symmetry under roundoff
    if spec.n_internal == 3:
        entries = np.kron(entries, np.eye(3))
    entries.setflags(write=False)
    return Gzero(entries=entries, omega=float(omega), spec=spec,
                 n_sites=n, n_internal=spec.n_internal)
