import numpy as np
import pytest

from fluctua.model import Body, ConstantSusceptibility, FieldKernelSpec, Scene

EX = np.array([1.0, 0.0, 0.0])


def pair_scene(d, chi1, chi2, dv=0.3, temperature=0.5, n_internal=1, mass=0.0):
    """Two single-voxel bodies on the x axis, the workhorse scene."""
    spec = FieldKernelSpec(dimension=3, mass=mass, n_internal=n_internal)
    b1 = Body("A1", np.zeros((1, 3)), np.array([float(dv)]),
              ConstantSusceptibility(chi1))
    b2 = Body("A2", (float(d) * EX)[None, :], np.array([float(dv)]),
              ConstantSusceptibility(chi2))
    return Scene(kernel=spec, body1=b1, body2=b2, temperature=temperature)


def random_disjoint_scene(rng, chi_lo=0.2, chi_hi=0.8, sep=4.0, temperature=0.5,
                          n_internal=1, max_voxels=5):
    """Two jittered voxel clusters that never overlap.

    Voxels sit on a unit-pitch grid inside a 3x3x3 block per body with
    volumes well below the cell volume, so equal-volume spheres stay
    disjoint and G0 stays positive definite.
    """
    def cluster(n, origin, label):
        cells = rng.choice(27, size=n, replace=False)
        base = np.stack(np.unravel_index(cells, (3, 3, 3)), axis=1).astype(float)
        centers = origin + base + rng.uniform(-0.1, 0.1, size=(n, 3))
        volumes = rng.uniform(0.05, 0.15, size=n)
        chi = float(rng.uniform(chi_lo, chi_hi))
        return Body(label, centers, volumes, ConstantSusceptibility(chi))

    n1 = int(rng.integers(1, max_voxels + 1))
    n2 = int(rng.integers(1, max_voxels + 1))
    b1 = cluster(n1, np.zeros(3), "A1")
    b2 = cluster(n2, np.array([2.0 + sep, 0.0, 0.0]), "A2")
    spec = FieldKernelSpec(dimension=3, mass=0.0, n_internal=n_internal)
    return Scene(kernel=spec, body1=b1, body2=b2, temperature=temperature)


def rotation_matrix(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
