import numpy as np
import pytest

from fus3dkit.grid import GridSpec, VoxelGrid
from fus3dkit.mesh import box_mesh, icosphere
from fus3dkit.meshsdf import mesh_sdf_grid

ACCEPTANCE_LINES: list[str] = []

R = 0.25


def sphere_field(spec, radius=R):
    return VoxelGrid.from_function(spec, lambda p: np.linalg.norm(p, axis=1) - radius)


def chord_bound(mesh, radius=R):
    """Largest gap between the sphere and the inscribed polyhedron."""
    c = mesh.corners()
    n = mesh.face_normals()
    plane = np.abs(np.einsum("ij,ij->i", c[:, 0], n))
    return float(radius - plane.min())


@pytest.fixture(scope="session")
def sphere_mesh():
    return icosphere(R, subdivisions=3)


@pytest.fixture(scope="session")
def cube():
    return box_mesh()


@pytest.fixture(scope="session")
def spec32():
    return GridSpec.from_bounds(-0.5, 0.5, 32)


@pytest.fixture(scope="session")
def spec64():
    return GridSpec.from_bounds(-0.5, 0.5, 64)


@pytest.fixture(scope="session")
def sphere_sdf32(sphere_mesh, spec32):
    grid, mv = mesh_sdf_grid(sphere_mesh, spec32)
    return grid, mv


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
