import functools

import numpy as np
import pytest

from stbddc.fem import assemble, assemble_triplets, manufactured_problem
from stbddc.mesh import generate_structured
from stbddc.partition import block_partition, rcb_partition
from stbddc.schur import build_schur, split_dofs


@functools.lru_cache(maxsize=None)
def decomposed(n, N, theta=0.5, partitioner="rcb", dim_x=2):
    """Mesh, system, partition and factorized Schur operator, cached per session."""
    mesh = generate_structured(n, dim_x)
    spec = manufactured_problem(theta)
    K, f, dof_map = assemble(mesh, spec)
    if partitioner == "rcb":
        part = rcb_partition(mesh, N)
    else:
        part = block_partition(mesh, *N)
    split = split_dofs(part)
    trip = assemble_triplets(mesh, theta, dof_map)
    op = build_schur(K, split, trip, part.cell_owner)
    coords = mesh.vertices[dof_map.free_vertices]
    return dict(mesh=mesh, spec=spec, K=K, f=f, dof_map=dof_map, part=part,
                split=split, op=op, coords=coords)


def dense_schur(op):
    n = op.split.n_interface
    return np.column_stack([op.apply(e) for e in np.eye(n)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE:
        terminalreporter.write_line(line)
