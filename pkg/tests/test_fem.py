import numpy as np
import pytest

from tnstokes import quadrature as qr
from tnstokes.errors import DataError
from tnstokes.fem import FieldExpr, GradientDiscretisation, zero_field
from tnstokes.mesh import build_uniform
from tnstokes.presets import vortex


def test_dimensions(gd5):
    m = gd5.mesh
    assert gd5.n_nodes == (2 * 5 - 1) ** 2
    assert gd5.dim_X0 == 2 * (2 * 5 - 3) ** 2
    assert gd5.dim_Y == m.n_vertices
    assert gd5.velocity_dof_map.shape == (m.n_triangles, 12)
    assert gd5.pressure_dof_map.shape == (m.n_triangles, 3)


def test_quadrature_weights_cover_domain(gd5):
    assert abs(gd5.quad_w.sum() - 1.0) < 1e-13


def test_partition_of_unity_everywhere(gd5):
    ones = np.concatenate([np.ones(gd5.n_nodes), np.zeros(gd5.n_nodes)])
    vals = gd5.pi_at_quad(ones)
    assert np.abs(vals[..., 0] - 1).max() < 1e-12
    assert np.abs(gd5.grad_at_quad(ones)).max() < 1e-10
    assert np.abs(gd5.chi_at_quad(np.ones(gd5.dim_Y)) - 1).max() < 1e-12


def test_zero_velocity(gd5):
    v = np.zeros(gd5.dim_X0)
    assert not np.any(gd5.reconstruct_velocity(v, (3, 2)))
    assert not np.any(gd5.reconstruct_gradient(v, (3, 2)))
    assert gd5.divergence(v, (0, 0)) == 0.0


def test_interpolant_reproduces_field_at_nodes(gd5):
    f = vortex()
    v = gd5.interpolate(f)
    full = gd5.full(v)
    xy = gd5.node_coords
    exact = f(xy[:, 0], xy[:, 1])
    assert np.abs(gd5.node_values(full) - exact).max() < 1e-12
    for x in xy[::7]:
        assert np.allclose(gd5.evaluate(full, x), f(*x), atol=1e-12)


def test_interpolate_zero_and_fixed_point(gd9):
    assert not np.any(gd9.interpolate(zero_field()))
    f = vortex()
    full = gd9.interpolate(f, constrained=True)
    assert np.allclose(gd9.evaluate(full, (0.5, 0.75)), f(0.5, 0.75), atol=1e-12)


def test_single_dof_matches_reference_table(gd5):
    full = np.zeros(gd5.n_full)
    t = 4
    node = gd5.tri_nodes[t, 3]
    full[node] = 1.0
    assert np.allclose(gd5.pi_at_quad(full)[t, :, 0], qr.p2_values(qr.QUAD_POINTS)[:, 3], atol=1e-14)


def test_quadratic_field_gradient_exact(gd5):
    c = np.random.default_rng(0).standard_normal((2, 6))
    def value(x, y):
        b = [1 + 0 * x, x, y, x * x, x * y, y * y]
        return tuple(sum(c[i, k] * b[k] for k in range(6)) for i in range(2))
    def grad(x, y):
        dx = [0 * x, 1 + 0 * x, 0 * x, 2 * x, y, 0 * x]
        dy = [0 * x, 0 * x, 1 + 0 * x, 0 * x, x, 2 * y]
        return tuple((sum(c[i, k] * dx[k] for k in range(6)), sum(c[i, k] * dy[k] for k in range(6)))
                     for i in range(2))
    f = FieldExpr(value, grad, "quadratic")
    full = gd5.interpolate(f, constrained=True)
    X, Y = gd5.quad_x[..., 0], gd5.quad_x[..., 1]
    assert np.abs(gd5.pi_at_quad(full) - f(X, Y)).max() < 1e-12
    G = gd5.grad_at_quad(full)
    assert np.abs(G - f.grad(X, Y)).max() < 1e-11
    E = gd5.eps_at_quad(full)
    assert np.abs(E - 0.5 * (G + np.swapaxes(G, -1, -2))).max() < 1e-14
    assert np.abs(gd5.div_at_quad(full) - (G[..., 0, 0] + G[..., 1, 1])).max() < 1e-14


def test_boundary_trace_vanishes(gd5, rng):
    full = gd5.full(rng.standard_normal(gd5.dim_X0))
    s = np.linspace(0, 1, 17)
    pts = np.concatenate([np.stack([s, 0 * s], 1), np.stack([s, 1 + 0 * s], 1),
                          np.stack([0 * s, s], 1), np.stack([1 + 0 * s, s], 1)])
    assert np.abs(gd5.evaluate_many(full, pts)).max() < 1e-14


def test_conformity_integral_of_divergence(gd5, rng):
    w = gd5.quad_w.ravel()
    for _ in range(1000):
        v = rng.standard_normal(gd5.dim_X0)
        assert abs(w @ (gd5.Div_free @ v)) < 1e-10


def test_eps_norm_is_a_norm(gd5, rng):
    lam_min = np.linalg.eigvalsh(gd5.eps_gram.toarray())[0]
    assert lam_min > 1e-6


def test_korn_and_coercivity_samples(gd5, rng):
    from tnstokes.constants import estimate_constants_p2
    C = estimate_constants_p2(gd5).coercivity
    for _ in range(1000):
        v = rng.standard_normal(gd5.dim_X0)
        e = np.sqrt(v @ (gd5.eps_gram @ v))
        g = np.sqrt(v @ (gd5.grad_gram @ v))
        assert e <= g * (1 + 1e-12)
        assert g <= C * e


def test_mass_matches_quadrature_energy(gd5, rng):
    v = rng.standard_normal(gd5.dim_X0)
    vals = gd5.pi_at_quad(gd5.full(v))
    direct = 0.5 * np.sum(gd5.quad_w * np.sum(vals ** 2, axis=-1))
    assert abs(gd5.energy(v) - direct) < 1e-12 * max(1.0, direct)


def test_pressure_mean(gd5):
    q = np.random.default_rng(1).standard_normal(gd5.dim_Y)
    m = gd5.pressure_mean
    q0 = q - (m @ q) / m.sum()
    assert abs(np.sum(gd5.quad_w * gd5.chi_at_quad(q0))) < 1e-12


def test_quad_values_errors(gd5):
    bad = FieldExpr(lambda x, y: (np.log(x - 2), 0 * y), None, "bad")
    with np.errstate(invalid="ignore"):
        with pytest.raises(DataError):
            gd5.quad_values(bad)


def test_field_csv_and_vtk(gd5, tmp_path):
    full = gd5.interpolate(vortex(), constrained=True)
    p = gd5.write_field_csv(tmp_path / "f.csv", full)
    lines = p.read_text().splitlines()
    assert lines[0] == "x,y,u_x,u_y"
    assert len(lines) == gd5.n_nodes + 1
    assert gd5.write_vtk(tmp_path / "f.vtk", full).read_text().startswith("# vtk")


def test_thread_safety_of_evaluation(gd5):
    from concurrent.futures import ThreadPoolExecutor
    full = gd5.interpolate(vortex(), constrained=True)
    pts = np.random.default_rng(3).random((200, 2))
    with ThreadPoolExecutor(4) as ex:
        res = list(ex.map(lambda _: gd5.evaluate_many(full, pts), range(8)))
    assert all(np.array_equal(res[0], r) for r in res)


def test_smallest_mesh_has_only_the_diagonal_midpoint_free():
    gd = GradientDiscretisation(build_uniform(2, 2))
    assert gd.dim_X0 == 2
