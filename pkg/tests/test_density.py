import json

import numpy as np
import pytest

from sdelab import expr as ex
from sdelab.model import apply_generator_many, build_model
from sdelab import density as dn


def make(dim, A, G, p=5):
    return build_model({"dim": dim, "p": p, "A": A, "G": G})


OU = make(2, [["1", "0"], ["0", "1"]], ["-x1", "-x2"])
OU_RHO = ex.parse("exp(-(x1^2 + x2^2))", 2)
BOX4 = ([-4.0, -4.0], [4.0, 4.0])


def test_ou_density_matches_gaussian():
    gd = dn.solve_stationary(OU, BOX4, 81)
    assert dn.max_relative_error(gd, OU_RHO) <= 2e-2
    assert gd.residual <= 1e-8
    assert abs(gd.mass() - 1.0) <= 1e-12
    assert gd.values.min() > 0.0


def test_ou_density_is_exact_for_this_scheme():
    """The exponential-fitted flux integrates a linear drift exactly, so
    the OU solution is reproduced to roundoff at any resolution. This is
    why refinement studies for the order of the scheme need a drift with
    curvature (see the quartic test below)."""
    for n in (41, 81):
        gd = dn.solve_stationary(OU, BOX4, n)
        assert dn.max_relative_error(gd, OU_RHO) <= 1e-10


def test_zero_drift_gives_uniform_density():
    m = make(2, [["1", "0"], ["0", "1"]], ["0", "0"])
    gd = dn.solve_stationary(m, ([-2.0, -2.0], [2.0, 2.0]), 41)
    assert gd.values.max() - gd.values.min() <= 1e-12 * gd.values.mean()
    assert abs(gd.values.mean() * 16.0 - 1.0) <= 1e-10


def test_scaled_diffusion_widens_the_gaussian():
    m = make(2, [["2", "0"], ["0", "2"]], ["-x1", "-x2"])
    gd = dn.solve_stationary(m, BOX4, 81)
    ref = ex.parse("exp(-(x1^2 + x2^2) / 2)", 2)
    assert dn.max_relative_error(gd, ref) <= 2e-2


def test_quartic_refinement_has_second_order():
    m = make(2, [["1", "0"], ["0", "1"]],
             ["-x1 * (x1^2 + x2^2)", "-x2 * (x1^2 + x2^2)"])
    ref = ex.parse("exp(-0.5 * (x1^2 + x2^2)^2)", 2)
    box = ([-3.0, -3.0], [3.0, 3.0])
    e41 = dn.max_relative_error(dn.solve_stationary(m, box, 41), ref)
    e81 = dn.max_relative_error(dn.solve_stationary(m, box, 81), ref)
    assert e41 <= 1e-2
    assert np.log2(e41 / e81) >= 1.8


def test_cross_term_gaussian():
    # constant A with off-diagonal entries, gradient drift -x: the
    # stationary density is exp(-<A^-1 x, x>)
    m = make(2, [["1", "0.5"], ["0.5", "1"]], ["-x1", "-x2"])
    Ainv = np.linalg.inv([[1.0, 0.5], [0.5, 1.0]])
    src = "exp(-({}*x1^2 + {}*x1*x2 + {}*x2^2))".format(
        float(Ainv[0, 0]), float(2.0 * Ainv[0, 1]), float(Ainv[1, 1]))
    ref = ex.parse(src, 2)
    gd = dn.solve_stationary(m, ([-3.0, -3.0], [3.0, 3.0]), 81)
    assert dn.max_relative_error(gd, ref) <= 2e-2
    assert gd.values.min() > 0.0

    # dropping the cross terms is a loud, visible downgrade
    gd_off = dn.solve_stationary(m, ([-3.0, -3.0], [3.0, 3.0]), 81,
                                 cross_mode="off")
    assert any("downgrade" in note for note in gd_off.notes)
    assert dn.max_relative_error(gd_off, ref) > dn.max_relative_error(gd, ref)

    with pytest.raises(ValueError):
        dn.solve_stationary(m, ([-3.0, -3.0], [3.0, 3.0]), 81, cross_mode="fancy")


def test_one_dimensional_solve():
    m = make(1, [["1"]], ["-x1"], p=2)
    gd = dn.solve_stationary(m, ([-4.0], [4.0]), 161)
    assert dn.max_relative_error(gd, ex.parse("exp(-(x1^2))", 1)) <= 2e-2
    assert abs(gd.mass() - 1.0) <= 1e-12


def test_solver_input_errors():
    with pytest.raises(ValueError, match="origin"):
        dn.solve_stationary(OU, ([1.0, -4.0], [4.0, 4.0]), 41)
    with pytest.raises(ValueError, match="dim"):
        m3 = make(3, [["1", "0", "0"], ["0", "1", "0"], ["0", "0", "1"]],
                  ["-x1", "-x2", "-x3"], p=6)
        dn.solve_stationary(m3, ([-2.0] * 3, [2.0] * 3), 21)
    with pytest.raises(ValueError, match="5 nodes"):
        dn.solve_stationary(OU, BOX4, 3)
    with pytest.raises(ValueError, match="elliptic"):
        degenerate = make(2, [["x1^2", "0"], ["0", "1"]], ["-x1", "-x2"])
        dn.solve_stationary(degenerate, BOX4, 21)


def test_beta_field_explicit_examples():
    bf = dn.beta_field(OU, OU_RHO)
    X = np.array([[0.5, -1.0], [2.0, 0.3], [0.0, 0.0]])
    assert np.abs(bf.at(X) - (-X)).max() <= 1e-12

    bf_flat = dn.beta_field(OU, ex.parse("1", 2))
    assert np.abs(bf_flat.at(X)).max() == 0.0

    m = make(2, [["1 + x1^2", "0"], ["0", "1"]], ["0", "0"])
    bf_div = dn.beta_field(m, ex.parse("1", 2))
    vals = bf_div.at(X)
    assert np.abs(vals[:, 0] - X[:, 0]).max() <= 1e-12
    assert np.abs(vals[:, 1]).max() == 0.0


def test_beta_field_rejects_nonpositive_rho():
    bf = dn.beta_field(OU, ex.parse("x1", 2))
    with pytest.raises(ValueError, match="positive"):
        bf.at(np.array([[1.0, 0.0], [-1.0, 0.0]]))


def test_beta_explicit_and_solved_agree():
    """Models with a known stationary density give the same beta whether
    it is differentiated symbolically or from the solved grid."""
    cases = [
        (OU, "exp(-(x1^2 + x2^2))", BOX4, 81),
        (
            make(2, [["1", "0"], ["0", "1"]],
                 ["-x1 * (x1^2 + x2^2)", "-x2 * (x1^2 + x2^2)"]),
            "exp(-0.5 * (x1^2 + x2^2)^2)",
            ([-3.0, -3.0], [3.0, 3.0]),
            81,
        ),
    ]
    Ainv = np.linalg.inv([[1.0, 0.5], [0.5, 1.0]])
    cases.append((
        make(2, [["1", "0.5"], ["0.5", "1"]], ["-x1", "-x2"]),
        "exp(-({}*x1^2 + {}*x1*x2 + {}*x2^2))".format(
            float(Ainv[0, 0]), float(2.0 * Ainv[0, 1]), float(Ainv[1, 1])),
        ([-3.0, -3.0], [3.0, 3.0]),
        121,
    ))
    for model, ref_src, box, n in cases:
        ref = ex.parse(ref_src, 2)
        gd = dn.solve_stationary(model, box, n)
        nodes = gd.nodes()
        lo = np.asarray(box[0]) / 2.0
        hi = np.asarray(box[1]) / 2.0
        inner = np.all((nodes >= lo) & (nodes <= hi), axis=1)
        be = dn.beta_field(model, ref).at(nodes[inner])
        bg = dn.beta_field(model, gd).at(nodes[inner])
        assert np.abs(be - bg).max() <= 0.03 * np.abs(be).max()


def test_decompose_ou_leaves_nothing():
    gd = dn.solve_stationary(OU, BOX4, 81)
    dec = dn.decompose(OU, gd)
    assert dec.stats["max_b_norm_on_support"] <= 1e-10
    # definitional: beta + b = G at every node
    G = np.stack([-c for c in np.meshgrid(*gd.axes(), indexing="ij")], axis=-1)
    assert np.abs(dec.beta + dec.b - G).max() <= 1e-10


def test_decompose_recovers_rotational_part():
    # G = -x + rot, rot = (-x2, x1) exp(-|x|^2): the rotation is
    # divergence-free for the Gaussian density, so beta stays -x and b
    # picks up exactly the rotational part
    m = make(2, [["1", "0"], ["0", "1"]],
             ["-x1 - x2 * exp(-(x1^2 + x2^2))",
              "-x2 + x1 * exp(-(x1^2 + x2^2))"])
    gd = dn.solve_stationary(m, BOX4, 161)
    assert dn.max_relative_error(gd, OU_RHO) <= 2e-2
    dec = dn.decompose(m, gd)
    nodes = gd.nodes()
    damp = np.exp(-(nodes ** 2).sum(axis=1))
    rot = np.stack([-nodes[:, 1], nodes[:, 0]], axis=1) * damp[:, None]
    diff = np.linalg.norm(dec.b.reshape(-1, 2) - rot, axis=1)
    mask = dec.support_mask.ravel()
    assert diff[mask].max() <= 5e-3 * np.linalg.norm(rot, axis=1).max()


def test_decompose_trivial_uniform():
    m = make(2, [["1", "0"], ["0", "1"]], ["0", "0"])
    gd = dn.solve_stationary(m, ([-2.0, -2.0], [2.0, 2.0]), 41)
    dec = dn.decompose(m, gd)
    assert dec.stats["max_b_norm_on_support"] <= 1e-12


def test_divfree_residuals_vanish_for_gradient_drift():
    gd = dn.solve_stationary(OU, BOX4, 81)
    dec = dn.decompose(OU, gd)
    res = dn.divfree_residual(OU, dec, gd)
    assert len(res) >= 10
    assert max(r["normalized"] for r in res) == 0.0
    assert dec.divfree_residuals is res


def test_divfree_residuals_small_for_rotational_part():
    m = make(2, [["1", "0"], ["0", "1"]],
             ["-x1 - x2 * exp(-(x1^2 + x2^2))",
              "-x2 + x1 * exp(-(x1^2 + x2^2))"])
    gd = dn.solve_stationary(m, BOX4, 161)
    dec = dn.decompose(m, gd)
    res = dn.divfree_residual(m, dec, gd)
    assert max(r["normalized"] for r in res) <= 1e-3


def test_divfree_detects_gradient_remainder():
    """b = x with a uniform density is not divergence-free: integrating
    <x, grad f> by parts leaves -d * integral of f, so the normalized
    residual must sit well away from zero."""
    m = make(2, [["1", "0"], ["0", "1"]], ["x1", "x2"])
    shape = (81, 81)
    vals = np.ones(shape)
    gd = dn.GridDensity([-2.0, -2.0], [2.0, 2.0], vals / 16.0, 0.0, 1.0)
    dec = dn.decompose(m, gd)
    battery = [("centered", dn.bump([0.0, 0.0], [1.0, 1.0], 2))]
    res = dn.divfree_residual(m, dec, gd, battery)
    assert res[0]["normalized"] >= 0.1


def test_divfree_rejects_boundary_support():
    gd = dn.solve_stationary(OU, BOX4, 41)
    dec = dn.decompose(OU, gd)
    wide = [("toobig", dn.bump([0.0, 0.0], [4.5, 4.5], 2))]
    with pytest.raises(ValueError, match="boundary"):
        dn.divfree_residual(OU, dec, gd, wide)


def test_discrete_and_continuous_invariance():
    gd = dn.solve_stationary(OU, BOX4, 81)
    f = dn.bump([0.5, 0.5], [1.5, 1.5], 2)
    fvals = ex.eval_many(f, gd.nodes())

    M0, C = dn._assemble(OU, gd.axes(), "centered")
    assert abs(fvals @ (M0 @ gd.values.ravel())) <= 1e-12

    # quadrature of L f against the density is discretization-limited
    Lf = apply_generator_many(OU, f, gd.nodes())
    w = gd.values.ravel() * gd.cell_volumes().ravel()
    assert abs(np.sum(Lf * w)) <= 1e-2 * np.sum(np.abs(Lf) * w)


def test_mass_conservation_is_structural():
    m = make(2, [["1 + 0.3 * sin(x1)", "0"], ["0", "1"]],
             ["-x1 * (1 + x2^2)", "-x2"])
    M0, C = dn._assemble(m, [np.linspace(-3, 3, 31)] * 2, "centered")
    col_sums = np.asarray((M0 + C).sum(axis=0)).ravel()
    scale = np.abs(M0).sum(axis=1).max()
    assert np.abs(col_sums).max() <= 1e-12 * scale


def test_serialization_roundtrip(tmp_path):
    gd = dn.solve_stationary(OU, BOX4, 41)
    gd.notes.append("roundtrip check")
    jp = tmp_path / "rho.json"
    cp = tmp_path / "rho.csv"
    dn.save_density(gd, jp, cp)
    back = dn.load_density(jp, cp)
    assert np.array_equal(back.values, gd.values)
    assert back.shape == gd.shape
    assert back.residual == gd.residual
    assert back.normalization == gd.normalization
    assert "roundtrip check" in back.notes
    header = json.loads(jp.read_text())
    assert header["box"]["lower"] == [-4.0, -4.0]


def test_sampling_follows_the_density():
    gd = dn.solve_stationary(OU, BOX4, 81)
    pts = dn.sample_from(gd, 20000, 123)
    assert pts.shape == (20000, 2)
    assert np.abs(pts.mean(axis=0)).max() <= 0.02
    assert np.abs(pts.var(axis=0) - 0.5).max() <= 0.02
    assert np.array_equal(pts, dn.sample_from(gd, 20000, 123))
    assert not np.array_equal(pts, dn.sample_from(gd, 20000, 124))


def test_interp_matches_nodes():
    gd = dn.solve_stationary(OU, BOX4, 41)
    nodes = gd.nodes()
    assert np.abs(gd.interp(nodes) - gd.values.ravel()).max() <= 1e-14
    mid = gd.interp(np.array([[0.05, 0.05]]))
    assert 0.0 < mid.item() <= gd.peak()
