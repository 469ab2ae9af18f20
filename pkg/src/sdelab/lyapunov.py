"""Growth criteria for non-explosion.

Each checker samples an almost-everywhere inequality LHS(x) <= M * RHS(x)
over a region and reports the smallest constant that would make it hold on
the sample (negative LHS contributes zero, RHS is positive by construction).
A sample supremum is a lower bound on the essential supremum, so reports
carry the grid resolution, a refinement-stability flag, and, for ball
regions, a saturation probe at 10x and 100x the radius that flags ratios
still growing at large distances.

The criteria:

  quadratic (id "C2"):
      -<A(x)x, x>/(|x|^2+1) + tr A(x)/2 + <G(x), x>
          <= M (|x|^2+1)(ln(|x|^2+1)+1)

  cubic-shell (id "C2bis"), for |x| > N0:
      (|x|/(|x|-N0) - 1/2 - 3(|x|-N0)^2 |x| / (2(|x|-N0)^3 + 1)) <A(x)x,x>/|x|^2
        + tr A(x)/2 + <G(x), x>
          <= M (|x|-N0 + 1/(|x|-N0)^2) |x| (ln((|x|-N0)^3+1)+1)

  drift-only variants keep only <G(x), x> on the left; the dual variant
  replaces G by 2*beta - G with beta the logarithmic derivative of a
  density; the general variant tests L V <= M V for a user-supplied V > 0.
"""

from __future__ import annotations

import numpy as np

from . import expr as ex
from .model import A_many, G_many, Region, apply_generator_many, sample_region

_CRITERIA = ("C2", "C2bis", "C2-drift", "C2bis-drift", "dual", "generalV")


class CriterionReport:
    def __init__(
        self,
        criterion,
        region,
        minimal_M,
        worst_point,
        grid,
        N0=0,
        refinement_stable=None,
        refined_minimal_M=None,
        saturation=None,
        satisfied_for_M=None,
        violations=None,
        n_faults=0,
        scope_note=None,
    ):
        self.criterion = criterion
        self.region = region
        self.minimal_M = minimal_M
        self.worst_point = worst_point
        self.grid = grid
        self.N0 = N0
        self.refinement_stable = refinement_stable
        self.refined_minimal_M = refined_minimal_M
        self.saturation = saturation
        self.satisfied_for_M = satisfied_for_M
        self.violations = violations or []
        self.n_faults = n_faults
        self.scope_note = scope_note

    def to_dict(self):
        out = {
            "criterion": self.criterion,
            "region": self.region.to_dict(),
            "grid": self.grid,
            "minimal_M": self.minimal_M,
            "worst_point": list(self.worst_point),
            "N0": self.N0,
            "faulted_points": self.n_faults,
        }
        if self.refinement_stable is not None:
            out["refinement_stable"] = bool(self.refinement_stable)
            out["refined_minimal_M"] = self.refined_minimal_M
        if self.saturation is not None:
            out["saturation"] = self.saturation
        if self.satisfied_for_M is not None:
            out["satisfied_for_M"] = bool(self.satisfied_for_M)
            out["violations"] = self.violations
        if self.scope_note:
            out["scope_note"] = self.scope_note
        return out


# ---------------------------------------------------------------------------
# LHS/RHS assembly


def _c2_sides(model, X):
    A = A_many(model, X)
    G = G_many(model, X)
    q = np.sum(X * X, axis=1) + 1.0
    Ax = np.einsum("nij,nj->ni", A, X)
    lhs = (
        -np.einsum("ni,ni->n", Ax, X) / q
        + 0.5 * np.einsum("nii->n", A)
        + np.einsum("ni,ni->n", G, X)
    )
    rhs = q * (np.log(q) + 1.0)
    return lhs, rhs


def _c2bis_sides(model, X, N0):
    A = A_many(model, X)
    G = G_many(model, X)
    r = np.linalg.norm(X, axis=1)
    s = r - N0
    Ax = np.einsum("nij,nj->ni", A, X)
    quad = np.einsum("ni,ni->n", Ax, X) / (r * r)
    prefactor = r / s - 0.5 - 3.0 * s * s * r / (2.0 * s**3 + 1.0)
    lhs = prefactor * quad + 0.5 * np.einsum("nii->n", A) + np.einsum("ni,ni->n", G, X)
    rhs = (s + 1.0 / (s * s)) * r * (np.log(s**3 + 1.0) + 1.0)
    return lhs, rhs


def _drift_lhs(model, X):
    G = G_many(model, X)
    return np.einsum("ni,ni->n", G, X)


def _rhs_only(model, X, variant, N0):
    if variant == "C2":
        q = np.sum(X * X, axis=1) + 1.0
        return q * (np.log(q) + 1.0)
    r = np.linalg.norm(X, axis=1)
    s = r - N0
    return (s + 1.0 / (s * s)) * r * (np.log(s**3 + 1.0) + 1.0)


# ---------------------------------------------------------------------------
# shared evaluation machinery


def _sup_ratio(lhs, rhs, X):
    """Supremum of max(lhs,0)/rhs over the sample, skipping faulted points.
    Returns (sup, worst_point, fault count)."""
    good = np.isfinite(lhs) & np.isfinite(rhs) & (rhs > 0.0)
    n_faults = int((~good).sum())
    if not good.any():
        raise ex.DomainError("every sample point faulted while evaluating the criterion")
    ratio = np.where(good, np.maximum(lhs, 0.0) / np.where(good, rhs, 1.0), -np.inf)
    k = int(np.argmax(ratio))
    return float(max(ratio[k], 0.0)), X[k], n_faults


def _violations(lhs, rhs, X, M, cap=20):
    bad = np.isfinite(lhs) & np.isfinite(rhs) & (lhs > M * rhs)
    idx = np.nonzero(bad)[0][:cap]
    return [
        {"point": X[k].tolist(), "lhs": float(lhs[k]), "rhs_unit": float(rhs[k])}
        for k in idx
    ]


def _scaled_region(region, factor):
    if region.kind == "ball":
        return Region.ball(region.params["center"], region.params["radius"] * factor)
    return None


def _evaluate(sides, region, points_per_axis):
    X = sample_region(region, points_per_axis)
    lhs, rhs = sides(X)
    return _sup_ratio(lhs, rhs, X) + (lhs, rhs, X)


def _build_report(
    criterion,
    model,
    sides,
    region,
    M,
    points_per_axis,
    N0=0,
    probe_saturation=True,
    check_refinement=True,
):
    sup, worst, n_faults, lhs, rhs, X = _evaluate(sides, region, points_per_axis)

    refined = None
    stable = None
    if check_refinement:
        sup2, _, _, _, _, _ = _evaluate(sides, region, 2 * points_per_axis - 1)
        refined = sup2
        stable = abs(sup2 - sup) <= 0.01 * max(abs(sup), abs(sup2), 1e-12)

    saturation = None
    if probe_saturation and region.kind == "ball":
        values = [sup]
        for factor in (10.0, 100.0):
            bigger = _scaled_region(region, factor)
            v, _, _, _, _, _ = _evaluate(sides, bigger, points_per_axis)
            values.append(v)
        growing = all(
            values[k + 1] > 1.1 * values[k] for k in range(2) if values[k] > 0
        ) and values[1] > 1.1 * values[0]
        saturation = {
            "radii_factor": [1, 10, 100],
            "minimal_M": values,
            "saturating": not growing,
        }
        if growing:
            saturation["note"] = "ratio still growing at 100x the radius; criterion likely violated at infinity"

    satisfied = None
    violations = None
    if M is not None:
        satisfied = sup <= M
        violations = _violations(lhs, rhs, X, M)

    return CriterionReport(
        criterion,
        region,
        sup,
        worst,
        {"points_per_axis": points_per_axis, "n_points": X.shape[0]},
        N0=N0,
        refinement_stable=stable,
        refined_minimal_M=refined,
        saturation=saturation,
        satisfied_for_M=satisfied,
        violations=violations,
        n_faults=n_faults,
        scope_note=model.scope_note(),
    )


# ---------------------------------------------------------------------------
# public checkers


def check_c2(model, region, M=None, points_per_axis=41, probe_saturation=True):
    """Quadratic growth criterion on a bounded sample region."""
    return _build_report(
        "C2",
        model,
        lambda X: _c2_sides(model, X),
        region,
        M,
        points_per_axis,
        probe_saturation=probe_saturation,
    )


def _require_outside_core(region, N0, eps):
    if region.kind == "annulus":
        if region.params["inner"] < N0 + eps:
            raise ValueError(
                f"region must stay outside radius N0+eps = {N0 + eps}; "
                f"annulus starts at {region.params['inner']}"
            )
        return
    # other region kinds are allowed if they provably avoid the core ball
    if region.kind == "ball":
        dist = np.linalg.norm(region.params["center"]) - region.params["radius"]
    else:
        lo, hi = region.bounding_box()
        nearest = np.clip(0.0, lo, hi)
        dist = np.linalg.norm(nearest)
    if dist < N0 + eps:
        raise ValueError(
            f"region may contain points with |x| <= N0+eps = {N0 + eps}; "
            "use an annulus with a matching inner radius"
        )


def check_c2bis(model, region, N0, M=None, eps=1e-3, points_per_axis=41):
    """Cubic-shell growth criterion outside the ball of radius N0.

    The left-hand prefactor is singular as |x| -> N0, so the sample region
    must keep the configurable margin eps away from that sphere.
    """
    if N0 < 0:
        raise ValueError("N0 must be nonnegative")
    _require_outside_core(region, N0, eps)
    return _build_report(
        "C2bis",
        model,
        lambda X: _c2bis_sides(model, X, N0),
        region,
        M,
        points_per_axis,
        N0=N0,
        probe_saturation=False,
    )


def check_drift_only(model, region, variant="C2", N0=0, M=None, points_per_axis=41):
    """Growth criterion with only the radial drift term <G(x), x> on the
    left; variant picks the right-hand side ("C2" or "C2bis")."""
    if variant not in ("C2", "C2bis"):
        raise ValueError("variant must be 'C2' or 'C2bis'")
    if variant == "C2bis":
        _require_outside_core(region, N0, 1e-3)

    def sides(X):
        return _drift_lhs(model, X), _rhs_only(model, X, variant, N0)

    return _build_report(
        f"{variant}-drift",
        model,
        sides,
        region,
        M,
        points_per_axis,
        N0=N0,
        probe_saturation=(variant == "C2"),
    )


def check_dual(model, beta_field, region, M=None, points_per_axis=41):
    """Quadratic criterion with drift 2*beta - G: the sufficient condition
    for the measure rho dx to be invariant (not just infinitesimally
    invariant). beta_field maps an (N, d) batch to (N, d) values of the
    logarithmic derivative."""

    def sides(X):
        A = A_many(model, X)
        G = G_many(model, X)
        beta = np.asarray(beta_field(X), dtype=float)
        q = np.sum(X * X, axis=1) + 1.0
        Ax = np.einsum("nij,nj->ni", A, X)
        lhs = (
            -np.einsum("ni,ni->n", Ax, X) / q
            + 0.5 * np.einsum("nii->n", A)
            + np.einsum("ni,ni->n", 2.0 * beta - G, X)
        )
        rhs = q * (np.log(q) + 1.0)
        return lhs, rhs

    return _build_report(
        "dual", model, sides, region, M, points_per_axis, probe_saturation=False
    )


def check_general_V(model, V, region, M=None, points_per_axis=41):
    """Test L V <= M V for a user-supplied V > 0; reports sup LV/V.

    Unlike the built-in criteria the ratio is not clamped at zero: a
    negative supremum is meaningful (V is a strict supermartingale
    witness)."""

    def sup_general(points_per_axis_):
        X = sample_region(region, points_per_axis_)
        Vv = ex.eval_many(V, X)
        if np.any(np.isfinite(Vv) & (Vv <= 0.0)):
            k = int(np.argmax(np.isfinite(Vv) & (Vv <= 0.0)))
            raise ValueError(f"V is not positive at sample point {X[k].tolist()}")
        LV = apply_generator_many(model, V, X)
        good = np.isfinite(LV) & np.isfinite(Vv)
        ratio = np.where(good, LV / np.where(good, Vv, 1.0), -np.inf)
        k = int(np.argmax(ratio))
        return float(ratio[k]), X[k], int((~good).sum()), X.shape[0]

    sup, worst, n_faults, n_points = sup_general(points_per_axis)
    sup2, _, _, _ = sup_general(2 * points_per_axis - 1)
    stable = abs(sup2 - sup) <= 0.01 * max(abs(sup), abs(sup2), 1e-12)
    return CriterionReport(
        "generalV",
        region,
        sup,
        worst,
        {"points_per_axis": points_per_axis, "n_points": n_points},
        refinement_stable=stable,
        refined_minimal_M=sup2,
        satisfied_for_M=(sup <= M) if M is not None else None,
        n_faults=n_faults,
        scope_note=model.scope_note(),
    )
