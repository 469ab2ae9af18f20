"""Volume growth of the weighted measure m = rho dx and a sufficient
recurrence test built from it.

For increasing radii the module tabulates

    v1(r) = integral over B_r of <A(x) x, x> / |x|^2  rho dx,
    v2(r) = integral over B_r of |<B(x), x>|          rho dx,
    v = v1 + v2,   a(r) = integral from 1 to r of s / v(s) ds,

by polar quadrature (equal-weight angular midpoints, trapezoid in the
radius on a grid refined to step <= 0.25) with the v1 integrand set to 0
at the origin, where the defining ratio is 0/0. The criterion reads the
tail of the table: unbounded growth of a with log(v2 or 1)/a falling to
zero is the recurrence signal, a numerically convergent a refutes the
sufficient condition (which allows no transience conclusion), everything
else is inconclusive. Verdicts never claim limits, only tail behavior up
to the largest computed radius.

a scales like 1/lambda under rho -> lambda rho while log(v2 or 1)/a does
not, so the table carries its total mass and exposes mass-normalized
columns next to the raw ones.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from . import expr as ex
from .density import GridDensity, _multilinear
from .model import A_many

RADIAL_STEP = 0.25
TRUSTED_FRACTION = 0.8
SUFFICIENCY_NOTE = (
    "the criterion is sufficient only; a failed test carries no transience "
    "conclusion"
)


class VolumeGrowthTable:
    def __init__(self, radii, v1, v2, a, mass=1.0, trusted_max=None, notes=None):
        self.radii = np.asarray(radii, dtype=float)
        self.v1 = np.asarray(v1, dtype=float)
        self.v2 = np.asarray(v2, dtype=float)
        self.v = self.v1 + self.v2
        self.a = np.asarray(a, dtype=float)
        self.mass = float(mass)
        self.trusted_max = trusted_max
        self.notes = list(notes or [])
        self.criterion = None
        self.diagnostics = {}

    def normalized(self):
        """Columns for rho rescaled to unit total mass: v scales by
        1/mass, a by mass."""
        return {
            "v1": self.v1 / self.mass,
            "v2": self.v2 / self.mass,
            "v": self.v / self.mass,
            "a": self.a * self.mass,
        }

    def trusted(self):
        if self.trusted_max is None:
            return np.ones_like(self.radii, dtype=bool)
        return self.radii <= self.trusted_max

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r", "v1", "v2", "v", "a", "trusted"])
            for i in range(len(self.radii)):
                writer.writerow([
                    repr(float(self.radii[i])),
                    repr(float(self.v1[i])),
                    repr(float(self.v2[i])),
                    repr(float(self.v[i])),
                    repr(float(self.a[i])),
                    int(self.trusted()[i]),
                ])

    def verdict_dict(self):
        return {
            "criterion": self.criterion,
            "diagnostics": self.diagnostics,
            "mass": self.mass,
            "trusted_max_radius": self.trusted_max,
            "max_radius": float(self.radii[-1]),
            "a_final_raw": float(self.a[-1]),
            "a_final_normalized": float(self.a[-1] * self.mass),
            "notes": self.notes,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.verdict_dict(), fh, indent=2)
            fh.write("\n")


def _angular_nodes(dim, n_ang):
    if dim == 1:
        return np.array([[-1.0], [1.0]]), 2.0
    if dim == 2:
        th = (np.arange(n_ang) + 0.5) / n_ang * 2.0 * np.pi
        return np.stack([np.cos(th), np.sin(th)], axis=1), 2.0 * np.pi
    if dim == 3:
        n_u = max(4, n_ang // 2)
        u = (np.arange(n_u) + 0.5) / n_u * 2.0 - 1.0
        th = (np.arange(n_ang) + 0.5) / n_ang * 2.0 * np.pi
        U, TH = np.meshgrid(u, th, indexing="ij")
        s = np.sqrt(1.0 - U ** 2)
        dirs = np.stack(
            [(s * np.cos(TH)).ravel(), (s * np.sin(TH)).ravel(), U.ravel()], axis=1
        )
        return dirs, 4.0 * np.pi
    raise ValueError("volume growth is implemented for dim <= 3")


def _rho_evaluator(rho):
    if isinstance(rho, ex.Expr):
        return lambda X: ex.eval_many(rho, X), None
    if isinstance(rho, GridDensity):
        half = np.minimum(np.abs(rho.lower), np.abs(rho.upper))
        return rho.interp, float(half.min())
    raise TypeError("rho must be an expression or a solved GridDensity")


def _b_evaluator(decomp_or_B, rho):
    if decomp_or_B is None:
        return None
    if callable(decomp_or_B):
        return decomp_or_B
    if hasattr(decomp_or_B, "b"):
        if not isinstance(rho, GridDensity):
            raise TypeError(
                "a grid decomposition needs the matching GridDensity rho"
            )
        axes = rho.axes()
        values = decomp_or_B.b
        return lambda X: _multilinear(axes, values, X)
    if isinstance(decomp_or_B, (list, tuple)):
        comps = list(decomp_or_B)
        return lambda X: np.stack(
            [ex.eval_many(c, X) for c in comps], axis=1
        )
    raise TypeError("unsupported B specification")


def volume_growth(model, rho, decomp_or_B, radii, n_ang=64):
    """Tabulate v1, v2, v, a at the given increasing radii.

    decomp_or_B supplies B: a DriftDecomposition on the same grid as rho,
    a callable (N, d) -> (N, d), a list of component expressions, or None
    for B = 0.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or len(radii) < 2 or np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be an increasing list")
    if radii[0] <= 0:
        raise ValueError("radii must be positive")
    d = model.dim

    rho_at, support = _rho_evaluator(rho)
    if support is not None and radii[-1] > support + 1e-12:
        raise ValueError(
            f"radius {radii[-1]} exceeds the grid support (ball of {support:.3g})"
        )
    b_at = _b_evaluator(decomp_or_B, rho)

    r_max = float(radii[-1])
    n_fine = int(np.ceil(r_max / RADIAL_STEP)) + 1
    r_fine = np.unique(
        np.concatenate([np.linspace(0.0, r_max, n_fine), radii, [1.0]])
    )

    dirs, surface = _angular_nodes(d, n_ang)
    n_dir = dirs.shape[0]
    X = (r_fine[:, None, None] * dirs[None, :, :]).reshape(-1, d)

    rho_vals = np.asarray(rho_at(X), dtype=float)
    if np.any(~np.isfinite(rho_vals)) or np.any(rho_vals < 0):
        raise ValueError("rho must be finite and nonnegative on the largest ball")
    A = A_many(model, X)
    r_pt = np.linalg.norm(X, axis=1)
    quad = np.einsum("nij,ni,nj->n", A, X, X)
    with np.errstate(invalid="ignore", divide="ignore"):
        integrand1 = np.where(r_pt > 0.0, quad / r_pt ** 2, 0.0) * rho_vals
    if b_at is None:
        integrand2 = np.zeros_like(integrand1)
    else:
        B = np.asarray(b_at(X), dtype=float)
        integrand2 = np.abs(np.einsum("ni,ni->n", B, X)) * rho_vals

    def cumulative(integrand):
        shell = integrand.reshape(len(r_fine), n_dir).mean(axis=1)
        shell = surface * r_fine ** (d - 1) * shell
        steps = np.diff(r_fine)
        return np.concatenate(
            [[0.0], np.cumsum(0.5 * (shell[1:] + shell[:-1]) * steps)]
        )

    v1_fine = cumulative(integrand1)
    v2_fine = cumulative(integrand2)
    mass = cumulative(rho_vals)[-1]
    v_fine = v1_fine + v2_fine

    notes = []
    tail = r_fine >= 1.0
    with np.errstate(divide="ignore"):
        g = np.where(v_fine[tail] > 0.0, r_fine[tail] / v_fine[tail], np.inf)
    if np.any(~np.isfinite(g)):
        notes.append("v vanishes at some radius >= 1; a is infinite from there on")
    steps = np.diff(r_fine[tail])
    a_tail = np.concatenate([[0.0], np.cumsum(0.5 * (g[1:] + g[:-1]) * steps)])
    a_fine = np.concatenate([np.zeros(np.count_nonzero(~tail)), a_tail])

    trusted_max = None if support is None else TRUSTED_FRACTION * support
    table = VolumeGrowthTable(
        radii,
        np.interp(radii, r_fine, v1_fine),
        np.interp(radii, r_fine, v2_fine),
        np.interp(radii, r_fine, a_fine),
        mass=mass,
        trusted_max=trusted_max,
        notes=notes,
    )
    if model.scope_note():
        table.notes.append(model.scope_note())
    return table


def recurrence_criterion(table):
    """Classify the table tail as satisfied / not_satisfied / inconclusive.

    Growth of a is judged decade over decade; the ratio log(v2 or 1)/a
    must be small and falling for a satisfied verdict. A numerically
    convergent a refutes this sufficient condition outright.
    """
    radii, a, v2 = table.radii, table.a, table.v2
    N = radii[-1]
    if N < 100.0:
        raise ValueError("the criterion needs radii up to at least 100")

    def at(r):
        return float(np.interp(r, radii, a))

    a_N = float(a[-1])
    d_last = a_N - at(N / 10.0)
    d_prev = at(N / 10.0) - at(N / 100.0)
    tail = a_N - at(0.9 * N)

    def q(r):
        v2_r = float(np.interp(r, radii, v2))
        a_r = at(r)
        if a_r <= 0.0:
            return np.inf
        return np.log(max(v2_r, 1.0)) / a_r

    q_N = q(N)
    q_prev = q(N / 10.0)

    growth_ok = d_last >= 1e-3 * max(1.0, a_N) and (
        d_prev <= 0.0 or d_last >= 0.5 * d_prev
    )
    converged = tail < 1e-3

    diagnostics = {
        "a_final": a_N,
        "last_decade_increase": d_last,
        "previous_decade_increase": d_prev,
        "growth_rate_per_log_radius": d_last / np.log(10.0),
        "cauchy_tail": tail,
        "v2_ratio_final": q_N,
        "v2_ratio_previous_decade": q_prev,
    }

    if converged:
        verdict = "not_satisfied"
        table.notes.append(
            "a appears to converge (tail {:.2e}); ".format(tail) + SUFFICIENCY_NOTE
        )
    elif growth_ok and q_N <= 0.05 and q_N <= q_prev + 1e-12:
        verdict = "satisfied"
        table.notes.append(
            "a is consistent with divergence at rate ~{:.3g} per log radius "
            "(no limit claimed)".format(diagnostics["growth_rate_per_log_radius"])
        )
    elif growth_ok and q_N > 0.05 and q_N > 1.5 * q_prev:
        verdict = "not_satisfied"
        table.notes.append(
            "log(v2 or 1)/a is diverging (ratio {:.3g}); ".format(q_N)
            + SUFFICIENCY_NOTE
        )
    else:
        verdict = "inconclusive"
        table.notes.append("tail behavior is ambiguous at the computed radii")

    table.criterion = verdict
    table.diagnostics = diagnostics
    return verdict


def save_table(table, csv_path=None, json_path=None):
    if csv_path is not None:
        table.to_csv(csv_path)
    if json_path is not None:
        table.to_json(json_path)
