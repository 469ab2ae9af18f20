"""Monte Carlo checks of the identities simulated paths should satisfy.

Five checks: the compensated observable u(X_t) - u(X_0) - int Lu ds has
mean zero; its realized quadratic variation matches the accumulated
int <A grad u, grad u> ds; drift functionals int ||G||^r ds stay finite
along surviving paths; a claimed stationary density is preserved by the
flow; and coupled runs at h, h/2, h/4 contract, the numerical shadow of
pathwise uniqueness.

Each check returns an McSummary: a named statistic with standard error,
a 95% interval, and a pass/fail/inconclusive verdict from a fixed
tolerance rule. Verdicts use a 3 standard error band rather than formal
hypothesis machinery, with one standing caveat: a fixed step h biases
path statistics at O(h), so checks rerun at h/2 and report the trend in
their flags. Statistics over explosive models are always conditioned on
surviving paths and the flags say so.
"""

import csv
import json
import math

import numpy as np
from scipy.spatial.distance import cdist

from . import rng as crng
from .density import bump, sample_from
from .simulate import Observable, SimConfig, run_batch

_Z95 = 1.959963984540054


class McSummary:
    """One statistical verdict with its evidence."""

    def __init__(self, test, statistic, estimate, se, ci, n_samples,
                 verdict, params=None, flags=None):
        self.test = test
        self.statistic = statistic
        self.estimate = estimate
        self.se = se
        self.ci = ci
        self.n_samples = n_samples
        self.verdict = verdict
        self.params = dict(params or {})
        self.flags = dict(flags or {})
        self.path_stats = {}

    def to_dict(self):
        params = {"statistic": self.statistic, "n_samples": self.n_samples}
        params.update(self.params)
        return _jsonable({
            "test": self.test,
            "params": params,
            "estimate": self.estimate,
            "se": self.se,
            "ci": list(self.ci),
            "verdict": self.verdict,
            "flags": self.flags,
        })

    def __repr__(self):
        return (f"McSummary({self.test}: {self.statistic} = "
                f"{self.estimate:.4g} +- {self.se:.2g}, {self.verdict})")


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


def three_se_verdict(estimate, se, tol_mult=3.0):
    """The basic rule: pass when |estimate| is inside tol_mult * se.
    Degenerate evidence (non-finite inputs) is inconclusive."""
    if not (math.isfinite(estimate) and math.isfinite(se)):
        return "inconclusive"
    if se == 0.0:
        return "pass" if estimate == 0.0 else "fail"
    return "pass" if abs(estimate) <= tol_mult * se else "fail"


def _fault_gate(batch):
    if batch.flagged_faults:
        raise RuntimeError(
            f"{batch.faulted_fraction():.2%} of paths faulted; dropping that "
            "many silently would condition the statistic")


def _nuisance(batch):
    return {
        "faulted_fraction": batch.faulted_fraction(),
        "taming_activations": int(batch.taming_activations.sum()),
    }


def _x0_param(x0):
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 2:
        return f"per-path ({x0.shape[0]} rows)"
    return x0.tolist()


def _half_paths(n_paths):
    return min(n_paths, max(500, n_paths // 4))


def _x0_head(x0, n):
    x0 = np.asarray(x0, dtype=float)
    return x0[:n] if x0.ndim == 2 else x0


# ---------------------------------------------------------------------------
# martingale residual and quadratic variation


def martingale_residual(model, u, x0, t, n_paths, h=0.01, seed=0,
                        support_lower=None, support_upper=None,
                        second_order_factor=0.5, threads=1):
    """Mean of M = u(X_t) - u(X_0) - int Lu(X_s) ds over paths.

    For the true generator M has mean zero at every fixed t, so the
    verdict is the 3 SE rule on the sample mean. A rerun at h/2 on a
    quarter of the paths goes into the flags; if the residual is pure
    discretization bias it shrinks there.
    """
    ob = Observable("u", u, support_lower, support_upper, second_order_factor)
    cfg = SimConfig(x0=x0, h=h, T=t, n_paths=n_paths, seed=seed)
    batch = run_batch(model, cfg, observables=[ob], threads=threads)
    _fault_gate(batch)
    M = batch.observables["u"]["martingale"][batch.valid]
    if M.size < 2:
        est, se, verdict = float("nan"), float("nan"), "inconclusive"
    else:
        est = float(M.mean())
        se = float(M.std(ddof=1) / math.sqrt(M.size))
        verdict = three_se_verdict(est, se)

    n_half = _half_paths(n_paths)
    cfg_half = cfg.with_overrides(h=h / 2.0, n_paths=n_half,
                                  x0=_x0_head(cfg.x0, n_half))
    bh = run_batch(model, cfg_half, observables=[ob], threads=threads)
    Mh = bh.observables["u"]["martingale"][bh.valid]
    half_mean = float(Mh.mean()) if Mh.size else float("nan")

    flags = _nuisance(batch)
    flags.update({
        "h_half_mean": half_mean,
        "h_half_paths": int(Mh.size),
        "residual_shrank_at_h_half": bool(abs(half_mean) <= abs(est))
        if math.isfinite(half_mean) and math.isfinite(est) else False,
    })
    out = McSummary(
        "martingale_residual", "mean martingale residual",
        est, se, (est - _Z95 * se, est + _Z95 * se), int(M.size), verdict,
        params={"t": t, "h": h, "n_paths": n_paths, "seed": seed,
                "x0": _x0_param(x0),
                "second_order_factor": second_order_factor},
        flags=flags)
    out.path_stats = {"martingale": M}
    return out


def qv_residual(model, u, x0, t, n_paths, h=0.01, seed=0,
                support_lower=None, support_upper=None,
                second_order_factor=0.5, threads=1):
    """Realized quadratic variation of M against the accumulated
    int <A grad u, grad u> ds, path by path.

    The statistic is the relative error of the mean realized versus mean
    predicted value. The verdict places a 3 SE band around the mean
    difference against a tolerance of 5% of the predicted scale:
    confidently inside passes, confidently outside fails, a straddling
    band is inconclusive.
    """
    ob = Observable("u", u, support_lower, support_upper, second_order_factor)
    cfg = SimConfig(x0=x0, h=h, T=t, n_paths=n_paths, seed=seed)
    batch = run_batch(model, cfg, observables=[ob], threads=threads)
    _fault_gate(batch)
    ok = batch.valid
    qp = batch.observables["u"]["qv_predicted"][ok]
    qr = batch.observables["u"]["qv_realized"][ok]
    diff = qr - qp
    n = int(diff.size)
    if n < 2:
        out = McSummary("qv_residual", "qv relative error", float("nan"),
                        float("nan"), (float("nan"), float("nan")), n,
                        "inconclusive",
                        params={"t": t, "h": h, "n_paths": n_paths,
                                "seed": seed, "x0": _x0_param(x0)},
                        flags=_nuisance(batch))
        return out

    mean_pred = float(qp.mean())
    mean_diff = float(diff.mean())
    se_diff = float(diff.std(ddof=1) / math.sqrt(n))
    tol = 0.05 * mean_pred
    if mean_pred > 0.0:
        est = abs(mean_diff) / mean_pred
        se = se_diff / mean_pred
    else:
        est = 0.0 if mean_diff == 0.0 else float("inf")
        se = 0.0
    if abs(mean_diff) + 3.0 * se_diff <= tol:
        verdict = "pass"
    elif abs(mean_diff) - 3.0 * se_diff > tol:
        verdict = "fail"
    else:
        verdict = "inconclusive"

    n_half = _half_paths(n_paths)
    cfg_half = cfg.with_overrides(h=h / 2.0, n_paths=n_half,
                                  x0=_x0_head(cfg.x0, n_half))
    bh = run_batch(model, cfg_half, observables=[ob], threads=threads)
    okh = bh.valid
    qph = bh.observables["u"]["qv_predicted"][okh]
    qrh = bh.observables["u"]["qv_realized"][okh]
    mph = float(qph.mean()) if qph.size else float("nan")
    half_rel = (abs(float((qrh - qph).mean())) / mph
                if qph.size and mph > 0 else float("nan"))

    flags = _nuisance(batch)
    flags.update({
        "mean_qv_predicted": mean_pred,
        "mean_qv_realized": float(qr.mean()),
        "mean_difference": mean_diff,
        "se_difference": se_diff,
        "h_half_rel_err": half_rel,
    })
    out = McSummary(
        "qv_residual", "qv relative error",
        est, se, (max(0.0, est - _Z95 * se), est + _Z95 * se), n, verdict,
        params={"t": t, "h": h, "n_paths": n_paths, "seed": seed,
                "x0": _x0_param(x0),
                "second_order_factor": second_order_factor},
        flags=flags)
    out.path_stats = {"qv_predicted": qp, "qv_realized": qr}
    return out


# ---------------------------------------------------------------------------
# drift functionals


def _quantile_with_ci(F, level):
    """Empirical quantile with an order-statistic 95% interval."""
    Fs = np.sort(F)
    n = Fs.size
    est = float(np.quantile(Fs, level))
    half = _Z95 * math.sqrt(n * level * (1.0 - level))
    k = level * (n - 1)
    lo = float(Fs[max(0, int(math.floor(k - half)))])
    hi = float(Fs[min(n - 1, int(math.ceil(k + half)))])
    return est, min(lo, est), max(hi, est)


def drift_functional_check(model, x0, t, r_exp, n_paths, h=0.01, seed=0,
                           threads=1):
    """Distribution of int_0^t ||G(X_s)||^r ds over surviving paths.

    Pass when the 99.9% quantile is finite and stable under stepping at
    h/2 (the two quantiles within a factor 1.5 of each other, so no
    blow-up trend). Paths that reach the outer radius before t are
    excluded and the flags always carry the survivor fraction; a
    functional averaged across exploded and surviving paths would mean
    nothing. With fewer than 400 survivors at either step size the
    quantile is just the sample maximum, so the verdict is inconclusive.
    """
    if r_exp not in (1, 2):
        raise ValueError("r_exp must be 1 or 2")
    cfg = SimConfig(x0=x0, h=h, T=t, n_paths=n_paths, seed=seed)
    batch = run_batch(model, cfg, threads=threads)
    column = batch.int_g if r_exp == 1 else batch.int_g2
    alive = batch.valid & ~np.isfinite(batch.zeta_hat)
    F = column[alive]

    n_half = _half_paths(n_paths)
    cfg_half = cfg.with_overrides(h=h / 2.0, n_paths=n_half,
                                  x0=_x0_head(cfg.x0, n_half))
    bh = run_batch(model, cfg_half, threads=threads)
    col_h = bh.int_g if r_exp == 1 else bh.int_g2
    Fh = col_h[bh.valid & ~np.isfinite(bh.zeta_hat)]

    params = {"t": t, "h": h, "r_exp": r_exp, "n_paths": n_paths,
              "seed": seed, "x0": _x0_param(x0)}
    survivor_fraction = float(alive.mean())
    flags = _nuisance(batch)
    flags.update({
        "survivor_fraction": survivor_fraction,
        "survivorship_caveat": bool(survivor_fraction < 1.0),
    })
    if F.size < 400 or Fh.size < 400:
        # a 99.9% quantile over fewer survivors is just the sample maximum
        flags["reason"] = "fewer than 400 surviving paths at some level"
        return McSummary("drift_functional_check",
                         f"q99.9 of int ||G||^{r_exp} ds", float("nan"),
                         float("nan"), (float("nan"), float("nan")),
                         int(F.size), "inconclusive", params, flags)

    est, lo, hi = _quantile_with_ci(F, 0.999)
    se = (hi - lo) / (2.0 * _Z95)
    qh, _, _ = _quantile_with_ci(Fh, 0.999)
    if est > 0.0 and qh > 0.0:
        ratio = max(est / qh, qh / est)
    else:
        ratio = 1.0 if est == qh else float("inf")
    stable = math.isfinite(est) and math.isfinite(qh) and ratio <= 1.5
    verdict = "pass" if stable else "fail"
    flags.update({
        "q999_h_half": qh,
        "h_refinement_ratio": ratio,
        "h_half_survivors": int(Fh.size),
    })
    out = McSummary("drift_functional_check",
                    f"q99.9 of int ||G||^{r_exp} ds",
                    est, se, (lo, hi), int(F.size), verdict, params, flags)
    out.path_stats = {"functional": F}
    return out


# ---------------------------------------------------------------------------
# invariance


def _energy_stat(D, idx, idy):
    m = idx.size
    s_xx = float(D[np.ix_(idx, idx)].sum())
    s_yy = float(D[np.ix_(idy, idy)].sum())
    s_xy = 0.5 * (float(D.sum()) - s_xx - s_yy)
    return 2.0 * s_xy / (m * m) - s_xx / (m * m) - s_yy / (m * m)


def invariance_test(model, rho, t, n_paths, h=0.01, seed=0, x0=None,
                    threads=1, n_perm=199, subsample=2000):
    """Check that the law at time t matches a claimed stationary density.

    Starting points are drawn from rho by inverse CDF on its grid (or
    taken from x0 when given, for direction checks against a wrong
    initial law). The endpoint cloud is compared against a fresh draw
    from rho by energy distance with a label-permutation p-value; pass
    when p >= 0.01. The fraction of endpoints outside the density's box
    goes into the flags: on a truncated box invariance is approximate,
    so leakage is a caveat, not an automatic failure.
    """
    if rho is None:
        raise ValueError("invariance_test needs a density")
    from_rho = x0 is None
    if from_rho:
        x0 = sample_from(rho, n_paths, seed)
    cfg = SimConfig(x0=x0, h=h, T=t, n_paths=n_paths, seed=seed)
    batch = run_batch(model, cfg, threads=threads)
    _fault_gate(batch)
    Xt = batch.x_final[batch.valid]
    outside = np.any((Xt < rho.lower) | (Xt > rho.upper), axis=1)
    leak = float(outside.mean()) if Xt.shape[0] else float("nan")

    m = min(subsample, Xt.shape[0])
    params = {"t": t, "h": h, "n_paths": n_paths, "seed": seed,
              "n_perm": n_perm, "subsample": m,
              "x0": "drawn from rho" if from_rho else _x0_param(x0)}
    flags = _nuisance(batch)
    flags["leak_fraction"] = leak
    if m < 100:
        flags["reason"] = "fewer than 100 usable endpoints"
        return McSummary("invariance_test", "energy distance", float("nan"),
                         float("nan"), (float("nan"), float("nan")), m,
                         "inconclusive", params, flags)

    X = Xt[:m]
    Y = sample_from(rho, m, seed + 1)
    Z = np.vstack([X, Y]).astype(np.float32)
    D = cdist(Z, Z).astype(np.float32)
    left = np.arange(m)
    right = np.arange(m, 2 * m)
    observed = _energy_stat(D, left, right)

    exceed = 0
    perm_stats = np.empty(n_perm)
    lanes = np.arange(2 * m, dtype=np.uint32)
    for b in range(n_perm):
        u = crng.uniforms(seed + 2, lanes, b + 1, 1)[:, 0]
        order = np.argsort(u)
        perm_stats[b] = _energy_stat(D, order[:m], order[m:])
        if perm_stats[b] >= observed:
            exceed += 1
    p_value = (1.0 + exceed) / (n_perm + 1.0)
    verdict = "pass" if p_value >= 0.01 else "fail"
    se = float(perm_stats.std(ddof=1))
    flags.update({"p_value": p_value, "permutation_mean": float(perm_stats.mean())})
    return McSummary(
        "invariance_test", "energy distance",
        float(observed), se,
        (float(observed) - _Z95 * se, float(observed) + _Z95 * se),
        m, verdict, params, flags)


# ---------------------------------------------------------------------------
# strong self-consistency under step refinement


def strong_consistency(model, x0, h, T, n_paths, seed=0, threads=1):
    """Couples runs at h, h/2, h/4 over the same Brownian paths and
    measures the endpoint differences d1 = E||X^h - X^{h/2}|| and
    d2 = E||X^{h/2} - X^{h/4}||.

    A scheme converging to one pathwise solution contracts: pass when
    d1/d2 >= 1.25 (ratio 2^order, so this allows order well under 1/2).
    Paths that fault or reach the outer radius in any of the three runs
    are excluded.
    """
    finals = []
    usable = None
    for step, factor in ((h, 4), (h / 2.0, 2), (h / 4.0, 1)):
        cfg = SimConfig(x0=x0, h=step, T=T, n_paths=n_paths, seed=seed)
        b = run_batch(model, cfg, noise_factor=factor, threads=threads)
        good = b.valid & ~np.isfinite(b.zeta_hat)
        usable = good if usable is None else (usable & good)
        finals.append(b.x_final)
    d1v = np.linalg.norm(finals[0] - finals[1], axis=1)[usable]
    d2v = np.linalg.norm(finals[1] - finals[2], axis=1)[usable]
    n = int(usable.sum())
    params = {"h": h, "T": T, "n_paths": n_paths, "seed": seed,
              "x0": _x0_param(x0)}
    d1 = float(d1v.mean()) if n else float("nan")
    d2 = float(d2v.mean()) if n else float("nan")
    se = float(d1v.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    flags = {
        "d_half": d2,
        "excluded_fraction": float(1.0 - n / n_paths),
    }
    if n < 100 or not math.isfinite(d1) or not math.isfinite(d2) or d2 == 0.0:
        flags["reason"] = "too few usable paths or degenerate differences"
        return McSummary("strong_consistency", "mean coupled difference",
                         d1, se, (d1 - _Z95 * se, d1 + _Z95 * se), n,
                         "inconclusive", params, flags)
    ratio = d1 / d2
    flags.update({"ratio": ratio, "order_estimate": math.log2(ratio)})
    verdict = "pass" if ratio >= 1.25 else "fail"
    out = McSummary("strong_consistency", "mean coupled difference",
                    d1, se, (d1 - _Z95 * se, d1 + _Z95 * se), n, verdict,
                    params, flags)
    out.path_stats = {"diff_h_to_half": d1v, "diff_half_to_quarter": d2v}
    return out


# ---------------------------------------------------------------------------
# the bump battery


def default_battery(lower, upper):
    """Twenty compactly supported observables on the box: a 3x3 lattice
    of bumps at two widths plus two off-lattice ones, each carrying its
    own support box."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    half = 0.5 * (upper - lower)
    mid = 0.5 * (upper + lower)
    d = len(lower)
    offsets = np.linspace(-0.4, 0.4, 3)
    battery = []

    def add(name, center, width):
        center = np.asarray(center, dtype=float)
        width = np.broadcast_to(np.asarray(width, dtype=float), center.shape)
        battery.append(Observable(name, bump(center, width, d),
                                  center - width, center + width))

    for wf in (0.30, 0.18):
        w = wf * half
        for combo in np.ndindex(*([3] * d)):
            c = mid + np.array([offsets[i] for i in combo]) * half
            add("w{:.2f}@{}".format(wf, ",".join(f"{x:.2f}" for x in c)), c, w)
    add("wide-offcenter", mid + 0.15 * half, 0.55 * half)
    w2 = 0.28 * half.copy()
    w2[0] = 0.45 * half[0]
    add("anisotropic", mid - 0.22 * half, w2)
    return battery


def martingale_battery(model, x0, t, n_paths, lower, upper, h=0.01, seed=0,
                       threads=1):
    """The 3 SE martingale check over the default 20-bump battery, all
    accumulated in a single run. Expect an occasional false alarm plus
    discretization bias on the sharpest bumps; 18 or more passing is the
    healthy state."""
    battery = default_battery(lower, upper)
    cfg = SimConfig(x0=x0, h=h, T=t, n_paths=n_paths, seed=seed)
    batch = run_batch(model, cfg, observables=battery, threads=threads)
    _fault_gate(batch)
    summaries = []
    for ob in battery:
        M = batch.observables[ob.name]["martingale"][batch.valid]
        if M.size < 2:
            est, se, verdict = float("nan"), float("nan"), "inconclusive"
        else:
            est = float(M.mean())
            se = float(M.std(ddof=1) / math.sqrt(M.size))
            verdict = three_se_verdict(est, se)
        summaries.append(McSummary(
            "martingale_residual", "mean martingale residual",
            est, se, (est - _Z95 * se, est + _Z95 * se), int(M.size),
            verdict,
            params={"u": ob.name, "t": t, "h": h, "n_paths": n_paths,
                    "seed": seed, "x0": _x0_param(x0)},
            flags=_nuisance(batch)))
    return summaries


# ---------------------------------------------------------------------------
# reports


def save_report(summaries, path):
    """JSON verdicts, one object per summary (a single summary stays a
    single object)."""
    if isinstance(summaries, McSummary):
        payload = summaries.to_dict()
    else:
        payload = [s.to_dict() for s in summaries]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def save_path_stats(summary, path):
    """Per-path statistics behind a summary as CSV columns."""
    if not summary.path_stats:
        raise ValueError("this summary kept no per-path statistics")
    names = list(summary.path_stats)
    columns = [np.asarray(summary.path_stats[k]) for k in names]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path"] + names)
        for i in range(columns[0].size):
            writer.writerow([i] + [repr(float(c[i])) for c in columns])
