"""Euler-Maruyama sampling with an exit-radius ladder and explosion proxy.

Paths follow X_{k+1} = X_k + G(X_k) h + sigma(X_k) sqrt(h) xi_k with the
noise drawn statelessly from a counter-based generator keyed by (seed,
path index, step), so any path can be regenerated bit-for-bit in isolation
and thread scheduling cannot change results. sigma comes from the model
when it carries one, otherwise from the matrix square root of A per step.

Paths freeze once they reach the outermost ladder radius; that first time
is the explosion proxy zeta_hat, a detection radius crossed rather than a
certified blow-up, with step size and radius both surfaced in summaries.
First passages across every ladder radius and the running integrals of
|G| and |G|^2 are accumulated with the left-endpoint rule as the paths
evolve, along with optional compactly supported observables u for which
the engine tracks u(X_stop) - u(x0) - integral of Lu ds (a martingale for
the generator L when the dynamics are faithful) and the integral of
<A grad u, grad u> ds (its predicted quadratic variation).

A non-finite coefficient evaluation triggers one retry from a state
nudged by 1e-12 (drifts only defined almost everywhere are expected);
a second failure marks the path faulted and excludes it from statistics.

All output is empirical and scheme dependent: step size bias is probed,
never proved away.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import expr as ex
from . import rng as crng
from .model import A_many, G_many, sigma_many, sqrt_spd

DEFAULT_R_MAX = 1e6


def default_ladder(r_max=DEFAULT_R_MAX):
    """Radii 2, 4, 8, ... capped by r_max (which is appended)."""
    out = []
    r = 2.0
    while r < r_max:
        out.append(r)
        r *= 2.0
    out.append(float(r_max))
    return out


class SimConfig:
    """x0 is one starting point shared by all paths, or an (n_paths, d)
    array giving each path its own start."""

    def __init__(self, x0, h, T, n_paths, seed, ladder=None, taming=False,
                 r_max=DEFAULT_R_MAX, chunk=2048):
        self.x0 = np.asarray(x0, dtype=float)
        if self.x0.ndim == 0:
            self.x0 = self.x0[None]
        self.h = float(h)
        self.T = float(T)
        self.n_paths = int(n_paths)
        self.seed = int(seed)
        self.taming = bool(taming)
        self.chunk = int(chunk)
        if ladder is None:
            ladder = default_ladder(r_max)
        self.ladder = np.asarray(ladder, dtype=float)
        if self.h <= 0.0 or self.T <= 0.0 or self.h >= self.T:
            raise ValueError("need 0 < h < T")
        if self.n_paths < 1:
            raise ValueError("need at least one path")
        if self.x0.ndim == 2 and self.x0.shape[0] != self.n_paths:
            raise ValueError("per-path x0 must have one row per path")
        if self.x0.ndim > 2:
            raise ValueError("x0 must be a point or an (n_paths, d) array")
        if self.ladder.ndim != 1 or np.any(np.diff(self.ladder) <= 0):
            raise ValueError("ladder radii must be strictly increasing")

    def start_block(self, lo, hi):
        if self.x0.ndim == 2:
            return self.x0[lo:hi].copy()
        return np.tile(self.x0, (hi - lo, 1))

    @property
    def r_max(self):
        return float(self.ladder[-1])

    @property
    def n_steps(self):
        return int(round(self.T / self.h))

    def with_overrides(self, **kw):
        base = dict(x0=self.x0, h=self.h, T=self.T, n_paths=self.n_paths,
                    seed=self.seed, ladder=self.ladder.copy(),
                    taming=self.taming, chunk=self.chunk)
        base.update(kw)
        return SimConfig(**base)


class Observable:
    """A test function u accumulated along paths. When support bounds are
    given, u is treated as restricted to the box [lower, upper] (a genuine
    bump vanishes there anyway) and the engine skips evaluation outside.

    second_order_factor is the weight on the second-derivative part of the
    generator; 1/2 is the true generator, anything else deliberately
    corrupts it for regression guards.
    """

    def __init__(self, name, u, support_lower=None, support_upper=None,
                 second_order_factor=0.5):
        self.name = name
        self.u = u
        self.lower = None if support_lower is None else np.asarray(support_lower, float)
        self.upper = None if support_upper is None else np.asarray(support_upper, float)
        self.second_order_factor = float(second_order_factor)

    def inside(self, X):
        if self.lower is None:
            return np.ones(len(X), dtype=bool)
        return np.all((X > self.lower) & (X < self.upper), axis=1)


class PathBatch:
    """Aggregated per-path results, paths indexed in ascending order."""

    def __init__(self, cfg, path_indices, x_final, exit_times, zeta_hat,
                 int_g, int_g2, taming_activations, faulted, observables,
                 traces=None):
        self.cfg = cfg
        self.path_indices = path_indices
        self.x_final = x_final
        self.exit_times = exit_times
        self.zeta_hat = zeta_hat
        self.int_g = int_g
        self.int_g2 = int_g2
        self.taming_activations = taming_activations
        self.faulted = faulted
        self.observables = observables
        self.traces = traces

    @property
    def valid(self):
        return ~self.faulted

    def faulted_fraction(self):
        return float(self.faulted.mean())


class PathSample:
    """One path with its full trace."""

    def __init__(self, path_index, times, states, exit_times, zeta_hat,
                 functionals, flags):
        self.path_index = path_index
        self.times = times
        self.states = states
        self.exit_times = exit_times
        self.zeta_hat = zeta_hat
        self.functionals = functionals
        self.flags = flags


def _coupled_normals(seed, paths, step, count, factor):
    """Noise for step size factor*h built from the factor fine-grid
    increments it spans, so coarse and fine runs share a Brownian path."""
    acc = crng.normals(seed, paths, factor * step, count)
    for j in range(1, factor):
        acc = acc + crng.normals(seed, paths, factor * step + j, count)
    return acc / math.sqrt(factor)


def _sigma_at(model, X):
    if model.sigma is not None:
        return sigma_many(model, X)
    return sqrt_spd(A_many(model, X))


def _constant_coefficients(model):
    """(G0, S0) when drift and diffusion are state independent, else None.
    Constant coefficients let the stepper skip re-evaluation, which roughly
    halves the cost of pure-noise runs like exit-time studies."""
    exprs = list(model.G)
    if model.sigma is not None:
        for row in model.sigma:
            exprs.extend(row)
    else:
        for row in model.A:
            exprs.extend(row)
    if any(ex.variables_used(e) for e in exprs):
        return None
    x = np.zeros((1, model.dim))
    G0 = G_many(model, x)[0]
    S0 = _sigma_at(model, x)[0]
    if not (np.isfinite(G0).all() and np.isfinite(S0).all()):
        return None
    return G0, S0


def _coeffs_with_retry(model, X, faulted_global, rows):
    """Evaluate G and sigma at X, retrying once from a nudged state where
    anything came back non-finite. Returns (G, S, ok_mask)."""
    G = G_many(model, X)
    try:
        S = _sigma_at(model, X)
    except Exception:
        S = np.full((len(X), model.dim, model.noise_dim), np.nan)
    bad = ~(np.isfinite(G).all(axis=1) & np.isfinite(S).all(axis=(1, 2)))
    if bad.any():
        Xj = X[bad] + 1e-12
        Gj = G_many(model, Xj)
        try:
            Sj = _sigma_at(model, Xj)
        except Exception:
            Sj = np.full((bad.sum(), model.dim, model.noise_dim), np.nan)
        G[bad] = Gj
        S[bad] = Sj
        still = ~(np.isfinite(G).all(axis=1) & np.isfinite(S).all(axis=(1, 2)))
        if still.any():
            faulted_global[rows[still]] = True
        return G, S, ~still
    return G, S, np.ones(len(X), dtype=bool)


def _blocked_normals(seed, paths, step0, n_steps, count, factor):
    """Step-blocked version of _coupled_normals, shape (n_steps, n, count)."""
    if factor == 1:
        return crng.normals_steps(seed, paths, step0, n_steps, count)
    fine = crng.normals_steps(seed, paths, factor * step0, factor * n_steps, count)
    acc = fine[0::factor]
    for j in range(1, factor):
        acc = acc + fine[j::factor]
    return acc / math.sqrt(factor)


def _run_chunk_blocked(model, cfg, lo, hi, noise_factor, stop_radius,
                       G0, S0, block_steps=512):
    """Constant-coefficient chunk runner. States over a block of steps are
    one cumulative sum of precomputed increments, and ladder crossings are
    located with argmax over the block, so the Python-level loop advances
    hundreds of steps at a time. Float operations are grouped exactly as in
    the stepwise runner, keeping the two bit-identical."""
    d = model.dim
    m = model.noise_dim
    n = hi - lo
    paths = np.arange(lo, hi, dtype=np.uint32)
    h = cfg.h
    n_steps = cfg.n_steps
    sqrt_h = math.sqrt(h)
    ladder = cfg.ladder
    stop_r = cfg.r_max if stop_radius is None else float(stop_radius)

    X = cfg.start_block(lo, hi)
    exit_times = np.full((n, len(ladder)), np.inf)
    int_g = np.zeros(n)
    int_g2 = np.zeros(n)
    tame_count = np.zeros(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)

    r0 = np.linalg.norm(X, axis=1)
    exit_times[r0[:, None] >= ladder[None, :]] = 0.0
    active[r0 >= stop_r] = False

    g_norm = float(np.linalg.norm(G0))
    if cfg.taming:
        tame_step = int(h * g_norm > 0.1)
        drift = G0 / (1.0 + h * g_norm)
    else:
        tame_step = 0
        drift = G0

    k = 0
    while k < n_steps:
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        K = min(block_steps, n_steps - k)
        xi = _blocked_normals(cfg.seed, paths[rows], k, K, m, noise_factor)
        inc = drift * h + sqrt_h * np.einsum("ij,knj->kni", S0, xi)
        # the running sum starts from the current states so that grouping
        # matches the stepwise runner addition for addition
        states = np.cumsum(np.concatenate([X[rows][None, :, :], inc], axis=0),
                           axis=0)[1:]
        r = np.linalg.norm(states, axis=2)

        hit_stop = r >= stop_r
        stopped = hit_stop.any(axis=0)
        k_stop = np.where(stopped, hit_stop.argmax(axis=0), K - 1)
        step_idx = np.arange(K)[:, None]
        valid = step_idx <= k_stop[None, :]

        for j, radius in enumerate(ladder):
            need = np.isinf(exit_times[rows, j])
            cross = (r >= radius) & valid
            found = cross.any(axis=0) & need
            if found.any():
                first = cross[:, found].argmax(axis=0)
                exit_times[rows[found], j] = (k + 1 + first) * h

        steps_taken = np.where(stopped, k_stop + 1, K)
        int_g[rows] += g_norm * h * steps_taken
        int_g2[rows] += g_norm ** 2 * h * steps_taken
        tame_count[rows] += tame_step * steps_taken
        X[rows] = states[k_stop, np.arange(rows.size)]
        if stopped.any():
            active[rows[stopped]] = False
        k += K

    zeta = exit_times[:, -1].copy()
    return PathBatch(cfg, paths, X, exit_times, zeta, int_g, int_g2,
                     tame_count, np.zeros(n, dtype=bool), {}, traces=None)


def _run_chunk(model, cfg, lo, hi, observables, record_trace, noise_factor,
               stop_radius):
    consts = _constant_coefficients(model)
    if consts is not None and not observables and not record_trace:
        return _run_chunk_blocked(model, cfg, lo, hi, noise_factor,
                                  stop_radius, consts[0], consts[1])
    d = model.dim
    m = model.noise_dim
    n = hi - lo
    paths = np.arange(lo, hi, dtype=np.uint32)
    h = cfg.h
    n_steps = cfg.n_steps
    sqrt_h = math.sqrt(h)
    ladder = cfg.ladder
    stop_r = cfg.r_max if stop_radius is None else float(stop_radius)

    X = cfg.start_block(lo, hi)
    exit_times = np.full((n, len(ladder)), np.inf)
    zeta = np.full(n, np.inf)
    int_g = np.zeros(n)
    int_g2 = np.zeros(n)
    tame_count = np.zeros(n, dtype=np.int64)
    faulted = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)

    r0 = np.linalg.norm(X, axis=1)
    exit_times[r0[:, None] >= ladder[None, :]] = 0.0
    hit0 = r0 >= stop_r
    zeta[r0 >= cfg.r_max] = 0.0
    active[hit0] = False

    obs_state = []
    for ob in observables:
        # an observable with a support box is u restricted to that box
        in0 = ob.inside(X)
        u0 = np.zeros(n)
        if in0.any():
            u0[in0] = ex.eval_many(ob.u, X[in0])
        obs_state.append({"lu": np.zeros(n), "qv": np.zeros(n),
                          "qv_real": np.zeros(n), "u_prev": u0.copy(),
                          "u0": u0})

    const_coeffs = consts

    trace = None
    if record_trace:
        trace = np.empty((n_steps + 1, n, d))
        trace[0] = X

    for k in range(n_steps):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            if record_trace:
                trace[k + 1 :] = X
            break
        Xa = X[rows]
        if const_coeffs is not None:
            na = rows.size
            G = np.broadcast_to(const_coeffs[0], (na, d))
            S = np.broadcast_to(const_coeffs[1], (na, d, m))
        else:
            G, S, ok = _coeffs_with_retry(model, Xa, faulted, rows)
            if not ok.all():
                active[rows[~ok]] = False
                rows = rows[ok]
                if rows.size == 0:
                    if record_trace:
                        trace[k + 1] = X
                    continue
                Xa, G, S = Xa[ok], G[ok], S[ok]

        g_norm = np.linalg.norm(G, axis=1)
        int_g[rows] += g_norm * h
        int_g2[rows] += g_norm ** 2 * h
        if cfg.taming:
            tame_count[rows] += (h * g_norm > 0.1).astype(np.int64)
            drift = G / (1.0 + h * g_norm)[:, None]
        else:
            drift = G

        obs_steps = []
        if observables:
            A_all = A_many(model, Xa)
            for ob in observables:
                mask = ob.inside(Xa)
                lu_step = np.zeros(rows.size)
                gamma_step = np.zeros(rows.size)
                if mask.any():
                    pts = Xa[mask]
                    Apts = A_all[mask]
                    grad = ex.grad_many(ob.u, pts)
                    hess = ex.hess_many(ob.u, pts)
                    f = ob.second_order_factor
                    lu_step[mask] = (f * np.einsum("nij,nij->n", Apts, hess)
                                     + np.einsum("ni,ni->n", G[mask], grad))
                    gamma_step[mask] = 2.0 * f * np.einsum(
                        "nij,ni,nj->n", Apts, grad, grad)
                obs_steps.append((lu_step, gamma_step))

        xi = _coupled_normals(cfg.seed, paths[rows], k, m, noise_factor)
        X[rows] = Xa + (drift * h + sqrt_h * np.einsum("nij,nj->ni", S, xi))

        if observables:
            Xnew = X[rows]
            for ob, state, (lu_step, gamma_step) in zip(
                    observables, obs_state, obs_steps):
                mask_new = ob.inside(Xnew)
                u_new = np.zeros(rows.size)
                if mask_new.any():
                    u_new[mask_new] = ex.eval_many(ob.u, Xnew[mask_new])
                dm = u_new - state["u_prev"][rows] - lu_step * h
                state["qv_real"][rows] += dm * dm
                state["lu"][rows] += lu_step * h
                state["qv"][rows] += gamma_step * h
                state["u_prev"][rows] = u_new

        r = np.linalg.norm(X[rows], axis=1)
        t_next = (k + 1) * h
        newly = (r[:, None] >= ladder[None, :]) & np.isinf(exit_times[rows])
        if newly.any():
            et = exit_times[rows]
            et[newly] = t_next
            exit_times[rows] = et
        hit_rmax = r >= cfg.r_max
        if hit_rmax.any():
            zr = zeta[rows]
            zr[hit_rmax & np.isinf(zr)] = t_next
            zeta[rows] = zr
        stop = r >= stop_r
        if stop.any():
            active[rows[stop]] = False
        if record_trace:
            trace[k + 1] = X

    obs_out = {}
    for ob, state in zip(observables, obs_state):
        # u_prev carries the value at the last state each path actually
        # reached, so the residual telescopes exactly over the dm steps
        obs_out[ob.name] = {
            "martingale": state["u_prev"] - state["u0"] - state["lu"],
            "qv_predicted": state["qv"],
            "qv_realized": state["qv_real"],
            "u_final": state["u_prev"].copy(),
        }

    return PathBatch(cfg, paths, X, exit_times, zeta, int_g, int_g2,
                     tame_count, faulted, obs_out, traces=trace)


def _merge(cfg, chunks):
    def cat(get):
        return np.concatenate([get(c) for c in chunks])

    obs = {}
    for name in chunks[0].observables:
        obs[name] = {
            key: cat(lambda c, n=name, k=key: c.observables[n][k])
            for key in ("martingale", "qv_predicted", "qv_realized", "u_final")
        }
    traces = None
    if chunks[0].traces is not None:
        traces = np.concatenate([c.traces for c in chunks], axis=1)
    return PathBatch(
        cfg,
        cat(lambda c: c.path_indices),
        np.concatenate([c.x_final for c in chunks], axis=0),
        np.concatenate([c.exit_times for c in chunks], axis=0),
        cat(lambda c: c.zeta_hat),
        cat(lambda c: c.int_g),
        cat(lambda c: c.int_g2),
        cat(lambda c: c.taming_activations),
        cat(lambda c: c.faulted),
        obs,
        traces=traces,
    )


def run_batch(model, cfg, observables=None, record_trace=False,
              noise_factor=1, threads=1, stop_radius=None):
    """Simulate cfg.n_paths paths and aggregate the results in path-index
    order, which makes every statistic bit-reproducible for a fixed seed
    regardless of the thread count."""
    observables = list(observables or [])
    if record_trace and cfg.n_paths * (cfg.n_steps + 1) * model.dim > 5e7:
        raise ValueError("trace recording asked for too much memory")
    bounds = list(range(0, cfg.n_paths, cfg.chunk)) + [cfg.n_paths]
    spans = list(zip(bounds[:-1], bounds[1:]))

    def work(span):
        lo, hi = span
        return _run_chunk(model, cfg, lo, hi, observables, record_trace,
                          noise_factor, stop_radius)

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, spans))
    else:
        chunks = [work(s) for s in spans]
    batch = _merge(cfg, chunks) if len(chunks) > 1 else chunks[0]
    if batch.faulted_fraction() > 1e-3:
        batch.flagged_faults = True
    else:
        batch.flagged_faults = False
    return batch


def simulate_path(model, cfg, path_index):
    """One path with its full time/state trace."""
    x0 = cfg.x0[path_index] if cfg.x0.ndim == 2 else cfg.x0
    sub = cfg.with_overrides(n_paths=1, chunk=1, x0=x0)
    # the counter stream is keyed by the absolute path index, so shift the
    # chunk window instead of renumbering
    chunk = _run_chunk(model, sub, path_index, path_index + 1, [], True, 1, None)
    times = np.arange(cfg.n_steps + 1) * cfg.h
    states = chunk.traces[:, 0, :]
    exits = {float(r): float(t) for r, t in zip(cfg.ladder, chunk.exit_times[0])}
    return PathSample(
        path_index,
        times,
        states,
        exits,
        float(chunk.zeta_hat[0]),
        {
            "int_norm_g": float(chunk.int_g[0]),
            "int_norm_g_sq": float(chunk.int_g2[0]),
        },
        {
            "faulted": bool(chunk.faulted[0]),
            "taming_activations": int(chunk.taming_activations[0]),
        },
    )


def wilson_interval(k, n, z=1.959963984540054):
    """95% score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n)) / denom
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return lo, hi


def explosion_prob(model, cfg, t, threads=1):
    """Fraction of paths whose explosion proxy fires by time t, with a
    Wilson 95% interval and an h/2 spot check on a tenth of the paths."""
    if cfg.n_paths < 100:
        raise ValueError("explosion estimates need at least 100 paths")
    batch = run_batch(model, cfg, threads=threads)
    ok = batch.valid
    n = int(ok.sum())
    k = int((batch.zeta_hat[ok] <= t).sum())
    est = k / n if n else float("nan")
    lo, hi = wilson_interval(k, n)

    n_half = max(50, cfg.n_paths // 10)
    x0_half = cfg.x0[:n_half] if cfg.x0.ndim == 2 else cfg.x0
    cfg_half = cfg.with_overrides(h=cfg.h / 2.0, n_paths=n_half, x0=x0_half)
    bh = run_batch(model, cfg_half, threads=threads)
    okh = bh.valid
    est_half = float((bh.zeta_hat[okh] <= t).mean()) if okh.any() else float("nan")
    discrepancy = abs(est - est_half)
    return {
        "estimate": est,
        "ci_low": lo,
        "ci_high": hi,
        "n_paths": n,
        "t": t,
        "h": cfg.h,
        "r_max": cfg.r_max,
        "faulted_fraction": batch.faulted_fraction(),
        "h_half_estimate": est_half,
        "h_half_paths": n_half,
        "h_refinement_discrepancy": discrepancy,
        "h_refinement_flag": bool(discrepancy > 0.02 + (hi - lo)),
        "note": "zeta_hat detects crossing r_max; empirical, scheme dependent",
    }


def first_exit_stats(model, cfg, radius, threads=1):
    """Summary of the first time |X| reaches the given ladder radius."""
    ladder = cfg.ladder
    pos = np.flatnonzero(np.isclose(ladder, radius))
    if pos.size == 0:
        raise ValueError(f"radius {radius} is not in the ladder")
    batch = run_batch(model, cfg, threads=threads, stop_radius=radius)
    times = batch.exit_times[batch.valid, pos[0]]
    exited = np.isfinite(times)
    te = times[exited]
    out = {
        "radius": float(radius),
        "n_paths": int(batch.valid.sum()),
        "fraction_not_exited": float((~exited).mean()),
        "faulted_fraction": batch.faulted_fraction(),
    }
    if te.size:
        out.update({
            "mean": float(te.mean()),
            "stderr": float(te.std(ddof=1) / math.sqrt(te.size)) if te.size > 1 else float("nan"),
            "median": float(np.median(te)),
            "q25": float(np.quantile(te, 0.25)),
            "q75": float(np.quantile(te, 0.75)),
            "q90": float(np.quantile(te, 0.90)),
        })
    return out


def save_traces(batch, path):
    """CSV rows (path, k, t, x1..xd) for a batch run with traces on."""
    if batch.traces is None:
        raise ValueError("batch was run without trace recording")
    n_steps_p1, n, d = batch.traces.shape
    h = batch.cfg.h
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "k", "t"] + [f"x{i+1}" for i in range(d)])
        for j in range(n):
            pid = int(batch.path_indices[j])
            for k in range(n_steps_p1):
                writer.writerow([pid, k, repr(k * h)]
                              + [repr(float(v)) for v in batch.traces[k, j]])


def save_summary(summary, path):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
