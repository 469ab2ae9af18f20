"""Shared test utilities: random smooth expressions and finite differences."""

import numpy as np

from sdelab.expr import Bin, Call, Expr, Neg, Num, Var, eval_at


def random_smooth_ast(rng, dim, depth):
    """Random AST built only from pieces that are smooth everywhere and
    numerically tame on [-1.5, 1.5]^dim: polynomials, sin/cos, damped exp,
    ln/sqrt/division guarded by 1 + (.)^2."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.4:
            return Num(round(float(rng.uniform(0.2, 2.5)), 3))
        return Var(int(rng.integers(1, dim + 1)))
    sub = lambda: random_smooth_ast(rng, dim, depth - 1)
    guarded = lambda: Bin("+", Num(1.0), Bin("^", sub(), Num(2.0)))
    choice = rng.integers(0, 10)
    if choice == 0:
        return Bin("+", sub(), sub())
    if choice == 1:
        return Bin("-", sub(), sub())
    if choice == 2:
        return Bin("*", sub(), sub())
    if choice == 3:
        return Neg(sub())
    if choice == 4:
        return Call("exp", [Bin("*", Num(0.2), sub())])
    if choice == 5:
        return Call("sin", [sub()])
    if choice == 6:
        return Call("cos", [sub()])
    if choice == 7:
        return Call("ln", [guarded()])
    if choice == 8:
        return Call("sqrt", [guarded()])
    return Bin("/", sub(), guarded())


def random_smooth_pairs(seed, count, dim=2, depth=3, value_cap=10.0, deriv_cap=100.0):
    """Yield (Expr, point) pairs filtered so that finite differences are a
    trustworthy oracle: finite, modest value and first derivatives."""
    from sdelab.expr import derive

    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < count:
        e = Expr(random_smooth_ast(rng, dim, depth), dim)
        x = rng.uniform(-1.5, 1.5, size=dim)
        try:
            v = eval_at(e, x)
            ds = [derive(e, x, j) for j in range(1, dim + 1)]
        except ArithmeticError:
            continue
        if not np.isfinite(v) or abs(v) > value_cap:
            continue
        if not all(np.isfinite(d) and abs(d) <= deriv_cap for d in ds):
            continue
        pairs.append((e, x))
    return pairs


def fd_derive(e, x, j, h=1e-5):
    xp = np.array(x, dtype=float)
    xm = xp.copy()
    xp[j - 1] += h
    xm[j - 1] -= h
    return (eval_at(e, xp) - eval_at(e, xm)) / (2.0 * h)


def fd_derive2(e, x, i, j, h=1e-5):
    x = np.array(x, dtype=float)
    if i == j:
        xp, xm = x.copy(), x.copy()
        xp[i - 1] += h
        xm[i - 1] -= h
        return (eval_at(e, xp) - 2.0 * eval_at(e, x) + eval_at(e, xm)) / (h * h)
    xpp, xpm, xmp, xmm = x.copy(), x.copy(), x.copy(), x.copy()
    xpp[[i - 1, j - 1]] += h
    xmm[[i - 1, j - 1]] -= h
    xpm[i - 1] += h
    xpm[j - 1] -= h
    xmp[i - 1] -= h
    xmp[j - 1] += h
    return (eval_at(e, xpp) - eval_at(e, xpm) - eval_at(e, xmp) + eval_at(e, xmm)) / (
        4.0 * h * h
    )
