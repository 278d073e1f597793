"""Built-in covers, bundles and reference forms.

Used by the self-check suites, the test suite and the shipped scenarios.
All constructions are deterministic: witness and sample points sit on fixed
interior lattices of each intersection.
"""

from __future__ import annotations

import math

import numpy as np

from .cech import CoverSet, GoodCover, Simplex
from .exterior import Form, SmoothMap
from .expr import Add, Call, Div, Mul, Num, Pow, Sub, Sym
from .foliation import ProductBundle

_Y1, _Y2 = Sym("y1"), Sym("y2")


# ---------------------------------------------------------------------------
# interval covers
# ---------------------------------------------------------------------------


def interval_chart(a, b, anchor=None):
    """tan-rescaled diffeomorphism (a, b) -> R with chart(anchor) = 0."""
    if anchor is None:
        anchor = 0.5 * (a + b)
    k = math.pi / (b - a)
    raw_anchor = math.tan(k * (anchor - a) - 0.5 * math.pi)
    forward = Sub(
        Call("tan", Sub(Mul((Num(k), Sub(_Y1, Num(a)))), Num(0.5 * math.pi))),
        Num(raw_anchor),
    )
    inverse = Add(
        (
            Num(a),
            Mul(
                (
                    Num(1.0 / k),
                    Add((Call("atan", Add((_Y1, Num(raw_anchor)))), Num(0.5 * math.pi))),
                )
            ),
        )
    )
    inv = SmoothMap(1, 1, (inverse,))
    return SmoothMap(1, 1, (forward,), inverse=inv)


def interval_bump(a, b):
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return Call("bump", Div(Sub(_Y1, Num(mid)), Num(half)))


def _interval_points(lo, hi, fractions):
    return [{"y1": lo + (hi - lo) * f} for f in fractions]


_WITNESS_FRAC = 0.5
_SAMPLE_FRACS = (0.08, 0.2, 0.32, 0.44, 0.56, 0.68, 0.8, 0.92)


def _interval_simplex(indices, lo, hi, chart=None):
    witness = _interval_points(lo, hi, (_WITNESS_FRAC,))[0]
    samples = _interval_points(lo, hi, _SAMPLE_FRACS)
    return Simplex(indices, witness, samples, chart=chart)


def _interval_cover_from(intervals, anchors=None, edge_charts=False):
    sets = []
    for i, (a, b) in enumerate(intervals, start=1):
        anchor = None if anchors is None else anchors[i - 1]
        sets.append(
            CoverSet(
                index=i,
                chart=interval_chart(a, b, anchor),
                bump=interval_bump(a, b),
                box=((a, b),),
            )
        )
    nerve = []
    n = len(intervals)
    for size in range(1, n + 1):
        import itertools

        for combo in itertools.combinations(range(1, n + 1), size):
            lo = max(intervals[i - 1][0] for i in combo)
            hi = min(intervals[i - 1][1] for i in combo)
            if lo >= hi:
                continue
            chart = None
            if edge_charts and size >= 2:
                chart = interval_chart(lo, hi)
            nerve.append(_interval_simplex(combo, lo, hi, chart=chart))
    return GoodCover(1, tuple(sets), tuple(nerve))


def interval_cover():
    """Two tan-chart intervals covering (-2, 2), overlap (-0.5, 0.5).

    Set 1 is anchored at 0 (its primitive vanishes there), set 2 at 1.
    """
    return _interval_cover_from([(-2.0, 0.5), (-0.5, 2.0)], anchors=[0.0, 1.0],
                                edge_charts=True)


def interval3_cover():
    """Chain of three intervals on (-3, 3); U1 and U3 do not meet."""
    return _interval_cover_from(
        [(-3.0, -0.5), (-1.5, 1.5), (0.5, 3.0)], anchors=[-1.75, 0.0, 1.75]
    )


def interval4_cover():
    """Four mutually overlapping intervals on (-4, 4); full nerve."""
    return _interval_cover_from(
        [(-4.0, 1.0), (-3.0, 2.0), (-2.0, 3.0), (-1.0, 4.0)]
    )


# ---------------------------------------------------------------------------
# annulus sector covers
# ---------------------------------------------------------------------------

ANNULUS_R0, ANNULUS_R1 = 0.5, 2.5
SECTOR_HALF_WIDTH = math.radians(75.0)
# centers offset by 10 degrees so sector boundaries avoid the axes and
# diagonals that rectangular sample grids hit exactly
SECTOR_CENTERS = (math.radians(10.0), math.radians(130.0), math.radians(250.0))

# (center, half-width) of the angular intersection for each sector subset
_SECTOR_TABLE = {
    (1,): (SECTOR_CENTERS[0], SECTOR_HALF_WIDTH),
    (2,): (SECTOR_CENTERS[1], SECTOR_HALF_WIDTH),
    (3,): (SECTOR_CENTERS[2], SECTOR_HALF_WIDTH),
    (1, 2): (math.radians(70.0), math.radians(15.0)),
    (2, 3): (math.radians(190.0), math.radians(15.0)),
    (1, 3): (math.radians(310.0), math.radians(15.0)),
}


def _radius_expr(sy1, sy2):
    return Call("sqrt", Add((Pow(sy1, 2), Pow(sy2, 2))))


def sector_chart(center, half_width, r0=ANNULUS_R0, r1=ANNULUS_R1, syms=(_Y1, _Y2)):
    """Diffeomorphism of an open annulus sector onto R^2."""
    sy1, sy2 = syms
    rc, rh = 0.5 * (r0 + r1), 0.5 * (r1 - r0)
    c, s = math.cos(center), math.sin(center)
    r = _radius_expr(sy1, sy2)
    w1 = Add((Mul((Num(c), sy1)), Mul((Num(s), sy2))))
    w2 = Add((Mul((Num(-s), sy1)), Mul((Num(c), sy2))))
    theta = Call("atan", Div(w2, w1))
    u1 = Call("tan", Mul((Num(0.5 * math.pi / rh), Sub(r, Num(rc)))))
    u2 = Call("tan", Mul((Num(0.5 * math.pi / half_width), theta)))
    # inverse: source symbols play the roles of (u1, u2)
    rr = Add((Num(rc), Mul((Num(rh * 2.0 / math.pi), Call("atan", sy1)))))
    th = Mul((Num(half_width * 2.0 / math.pi), Call("atan", sy2)))
    back1 = Sub(
        Mul((Num(c), Mul((rr, Call("cos", th))))),
        Mul((Num(s), Mul((rr, Call("sin", th))))),
    )
    back2 = Add(
        (
            Mul((Num(s), Mul((rr, Call("cos", th))))),
            Mul((Num(c), Mul((rr, Call("sin", th))))),
        )
    )
    inv = SmoothMap(2, 2, (back1, back2))
    return SmoothMap(2, 2, (u1, u2), inverse=inv)


def sector_bump(center, half_width, r0=ANNULUS_R0, r1=ANNULUS_R1, syms=(_Y1, _Y2)):
    sy1, sy2 = syms
    rc, rh = 0.5 * (r0 + r1), 0.5 * (r1 - r0)
    c, s = math.cos(center), math.sin(center)
    c0 = math.cos(half_width)
    r = _radius_expr(sy1, sy2)
    w1 = Add((Mul((Num(c), sy1)), Mul((Num(s), sy2))))
    angular_arg = Sub(
        Num(1.0), Div(Sub(Div(w1, r), Num(c0)), Num(1.0 - c0))
    )
    return Mul(
        (
            Call("bump", angular_arg),
            Call("bump", Div(Sub(r, Num(rc)), Num(rh))),
        )
    )


def sector_predicates(center, half_width, r0=ANNULUS_R0, r1=ANNULUS_R1, syms=(_Y1, _Y2)):
    sy1, sy2 = syms
    c, s = math.cos(center), math.sin(center)
    c0 = math.cos(half_width)
    r = _radius_expr(sy1, sy2)
    w1 = Add((Mul((Num(c), sy1)), Mul((Num(s), sy2))))
    angular = Sub(Div(w1, r), Num(c0))
    radial = Mul((Sub(r, Num(r0)), Sub(Num(r1), r)))
    return (angular, radial)


def sector_point(center, half_width, frac_theta, frac_r,
                 r0=ANNULUS_R0, r1=ANNULUS_R1):
    rc, rh = 0.5 * (r0 + r1), 0.5 * (r1 - r0)
    theta = center + 0.8 * frac_theta * half_width
    r = rc + 0.8 * frac_r * rh
    return {"y1": r * math.cos(theta), "y2": r * math.sin(theta)}


_SECTOR_SAMPLE_FRACS = (
    (0.6, 0.6), (0.6, -0.6), (-0.6, 0.6), (-0.6, -0.6),
    (0.6, 0.0), (-0.6, 0.0), (0.0, 0.6), (0.0, -0.6),
)


def _sector_simplex(indices, chart=None):
    center, hw = _SECTOR_TABLE[tuple(indices)]
    witness = sector_point(center, hw, 0.0, 0.0)
    samples = [sector_point(center, hw, ft, fr) for ft, fr in _SECTOR_SAMPLE_FRACS]
    return Simplex(indices, witness, samples, chart=chart)


def annulus_cover(edge_charts=True):
    """Three 150-degree sectors of the annulus 0.5 < r < 2.5.

    Pairwise intersections are 30-degree sectors; the triple intersection is
    empty, so the nerve is a 3-cycle.
    """
    sets = []
    for i in (1, 2, 3):
        center, hw = _SECTOR_TABLE[(i,)]
        sets.append(
            CoverSet(
                index=i,
                chart=sector_chart(center, hw),
                bump=sector_bump(center, hw),
                predicates=sector_predicates(center, hw),
            )
        )
    nerve = [_sector_simplex((i,)) for i in (1, 2, 3)]
    for pair in ((1, 2), (1, 3), (2, 3)):
        chart = None
        if edge_charts:
            center, hw = _SECTOR_TABLE[pair]
            chart = sector_chart(center, hw)
        nerve.append(_sector_simplex(pair, chart=chart))
    return GoodCover(2, tuple(sets), tuple(nerve))


def angular_form(domain="M"):
    """The closed, non-exact angle form on the punctured plane."""
    denom = Add((Pow(_Y1, 2), Pow(_Y2, 2)))
    return Form(
        2,
        1,
        {(1,): Div(Mul((Num(-1.0), _Y2)), denom), (2,): Div(_Y1, denom)},
        domain,
    )


# ---------------------------------------------------------------------------
# product of two annuli (nerve homotopy-equivalent to a torus)
# ---------------------------------------------------------------------------


def _shift_expr(e):
    """Rename (y1, y2) to (y3, y4)."""
    from .expr import subst

    return subst(e, {"y1": Sym("y3"), "y2": Sym("y4")})


def _product_chart(part1, part2):
    """4D product of two sector charts (second factor on y3, y4)."""
    f1 = part1.components
    f2 = tuple(_shift_expr(c) for c in part2.components)
    i1 = part1.inverse.components
    i2 = tuple(_shift_expr(c) for c in part2.inverse.components)
    inv = SmoothMap(4, 4, (i1[0], i1[1], i2[0], i2[1]))
    return SmoothMap(4, 4, (f1[0], f1[1], f2[0], f2[1]), inverse=inv)


def _pair_key(ids):
    ids = tuple(sorted(set(ids)))
    return ids


def torus_cover():
    """Product of two 3-sector annulus covers: 9 sets on a region of R^4.

    Every pair of sets meets, triples meet when each factor uses at most two
    sector ids, so the nerve computes the torus topology: its H^2 does not
    vanish, which is what the non-exactness detector needs.
    """
    psets = []
    for i in (1, 2, 3):
        for j in (1, 2, 3):
            index = 3 * (i - 1) + j
            c1, h1 = _SECTOR_TABLE[(i,)]
            c2, h2 = _SECTOR_TABLE[(j,)]
            chart = _product_chart(sector_chart(c1, h1), sector_chart(c2, h2))
            bump = Mul(
                (
                    sector_bump(c1, h1),
                    _shift_expr(sector_bump(c2, h2)),
                )
            )
            preds = sector_predicates(c1, h1) + tuple(
                _shift_expr(p) for p in sector_predicates(c2, h2)
            )
            psets.append(CoverSet(index=index, chart=chart, bump=bump,
                                  predicates=preds))

    def factor_ids(index):
        return (index - 1) // 3 + 1, (index - 1) % 3 + 1

    def intersection_params(indices):
        ids1 = _pair_key([factor_ids(k)[0] for k in indices])
        ids2 = _pair_key([factor_ids(k)[1] for k in indices])
        if ids1 not in _SECTOR_TABLE or ids2 not in _SECTOR_TABLE:
            return None
        return _SECTOR_TABLE[ids1], _SECTOR_TABLE[ids2]

    import itertools

    nerve = []
    all_ids = range(1, 10)
    for size in (1, 2, 3, 4):
        for combo in itertools.combinations(all_ids, size):
            params = intersection_params(combo)
            if params is None:
                continue
            (c1, h1), (c2, h2) = params
            witness1 = sector_point(c1, h1, 0.0, 0.0)
            witness2 = sector_point(c2, h2, 0.0, 0.0)
            witness = {
                "y1": witness1["y1"], "y2": witness1["y2"],
                "y3": witness2["y1"], "y4": witness2["y2"],
            }
            samples = []
            for ft, fr in _SECTOR_SAMPLE_FRACS[:4]:
                p1 = sector_point(c1, h1, ft, fr)
                samples.append({
                    "y1": p1["y1"], "y2": p1["y2"],
                    "y3": witness2["y1"], "y4": witness2["y2"],
                })
            for ft, fr in _SECTOR_SAMPLE_FRACS[:4]:
                p2 = sector_point(c2, h2, ft, fr)
                samples.append({
                    "y1": witness1["y1"], "y2": witness1["y2"],
                    "y3": p2["y1"], "y4": p2["y2"],
                })
            chart = None
            if size <= 2:
                chart = _product_chart(sector_chart(c1, h1), sector_chart(c2, h2))
            nerve.append(Simplex(combo, witness, samples, chart=chart))
    return GoodCover(4, tuple(psets), tuple(nerve))


def torus_angular_product_form(domain="M"):
    """Wedge of the two factor angle forms on the product of annuli."""
    d1 = Add((Pow(_Y1, 2), Pow(_Y2, 2)))
    d2 = Add((Pow(Sym("y3"), 2), Pow(Sym("y4"), 2)))
    a1 = {(1,): Div(Mul((Num(-1.0), _Y2)), d1), (2,): Div(_Y1, d1)}
    a2 = {(3,): Div(Mul((Num(-1.0), Sym("y4"))), d2), (4,): Div(Sym("y3"), d2)}
    out = {}
    for (i,), ci in a1.items():
        for (j,), cj in a2.items():
            out[(i, j)] = Mul((ci, cj))
    return Form(4, 2, out, domain)


# ---------------------------------------------------------------------------
# product bundle over an interval base
# ---------------------------------------------------------------------------


def interval_bundle(fiber_dim=2):
    """Trivial bundle over (-2, 2) with fiber R^fiber_dim."""
    return ProductBundle(base_cover=interval_cover(), fiber_dim=fiber_dim)


# ---------------------------------------------------------------------------
# random polynomial data for property suites
# ---------------------------------------------------------------------------


def random_polynomial(rng, symbols, degree=3, terms=3):
    # dyadic constants keep products/sums exact, so symbolic cancellations
    # (d^2 = 0, delta^2 = 0) come out as literal zeros
    total = None
    for _ in range(terms):
        factors = [Num(int(rng.integers(-2048, 2049)) / 1024.0)]
        budget = int(rng.integers(0, degree + 1))
        for name in symbols:
            if budget <= 0:
                break
            k = int(rng.integers(0, budget + 1))
            if k:
                factors.append(Pow(Sym(name), k) if k > 1 else Sym(name))
                budget -= k
        term = factors[0] if len(factors) == 1 else Mul(tuple(factors))
        total = term if total is None else Add((total, term))
    return total


def random_polynomial_form(rng, dim, degree, coeff_degree=3, domain="M"):
    import itertools

    coeffs = {}
    for idx in itertools.combinations(range(1, dim + 1), degree):
        coeffs[idx] = random_polynomial(
            rng, [f"y{i}" for i in range(1, dim + 1)], degree=coeff_degree
        )
    return Form(dim, degree, coeffs, domain)


def random_cochain(rng, cover, cech_degree, form_degree, coeff_degree=2):
    comps = {}
    for simplex in cover.simplices_of_dim(cech_degree):
        comps[simplex.indices] = random_polynomial_form(
            rng, cover.dim, form_degree, coeff_degree, domain=simplex.indices
        )
    from .cech import Cochain

    return Cochain(cover.dim, cech_degree, form_degree, comps)
