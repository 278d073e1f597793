"""Good covers, nerve bookkeeping, Čech coboundary, partitions of unity,
the Mayer-Vietoris contracting homotopy, and gluing of 0-cochains.

The nerve is declared by the user (index tuples with witness and sample
points) rather than computed: intersection emptiness is a geometry problem
outside scope, so every declared fact is validated by sampling instead.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import (
    CoverValidationError,
    DimensionError,
    EvaluationError,
    GluingError,
    NerveError,
)
from .exterior import Form, SmoothMap, yname, zero_form


@dataclass(frozen=True)
class CoverSet:
    """One open set of a cover: membership, chart to R^d, and a bump.

    Membership is given by strict-positivity predicates and/or an open
    coordinate box. The bump must be positive exactly on the set.
    """

    index: int
    chart: SmoothMap
    bump: object
    predicates: tuple = ()
    box: tuple = None

    def contains(self, point):
        if self.box is not None:
            for i, (lo, hi) in enumerate(self.box, start=1):
                v = np.asarray(point[yname(i)])
                if not np.all((v > lo) & (v < hi)):
                    return False
        for pred in self.predicates:
            if not np.all(np.asarray(ex.evaluate(pred, point)) > 0.0):
                return False
        if self.box is None and not self.predicates:
            raise CoverValidationError(
                f"set {self.index} has neither box nor predicates"
            )
        return True

    def membership_mask(self, point):
        """Vectorized membership over arrays in ``point``."""
        mask = None
        if self.box is not None:
            for i, (lo, hi) in enumerate(self.box, start=1):
                v = np.asarray(point[yname(i)])
                m = (v > lo) & (v < hi)
                mask = m if mask is None else (mask & m)
        for pred in self.predicates:
            m = np.asarray(ex.evaluate(pred, point)) > 0.0
            mask = m if mask is None else (mask & m)
        return mask


@dataclass(frozen=True)
class Simplex:
    """Declared nerve simplex: sorted indices, witness, extra samples,
    optional chart identifying the intersection with R^d."""

    indices: tuple
    witness: dict
    samples: tuple = ()
    chart: SmoothMap = None

    def __post_init__(self):
        idx = tuple(self.indices)
        if any(a >= b for a, b in zip(idx, idx[1:])):
            raise NerveError(f"simplex {idx} is not sorted strictly")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "samples", tuple(dict(s) for s in self.samples))
        object.__setattr__(self, "witness", dict(self.witness))

    @property
    def dim(self):
        return len(self.indices) - 1

    def points(self):
        return [self.witness, *self.samples]


@dataclass(frozen=True)
class GoodCover:
    """Finite ordered cover of an open region of R^dim with declared nerve."""

    dim: int
    sets: tuple
    nerve: tuple

    def __post_init__(self):
        sets = tuple(self.sets)
        object.__setattr__(self, "sets", sets)
        object.__setattr__(self, "nerve", tuple(self.nerve))
        by_index = {s.index: s for s in sets}
        if len(by_index) != len(sets):
            raise CoverValidationError("duplicate set indices")
        object.__setattr__(self, "_by_index", by_index)
        object.__setattr__(
            self, "_simplices", {s.indices: s for s in self.nerve}
        )

    @property
    def indices(self):
        return tuple(s.index for s in self.sets)

    def set_of(self, index):
        try:
            return self._by_index[index]
        except KeyError:
            raise NerveError(f"no cover set with index {index}") from None

    def simplex(self, indices):
        try:
            return self._simplices[tuple(indices)]
        except KeyError:
            raise NerveError(f"simplex {tuple(indices)} not declared") from None

    def has_simplex(self, indices):
        return tuple(indices) in self._simplices

    def simplices_of_dim(self, p):
        return [s for s in self.nerve if s.dim == p]

    def edges(self):
        return self.simplices_of_dim(1)

    def sample_points(self):
        """All declared witness/sample points, deduplicated, fixed order."""
        seen = set()
        out = []
        for s in self.nerve:
            for p in s.points():
                key = tuple(sorted(p.items()))
                if key not in seen:
                    seen.add(key)
                    out.append(p)
        return out

    def adjacency(self):
        adj = {i: [] for i in self.indices}
        for s in self.edges():
            a, b = s.indices
            adj[a].append(b)
            adj[b].append(a)
        return {k: sorted(v) for k, v in adj.items()}

    def connected_components(self):
        adj = self.adjacency()
        remaining = set(self.indices)
        comps = []
        while remaining:
            root = min(remaining)
            comp = {root}
            queue = [root]
            while queue:
                v = queue.pop(0)
                for w in adj[v]:
                    if w in remaining and w not in comp:
                        comp.add(w)
                        queue.append(w)
            remaining -= comp
            comps.append(sorted(comp))
        return comps


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class CoverReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def add(self, kind, location, detail):
        self.violations.append({"kind": kind, "location": location, "detail": detail})

    def as_dict(self):
        return {"ok": self.ok, "violations": list(self.violations)}


def validate_cover(cover, bump_tol=1e-12, chart_tol=1e-9, min_samples=8):
    """Check all declared cover facts by sampling; never raises."""
    report = CoverReport()
    for index in cover.indices:
        if not cover.has_simplex((index,)):
            report.add("vertex-missing", f"U{index}", "no 0-simplex declared")

    for simplex in cover.nerve:
        loc = str(simplex.indices)
        if len(simplex.samples) < min_samples:
            report.add("sample-count", loc,
                       f"{len(simplex.samples)} extra samples < {min_samples}")
        if simplex.dim > 0:
            for face in itertools.combinations(simplex.indices, len(simplex.indices) - 1):
                if not cover.has_simplex(face):
                    report.add("nerve-closure", loc, f"face {face} missing")
        for pt in simplex.points():
            for index in simplex.indices:
                cset = cover.set_of(index)
                try:
                    inside = cset.contains(pt)
                except EvaluationError as err:
                    report.add("membership", loc, f"U{index}: {err}")
                    continue
                if not inside:
                    report.add("membership", loc, f"point {pt} outside U{index}")

    points = cover.sample_points()
    for cset in cover.sets:
        for pt in points:
            psi = ex.evaluate(cset.bump, pt)
            if psi < 0.0:
                report.add("bump-negative", f"U{cset.index}", f"psi={psi} at {pt}")
            if not cset.contains(pt) and abs(psi) > bump_tol:
                report.add("bump-support", f"U{cset.index}",
                           f"psi={psi} outside the set at {pt}")
    for pt in points:
        total = sum(ex.evaluate(cset.bump, pt) for cset in cover.sets)
        if total <= 0.0:
            report.add("partition-cover", str(pt), f"sum of bumps = {total}")

    for cset in cover.sets:
        _check_chart(report, cover, cset.chart, f"U{cset.index}",
                     _points_of_set(cover, cset.index), chart_tol)
    for simplex in cover.nerve:
        if simplex.chart is not None:
            _check_chart(report, cover, simplex.chart, str(simplex.indices),
                         simplex.points(), chart_tol)
    return report


def _points_of_set(cover, index):
    pts = []
    for s in cover.nerve:
        if index in s.indices:
            pts.extend(s.points())
    return pts


def _check_chart(report, cover, chart, loc, points, tol):
    if chart.inverse is None:
        report.add("chart-roundtrip", loc, "no declared inverse")
        return
    for pt in points:
        try:
            image = chart.evaluate(pt)
            back = chart.inverse.evaluate(
                {yname(i + 1): image[i] for i in range(cover.dim)}
            )
        except EvaluationError as err:
            report.add("chart-roundtrip", loc, f"evaluation failed at {pt}: {err}")
            continue
        err = max(abs(back[i] - pt[yname(i + 1)]) for i in range(cover.dim))
        if err > tol:
            report.add("chart-roundtrip", loc, f"round-trip error {err:.3e} at {pt}")


# ---------------------------------------------------------------------------
# cochains
# ---------------------------------------------------------------------------


def _sort_with_sign(indices):
    """Sorted tuple and permutation sign; sign 0 for repeated indices."""
    idx = list(indices)
    if len(set(idx)) != len(idx):
        return None, 0
    sign = 1
    # insertion sort, counting inversions
    for i in range(1, len(idx)):
        j = i
        while j > 0 and idx[j - 1] > idx[j]:
            idx[j - 1], idx[j] = idx[j], idx[j - 1]
            sign = -sign
            j -= 1
    return tuple(idx), sign


@dataclass(frozen=True)
class Cochain:
    """Čech p-cochain of q-forms over the declared nerve.

    Components are stored on sorted tuples; permuted lookups pick up the
    permutation sign.
    """

    dim: int
    cech_degree: int
    form_degree: int
    components: dict = field(default_factory=dict)

    def __post_init__(self):
        comps = {}
        for idx, form in self.components.items():
            idx = tuple(idx)
            if len(idx) != self.cech_degree + 1:
                raise DimensionError(f"component {idx} has wrong Čech degree")
            if form.degree != self.form_degree or form.dim != self.dim:
                raise DimensionError(f"component {idx} has wrong form grading")
            comps[idx] = form
        object.__setattr__(self, "components", comps)

    def component(self, indices, missing="error"):
        sorted_idx, sign = _sort_with_sign(indices)
        if sign == 0:
            return zero_form(self.dim, self.form_degree, tuple(indices))
        form = self.components.get(sorted_idx)
        if form is None:
            if missing == "zero":
                return zero_form(self.dim, self.form_degree, sorted_idx)
            raise NerveError(f"no component on simplex {sorted_idx}")
        if sign == -1:
            form = form.scale(-1.0)
        return form

    def map(self, fn):
        comps = {idx: fn(form) for idx, form in self.components.items()}
        degree = next(iter(comps.values())).degree if comps else self.form_degree
        return Cochain(self.dim, self.cech_degree, degree, comps)


def cochain_sub(a, b):
    if a.cech_degree != b.cech_degree or a.form_degree != b.form_degree:
        raise DimensionError("cochain grading mismatch")
    out = {}
    for idx in set(a.components) | set(b.components):
        fa = a.component(idx, missing="zero")
        fb = b.component(idx, missing="zero").with_domain(fa.domain)
        out[idx] = fa - fb
    return Cochain(a.dim, a.cech_degree, a.form_degree, out)


def coboundary(cochain, cover):
    """Alternating sum over faces, on every declared (p+1)-simplex.

    Restriction to the larger intersection is a domain-tag change because
    all forms share the ambient coordinates.
    """
    p = cochain.cech_degree
    out = {}
    for simplex in cover.simplices_of_dim(p + 1):
        idx = simplex.indices
        total = zero_form(cochain.dim, cochain.form_degree, idx)
        for i in range(len(idx)):
            face = idx[:i] + idx[i + 1 :]
            part = cochain.component(face).with_domain(idx)
            total = total + (part if i % 2 == 0 else part.scale(-1.0))
        out[idx] = total
    return Cochain(cochain.dim, p + 1, cochain.form_degree, out)


def partition_of_unity(cover):
    """rho_alpha = psi_alpha / sum(psi); validated positive on samples."""
    bumps = [cset.bump for cset in cover.sets]
    total = bumps[0] if len(bumps) == 1 else ex.Add(tuple(bumps))
    for pt in cover.sample_points():
        value = ex.evaluate(total, pt)
        if value <= 0.0:
            raise CoverValidationError(f"sum of bumps is {value} at {pt}")
    return {
        cset.index: ex.normalize(ex.Div(cset.bump, total)) for cset in cover.sets
    }


def mv_homotopy_K(cochain, cover, partition=None):
    """Contracting homotopy of the Čech direction:
    (K xi)_{a0..a(p-1)} = sum_beta rho_beta xi_{beta a0..a(p-1)}.

    Undeclared simplices contribute zero: the weight rho_beta vanishes on
    the target simplex there.
    """
    if cochain.cech_degree < 1:
        raise DimensionError("K needs Čech degree >= 1")
    if partition is None:
        partition = partition_of_unity(cover)
    p = cochain.cech_degree
    out = {}
    for simplex in cover.simplices_of_dim(p - 1):
        idx = simplex.indices
        total = zero_form(cochain.dim, cochain.form_degree, idx)
        for beta in cover.indices:
            part = cochain.component((beta, *idx), missing="zero")
            if part.is_zero():
                continue
            total = total + part.with_domain(idx).scale(partition[beta])
        out[idx] = total
    return Cochain(cochain.dim, p - 1, cochain.form_degree, out)


class GluedForm:
    """Evaluator for a glued 0-cochain: picks the smallest containing set,
    checks branch independence, returns coefficient values."""

    def __init__(self, cochain, cover, tol=1e-9):
        self.cochain = cochain
        self.cover = cover
        self.tol = tol

    def branch(self, point):
        containing = [
            cset.index for cset in self.cover.sets if cset.contains(point)
        ]
        if not containing:
            raise GluingError(f"point outside every cover set: {point}")
        return containing

    def form_at(self, point):
        return self.cochain.component((self.branch(point)[0],))

    def value(self, point):
        containing = self.branch(point)
        chosen = self.cochain.component((containing[0],))
        values = chosen.evaluate(point)
        for other in containing[1:]:
            alt = self.cochain.component((other,)).evaluate(point)
            for idx in set(values) | set(alt):
                va = values.get(idx, 0.0)
                vb = alt.get(idx, 0.0)
                if abs(va - vb) > self.tol:
                    raise GluingError(
                        f"branch mismatch {abs(va - vb):.3e} between "
                        f"U{containing[0]} and U{other} at {point}"
                    )
        return values

    def apply(self, point, vectors):
        return self.cochain.component((self.branch(point)[0],)).apply(point, vectors)


def glue_cochain0(cochain, cover, tol=1e-9, parameter_samples=({},)):
    """Glue a delta-closed 0-cochain into a single evaluator.

    Precondition checked by sampling: the coboundary vanishes at every
    declared edge point (for every supplied parameter sample).
    """
    if cochain.cech_degree != 0:
        raise DimensionError("gluing needs a 0-cochain")
    delta = coboundary(cochain, cover)
    worst = 0.0
    for idx, form in delta.components.items():
        if len(idx) != 2:
            continue
        simplex = cover.simplex(idx)
        for pt in simplex.points():
            for xs in parameter_samples:
                values = form.evaluate({**pt, **xs})
                for v in values.values():
                    worst = max(worst, abs(v))
    if worst > tol:
        raise GluingError(
            f"cochain is not delta-closed: max overlap mismatch {worst:.3e} "
            f"exceeds {tol:.1e}"
        )
    return GluedForm(cochain, cover, tol)
