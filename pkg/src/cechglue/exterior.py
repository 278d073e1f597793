"""Differential forms on open regions of R^d.

Forms are stored as maps from strictly increasing multi-indices to
coefficient expressions in the ambient coordinates y1..yd (and parameters
x1..xn). Restriction to a subregion is a domain-tag change only; all forms
on one manifold share the ambient coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import expr as ex
from .errors import DimensionError
from .expr import Add, Mul, Num, Pow, Sym, T

_Y = tuple(f"y{i}" for i in range(1, 10))


def yname(i):
    return _Y[i - 1]


@dataclass(frozen=True)
class SmoothMap:
    """Map between open regions given by component expressions.

    Components are expressions in the source coordinates y1..y_{source_dim}.
    ``inverse`` is declared, not derived; round-trips are validated by
    sampling in cover validation.
    """

    source_dim: int
    target_dim: int
    components: tuple
    inverse: "SmoothMap | None" = None

    def __post_init__(self):
        if len(self.components) != self.target_dim:
            raise DimensionError("component count must equal target dimension")

    def evaluate(self, point):
        return tuple(ex.evaluate(c, point) for c in self.components)


def identity_map(dim):
    m = SmoothMap(dim, dim, tuple(Sym(yname(i)) for i in range(1, dim + 1)))
    object.__setattr__(m, "inverse", m)
    return m


def _is_identity(m):
    return all(
        isinstance(c, Sym) and c.name == yname(i + 1) for i, c in enumerate(m.components)
    )


@dataclass(frozen=True)
class Form:
    """Differential form of a given degree on a tagged region of R^dim."""

    dim: int
    degree: int
    coeffs: dict = field(default_factory=dict)
    domain: object = "M"

    def __post_init__(self):
        if self.degree < 0 or self.degree > self.dim + 1:
            raise DimensionError(f"degree {self.degree} out of range for dim {self.dim}")
        clean = {}
        for idx, coeff in self.coeffs.items():
            idx = tuple(idx)
            if len(idx) != self.degree:
                raise DimensionError(f"index {idx} has wrong length for degree {self.degree}")
            if any(not 1 <= i <= self.dim for i in idx):
                raise DimensionError(f"index {idx} out of range for dim {self.dim}")
            if any(a >= b for a, b in zip(idx, idx[1:])):
                raise DimensionError(f"index {idx} is not strictly increasing")
            if T in coeff.free:
                raise DimensionError("form coefficients must not contain free t")
            coeff = ex.normalize(coeff)
            if isinstance(coeff, Num) and coeff.value == 0.0:
                continue
            clean[idx] = coeff
        object.__setattr__(self, "coeffs", clean)

    # -- basic algebra ------------------------------------------------------

    def coefficient(self, idx):
        return self.coeffs.get(tuple(idx), ex.Num(0.0))

    def with_domain(self, domain):
        if domain == self.domain:
            return self
        return Form(self.dim, self.degree, dict(self.coeffs), domain)

    def is_zero(self):
        return not self.coeffs

    def __add__(self, other):
        self._check_compatible(other)
        out = dict(self.coeffs)
        for idx, coeff in other.coeffs.items():
            out[idx] = Add((out[idx], coeff)) if idx in out else coeff
        return Form(self.dim, self.degree, out, self.domain)

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, factor):
        factor = ex.as_expr(factor)
        out = {idx: Mul((factor, coeff)) for idx, coeff in self.coeffs.items()}
        return Form(self.dim, self.degree, out, self.domain)

    def _check_compatible(self, other):
        if not isinstance(other, Form):
            raise TypeError("expected a Form")
        if other.dim != self.dim or other.degree != self.degree:
            raise DimensionError("form dimension/degree mismatch")
        if other.domain != self.domain:
            raise DimensionError(
                f"domain mismatch: {self.domain!r} vs {other.domain!r}"
            )

    def evaluate(self, point):
        """Coefficient values at a point (arrays broadcast elementwise)."""
        return {idx: ex.evaluate(c, point) for idx, c in self.coeffs.items()}

    def apply(self, point, vectors):
        """Value on constant vectors: sum_I f_I(point) det(vectors restricted to I)."""
        import numpy as np

        if len(vectors) != self.degree:
            raise DimensionError("vector count must equal form degree")
        total = 0.0
        for idx, coeff in self.coeffs.items():
            if self.degree == 0:
                det = 1.0
            else:
                m = np.array([[v[i - 1] for i in idx] for v in vectors], dtype=float)
                det = float(np.linalg.det(m))
            total = total + det * ex.evaluate(coeff, point)
        return total


def zero_form(dim, degree, domain="M"):
    return Form(dim, degree, {}, domain)


def _merge_sign(left, right):
    """Sign for sorting the concatenation of two increasing index tuples."""
    merged = list(left)
    sign = 1
    for r in right:
        pos = len(merged)
        for i, m in enumerate(merged):
            if r == m:
                return None, 0
            if r < m:
                pos = i
                break
        sign *= (-1) ** (len(merged) - pos)
        merged.insert(pos, r)
    return tuple(merged), sign


def wedge(a, b):
    if a.dim != b.dim:
        raise DimensionError("wedge of forms on different dimensions")
    if a.domain != b.domain:
        raise DimensionError("wedge of forms on different domains")
    degree = a.degree + b.degree
    if degree > a.dim:
        return zero_form(a.dim, min(degree, a.dim + 1), a.domain)
    out = {}
    for ia, fa in a.coeffs.items():
        for ib, fb in b.coeffs.items():
            merged, sign = _merge_sign(ia, ib)
            if merged is None:
                continue
            term = Mul((Num(float(sign)), fa, fb))
            out[merged] = Add((out[merged], term)) if merged in out else term
    return Form(a.dim, degree, out, a.domain)


def ext_d(w):
    """Exterior derivative in ambient coordinates; parameters are constants."""
    out = {}
    for idx, coeff in w.coeffs.items():
        for j in range(1, w.dim + 1):
            if j in idx:
                continue
            dj = ex.diff(coeff, yname(j))
            if isinstance(dj, Num) and dj.value == 0.0:
                continue
            merged, sign = _merge_sign((j,), idx)
            term = Mul((Num(float(sign)), dj))
            out[merged] = Add((out[merged], term)) if merged in out else term
    return Form(w.dim, w.degree + 1, out, w.domain)


def pullback(phi, w, domain=None):
    """Pull back ``w`` (on phi's target) along ``phi`` to phi's source."""
    if phi.target_dim != w.dim:
        raise DimensionError("pullback: map target dimension must match form dimension")
    if domain is None:
        domain = w.domain
    mapping = {yname(i + 1): phi.components[i] for i in range(phi.target_dim)}
    if w.degree == 0:
        out = {(): ex.subst(w.coefficient(()), mapping)}
        return Form(phi.source_dim, 0, out, domain)
    # differentials of the components, as 1-forms on the source
    d_comp = {}
    for i in range(1, phi.target_dim + 1):
        comp = phi.components[i - 1]
        entry = {}
        for j in range(1, phi.source_dim + 1):
            dj = ex.diff(comp, yname(j))
            if isinstance(dj, Num) and dj.value == 0.0:
                continue
            entry[(j,)] = dj
        d_comp[i] = Form(phi.source_dim, 1, entry, domain)
    total = zero_form(phi.source_dim, w.degree, domain)
    for idx, coeff in w.coeffs.items():
        block = None
        for i in idx:
            block = d_comp[i] if block is None else wedge(block, d_comp[i])
        if block.is_zero():
            continue
        total = total + block.scale(ex.subst(coeff, mapping))
    return total


def interior_radial(w):
    """Insertion of the radial vector field (per-coordinate multiplication)."""
    if w.degree < 1:
        raise DimensionError("interior product needs degree >= 1")
    out = {}
    for idx, coeff in w.coeffs.items():
        for j, i in enumerate(idx):
            rest = idx[:j] + idx[j + 1 :]
            sign = -1.0 if j % 2 else 1.0
            term = Mul((Num(sign), Sym(yname(i)), coeff))
            out[rest] = Add((out[rest], term)) if rest in out else term
    return Form(w.dim, w.degree - 1, out, w.domain)


def _homotopy_flat(w):
    """Radial homotopy on R^dim with the identity chart.

    The 1/t singularity of the defining integral cancels against the t^p
    scaling of the pulled-back coefficients, leaving the regular integrand
    t^(p-1) f(t y).
    """
    d, p = w.dim, w.degree
    scaling = {yname(i): Mul((Sym(T), Sym(yname(i)))) for i in range(1, d + 1)}
    out = {}
    for idx, coeff in w.coeffs.items():
        fty = ex.subst(coeff, scaling)
        integrand = Mul((Pow(Sym(T), p - 1), fty)) if p > 1 else fty
        primitive = ex.integrate_t(integrand)
        for j, i in enumerate(idx):
            rest = idx[:j] + idx[j + 1 :]
            sign = -1.0 if j % 2 else 1.0
            term = Mul((Num(sign), Sym(yname(i)), primitive))
            out[rest] = Add((out[rest], term)) if rest in out else term
    return Form(d, p - 1, out, w.domain)


def homotopy(w, chart=None):
    """Chart-relative primitive operator.

    For closed ``w`` of degree >= 1 on a region the chart identifies with
    R^dim, d(homotopy(w)) == w; in general dH + Hd = id in positive degree.
    """
    if w.degree < 1:
        raise DimensionError("homotopy operator needs degree >= 1")
    if chart is None or _is_identity(chart):
        return _homotopy_flat(w)
    if chart.source_dim != w.dim or chart.target_dim != w.dim:
        raise DimensionError("chart must be an endo-dimensional diffeomorphism")
    if chart.inverse is None:
        raise DimensionError("chart has no declared inverse")
    straightened = pullback(chart.inverse, w, domain=("chart", w.domain))
    primitive = _homotopy_flat(straightened)
    return pullback(chart, primitive, domain=w.domain)


def forms_equal(a, b, rng=None, samples=40, tol=1e-10):
    """Symbolic-first coefficient comparison (shared indices, same grading)."""
    if a.dim != b.dim or a.degree != b.degree:
        return False
    indices = set(a.coeffs) | set(b.coeffs)
    for idx in sorted(indices):
        if not ex.equivalent(a.coefficient(idx), b.coefficient(idx), rng=rng,
                             samples=samples, tol=tol):
            return False
    return True
