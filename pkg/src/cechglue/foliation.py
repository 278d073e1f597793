"""Leafwise forms on trivial product bundles B x R^f and their primitives.

The base B carries a good cover; fibers are full affine spaces, so every
closed fiber form of positive degree has a primitive given by the fiber
homotopy operator with the base point as a parameter. A base partition of
unity assembles the per-set primitives into one global form whose leafwise
differential matches the input on every fiber.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .cech import partition_of_unity
from .errors import DimensionError, ReconstructionError
from .exterior import Form, yname
from .expr import Mul, Num, Pow, Sym, T


@dataclass(frozen=True)
class ProductBundle:
    """Trivial bundle: base coordinates y1..yb, fiber coordinates y(b+1)..y(b+f)."""

    base_cover: object
    fiber_dim: int

    @property
    def base_dim(self):
        return self.base_cover.dim

    @property
    def total_dim(self):
        return self.base_dim + self.fiber_dim

    def fiber_indices(self):
        return tuple(range(self.base_dim + 1, self.total_dim + 1))


def check_leafwise(form, bundle):
    if form.dim != bundle.total_dim:
        raise DimensionError(
            f"form dimension {form.dim} != bundle total dimension {bundle.total_dim}"
        )
    fiber = set(bundle.fiber_indices())
    for idx in form.coeffs:
        if not set(idx) <= fiber:
            raise DimensionError(f"index {idx} uses base differentials")
    return form


def leafwise_d(form, bundle):
    """Exterior derivative along the fibers only; base dependence is inert."""
    check_leafwise(form, bundle)
    from .expr import Add

    out = {}
    from .cech import _sort_with_sign  # sign bookkeeping shared with cochains

    for idx, coeff in form.coeffs.items():
        for j in bundle.fiber_indices():
            if j in idx:
                continue
            dj = ex.diff(coeff, yname(j))
            if isinstance(dj, Num) and dj.value == 0.0:
                continue
            merged, sign = _sort_with_sign((j,) + idx)
            term = Mul((Num(float(sign)), dj))
            out[merged] = Add((out[merged], term)) if merged in out else term
    return Form(form.dim, form.degree + 1, out, form.domain)


def _fiber_homotopy(form, bundle):
    """Radial homotopy in the fiber variables; base coordinates are parameters."""
    from .expr import Add

    degree = form.degree
    scaling = {
        yname(i): Mul((Sym(T), Sym(yname(i)))) for i in bundle.fiber_indices()
    }
    out = {}
    for idx, coeff in form.coeffs.items():
        fty = ex.subst(coeff, scaling)
        integrand = Mul((Pow(Sym(T), degree - 1), fty)) if degree > 1 else fty
        primitive = ex.integrate_t(integrand)
        for j, i in enumerate(idx):
            rest = idx[:j] + idx[j + 1 :]
            sign = -1.0 if j % 2 else 1.0
            term = Mul((Num(sign), Sym(yname(i)), primitive))
            out[rest] = Add((out[rest], term)) if rest in out else term
    return Form(form.dim, degree - 1, out, form.domain)


def fiber_primitives(form, bundle, sample_points=(), tol=1e-9):
    """Per base-cover-set primitives tau with d_F tau = form on each fiber.

    The fiber is all of R^f, so a single fiber chart suffices and the
    construction is one homotopy-operator application, reused per set.
    """
    check_leafwise(form, bundle)
    if form.degree < 1:
        raise DimensionError("fiber primitives need degree >= 1")
    closed = leafwise_d(form, bundle)
    for pt in sample_points:
        for idx, value in closed.evaluate(pt).items():
            if abs(value) > tol:
                raise ReconstructionError(
                    f"input is not leafwise closed: d_F coefficient {idx} is "
                    f"{value:.3e} at {pt}"
                )
    primitive = _fiber_homotopy(form, bundle)
    return {
        cset.index: primitive.with_domain((cset.index,))
        for cset in bundle.base_cover.sets
    }


def assemble_global(taus, bundle, form, sample_points=(), tol=1e-8):
    """Partition-of-unity combination over the base cover.

    Stored indices stay fiber-only, so the output annihilates base vectors
    by construction. Returns (global_form, defect_report); the full exterior
    derivative may keep base-differential terms, reported informationally.
    """
    partition = partition_of_unity(bundle.base_cover)
    total = None
    for index in bundle.base_cover.indices:
        weighted = taus[index].with_domain(form.domain).scale(partition[index])
        total = weighted if total is None else total + weighted
    leaf_defect = 0.0
    defect_form = leafwise_d(total, bundle) - form
    for pt in sample_points:
        for value in defect_form.evaluate(pt).values():
            leaf_defect = max(leaf_defect, float(np.max(np.abs(value))))
    from .exterior import ext_d

    transverse = 0.0
    fiber = set(bundle.fiber_indices())
    full = ext_d(total) - form
    for pt in sample_points:
        for idx, value in full.evaluate(pt).items():
            if set(idx) <= fiber:
                continue
            transverse = max(transverse, float(np.max(np.abs(value))))
    report = {
        "leafwise_defect": leaf_defect,
        "transverse_residual": transverse,
        "tolerance": tol,
    }
    if sample_points and leaf_defect > tol:
        raise ReconstructionError(
            f"leafwise defect {leaf_defect:.3e} exceeds tolerance {tol:.1e}"
        )
    return total, report
