"""Reconstruction of globally defined primitives for smooth families of
exact forms.

Three pipelines, all starting from the chart-relative homotopy primitives
on a good cover:

* degree 1, chain mode: overlap constants extended along the cover graph,
  with cycle-consistency doubling as a non-exactness detector;
* degree 1 and higher, provider mode: the constants (resp. the corrective
  potentials) are derived from a caller-supplied reference primitive per
  parameter value, and smoothness in the parameter is measured, not assumed;
* degree >= 2, zig-zag mode: alternated coboundary/homotopy descent to a
  cocycle of constants, a minimal-norm solve, and partition-of-unity ascent.
  All coefficients stay symbolic in the parameters.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .cech import (
    Cochain,
    GluedForm,
    cochain_sub,
    coboundary,
    mv_homotopy_K,
    partition_of_unity,
)
from .errors import (
    DimensionError,
    GluingError,
    NerveError,
    NotExactError,
    ProviderError,
    ReconstructionError,
)
from .exterior import Form, ext_d, homotopy, yname, zero_form
from .expr import Call, Num, Sub, Sym

DEFAULT_TOLERANCES = {
    "closedness": 1e-9,
    "provider": 1e-9,
    "constancy": 1e-9,
    "cycle_defect": 1e-8,
    "solve_residual": 1e-8,
    "z_spread": 1e-9,
    "delta_tau": 1e-8,
    "gluing": 1e-8,
    "residual": 1e-8,
    "residual_high": 1e-7,
    "da_residual": 1e-7,
    "delta_g": 1e-9,
    "deltaG_minus_g": 1e-8,
}


def _tols(overrides):
    tols = dict(DEFAULT_TOLERANCES)
    if overrides:
        tols.update(overrides)
    return tols


# ---------------------------------------------------------------------------
# problem statement
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FamilySpec:
    """A family of closed forms, its parameter box and sampling grid."""

    dim: int
    degree: int
    params: int
    omega: Form
    param_box: tuple = ()
    param_grid: int = 5

    def __post_init__(self):
        if self.omega.dim != self.dim or self.omega.degree != self.degree:
            raise DimensionError("family form grading mismatch")
        if self.degree > self.dim:
            raise DimensionError(
                f"form degree {self.degree} exceeds manifold dimension {self.dim}"
            )
        if len(self.param_box) != self.params:
            raise DimensionError("parameter box must have one interval per parameter")

    def x_names(self):
        return tuple(f"x{i}" for i in range(1, self.params + 1))

    def x_grid(self):
        """Full-factorial list of parameter points, deterministic order."""
        if self.params == 0:
            return [{}]
        axes = [
            np.linspace(lo, hi, self.param_grid) for lo, hi in self.param_box
        ]
        names = self.x_names()
        return [
            {names[i]: float(v) for i, v in enumerate(combo)}
            for combo in itertools.product(*axes)
        ]

    def x_mesh(self):
        """Parameter grid as flat arrays keyed by symbol name."""
        grid = self.x_grid()
        if not grid or not grid[0]:
            return {}
        return {
            name: np.array([pt[name] for pt in grid])
            for name in self.x_names()
        }


def validate_family(family, m_points, tol=1e-9):
    """Closedness of the input family at sampled (m, x); returns the max."""
    closed = ext_d(family.omega)
    worst = _max_over_grid(closed, m_points, family.x_mesh())
    if worst > tol:
        raise ReconstructionError(
            f"input family is not closed: max d-coefficient {worst:.3e} "
            f"exceeds {tol:.1e}"
        )
    return worst


# ---------------------------------------------------------------------------
# reference-primitive providers
# ---------------------------------------------------------------------------


class PrimitiveProvider:
    """Supplies a primitive of the family at requested parameter values."""

    symbolic_form = None
    jitter = None

    def form_at(self, x_point):
        raise NotImplementedError


class SymbolicProvider(PrimitiveProvider):
    def __init__(self, form):
        self.symbolic_form = form

    def form_at(self, x_point):
        coeffs = {
            idx: ex.subst_values(c, x_point)
            for idx, c in self.symbolic_form.coeffs.items()
        }
        return Form(
            self.symbolic_form.dim,
            self.symbolic_form.degree,
            coeffs,
            self.symbolic_form.domain,
        )


class CallbackProvider(PrimitiveProvider):
    def __init__(self, fn):
        self._fn = fn

    def form_at(self, x_point):
        return self._fn(x_point)


def jittered_provider(base_form, axis, threshold, jump_form):
    """base + step(x_axis - threshold) * jump, with jump a closed form.

    The result is still a valid primitive family but deliberately fails to
    be smooth in the parameter at the threshold.
    """
    gate = Call("step", Sub(Sym(f"x{axis}"), Num(threshold)))
    combined = base_form + jump_form.with_domain(base_form.domain).scale(gate)
    provider = SymbolicProvider(combined)
    provider.jitter = {"axis": axis, "threshold": threshold}
    return provider


def _check_provider(provider, family, eta, x_point, m_points, tol):
    target = Form(
        family.dim,
        family.degree,
        {idx: ex.subst_values(c, x_point) for idx, c in family.omega.coeffs.items()},
        eta.domain,
    )
    residual = ext_d(eta.with_domain(eta.domain)) - target
    worst = 0.0
    for pt in m_points:
        for value in residual.evaluate(pt).values():
            worst = max(worst, float(np.max(np.abs(value))))
    if worst > tol:
        raise ProviderError(
            f"provider primitive fails d(eta) = omega at x={x_point}: "
            f"residual {worst:.3e} exceeds {tol:.1e}"
        )


# ---------------------------------------------------------------------------
# grid evaluation helpers
# ---------------------------------------------------------------------------

_CHUNK = 120_000


def _point_arrays(points, dim):
    return {
        yname(i): np.array([pt[yname(i)] for pt in points])
        for i in range(1, dim + 1)
    }


def _grid_env(yarrs, xmesh):
    env = {}
    n_x = 1
    for name, arr in xmesh.items():
        n_x = len(arr)
        env[name] = arr[None, :]
    for name, arr in yarrs.items():
        env[name] = arr[:, None] if xmesh else arr
    return env, n_x


def _expr_abs_values(coeff, yarrs, xmesh):
    """|coeff| over the (m, x) product grid, chunked over m."""
    n_m = len(next(iter(yarrs.values()))) if yarrs else 1
    n_x = len(next(iter(xmesh.values()))) if xmesh else 1
    out = []
    step = max(1, _CHUNK // max(n_x, 1))
    for start in range(0, n_m, step):
        sel = {k: v[start : start + step] for k, v in yarrs.items()}
        env, _ = _grid_env(sel, xmesh)
        values = ex.evaluate(coeff, env) if (sel or xmesh) else ex.evaluate(coeff, {})
        out.append(np.abs(np.asarray(values, dtype=float)).reshape(-1))
    if not out:
        return np.zeros(0)
    return np.concatenate(out)


def _max_over_grid(form, m_points, xmesh):
    if not m_points:
        return 0.0
    yarrs = _point_arrays(m_points, form.dim)
    worst = 0.0
    for coeff in form.coeffs.values():
        vals = _expr_abs_values(coeff, yarrs, xmesh)
        if vals.size:
            worst = max(worst, float(vals.max()))
    return worst


def _stats_over_grid(form, m_points, xmesh):
    if not m_points:
        return {"max": 0.0, "mean": 0.0, "count": 0}
    yarrs = _point_arrays(m_points, form.dim)
    total, count, worst = 0.0, 0, 0.0
    for coeff in form.coeffs.values():
        vals = _expr_abs_values(coeff, yarrs, xmesh)
        if vals.size:
            worst = max(worst, float(vals.max()))
            total += float(vals.sum())
            count += vals.size
    if count == 0:
        return {"max": 0.0, "mean": 0.0, "count": 0}
    return {"max": worst, "mean": total / count, "count": count}


def _points_in_set(cover, index, m_points):
    cset = cover.set_of(index)
    return [pt for pt in m_points if cset.contains(pt)]


# ---------------------------------------------------------------------------
# pipeline stages shared by the reconstructions
# ---------------------------------------------------------------------------


def local_primitives(family, cover):
    """Chart-relative homotopy primitives, one per cover set."""
    if family.degree < 1:
        raise DimensionError("the family must consist of forms of degree >= 1")
    comps = {}
    for cset in cover.sets:
        restricted = family.omega.with_domain((cset.index,))
        comps[(cset.index,)] = homotopy(restricted, cset.chart)
    return Cochain(family.dim, 0, family.degree - 1, comps)


def overlap_constants(tau, cover, x_grid=({},), tol=1e-9):
    """Per-edge differences of the 0-form primitives, frozen at the witness.

    Constancy across the edge's extra samples is validated: failure signals
    a non-closed family or broken charts.
    """
    if tau.form_degree != 0:
        raise DimensionError("overlap constants need 0-form primitives")
    out = {}
    for simplex in cover.edges():
        a, b = simplex.indices
        diff = tau.component((b,)).with_domain(simplex.indices) - tau.component(
            (a,)
        ).with_domain(simplex.indices)
        coeff = diff.coefficient(())
        witness_value = ex.normalize(ex.subst_values(coeff, simplex.witness))
        for sample in simplex.samples:
            alt = ex.subst_values(coeff, sample)
            spread = max(
                abs(ex.evaluate(Sub(witness_value, alt), xs)) for xs in x_grid
            )
            if spread > tol:
                raise ReconstructionError(
                    f"overlap difference on U{a}&U{b} is not constant: spread "
                    f"{spread:.3e} exceeds {tol:.1e} (family not closed, or "
                    f"broken charts)"
                )
        out[(a, b)] = witness_value
    return out


def _oriented_constant(consts, u, v):
    if (u, v) in consts:
        return consts[(u, v)]
    return ex.normalize(ex.Neg(consts[(v, u)]))


def extend_constants(consts, cover, base, x_grid=({},), tol=1e-8, component=None):
    """Breadth-first extension of the edge constants from a base index.

    Returns ({alpha: C_{base,alpha}}, max_cycle_defect). Every non-tree edge
    is checked for cycle consistency; a defect above tolerance means the
    input family is closed but not exact (monodromy), reported as NotExact.
    """
    indices = list(component) if component is not None else list(cover.indices)
    adjacency = {
        i: [j for j in cover.adjacency()[i] if j in indices] for i in indices
    }
    if base not in indices:
        raise NerveError(f"base index {base} not in component {indices}")
    accumulated = {base: Num(0.0)}
    order = [base]
    tree_edges = set()
    queue = [base]
    while queue:
        u = queue.pop(0)
        for v in adjacency[u]:
            if v in accumulated:
                continue
            accumulated[v] = ex.normalize(
                ex.Add((accumulated[u], _oriented_constant(consts, u, v)))
            )
            tree_edges.add(tuple(sorted((u, v))))
            order.append(v)
            queue.append(v)
    missing = [i for i in indices if i not in accumulated]
    if missing:
        raise NerveError(
            f"cover graph is disconnected: {missing} unreachable from {base}"
        )
    max_defect = 0.0
    for simplex in cover.edges():
        u, v = simplex.indices
        if u not in accumulated or v not in accumulated:
            continue
        if (u, v) in tree_edges:
            continue
        defect_expr = ex.Add(
            (
                accumulated[u],
                _oriented_constant(consts, u, v),
                ex.Neg(accumulated[v]),
            )
        )
        defect = max(abs(ex.evaluate(defect_expr, xs)) for xs in x_grid)
        max_defect = max(max_defect, defect)
    if max_defect > tol:
        raise NotExactError(
            "cycle defect in the overlap constants: the family is closed but "
            "not exact",
            max_defect,
        )
    return accumulated, max_defect


# ---------------------------------------------------------------------------
# reconstruction result
# ---------------------------------------------------------------------------


class ReconstructionResult:
    """Glued primitive family plus diagnostics.

    ``branches`` maps cover index to a Form symbolic in (y, x) when the mode
    allows it; otherwise ``pipeline(x)`` computes per-parameter forms on
    demand (cached).
    """

    def __init__(self, mode, family, cover, branches=None, pipeline=None,
                 diagnostics=None, gluing_tol=1e-8):
        self.mode = mode
        self.family = family
        self.cover = cover
        self.branches = branches
        self._pipeline = pipeline
        self.diagnostics = diagnostics or {}
        self.gluing_tol = gluing_tol
        self._cache = {}

    def primitive_forms(self, x_point):
        """Per-set primitive forms in y only, at one parameter point."""
        key = tuple(sorted((k, float(v)) for k, v in x_point.items()))
        if key in self._cache:
            return self._cache[key]
        if self.branches is not None:
            forms = {
                alpha: Form(
                    form.dim,
                    form.degree,
                    {idx: ex.subst_values(c, x_point) for idx, c in form.coeffs.items()},
                    form.domain,
                )
                for alpha, form in self.branches.items()
            }
        else:
            forms = self._pipeline(x_point)
        self._cache[key] = forms
        return forms

    def containing(self, m_point):
        out = [c.index for c in self.cover.sets if c.contains(m_point)]
        if not out:
            raise GluingError(f"point outside every cover set: {m_point}")
        return out

    def value(self, m_point, x_point):
        """Glued coefficient values, with branch-independence check."""
        forms = self.primitive_forms(x_point)
        containing = self.containing(m_point)
        chosen = forms[containing[0]]
        values = chosen.evaluate(m_point)
        for other in containing[1:]:
            alt = forms[other].evaluate(m_point)
            for idx in set(values) | set(alt):
                delta = abs(values.get(idx, 0.0) - alt.get(idx, 0.0))
                if delta > self.gluing_tol:
                    raise GluingError(
                        f"branch mismatch {delta:.3e} between U{containing[0]} "
                        f"and U{other} at {m_point}"
                    )
        return values

    def apply(self, m_point, x_point, vectors):
        forms = self.primitive_forms(x_point)
        return forms[self.containing(m_point)[0]].apply(m_point, vectors)

    def export_branches(self):
        if self.branches is None:
            return None
        return {
            str(alpha): {
                ",".join(map(str, idx)): ex.to_text(c)
                for idx, c in form.coeffs.items()
            }
            for alpha, form in sorted(self.branches.items())
        }


def _branch_diagnostics(branches, omega, cover, m_points, xmesh, tols,
                        residual_key):
    """Residual and gluing statistics shared by all modes."""
    stages = {}
    worst = {"max": 0.0, "mean": 0.0, "count": 0}
    total, count = 0.0, 0
    for alpha, form in branches.items():
        residual = ext_d(form) - omega.with_domain(form.domain)
        pts = _points_in_set(cover, alpha, m_points)
        st = _stats_over_grid(residual, pts, xmesh)
        worst["max"] = max(worst["max"], st["max"])
        total += st["mean"] * st["count"]
        count += st["count"]
    worst["mean"] = total / count if count else 0.0
    worst["count"] = count
    stages["residual"] = {**worst, "tolerance": tols[residual_key],
                          "pass": worst["max"] <= tols[residual_key]}

    mismatch = 0.0
    for simplex in cover.edges():
        a, b = simplex.indices
        delta = branches[b].with_domain(simplex.indices) - branches[a].with_domain(
            simplex.indices
        )
        mismatch = max(mismatch, _max_over_grid(delta, simplex.points(), xmesh))
    stages["delta_tau"] = {"max": mismatch, "tolerance": tols["delta_tau"],
                           "pass": mismatch <= tols["delta_tau"]}
    return stages


# ---------------------------------------------------------------------------
# degree-1 reconstruction
# ---------------------------------------------------------------------------


def reconstruct_deg1(family, cover, provider=None, m_points=None, tolerances=None):
    """Primitive family for exact 1-forms.

    Without a provider the overlap constants are extended along the cover
    graph (output symbolic in the parameters, smooth by construction). With
    a provider the correction constants come from the reference primitive at
    the set witnesses; smoothness then depends on the provider and is
    measured rather than assumed.
    """
    tols = _tols(tolerances)
    if family.degree != 1:
        raise DimensionError("degree-1 reconstruction needs a family of 1-forms")
    if m_points is None:
        m_points = cover.sample_points()
    x_grid = family.x_grid()
    xmesh = family.x_mesh()
    validate_family(family, m_points, tols["closedness"])

    tau = local_primitives(family, cover)
    components = cover.connected_components()
    stages = {}

    if provider is None:
        consts = overlap_constants(tau, cover, x_grid, tols["constancy"])
        offsets = {}
        max_defect = 0.0
        for comp in components:
            base = min(comp)
            acc, defect = extend_constants(
                consts, cover, base, x_grid, tols["cycle_defect"], component=comp
            )
            max_defect = max(max_defect, defect)
            offsets.update(acc)
        stages["cycle_defect"] = {
            "max": max_defect,
            "tolerance": tols["cycle_defect"],
            "pass": max_defect <= tols["cycle_defect"],
        }
        branches = {}
        for cset in cover.sets:
            correction = Form(
                family.dim, 0, {(): offsets[cset.index]}, (cset.index,)
            )
            branches[cset.index] = tau.component((cset.index,)) - correction
        mode = "deg1-chain"
        result = ReconstructionResult(
            mode, family, cover, branches=branches, gluing_tol=tols["gluing"]
        )
    else:
        mode = "deg1-paper"
        if provider.symbolic_form is not None:
            branches = {}
            tilde = {}
            for cset in cover.sets:
                witness = cover.simplex((cset.index,)).witness
                diff = tau.component((cset.index,)) - provider.symbolic_form.with_domain(
                    (cset.index,)
                )
                tilde[cset.index] = ex.normalize(
                    ex.subst_values(diff.coefficient(()), witness)
                )
            for comp in components:
                base = min(comp)
                for alpha in comp:
                    offset = ex.normalize(
                        Sub(tilde[alpha], tilde[base])
                    )
                    correction = Form(family.dim, 0, {(): offset}, (alpha,))
                    branches[alpha] = tau.component((alpha,)) - correction
            for xs in x_grid:
                _check_provider(
                    provider, family, provider.form_at(xs), xs, m_points,
                    tols["provider"],
                )
            result = ReconstructionResult(
                mode, family, cover, branches=branches, gluing_tol=tols["gluing"]
            )
        else:
            def pipeline(x_point):
                eta = provider.form_at(x_point)
                _check_provider(provider, family, eta, x_point, m_points,
                                tols["provider"])
                forms = {}
                values = {}
                for cset in cover.sets:
                    witness = cover.simplex((cset.index,)).witness
                    taux = Form(
                        family.dim, 0,
                        {(): ex.subst_values(
                            tau.component((cset.index,)).coefficient(()), x_point)},
                        (cset.index,),
                    )
                    forms[cset.index] = taux
                    diff = taux - eta.with_domain((cset.index,))
                    values[cset.index] = ex.evaluate(diff.coefficient(()), witness)
                out = {}
                for comp in components:
                    base = min(comp)
                    for alpha in comp:
                        offset = values[alpha] - values[base]
                        out[alpha] = forms[alpha] - Form(
                            family.dim, 0, {(): Num(offset)}, (alpha,)
                        )
                return out

            result = ReconstructionResult(
                mode, family, cover, pipeline=pipeline, gluing_tol=tols["gluing"]
            )

    if result.branches is not None:
        stages.update(
            _branch_diagnostics(result.branches, family.omega, cover, m_points,
                                xmesh, tols, "residual")
        )
    else:
        worst_res, worst_delta = 0.0, 0.0
        for xs in x_grid:
            forms = result.primitive_forms(xs)
            omega_x = Form(
                family.dim, family.degree,
                {idx: ex.subst_values(c, xs)
                 for idx, c in family.omega.coeffs.items()},
                family.omega.domain,
            )
            stage = _branch_diagnostics(forms, omega_x, cover, m_points, {},
                                        tols, "residual")
            worst_res = max(worst_res, stage["residual"]["max"])
            worst_delta = max(worst_delta, stage["delta_tau"]["max"])
        stages["residual"] = {"max": worst_res, "tolerance": tols["residual"],
                              "pass": worst_res <= tols["residual"]}
        stages["delta_tau"] = {"max": worst_delta, "tolerance": tols["delta_tau"],
                               "pass": worst_delta <= tols["delta_tau"]}
    result.diagnostics["stages"] = {**stages, **result.diagnostics.get("stages", {})}
    result.diagnostics["mode"] = mode
    if provider is None:
        no_steps = all(
            not ex.contains_call(c, "step")
            for form in result.branches.values()
            for c in form.coeffs.values()
        )
        result.diagnostics["step_free"] = no_steps
    return result


# ---------------------------------------------------------------------------
# higher-degree provider pipeline
# ---------------------------------------------------------------------------


def reconstruct_paper_direct(family, cover, provider, m_points=None,
                             tolerances=None):
    """Provider-driven pipeline for families of degree >= 2.

    Per parameter value: potentials a with d(a) = tau - eta per set, their
    coboundary g (smooth across the parameter), the partition-weighted
    potential G with delta(G) = g, and the corrected primitives tau - d(G).
    Every intermediate identity is checked at samples; smoothness in the
    parameter is diagnosed downstream, never assumed.
    """
    tols = _tols(tolerances)
    if family.degree < 2:
        raise DimensionError("this pipeline needs form degree >= 2")
    if provider is None:
        raise ProviderError("a reference-primitive provider is required")
    if m_points is None:
        m_points = cover.sample_points()
    x_grid = family.x_grid()
    xmesh = family.x_mesh()
    validate_family(family, m_points, tols["closedness"])

    tau = local_primitives(family, cover)
    partition = partition_of_unity(cover)

    def _stage_symbolic(eta_form):
        a_comps = {}
        for cset in cover.sets:
            diff = tau.component((cset.index,)) - eta_form.with_domain((cset.index,))
            a_comps[(cset.index,)] = homotopy(diff, cset.chart)
        a = Cochain(family.dim, 0, family.degree - 2, a_comps)
        g = coboundary(a, cover)
        big_g = mv_homotopy_K(g, cover, partition)
        tilde = {}
        for cset in cover.sets:
            tilde[cset.index] = tau.component((cset.index,)) - ext_d(
                big_g.components[(cset.index,)]
            )
        return a, g, big_g, tilde

    symbolic = provider.symbolic_form is not None
    if symbolic:
        for xs in x_grid:
            _check_provider(provider, family, provider.form_at(xs), xs,
                            m_points, tols["provider"])
        a, g, big_g, branches = _stage_symbolic(provider.symbolic_form)
        targets = {
            cset.index: tau.component((cset.index,))
            - provider.symbolic_form.with_domain((cset.index,))
            for cset in cover.sets
        }
        result = ReconstructionResult(
            "paper-direct", family, cover, branches=branches,
            gluing_tol=tols["gluing"],
        )
        stage_data = [(a, g, big_g, branches, targets, xmesh, family.omega)]
    else:
        def pipeline(x_point):
            eta = provider.form_at(x_point)
            _check_provider(provider, family, eta, x_point, m_points,
                            tols["provider"])
            omega_x = Form(
                family.dim, family.degree,
                {idx: ex.subst_values(c, x_point)
                 for idx, c in family.omega.coeffs.items()},
                family.omega.domain,
            )
            fam_x = FamilySpec(family.dim, family.degree, 0, omega_x)
            tau_x = local_primitives(fam_x, cover)
            a_comps = {}
            targets = {}
            for cset in cover.sets:
                diffx = tau_x.component((cset.index,)) - eta.with_domain(
                    (cset.index,))
                targets[cset.index] = diffx
                a_comps[(cset.index,)] = homotopy(diffx, cset.chart)
            a = Cochain(family.dim, 0, family.degree - 2, a_comps)
            g = coboundary(a, cover)
            big_g = mv_homotopy_K(g, cover, partition)
            tilde = {}
            for cset in cover.sets:
                tilde[cset.index] = tau_x.component((cset.index,)) - ext_d(
                    big_g.components[(cset.index,)]
                )
            pipeline.last_stage = (a, g, big_g, tilde, targets)
            return tilde

        result = ReconstructionResult(
            "paper-direct", family, cover, pipeline=pipeline,
            gluing_tol=tols["gluing"],
        )
        stage_data = []
        for xs in x_grid:
            result.primitive_forms(xs)
            a, g, big_g, tilde, targets = pipeline.last_stage
            omega_x = Form(
                family.dim, family.degree,
                {idx: ex.subst_values(c, xs)
                 for idx, c in family.omega.coeffs.items()},
                family.omega.domain,
            )
            stage_data.append((a, g, big_g, tilde, targets, {}, omega_x))

    stages = {
        "da_residual": {"max": 0.0},
        "delta_g": {"max": 0.0},
        "deltaG_minus_g": {"max": 0.0},
        "delta_tau": {"max": 0.0},
        "residual": {"max": 0.0, "mean": 0.0, "count": 0},
    }
    for a, g, big_g, tilde, targets, mesh, omega_target in stage_data:
        for cset in cover.sets:
            da = ext_d(a.components[(cset.index,)])
            residual = da - targets[cset.index]
            pts = cover.simplex((cset.index,)).points()
            stages["da_residual"]["max"] = max(
                stages["da_residual"]["max"],
                _max_over_grid(residual, pts, mesh),
            )
        dg = coboundary(g, cover)
        for idx, form in dg.components.items():
            stages["delta_g"]["max"] = max(
                stages["delta_g"]["max"],
                _max_over_grid(form, cover.simplex(idx).points(), mesh),
            )
        dG = coboundary(big_g, cover)
        for idx, form in dG.components.items():
            delta = form - g.components[idx]
            stages["deltaG_minus_g"]["max"] = max(
                stages["deltaG_minus_g"]["max"],
                _max_over_grid(delta, cover.simplex(idx).points(), mesh),
            )
        branch_stats = _branch_diagnostics(
            tilde, omega_target, cover, m_points, mesh, tols, "residual_high"
        )
        stages["residual"]["max"] = max(
            stages["residual"]["max"], branch_stats["residual"]["max"]
        )
        stages["delta_tau"]["max"] = max(
            stages["delta_tau"]["max"], branch_stats["delta_tau"]["max"]
        )

    for key, tol_key in (
        ("da_residual", "da_residual"),
        ("delta_g", "delta_g"),
        ("deltaG_minus_g", "deltaG_minus_g"),
        ("delta_tau", "delta_tau"),
        ("residual", "residual_high"),
    ):
        stages[key]["tolerance"] = tols[tol_key]
        stages[key]["pass"] = stages[key]["max"] <= tols[tol_key]
    result.diagnostics["stages"] = stages
    result.diagnostics["mode"] = "paper-direct"
    return result


# ---------------------------------------------------------------------------
# zig-zag reconstruction (provider-free, symbolic in the parameters)
# ---------------------------------------------------------------------------


def reconstruct_zigzag(family, cover, m_points=None, tolerances=None):
    """Descend by coboundary + per-simplex homotopy to a cocycle of
    constants, solve it minimal-norm, then ascend with the partition
    operator. No provider is consulted, so the output is symbolic in the
    parameters and smooth by construction."""
    tols = _tols(tolerances)
    p = family.degree
    k = p - 1
    if p < 2:
        raise DimensionError("zig-zag reconstruction needs form degree >= 2")
    if m_points is None:
        m_points = cover.sample_points()
    x_grid = family.x_grid()
    xmesh = family.x_mesh()
    validate_family(family, m_points, tols["closedness"])

    for depth in range(1, k + 1):
        for simplex in cover.simplices_of_dim(depth):
            if simplex.chart is None:
                raise NerveError(
                    f"zig-zag needs a chart on simplex {simplex.indices}"
                )

    xi = [local_primitives(family, cover)]
    level_residuals = []
    for j in range(1, k + 1):
        previous = coboundary(xi[j - 1], cover)
        comps = {}
        for idx, form in previous.components.items():
            chart = cover.simplex(idx).chart
            comps[idx] = homotopy(form, chart)
        xi.append(Cochain(family.dim, j, k - j, comps))
        worst = 0.0
        for idx, form in xi[j].components.items():
            residual = ext_d(form) - previous.components[idx]
            worst = max(
                worst,
                _max_over_grid(residual, cover.simplex(idx).points(), xmesh),
            )
        level_residuals.append({"level": j, "d_xi_vs_delta": worst})

    z = coboundary(xi[k], cover)
    rows = sorted(z.components)
    cols = sorted(s.indices for s in cover.simplices_of_dim(k))
    z_values = {}
    z_spread = 0.0
    for idx in rows:
        simplex = cover.simplex(idx)
        coeff = z.components[idx].coefficient(())
        witness_value = ex.normalize(ex.subst_values(coeff, simplex.witness))
        for sample in simplex.samples:
            alt = ex.subst_values(coeff, sample)
            spread = max(
                abs(ex.evaluate(Sub(witness_value, alt), xs)) for xs in x_grid
            )
            z_spread = max(z_spread, spread)
        z_values[idx] = witness_value
    if z_spread > tols["z_spread"]:
        raise ReconstructionError(
            f"descent cocycle is not constant on intersections: spread "
            f"{z_spread:.3e} exceeds {tols['z_spread']:.1e}"
        )

    col_pos = {idx: i for i, idx in enumerate(cols)}
    matrix = np.zeros((len(rows), len(cols)))
    for r, idx in enumerate(rows):
        for i in range(len(idx)):
            face = idx[:i] + idx[i + 1 :]
            matrix[r, col_pos[face]] += (-1.0) ** i
    pseudo = np.linalg.pinv(matrix) if rows else np.zeros((len(cols), 0))
    constants = {}
    for ci, col in enumerate(cols):
        terms = []
        for r, idx in enumerate(rows):
            weight = pseudo[ci, r]
            if weight == 0.0:
                continue
            terms.append(ex.Mul((Num(float(weight)), z_values[idx])))
        if not terms:
            constants[col] = Num(0.0)
        elif len(terms) == 1:
            constants[col] = ex.normalize(terms[0])
        else:
            constants[col] = ex.normalize(ex.Add(tuple(terms)))
    solve_residual = 0.0
    for r, idx in enumerate(rows):
        residual_terms = [ex.Neg(z_values[idx])]
        for i in range(len(idx)):
            face = idx[:i] + idx[i + 1 :]
            residual_terms.append(
                ex.Mul((Num((-1.0) ** i), constants[face]))
            )
        expr_res = ex.Add(tuple(residual_terms)) if len(residual_terms) > 1 else residual_terms[0]
        value = max(abs(ex.evaluate(expr_res, xs)) for xs in x_grid)
        solve_residual = max(solve_residual, value)
    if solve_residual > tols["solve_residual"]:
        raise NotExactError(
            "the constants cocycle is not a coboundary: the family is closed "
            "but not exact on this cover",
            solve_residual,
        )

    mu_comps = {}
    for idx, form in xi[k].components.items():
        mu_comps[idx] = form - Form(family.dim, 0, {(): constants[idx]}, idx)
    mu = Cochain(family.dim, k, 0, mu_comps)
    partition = partition_of_unity(cover)
    delta_mu = []
    for j in range(k, 0, -1):
        worst = 0.0
        dmu = coboundary(mu, cover)
        for idx, form in dmu.components.items():
            worst = max(
                worst,
                _max_over_grid(form, cover.simplex(idx).points(), xmesh),
            )
        delta_mu.append({"level": j, "delta_mu": worst})
        lifted = mv_homotopy_K(mu, cover, partition).map(ext_d)
        mu = cochain_sub(xi[j - 1], lifted)

    branches = {cset.index: mu.components[(cset.index,)] for cset in cover.sets}
    result = ReconstructionResult(
        "zigzag", family, cover, branches=branches, gluing_tol=tols["gluing"]
    )
    stages = _branch_diagnostics(
        branches, family.omega, cover, m_points, xmesh, tols, "residual_high"
    )
    stages["solve_residual"] = {
        "max": solve_residual,
        "tolerance": tols["solve_residual"],
        "pass": solve_residual <= tols["solve_residual"],
    }
    stages["z_spread"] = {
        "max": z_spread,
        "tolerance": tols["z_spread"],
        "pass": z_spread <= tols["z_spread"],
    }
    result.diagnostics["stages"] = stages
    result.diagnostics["levels"] = {
        "descend": level_residuals,
        "ascend": delta_mu,
    }
    result.diagnostics["mode"] = "zigzag"
    no_steps = all(
        not ex.contains_call(c, "step")
        for form in branches.values()
        for c in form.coeffs.values()
    )
    result.diagnostics["step_free"] = no_steps
    return result


# ---------------------------------------------------------------------------
# smoothness probing
# ---------------------------------------------------------------------------


@dataclass
class SmoothnessProbe:
    """Difference-quotient probe of x -> tau_x(X_1..X_k)(m)."""

    m_point: dict
    vectors: tuple = ()
    center: dict = field(default_factory=dict)
    axis: int = 1
    step: float = 0.1
    levels: int = 5


def probe_function(fn, probe):
    """First/second central difference quotients under step halving.

    A discontinuity is flagged when the first-difference quotient grows by
    10x or more across the halving ladder; bounded second differences mean
    the second-quotient growth stays under the same factor.
    """
    name = f"x{probe.axis}"
    center = dict(probe.center)
    f0 = fn(center)
    steps, first, second = [], [], []
    for level in range(probe.levels):
        h = probe.step / (2.0**level)
        up = fn({**center, name: center.get(name, 0.0) + h})
        dn = fn({**center, name: center.get(name, 0.0) - h})
        steps.append(h)
        first.append((up - dn) / (2.0 * h))
        second.append((up - 2.0 * f0 + dn) / (h * h))
    floor = 1e-9
    first_growth = abs(first[-1]) / max(abs(first[0]), floor)
    second_growth = abs(second[-1]) / max(abs(second[0]), floor)
    flagged = bool(first_growth >= 10.0 and abs(first[-1]) > 1e-6)
    bounded = bool(second_growth < 10.0 or abs(second[-1]) <= 1e-6)
    return {
        "axis": probe.axis,
        "center": center,
        "steps": steps,
        "first_quotients": first,
        "second_quotients": second,
        "first_growth": first_growth,
        "second_growth": second_growth,
        "discontinuity": flagged,
        "second_bounded": bounded,
    }


def probe_form_family(form_at, probe):
    """Probe any x -> Form family (e.g. a provider) at fixed m and vectors."""

    def fn(x_point):
        return form_at(x_point).apply(probe.m_point, probe.vectors)

    return probe_function(fn, probe)


def smoothness_report(result, probes, tolerances=None):
    """Difference-quotient diagnostics of a reconstruction's glued output."""
    family = result.family
    if family.params and family.param_grid < 3:
        raise ReconstructionError(
            "parameter grid too coarse for smoothness probing "
            f"({family.param_grid} < 3 points per axis)"
        )
    entries = []
    for probe in probes:
        name = f"x{probe.axis}"
        lo, hi = family.param_box[probe.axis - 1]
        c = probe.center.get(name, 0.0)
        if not (lo < c - probe.step and c + probe.step < hi):
            raise ReconstructionError(
                f"probe at {name}={c} with step {probe.step} leaves the "
                f"parameter box ({lo}, {hi})"
            )

        def fn(x_point):
            return result.apply(probe.m_point, x_point, probe.vectors)

        entries.append(probe_function(fn, probe))
    report = {
        "probes": entries,
        "any_discontinuity": any(e["discontinuity"] for e in entries),
        "all_second_bounded": all(e["second_bounded"] for e in entries),
    }
    result.diagnostics["smoothness"] = report
    return report
