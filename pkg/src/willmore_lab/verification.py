"""Verification suites runnable from the command line.

Each suite returns a list of :class:`Check` rows (name, value, bound,
passed).  ``all`` is the concatenation of the three suites in order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import ambient as ambient_mod
from . import diagnostics as dg
from .ambient import AmbientSpace
from .flow import StepControl, initial_state, propose_dt, step
from .io import meshgen
from .mesh import edge_lengths
from .shape import gauss_codazzi_residuals, shape_state, simons_residual

SUITES = ("identities", "evolution", "sobolev")


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    bound: float
    passed: bool
    relation: str = "<="

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<44} {self.value:>14.6g} {self.relation:>2} {self.bound:<12.6g} {status}"


def _le(name, value, bound):
    return Check(name, float(value), float(bound), bool(value <= bound), "<=")


def _ge(name, value, bound):
    return Check(name, float(value), float(bound), bool(value >= bound), ">=")


def convergence_order(h, err) -> float:
    """Least-squares slope of log err against log h."""
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def l2(values, weights) -> float:
    return math.sqrt(float(np.dot(np.asarray(values) ** 2, weights)))


# ---------------------------------------------------------------- identities
def identity_residuals(amb: AmbientSpace, levels=(3, 4, 5), axes=None) -> dict:
    """L2 residuals of the Gauss, Codazzi and Simons identities on ellipsoids."""
    if axes is None:
        axes = (2.0, 1.0, 1.0) if amb.kind == "euclidean" else (0.6, 0.3, 0.3)
    out = {"h": [], "gauss": [], "codazzi": [], "simons": []}
    for lv in levels:
        im = meshgen.ellipsoid(*axes, level=lv)
        st = shape_state(im, amb)
        gc = gauss_codazzi_residuals(im, amb, st)
        w = st.dual_area
        out["h"].append(float(edge_lengths(im, amb).max()))
        out["gauss"].append(l2(gc.gauss, w))
        out["codazzi"].append(l2(gc.codazzi, w))
        out["simons"].append(l2(simons_residual(im, amb, st), w))
    return out


def sphere_stationarity(levels=(3, 4, 5)) -> dict:
    E = ambient_mod.euclidean()
    h, wmax, energy = [], [], []
    for lv in levels:
        im = meshgen.icosphere(lv)
        st = shape_state(im, E)
        h.append(float(edge_lengths(im, E).max()))
        wmax.append(float(np.abs(st.W).max()))
        energy.append(st.energy)
    return {"h": h, "max_W": wmax, "energy": energy, "levels": list(levels)}


def suite_identities(amb: Optional[AmbientSpace] = None) -> list[Check]:
    amb = amb if amb is not None else ambient_mod.euclidean()
    checks = []
    sph = sphere_stationarity()
    checks.append(_ge("sphere max|W| order in h", convergence_order(sph["h"], sph["max_W"]), 0.8))
    i4 = sph["levels"].index(4)
    checks.append(_le("sphere level-4 |energy/4pi - 1|", abs(sph["energy"][i4] / (4 * math.pi) - 1), 0.02))
    res = identity_residuals(amb)
    for name in ("gauss", "codazzi", "simons"):
        r = res[name]
        mono = all(b < a for a, b in zip(r, r[1:]))
        checks.append(Check(f"{name} L2 residual monotone", float(mono), 1.0, mono, "=="))
        checks.append(_ge(f"{name} L2 residual order in h", convergence_order(res["h"], r), 0.5))
    return checks


# ----------------------------------------------------------------- evolution
def three_states(state0, dt, ctl=None):
    ctl = ctl if ctl is not None else StepControl()
    a = step(state0, ctl, dt)
    b = step(a, ctl, dt)
    if a.dt_last != dt or b.dt_last != dt:
        raise RuntimeError("a step was rejected; the evolution check needs constant dt")
    return [state0, a, b]


def evolution_slopes(amb: AmbientSpace, level=4, refinements=3, radius=1.0, move=2e-3) -> dict:
    """Time-part residuals of the evolution equations under dt halving.

    The first step moves vertices by ``move`` times the shortest edge.  Much
    smaller steps leave the time residual on the round-off floor, where it
    shows no slope.
    """
    s0 = initial_state(meshgen.geodesic_sphere(amb, radius, level), amb)
    speed = float(np.abs(s0.shape.W).max())
    dt0 = move * float(edge_lengths(s0.immersion, amb).min()) / max(speed, 1e-300)
    dt0 = min(dt0, 64.0 * propose_dt(s0, StepControl()))
    # two steps only: the energy guard is off since the check is kinematic
    ctl = StepControl(energy_tol=math.inf)
    dts, reports = [], []
    for k in range(refinements):
        dt = dt0 / 2**k
        reports.append(dg.evolution_fd_check(three_states(s0, dt, ctl), amb))
        dts.append(dt)
    return {"dt": dts, "reports": reports}


def gradient_flow_defects(state0, steps: int, ctl=None, factor: float = 0.5) -> np.ndarray:
    """Per-step ``|dE/dt + factor * int W^2| / (factor * int W^2)`` along a run."""
    ctl = ctl if ctl is not None else StepControl()
    s = state0
    out = []
    for _ in range(steps):
        rate_ref = factor * float(np.dot(s.shape.W**2, s.shape.dual_area))
        new = step(s, ctl)
        rate = (new.energy - s.energy) / new.dt_last
        out.append(abs(rate + rate_ref) / rate_ref)
        s = new
    return np.asarray(out)


def stable_dt_slopes(state0, amb: AmbientSpace, refinements=3) -> dict:
    """Time-part residuals for dt = stable step, halved ``refinements - 1`` times."""
    ctl = StepControl(energy_tol=math.inf)
    dt0 = propose_dt(state0, StepControl())
    dts = [dt0 / 2**k for k in range(refinements)]
    reports = [dg.evolution_fd_check(three_states(state0, dt, ctl), amb) for dt in dts]
    return {"dt": dts, "reports": reports}


def suite_evolution(amb: Optional[AmbientSpace] = None) -> list[Check]:
    """Evolution-equation and energy-rate checks.

    Umbilic spheres in a space form move almost rigidly, so their time
    residual is only visible above the stable step; the ellipsoid case probes
    genuinely non-rigid motion at stable steps.  The ellipsoid uses the given
    ambient when it is Euclidean or conformal, where unit-scale surfaces fit.
    """
    H = ambient_mod.hyperbolic(-1.0)
    ev = evolution_slopes(H, radius=1.0)
    checks = []
    for q in ("dmu", "g"):
        t = [r[q].time_l2 for r in ev["reports"]]
        checks.append(_ge(f"H3 sphere {q} time-part slope in dt", convergence_order(ev["dt"], t), 1.0))
    checks.append(_le("H3 sphere dmu vs H F max relative error", ev["reports"][-1]["dmu"].rel_max, 0.05))
    ea = amb if amb is not None and amb.kind in ("euclidean", "conformal") else ambient_mod.euclidean()
    s0 = initial_state(meshgen.ellipsoid(1.5, 1.0, 1.0, level=3), ea)
    ev = stable_dt_slopes(s0, ea)
    for q in ("dmu", "g", "nu"):
        t = [r[q].time_l2 for r in ev["reports"]]
        checks.append(_ge(f"ellipsoid {q} time-part slope in dt", convergence_order(ev["dt"], t), 1.0))
    d = gradient_flow_defects(s0, 40)
    checks.append(_le("energy rate vs -1/2 int W^2 (median)", float(np.median(d)), 0.1))
    return checks


# ------------------------------------------------------------------- umbilic
def _cot_kappa(kappa, r):
    if kappa < 0:
        s = math.sqrt(-kappa)
        return s / math.tanh(s * r)
    if kappa > 0:
        s = math.sqrt(kappa)
        return s / math.tan(s * r)
    return 1.0 / r


def umbilic_radius(kappa: float, r0: float, times) -> np.ndarray:
    """Radius of a shrinking geodesic sphere, ``dr/dt = 4 kappa cot_kappa(r)``.

    Integrated with scipy's adaptive RK45, independently of the mesh code.
    """
    from scipy.integrate import solve_ivp

    times = np.asarray(times, dtype=float)
    sol = solve_ivp(lambda t, r: [4.0 * kappa * _cot_kappa(kappa, r[0])], (0.0, float(times.max())), [r0],
                    t_eval=times, rtol=1e-12, atol=1e-14, method="RK45")
    return sol.y[0]


def umbilic_tracking(amb: AmbientSpace, r0=1.0, level=4, change=0.1, ctl=None) -> dict:
    """Flow a geodesic sphere until its radius moved by ``change * r0``.

    Returns times, mean measured radii and the ODE radii at the same times.
    """
    kappa = amb.curvature
    ctl = ctl if ctl is not None else StepControl()
    s = initial_state(meshgen.geodesic_sphere(amb, r0, level), amb)
    origin = np.zeros(3)
    ts, rs = [0.0], [float(amb.geodesic_distance(origin, s.immersion.vertices).mean())]
    while abs(rs[-1] - r0) < change * r0:
        s = step(s, ctl)
        ts.append(s.t)
        rs.append(float(amb.geodesic_distance(origin, s.immersion.vertices).mean()))
    ref = umbilic_radius(kappa, r0, ts)
    return {"t": np.asarray(ts), "radius": np.asarray(rs), "ode": ref,
            "rel_err": np.abs(np.asarray(rs) - ref) / ref}


# ------------------------------------------------------------------- sobolev
def sobolev_corpus(amb: Optional[AmbientSpace] = None) -> list:
    """(label, ambient, immersion) triples covering several shapes."""
    E = ambient_mod.euclidean()
    H = ambient_mod.hyperbolic(-1.0)
    corpus = [
        ("sphere", E, meshgen.icosphere(3)),
        ("ellipsoid", E, meshgen.ellipsoid(1.5, 1.0, 1.0, level=3)),
        ("torus", E, meshgen.torus(2.0, 1.0, 32, 16)),
        ("dumbbell", E, meshgen.dumbbell(0.3, 3)),
        ("H3 sphere", H, meshgen.geodesic_sphere(H, 1.0, 3)),
    ]
    if amb is not None and amb.kind not in ("euclidean", "hyperbolic"):
        corpus.append(("config sphere", amb, meshgen.geodesic_sphere(amb, 0.5, 3)))
    return corpus


def random_test_functions(rng, im, count):
    """Nonnegative fields: uniform noise, bumps around random vertices, indicators."""
    n = im.n_vertices
    v = im.vertices
    out = []
    for k in range(count):
        kind = k % 3
        if kind == 0:
            out.append(rng.random(n))
        elif kind == 1:
            c = v[rng.integers(n)]
            s = 0.2 + rng.random()
            out.append(np.exp(-((v - c) ** 2).sum(1) / s**2))
        else:
            out.append((rng.random(n) < 0.3).astype(float) * rng.random())
    return out


def hs_sweep(corpus, n_functions=10, seed=0, constant=dg.HS_CONSTANT) -> dict:
    rng = np.random.default_rng(seed)
    fails = checked = 0
    worst = 0.0
    for _, amb, im in corpus:
        st = shape_state(im, amb)
        for u in random_test_functions(rng, im, n_functions):
            r = dg.hoffman_spruck_check(st, amb, u, constant=constant)
            if r.conditions_ok:
                checked += 1
                fails += not r.ok
                worst = max(worst, r.lhs / r.rhs if r.rhs > 0 else 0.0)
    return {"checked": checked, "failures": fails, "worst_ratio": worst}


def suite_sobolev(amb: Optional[AmbientSpace] = None) -> list[Check]:
    corpus = sobolev_corpus(amb)
    checks = []
    hs = hs_sweep(corpus)
    checks.append(_le("Sobolev inequality failures", hs["failures"], 0))
    checks.append(_le("Sobolev worst lhs/rhs", hs["worst_ratio"], 1 + dg.HS_SLACK))
    viol = 0
    for _, a, im in corpus:
        st = shape_state(im, a)
        for rho in (0.25, 0.5):
            viol += not dg.covering_check(st, a, rho).ok
    checks.append(_le("covering relation violations", viol, 0))
    E = ambient_mod.euclidean()
    sph = shape_state(meshgen.icosphere(3), E)
    for rho in (0.5, 1.0):
        rep = dg.CutoffFunction((1.0, 0.0, 0.0), rho, E).check(sph)
        checks.append(_le(f"cutoff max|grad| rho={rho}", rep.grad_max, rep.grad_bound))
    ell = shape_state(meshgen.ellipsoid(1.5, 1.0, 1.0, level=3), E)
    ms = dg.multiplicative_sobolev_check(ell, E, dg.CutoffFunction((1.5, 0.0, 0.0), 1.0, E))
    checks.append(_le("multiplicative Sobolev empirical constant", ms.c_min, 1e6))
    return checks


SUITE_FUNCS: dict[str, Callable] = {
    "identities": suite_identities,
    "evolution": suite_evolution,
    "sobolev": suite_sobolev,
}


def run_suite(name: str, amb: Optional[AmbientSpace] = None) -> list[Check]:
    names = SUITES if name == "all" else (name,)
    checks = []
    for n in names:
        checks.extend(SUITE_FUNCS[n](amb))
    return checks
