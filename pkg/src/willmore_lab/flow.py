"""Explicit time stepping of the Willmore flow with step rejection.

Each step moves every vertex along its exterior normal by ``dt * W`` in chart
coordinates.  This is first-order consistent with the flow and avoids a
geodesic solve per vertex.  Time steps follow a quartic CFL rule, and a step
is retried with half the time step when the energy rises or mesh quality
drops below the thresholds.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional

import numpy as np

from .ambient import AmbientSpace
from .errors import BadParams, DegenerateTriangle, OutOfChart, RankDeficientFit, StepFailure
from .mesh import Immersion, QualityReport, edge_lengths, quality_report
from .shape import ShapeState, shape_state


@dataclass(frozen=True)
class StepControl:
    """Time-step and abort settings.

    ``length_scale`` is the curvature length used by the CFL clamp and the
    curvature cap (``curvature_cap`` defaults to ``1e3 / length_scale``).
    """

    cfl: float = 0.05
    max_dt: float = math.inf
    energy_tol: float = 1e-8
    min_angle_deg: float = 5.0
    max_aspect: float = 25.0
    length_scale: float = 1.0
    curvature_cap: Optional[float] = None
    max_rejections: int = 20
    max_steps: Optional[int] = None

    def __post_init__(self):
        if not self.cfl > 0:
            raise BadParams("cfl must be positive")
        if not self.energy_tol >= 0:
            raise BadParams("energy_tol must be nonnegative")
        if not self.max_dt > 0:
            raise BadParams("max_dt must be positive")
        if not self.length_scale > 0:
            raise BadParams("length_scale must be positive")

    @property
    def cap(self) -> float:
        return 1e3 / self.length_scale if self.curvature_cap is None else self.curvature_cap

    def quality_ok(self, q: QualityReport) -> bool:
        return q.acceptable(self.min_angle_deg, self.max_aspect)


@dataclass(frozen=True)
class FlowState:
    immersion: Immersion
    shape: ShapeState
    quality: QualityReport
    dt_last: float = 0.0
    step_index: int = 0
    rejections: int = 0

    @property
    def t(self) -> float:
        return self.immersion.t

    @property
    def energy(self) -> float:
        return self.shape.energy

    @property
    def ambient(self) -> AmbientSpace:
        return self.shape.ambient


def initial_state(im: Immersion, amb: AmbientSpace) -> FlowState:
    return FlowState(im, shape_state(im, amb), quality_report(im, amb))


def propose_dt(state: FlowState, ctl: StepControl) -> float:
    """``cfl * h_min^4 / max(1, (|A|_max * length_scale)^4)``, clipped to ``max_dt``."""
    h = float(edge_lengths(state.immersion, state.ambient).min())
    clamp = max(1.0, (state.shape.max_abs_A * ctl.length_scale) ** 4)
    return min(ctl.cfl * h**4 / clamp, ctl.max_dt)


def _advance(state: FlowState, dt: float, t_new: float) -> Immersion:
    sh = state.shape
    v = state.immersion.vertices + dt * sh.W[:, None] * sh.nu
    return state.immersion.with_vertices(v, t_new)


def step(state: FlowState, ctl: StepControl, dt: float | None = None, land_on: float | None = None) -> FlowState:
    """One accepted explicit Euler step, halving ``dt`` on rejection.

    ``land_on`` pins the new time exactly when the first attempt succeeds,
    so a run can finish on its horizon without rounding drift.  Raises
    :class:`StepFailure` after ``ctl.max_rejections`` rejections and
    :class:`OutOfChart` when a vertex leaves the ambient chart.
    """
    amb = state.ambient
    if dt is None:
        dt = propose_dt(state, ctl)
    if dt < 0:
        raise BadParams("dt must be nonnegative")
    if dt == 0:
        return replace(state, step_index=state.step_index + 1, dt_last=0.0, rejections=0)
    e0 = state.energy
    cause = None
    for attempt in range(ctl.max_rejections + 1):
        t_new = land_on if (attempt == 0 and land_on is not None) else state.t + dt
        im = _advance(state, dt, t_new)
        if not np.all(amb.in_chart(im.vertices)):
            bad = np.flatnonzero(~amb.in_chart(im.vertices))
            raise OutOfChart(f"vertex {bad[0]} left the chart at t={im.t:.6g}")
        try:
            sh = shape_state(im, amb)
            q = quality_report(im, amb)
        except (DegenerateTriangle, RankDeficientFit) as exc:
            cause = str(exc)
        else:
            if sh.energy - e0 > ctl.energy_tol * (1.0 + abs(e0)):
                cause = "energy"
            elif not (np.isfinite(sh.energy) and ctl.quality_ok(q)):
                cause = "quality"
            else:
                return FlowState(im, sh, q, dt, state.step_index + 1, attempt)
        if attempt < ctl.max_rejections:
            dt *= 0.5
    raise StepFailure(
        f"step {state.step_index + 1} rejected {ctl.max_rejections} times ({cause})", cause=cause
    )


class Termination(str, enum.Enum):
    HORIZON = "Horizon"
    STEP_FAILURE = "StepFailure"
    QUALITY_ABORT = "QualityAbort"
    CURVATURE_CAP = "CurvatureCap"
    OUT_OF_CHART = "OutOfChart"
    MAX_STEPS = "MaxSteps"


@dataclass
class RunSummary:
    reason: Termination
    final: FlowState
    steps: int
    rejections: int
    message: str = ""
    blowup_time: Optional[float] = None
    cap: float = math.inf


def run(
    state0: FlowState,
    ctl: StepControl,
    horizon: float,
    callbacks: Iterable[Callable[[FlowState], None]] = (),
    snapshot_every: int = 0,
    on_snapshot: Optional[Callable[[FlowState], None]] = None,
) -> RunSummary:
    """Integrate until ``horizon`` or an abort condition.

    ``callbacks`` run after every accepted step; ``on_snapshot`` runs for the
    initial state and then every ``snapshot_every`` accepted steps (and for
    the final state).  The curvature cap records the termination time as the
    blow-up estimate.
    """
    if horizon < 0:
        raise BadParams("horizon must be nonnegative")
    callbacks = list(callbacks)
    state = state0
    rejections = 0
    last_snap = -1

    def snap(s):
        nonlocal last_snap
        if on_snapshot is not None and s.step_index != last_snap:
            on_snapshot(s)
            last_snap = s.step_index

    def done(reason, message="", blowup=None):
        snap(state)
        return RunSummary(reason, state, state.step_index - state0.step_index, rejections,
                          message, blowup, ctl.cap)

    snap(state)
    while True:
        if state.shape.max_abs_A > ctl.cap:
            return done(Termination.CURVATURE_CAP, f"|A| exceeded {ctl.cap:g}", state.t)
        if state.t >= horizon:
            return done(Termination.HORIZON)
        if not ctl.quality_ok(state.quality):
            return done(Termination.QUALITY_ABORT, "mesh quality below thresholds")
        if ctl.max_steps is not None and state.step_index - state0.step_index >= ctl.max_steps:
            return done(Termination.MAX_STEPS)
        dt = propose_dt(state, ctl)
        remaining = horizon - state.t
        last = dt >= remaining
        try:
            new = step(state, ctl, remaining, land_on=horizon) if last else step(state, ctl, dt)
        except OutOfChart as exc:
            return done(Termination.OUT_OF_CHART, str(exc))
        except StepFailure as exc:
            reason = Termination.QUALITY_ABORT if exc.cause == "quality" else Termination.STEP_FAILURE
            return done(reason, str(exc))
        rejections += new.rejections
        state = new
        for cb in callbacks:
            cb(state)
        if snapshot_every and (state.step_index - state0.step_index) % snapshot_every == 0:
            snap(state)
