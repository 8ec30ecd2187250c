"""Three-stage corridor OCP transcription.

Plans a minimum-time trajectory through a pair of overlapping corridors.
The maneuver is split into three stages by corridor membership: both
bodies in the first corridor, the leading body in the second, then both
in the second. Stages are coupled by full state-and-control equality at
their boundary nodes, each stage carries its own free (or frozen) motion
time, and every body vertex is kept inside its stage corridor through
shared per-edge slack variables that the objective pulls toward a safety
distance inside the walls.

The transcription is direct multiple shooting with one RK4 map per control
interval (piecewise-linear controls) and analytic Jacobians propagated
through the integrator, assembled sparsely for the NLP solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import nlp
from .geometry import Corridor, vehicle_vertices
from .vehicle import (
    Control,
    State,
    VehicleParams,
    rk4_step_array,
    rk4_interval_with_jacobians,
    shoot,
)

EPS_T_DEFAULT = 0.1  # frozen stage duration when a corridor is closed [s]


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class StageSpec:
    """One OCP stage: horizon length and corridor assignment per body.

    corridor_truck/corridor_trailer index into the corridor pair (0 or 1).
    A set T_fixed freezes the stage duration instead of optimizing it.
    """

    N: int
    corridor_truck: int
    corridor_trailer: int
    T_fixed: Optional[float] = None

    def __post_init__(self):
        if self.N < 1:
            raise InvalidSpec("stage needs at least one interval")
        if self.T_fixed is not None and self.T_fixed <= 0.0:
            raise InvalidSpec("frozen stage time must be positive")


@dataclass(frozen=True)
class OcpSpec:
    """Full problem specification for one corridor-pair solve."""

    stages: tuple[StageSpec, StageSpec, StageSpec]
    x0: State
    xf: State
    params: VehicleParams
    s_d: float = 0.05
    w0: float = 0.1
    w1: float = 0.1
    T_min: float = 0.05
    T_max: float = 60.0
    eps_T: float = EPS_T_DEFAULT
    u0: Optional[Control] = None
    uf: Optional[Control] = None
    integrator_substeps: int = 6

    def __post_init__(self):
        if len(self.stages) != 3:
            raise InvalidSpec("exactly three stages required")
        if self.w0 < 0.0 or self.w1 < 0.0 or self.s_d < 0.0:
            raise InvalidSpec("weights and safety distance must be nonnegative")
        if not (0.0 < self.T_min <= self.T_max):
            raise InvalidSpec("need 0 < T_min <= T_max")


@dataclass
class StageSolution:
    states: np.ndarray  # (N+1, 4)
    controls: np.ndarray  # (N+1, 2)
    T: float
    slack_truck: np.ndarray  # (N+1, H_truck)
    slack_trailer: np.ndarray  # (N+1, H_trailer)


@dataclass
class MultiStageSolution:
    stages: list[StageSolution]
    status: nlp.SolveStatus
    objective: float
    kkt_residual: float
    iterations: int
    z: np.ndarray
    lam_eq: np.ndarray
    lam_ineq: np.ndarray

    @property
    def converged(self) -> bool:
        return self.status is nlp.SolveStatus.CONVERGED

    @property
    def total_time(self) -> float:
        return float(sum(s.T for s in self.stages))

    def stage_start_times(self) -> list[float]:
        out, t = [], 0.0
        for s in self.stages:
            out.append(t)
            t += s.T
        return out


def assign_stage_corridors(direction: str) -> list[tuple[int, int]]:
    """Per-stage (corridor_truck, corridor_trailer) pair indices.

    The leading body enters the second corridor during stage 2: the truck
    when driving forward, the trailer when reversing.
    """
    if direction == "forward":
        return [(0, 0), (1, 0), (1, 1)]
    if direction == "reverse":
        return [(0, 0), (0, 1), (1, 1)]
    raise InvalidSpec(f"unknown direction {direction!r}")


def make_stage_specs(direction: str, horizons=(10, 10, 10)) -> tuple[StageSpec, ...]:
    assign = assign_stage_corridors(direction)
    return tuple(
        StageSpec(N=n, corridor_truck=a[0], corridor_trailer=a[1])
        for n, a in zip(horizons, assign)
    )


def close_corridor_stages(spec: OcpSpec, route_position: str) -> OcpSpec:
    """Freeze collapsed stage times near the end of the route.

    interior: all stage times free. entering_last: the first stage (the
    remaining dwell in the old corridor) is frozen to a small eps to avoid
    driving its time to zero. in_last: stages 1 and 2 frozen, only the
    final in-corridor stage keeps a meaningful duration.
    """
    if route_position == "interior":
        return spec
    if route_position == "entering_last":
        frozen = (0,)
    elif route_position == "in_last":
        frozen = (0, 1)
    else:
        raise InvalidSpec(f"unknown route position {route_position!r}")
    stages = tuple(
        replace(s, T_fixed=spec.eps_T) if j in frozen else s
        for j, s in enumerate(spec.stages)
    )
    return replace(spec, stages=stages)


class _CsrTemplate:
    """Fixed-sparsity CSR assembler: build pattern once, swap data fast."""

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
        nnz = len(rows)
        template = sp.csr_matrix(
            (np.arange(1, nnz + 1, dtype=float), (rows, cols)), shape=shape
        )
        if template.nnz != nnz:
            raise AssertionError("duplicate entries in Jacobian pattern")
        self.perm = template.data.astype(np.int64) - 1
        self.template = template

    def build(self, data: np.ndarray) -> sp.csr_matrix:
        out = self.template.copy()
        out.data = data[self.perm]
        return out


@dataclass
class _CorridorBlock:
    """Constraint bookkeeping for one (stage, body) corridor assignment."""

    stage: int
    which: str  # "truck" or "trailer"
    corridor: Corridor
    weight: float
    row0: int  # first inequality row
    slack0: int  # first slack decision index


class Transcription:
    """Maps an OcpSpec + corridor pair onto a sparse NlpProblem.

    Decision vector layout: all node states (stage-major), all node
    controls, free stage times, then slack variables ordered per stage as
    (vehicle, node, halfplane).
    """

    def __init__(self, spec: OcpSpec, pair: tuple[Corridor, Corridor]):
        if len(pair) != 2:
            raise InvalidSpec("corridor pair must have two entries")
        for s in spec.stages:
            if s.corridor_truck not in (0, 1) or s.corridor_trailer not in (0, 1):
                raise InvalidSpec("stage corridor indices must reference the pair (0 or 1)")
        self.spec = spec
        self.pair = pair
        p = spec.params

        self.nodes = [s.N + 1 for s in spec.stages]
        self.node_off = np.concatenate([[0], np.cumsum(self.nodes)])
        n_nodes = int(self.node_off[-1])
        self.nx = 4 * n_nodes
        self.nu = 2 * n_nodes
        self.base_u = self.nx
        self.base_T = self.nx + self.nu
        self.free_T = [j for j, s in enumerate(spec.stages) if s.T_fixed is None]
        self.iT = {j: self.base_T + i for i, j in enumerate(self.free_T)}
        self.base_s = self.base_T + len(self.free_T)

        # corridor blocks: per stage, truck then trailer
        self.blocks: list[_CorridorBlock] = []
        s_off = self.base_s
        row = 0
        for j, st in enumerate(spec.stages):
            for which, cidx, w in (
                ("truck", st.corridor_truck, spec.w0),
                ("trailer", st.corridor_trailer, spec.w1),
            ):
                cor = pair[cidx]
                blk = _CorridorBlock(j, which, cor, w, row0=row, slack0=s_off)
                self.blocks.append(blk)
                H = cor.halfplanes.shape[0]
                s_off += self.nodes[j] * H
                row += self.nodes[j] * H * 4
            # NOTE: slack layout per stage is (vehicle, node, halfplane)
        self.n = s_off
        self.n_corridor_rows = row

        self._build_equalities()
        self._build_inequalities()
        self._build_bounds()
        self._cache: dict[bytes, dict] = {}

    # ---- index helpers ------------------------------------------------

    def ix(self, j: int, k: int) -> int:
        return 4 * int(self.node_off[j] + k)

    def iu(self, j: int, k: int) -> int:
        return self.base_u + 2 * int(self.node_off[j] + k)

    # ---- constraint pattern construction -------------------------------

    def _build_equalities(self):
        spec = self.spec
        rows = []
        cols = []
        self.mE = 0

        def add_block(r0, row_local, col):
            rows.append(r0 + row_local)
            cols.append(col)

        # initial state
        self.row_x0 = self.mE
        for i in range(4):
            add_block(self.mE, i, self.ix(0, 0) + i)
        self.mE += 4

        # shooting defects
        self.row_defect = []
        for j, st in enumerate(spec.stages):
            self.row_defect.append(self.mE)
            for k in range(st.N):
                r0 = self.mE
                for i in range(4):  # +I on x_{k+1}
                    add_block(r0, i, self.ix(j, k + 1) + i)
                for i in range(4):  # -Dx on x_k
                    for c in range(4):
                        add_block(r0, i, self.ix(j, k) + c)
                for i in range(4):  # -Du0, -Du1
                    for c in range(2):
                        add_block(r0, i, self.iu(j, k) + c)
                for i in range(4):
                    for c in range(2):
                        add_block(r0, i, self.iu(j, k + 1) + c)
                if j in self.iT:
                    for i in range(4):
                        add_block(r0, i, self.iT[j])
                self.mE += 4

        # inter-stage stitching: state and control equality
        self.row_boundary = self.mE
        for j in (0, 1):
            for i in range(4):
                add_block(self.mE, i, self.ix(j, spec.stages[j].N) + i)
                add_block(self.mE, i, self.ix(j + 1, 0) + i)
            self.mE += 4
            for c in range(2):
                add_block(self.mE, c, self.iu(j, spec.stages[j].N) + c)
                add_block(self.mE, c, self.iu(j + 1, 0) + c)
            self.mE += 2

        # terminal state
        self.row_xf = self.mE
        for i in range(4):
            add_block(self.mE, i, self.ix(2, spec.stages[2].N) + i)
        self.mE += 4

        self.row_u0 = None
        if spec.u0 is not None:
            self.row_u0 = self.mE
            for c in range(2):
                add_block(self.mE, c, self.iu(0, 0) + c)
            self.mE += 2
        self.row_uf = None
        if spec.uf is not None:
            self.row_uf = self.mE
            for c in range(2):
                add_block(self.mE, c, self.iu(2, spec.stages[2].N) + c)
            self.mE += 2

        self._eq_tpl = _CsrTemplate(np.array(rows), np.array(cols), (self.mE, self.n))

    def _build_inequalities(self):
        spec = self.spec
        rows = []
        cols = []
        m = 0

        # corridor rows: per block, (node, halfplane, vertex)
        for blk in self.blocks:
            H = blk.corridor.halfplanes.shape[0]
            Nn = self.nodes[blk.stage]
            state_cols = (
                [0, 1, 2] if blk.which == "trailer" else [0, 1, 2, 3]
            )  # px1, py1, theta1 (+ theta0 for the truck)
            for k in range(Nn):
                xbase = self.ix(blk.stage, k)
                for h in range(H):
                    s_col = blk.slack0 + k * H + h
                    for v in range(4):
                        r = m + ((k * H + h) * 4 + v)
                        for c in state_cols:
                            rows.append(r)
                            cols.append(xbase + c)
                        rows.append(r)
                        cols.append(s_col)
            m += Nn * H * 4
        assert m == self.n_corridor_rows

        # control rate rows: per stage, interval, component, (upper, lower)
        self.row_rate = m
        for j, st in enumerate(spec.stages):
            for k in range(st.N):
                for c in range(2):
                    for _side in (0, 1):
                        rows.append(m)
                        cols.append(self.iu(j, k + 1) + c)
                        rows.append(m)
                        cols.append(self.iu(j, k) + c)
                        if j in self.iT:
                            rows.append(m)
                            cols.append(self.iT[j])
                        m += 1

        # jackknife-angle rows: per node, (upper, lower)
        self.row_beta = m
        for j, st in enumerate(spec.stages):
            for k in range(st.N + 1):
                for _side in (0, 1):
                    rows.append(m)
                    cols.append(self.ix(j, k) + 3)
                    rows.append(m)
                    cols.append(self.ix(j, k) + 2)
                    m += 1

        self.mI = m
        self._ineq_tpl = _CsrTemplate(np.array(rows), np.array(cols), (self.mI, self.n))

    def _build_bounds(self):
        spec = self.spec
        p = spec.params
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        for j in range(3):
            for k in range(self.nodes[j]):
                i = self.iu(j, k)
                lb[i : i + 2] = p.u_min
                ub[i : i + 2] = p.u_max
        for j in self.free_T:
            lb[self.iT[j]] = spec.T_min
            ub[self.iT[j]] = spec.T_max
        ub[self.base_s :] = 0.0
        self.lb, self.ub = lb, ub

    # ---- packing helpers -----------------------------------------------

    def stage_times(self, z: np.ndarray) -> list[float]:
        return [
            float(z[self.iT[j]]) if j in self.iT else float(self.spec.stages[j].T_fixed)
            for j in range(3)
        ]

    def stage_states(self, z: np.ndarray, j: int) -> np.ndarray:
        i0 = self.ix(j, 0)
        return z[i0 : i0 + 4 * self.nodes[j]].reshape(-1, 4)

    def stage_controls(self, z: np.ndarray, j: int) -> np.ndarray:
        i0 = self.iu(j, 0)
        return z[i0 : i0 + 2 * self.nodes[j]].reshape(-1, 2)

    def pack(self, states, controls, times, slacks=None) -> np.ndarray:
        """Assemble a decision vector from per-stage grids.

        states[j] is (N_j+1, 4), controls[j] is (N_j+1, 2), times[j] a
        duration (ignored for frozen stages). slacks are derived from the
        states when not given.
        """
        z = np.zeros(self.n)
        for j in range(3):
            i0 = self.ix(j, 0)
            z[i0 : i0 + 4 * self.nodes[j]] = np.asarray(states[j], float).ravel()
            i0 = self.iu(j, 0)
            z[i0 : i0 + 2 * self.nodes[j]] = np.asarray(controls[j], float).ravel()
        for j in self.free_T:
            z[self.iT[j]] = float(
                np.clip(times[j], self.spec.T_min, self.spec.T_max)
            )
        if slacks is None:
            self.fill_slacks_from_states(z)
        else:
            z[self.base_s :] = slacks
        return z

    def fill_slacks_from_states(self, z: np.ndarray):
        """Feasible-leaning slack init: max vertex residual, pulled to -s_d."""
        for blk in self.blocks:
            X = self.stage_states(z, blk.stage)
            resid = self._block_residuals(blk, X)  # (nodes, H, 4)
            worst = resid.max(axis=2)
            s = np.minimum(0.0, np.maximum(worst, -self.spec.s_d))
            H = blk.corridor.halfplanes.shape[0]
            i0 = blk.slack0
            z[i0 : i0 + X.shape[0] * H] = s.ravel()

    # ---- evaluation -----------------------------------------------------

    def _vertices(self, which: str, X: np.ndarray) -> np.ndarray:
        """Body corner positions for a batch of states, (n, 4, 2)."""
        p = self.spec.params
        if which == "trailer":
            cx, cy, th = X[:, 0], X[:, 1], X[:, 2]
            corners = p.trailer_body.corners()
        else:
            th1, th0 = X[:, 2], X[:, 3]
            cx = X[:, 0] + p.L1 * np.cos(th1) + p.M0 * np.cos(th0)
            cy = X[:, 1] + p.L1 * np.sin(th1) + p.M0 * np.sin(th0)
            th = th0
            corners = p.truck_body.corners()
        ct, st = np.cos(th), np.sin(th)
        # rotate corners: (n, 4, 2)
        rx = corners[None, :, 0] * ct[:, None] - corners[None, :, 1] * st[:, None]
        ry = corners[None, :, 0] * st[:, None] + corners[None, :, 1] * ct[:, None]
        return np.stack([cx[:, None] + rx, cy[:, None] + ry], axis=2)

    def _block_residuals(self, blk: _CorridorBlock, X: np.ndarray) -> np.ndarray:
        """Halfplane residuals per (node, halfplane, vertex), without slack."""
        V = self._vertices(blk.which, X)
        hp = blk.corridor.halfplanes
        return (
            hp[None, :, None, 0] * V[:, None, :, 0]
            + hp[None, :, None, 1] * V[:, None, :, 1]
            + hp[None, :, None, 2]
        )

    def _evaluate(self, z: np.ndarray, need_jac: bool) -> dict:
        key = z.tobytes()
        ev = self._cache.get(key)
        if ev is not None and (not need_jac or "jac" in ev):
            return ev
        if ev is None:
            ev = self._eval_values(z)
            if len(self._cache) > 6:
                self._cache.clear()
            self._cache[key] = ev
        if need_jac and "jac" not in ev:
            self._eval_jacobians(z, ev)
        return ev

    def _eval_values(self, z: np.ndarray) -> dict:
        spec = self.spec
        p = spec.params
        times = self.stage_times(z)

        f = float(sum(times))
        grad_s = np.zeros(self.n - self.base_s)
        s_all = z[self.base_s :]
        for blk in self.blocks:
            H = blk.corridor.halfplanes.shape[0]
            i0 = blk.slack0 - self.base_s
            cnt = self.nodes[blk.stage] * H
            sl = s_all[i0 : i0 + cnt]
            f += blk.weight * float(np.sum((sl + spec.s_d) ** 2))
            grad_s[i0 : i0 + cnt] = 2.0 * blk.weight * (sl + spec.s_d)

        h = np.zeros(self.mE)
        h[self.row_x0 : self.row_x0 + 4] = self.stage_states(z, 0)[0] - spec.x0.as_array()
        F_all = []
        for j, st in enumerate(spec.stages):
            X = self.stage_states(z, j)
            U = self.stage_controls(z, j)
            dt = times[j] / st.N
            F = rk4_step_array(X[:-1], U[:-1], U[1:], dt, p, spec.integrator_substeps)
            F_all.append(F)
            r0 = self.row_defect[j]
            h[r0 : r0 + 4 * st.N] = (X[1:] - F).ravel()
        r = self.row_boundary
        for j in (0, 1):
            h[r : r + 4] = self.stage_states(z, j)[-1] - self.stage_states(z, j + 1)[0]
            r += 4
            h[r : r + 2] = self.stage_controls(z, j)[-1] - self.stage_controls(z, j + 1)[0]
            r += 2
        h[self.row_xf : self.row_xf + 4] = self.stage_states(z, 2)[-1] - spec.xf.as_array()
        if self.row_u0 is not None:
            h[self.row_u0 : self.row_u0 + 2] = (
                self.stage_controls(z, 0)[0] - spec.u0.as_array()
            )
        if self.row_uf is not None:
            h[self.row_uf : self.row_uf + 2] = (
                self.stage_controls(z, 2)[-1] - spec.uf.as_array()
            )

        g = np.zeros(self.mI)
        resid_blocks = []
        for blk in self.blocks:
            X = self.stage_states(z, blk.stage)
            resid = self._block_residuals(blk, X)
            resid_blocks.append(resid)
            H = blk.corridor.halfplanes.shape[0]
            sl = z[blk.slack0 : blk.slack0 + X.shape[0] * H].reshape(X.shape[0], H)
            g[blk.row0 : blk.row0 + resid.size] = (resid - sl[:, :, None]).ravel()

        du_min = np.asarray(p.du_min)
        du_max = np.asarray(p.du_max)
        r = self.row_rate
        for j, st in enumerate(spec.stages):
            U = self.stage_controls(z, j)
            dU = U[1:] - U[:-1]  # (N, 2)
            dt = times[j] / st.N
            up = dU - du_max[None, :] * dt
            lo = -dU + du_min[None, :] * dt
            block = np.stack([up, lo], axis=2).reshape(st.N, 2, 2)
            g[r : r + 4 * st.N] = block.ravel()
            r += 4 * st.N

        r = self.row_beta
        for j, st in enumerate(spec.stages):
            X = self.stage_states(z, j)
            beta = X[:, 3] - X[:, 2]
            block = np.stack([beta - p.beta_max, p.beta_min - beta], axis=1)
            g[r : r + 2 * (st.N + 1)] = block.ravel()
            r += 2 * (st.N + 1)

        return {
            "f": f,
            "grad_slack": grad_s,
            "h": h,
            "g": g,
            "F_all": F_all,
            "resid_blocks": resid_blocks,
            "times": times,
        }

    def _eval_jacobians(self, z: np.ndarray, ev: dict):
        spec = self.spec
        p = spec.params
        times = ev["times"]

        grad = np.zeros(self.n)
        for j in self.free_T:
            grad[self.iT[j]] = 1.0
        grad[self.base_s :] = ev["grad_slack"]

        eq_data = []
        eq_data.append(np.ones(4))  # initial state identity
        for j, st in enumerate(spec.stages):
            X = self.stage_states(z, j)
            U = self.stage_controls(z, j)
            _, Dx, Du0, Du1, DT = rk4_interval_with_jacobians(
                X[:-1], U[:-1], U[1:], 1.0 / st.N, times[j], p, spec.integrator_substeps
            )
            free = j in self.iT
            for k in range(st.N):
                vals = [np.ones(4), (-Dx[k]).ravel(), (-Du0[k]).ravel(), (-Du1[k]).ravel()]
                if free:
                    vals.append(-DT[k])
                eq_data.append(np.concatenate(vals))
        for j in (0, 1):
            eq_data.append(np.tile([1.0, -1.0], 4))
            eq_data.append(np.tile([1.0, -1.0], 2))
        eq_data.append(np.ones(4))  # terminal
        if self.row_u0 is not None:
            eq_data.append(np.ones(2))
        if self.row_uf is not None:
            eq_data.append(np.ones(2))
        A_E = self._eq_tpl.build(np.concatenate(eq_data))

        in_data = []
        for blk in self.blocks:
            X = self.stage_states(z, blk.stage)
            n = X.shape[0]
            hp = blk.corridor.halfplanes
            H = hp.shape[0]
            if blk.which == "trailer":
                th = X[:, 2]
                corners = p.trailer_body.corners()
            else:
                th = X[:, 3]
                corners = p.truck_body.corners()
            ct, st_ = np.cos(th), np.sin(th)
            # derivative of the rotated corner w.r.t. the body heading
            drx = -corners[None, :, 0] * st_[:, None] - corners[None, :, 1] * ct[:, None]
            dry = corners[None, :, 0] * ct[:, None] - corners[None, :, 1] * st_[:, None]
            a = hp[:, 0]
            b = hp[:, 1]
            # d resid / d heading of the corner rotation: (n, H, 4)
            dcorner = a[None, :, None] * drx[:, None, :] + b[None, :, None] * dry[:, None, :]
            if blk.which == "trailer":
                # columns per row: px1, py1, theta1, slack
                n_rows = n * H * 4
                dat = np.empty((n_rows, 4))
                dat[:, 0] = np.broadcast_to(a[None, :, None], (n, H, 4)).ravel()
                dat[:, 1] = np.broadcast_to(b[None, :, None], (n, H, 4)).ravel()
                dat[:, 2] = dcorner.ravel()
                dat[:, 3] = -1.0
            else:
                th1 = X[:, 2]
                c1, s1 = np.cos(th1), np.sin(th1)
                # hitch-chain contribution of theta1 and axle offset of theta0
                dth1 = (
                    a[None, :, None] * (-p.L1 * s1[:, None, None])
                    + b[None, :, None] * (p.L1 * c1[:, None, None])
                )
                dth0 = (
                    dcorner
                    + a[None, :, None] * (-p.M0 * st_[:, None, None])
                    + b[None, :, None] * (p.M0 * ct[:, None, None])
                )
                n_rows = n * H * 4
                dat = np.empty((n_rows, 5))
                dat[:, 0] = np.broadcast_to(a[None, :, None], (n, H, 4)).ravel()
                dat[:, 1] = np.broadcast_to(b[None, :, None], (n, H, 4)).ravel()
                dat[:, 2] = np.broadcast_to(dth1, (n, H, 4)).ravel()
                dat[:, 3] = dth0.ravel()
                dat[:, 4] = -1.0
            in_data.append(dat.ravel())

        du_min = np.asarray(p.du_min)
        du_max = np.asarray(p.du_max)
        for j, st in enumerate(spec.stages):
            free = j in self.iT
            for k in range(st.N):
                for c in range(2):
                    if free:
                        in_data.append(
                            np.array([1.0, -1.0, -du_max[c] / st.N, -1.0, 1.0, du_min[c] / st.N])
                        )
                    else:
                        in_data.append(np.array([1.0, -1.0, -1.0, 1.0]))
        n_beta = sum(st.N + 1 for st in spec.stages)
        in_data.append(np.tile([1.0, -1.0, -1.0, 1.0], n_beta))
        A_I = self._ineq_tpl.build(np.concatenate(in_data))

        ev["jac"] = True
        ev["grad"] = grad
        ev["A_E"] = A_E
        ev["A_I"] = A_I

    # ---- NlpProblem interface -------------------------------------------

    def problem(self) -> nlp.NlpProblem:
        return nlp.NlpProblem(
            n=self.n,
            objective=lambda z: self._evaluate(z, False)["f"],
            gradient=lambda z: self._evaluate(z, True)["grad"],
            eq=lambda z: self._evaluate(z, False)["h"],
            eq_jac=lambda z: self._evaluate(z, True)["A_E"],
            ineq=lambda z: self._evaluate(z, False)["g"],
            ineq_jac=lambda z: self._evaluate(z, True)["A_I"],
            lb=self.lb,
            ub=self.ub,
            name="three-stage corridor OCP",
        )

    def unpack(self, result: nlp.SolveResult) -> MultiStageSolution:
        z = result.z
        times = self.stage_times(z)
        stages = []
        for j in range(3):
            X = self.stage_states(z, j).copy()
            U = self.stage_controls(z, j).copy()
            slacks = {}
            for blk in self.blocks:
                if blk.stage != j:
                    continue
                H = blk.corridor.halfplanes.shape[0]
                cnt = self.nodes[j] * H
                slacks[blk.which] = z[blk.slack0 : blk.slack0 + cnt].reshape(-1, H).copy()
            stages.append(
                StageSolution(
                    states=X,
                    controls=U,
                    T=times[j],
                    slack_truck=slacks["truck"],
                    slack_trailer=slacks["trailer"],
                )
            )
        return MultiStageSolution(
            stages=stages,
            status=result.status,
            objective=result.objective,
            kkt_residual=result.kkt_residual,
            iterations=result.iterations,
            z=z.copy(),
            lam_eq=result.lam_eq.copy(),
            lam_ineq=result.lam_ineq.copy(),
        )


def build_nlp(spec: OcpSpec, pair: tuple[Corridor, Corridor]) -> Transcription:
    """Validate the spec against the pair and build the transcription."""
    return Transcription(spec, pair)


@dataclass
class FeasibilityReport:
    violations: dict[str, float]
    tol: float

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.violations.values())

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.violations, key=self.violations.get)
        return name, self.violations[name]

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        rows = ", ".join(f"{k}={v:.2e}" for k, v in self.violations.items())
        return f"feasibility {status} (tol {self.tol:.1e}): {rows}"


def check_feasibility(
    sol: MultiStageSolution,
    spec: OcpSpec,
    pair: tuple[Corridor, Corridor],
    tol: float = 1.0e-4,
) -> FeasibilityReport:
    """Independent verification of a solution against every constraint family.

    States are re-simulated from the initial node through the returned
    controls with 10x finer integration substeps; corridor membership and
    bounds are evaluated with the plain per-point geometry helpers rather
    than the transcription's vectorized kernels.
    """
    p = spec.params
    v = {
        "initial_state": float(
            np.max(np.abs(sol.stages[0].states[0] - spec.x0.as_array()))
        ),
        "terminal_state": float(
            np.max(np.abs(sol.stages[2].states[-1] - spec.xf.as_array()))
        ),
    }

    b = 0.0
    for j in (0, 1):
        b = max(b, float(np.max(np.abs(sol.stages[j].states[-1] - sol.stages[j + 1].states[0]))))
        b = max(b, float(np.max(np.abs(sol.stages[j].controls[-1] - sol.stages[j + 1].controls[0]))))
    v["stage_boundary"] = b

    resim = 0.0
    for j, st in enumerate(sol.stages):
        traj = shoot(
            State.from_array(st.states[0]),
            [Control.from_array(u) for u in st.controls],
            st.T,
            p,
            substeps_per_interval=10 * spec.integrator_substeps,
        )
        resim = max(
            resim, float(np.max(np.abs(np.array([s.as_array() for s in traj]) - st.states)))
        )
    v["resimulation"] = resim

    corr = 0.0
    assign = [
        (s.corridor_truck, s.corridor_trailer) for s in spec.stages
    ]
    for j, st in enumerate(sol.stages):
        for which, cidx in (("truck", assign[j][0]), ("trailer", assign[j][1])):
            cor = pair[cidx]
            for xrow in st.states:
                verts = vehicle_vertices(State.from_array(xrow), p, which)
                corr = max(corr, float(np.max(cor.halfplanes @ verts.T)))
    v["corridor"] = max(corr, 0.0)

    ub_u = np.asarray(p.u_max)
    lb_u = np.asarray(p.u_min)
    cb = 0.0
    rb = 0.0
    bb = 0.0
    tb = 0.0
    for j, st in enumerate(sol.stages):
        U = st.controls
        cb = max(cb, float(np.max(np.maximum(U - ub_u, lb_u - U), initial=0.0)))
        dt = st.T / (U.shape[0] - 1)
        rates = (U[1:] - U[:-1]) / dt
        rb = max(
            rb,
            float(
                np.max(
                    np.maximum(rates - np.asarray(p.du_max), np.asarray(p.du_min) - rates),
                    initial=0.0,
                )
            ),
        )
        beta = st.states[:, 3] - st.states[:, 2]
        bb = max(bb, float(np.max(np.maximum(beta - p.beta_max, p.beta_min - beta), initial=0.0)))
        sspec = spec.stages[j]
        if sspec.T_fixed is not None:
            tb = max(tb, abs(st.T - sspec.T_fixed))
        else:
            tb = max(tb, spec.T_min - st.T, st.T - spec.T_max, 0.0)
    v["control_bounds"] = cb
    v["rate_bounds"] = rb
    v["beta_bounds"] = bb
    v["time_bounds"] = tb

    return FeasibilityReport(violations=v, tol=tol)
