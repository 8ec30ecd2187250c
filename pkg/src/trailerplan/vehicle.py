"""Truck-trailer kinematics: model equations and fixed-step RK4 integration.

The truck (vehicle 0) tows a single trailer (vehicle 1). The state is the
trailer axle pose plus the truck heading; the control is the truck's
longitudinal and angular velocity. The same integrator drives both the
trajectory transcription and the plant simulation, so it lives here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = -((-a + math.pi) % (2.0 * math.pi) - math.pi)
    return w if w != -math.pi else math.pi


@dataclass(frozen=True)
class BodyRect:
    """Rectangular body footprint relative to the axle center.

    length_front extends along the heading, length_rear against it.
    """

    length_front: float
    length_rear: float
    half_width: float

    def __post_init__(self):
        if self.half_width <= 0.0:
            raise ValueError("body half_width must be positive")
        if self.length_front + self.length_rear <= 0.0:
            raise ValueError("body must have positive length")

    @property
    def length(self) -> float:
        return self.length_front + self.length_rear

    @property
    def width(self) -> float:
        return 2.0 * self.half_width

    def corners(self) -> np.ndarray:
        """Body-frame corner points, counterclockwise, shape (4, 2)."""
        lf, lr, hw = self.length_front, self.length_rear, self.half_width
        return np.array(
            [[lf, -hw], [lf, hw], [-lr, hw], [-lr, -hw]], dtype=float
        )


def _centered(length: float, width: float) -> BodyRect:
    return BodyRect(length / 2.0, length / 2.0, width / 2.0)


@dataclass(frozen=True)
class VehicleParams:
    """Geometric and actuation parameters of the truck-trailer combination.

    L1 is the hitch-to-trailer-axle distance, M0 the truck-axle-to-hitch
    distance. Defaults are lab-scale values; every field is expected to be
    overridden from scenario configuration when they matter.
    """

    L1: float = 0.6
    M0: float = 0.05
    truck_body: BodyRect = field(default_factory=lambda: _centered(0.45, 0.30))
    trailer_body: BodyRect = field(default_factory=lambda: _centered(0.60, 0.30))
    u_min: tuple[float, float] = (-0.5, -1.5)
    u_max: tuple[float, float] = (0.5, 1.5)
    du_min: tuple[float, float] = (-1.0, -3.0)
    du_max: tuple[float, float] = (1.0, 3.0)
    beta_min: float = -1.2
    beta_max: float = 1.2

    def __post_init__(self):
        if self.L1 <= 0.0:
            raise ValueError("L1 must be positive")
        if self.M0 < 0.0:
            raise ValueError("M0 must be nonnegative")
        for lo, hi in zip(self.u_min, self.u_max):
            if not lo < hi:
                raise ValueError("u_min must be below u_max componentwise")
        for lo, hi in zip(self.du_min, self.du_max):
            if not lo < hi:
                raise ValueError("du_min must be below du_max componentwise")
        if not (self.beta_min < 0.0 < self.beta_max):
            raise ValueError("jackknife bounds must straddle zero")


@dataclass(frozen=True)
class State:
    """Trailer axle pose (px1, py1, theta1) plus truck heading theta0.

    Headings are stored unwrapped; only relative angles get wrapped.
    """

    px1: float
    py1: float
    theta1: float
    theta0: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px1, self.py1, self.theta1, self.theta0])

    @staticmethod
    def from_array(x: np.ndarray) -> "State":
        return State(float(x[0]), float(x[1]), float(x[2]), float(x[3]))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px1, self.py1])


@dataclass(frozen=True)
class Control:
    """Truck longitudinal velocity v0 and angular velocity omega0."""

    v0: float
    omega0: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v0, self.omega0])

    @staticmethod
    def from_array(u: np.ndarray) -> "Control":
        return Control(float(u[0]), float(u[1]))


def beta01(x: State) -> float:
    """Relative truck-trailer angle theta0 - theta1, wrapped to (-pi, pi]."""
    return wrap_angle(x.theta0 - x.theta1)


def trailer_speed(x_arr: np.ndarray, u_arr: np.ndarray, p: VehicleParams):
    """Longitudinal trailer speed v1 induced by the truck motion."""
    beta = x_arr[..., 3] - x_arr[..., 2]
    return u_arr[..., 0] * np.cos(beta) + p.M0 * np.sin(beta) * u_arr[..., 1]


def ode_array(x_arr: np.ndarray, u_arr: np.ndarray, p: VehicleParams) -> np.ndarray:
    """Kinematic ODE right-hand side; broadcasts over leading axes.

    x_arr (..., 4), u_arr (..., 2) -> (..., 4).
    """
    theta1 = x_arr[..., 2]
    beta = x_arr[..., 3] - theta1
    v0 = u_arr[..., 0]
    om0 = u_arr[..., 1]
    sb, cb = np.sin(beta), np.cos(beta)
    v1 = v0 * cb + p.M0 * sb * om0
    out = np.empty(np.broadcast_shapes(x_arr.shape[:-1], u_arr.shape[:-1]) + (4,))
    out[..., 0] = v1 * np.cos(theta1)
    out[..., 1] = v1 * np.sin(theta1)
    out[..., 2] = (v0 / p.L1) * sb - (p.M0 / p.L1) * cb * om0
    out[..., 3] = om0
    return out


def ode_jacobians(x_arr: np.ndarray, u_arr: np.ndarray, p: VehicleParams):
    """Analytic d f/d x (..., 4, 4) and d f/d u (..., 4, 2) of the ODE.

    Only theta1 and theta0 enter f, so the state Jacobian has two nonzero
    columns. Used by the forward-mode chain through the RK4 steps.
    """
    theta1 = x_arr[..., 2]
    beta = x_arr[..., 3] - theta1
    v0 = u_arr[..., 0]
    om0 = u_arr[..., 1]
    sb, cb = np.sin(beta), np.cos(beta)
    s1, c1 = np.sin(theta1), np.cos(theta1)
    v1 = v0 * cb + p.M0 * sb * om0
    # d v1 / d beta and d f3 / d beta (the latter collapses to v1 / L1)
    dv1_db = -v0 * sb + p.M0 * cb * om0
    df3_db = v1 / p.L1

    shape = np.broadcast_shapes(x_arr.shape[:-1], u_arr.shape[:-1])
    A = np.zeros(shape + (4, 4))
    A[..., 0, 2] = -dv1_db * c1 - v1 * s1
    A[..., 0, 3] = dv1_db * c1
    A[..., 1, 2] = -dv1_db * s1 + v1 * c1
    A[..., 1, 3] = dv1_db * s1
    A[..., 2, 2] = -df3_db
    A[..., 2, 3] = df3_db

    B = np.zeros(shape + (4, 2))
    B[..., 0, 0] = cb * c1
    B[..., 0, 1] = p.M0 * sb * c1
    B[..., 1, 0] = cb * s1
    B[..., 1, 1] = p.M0 * sb * s1
    B[..., 2, 0] = sb / p.L1
    B[..., 2, 1] = -p.M0 * cb / p.L1
    B[..., 3, 1] = 1.0
    return A, B


def ode(x: State, u: Control, p: VehicleParams) -> np.ndarray:
    """State derivative (d px1, d py1, d theta1, d theta0)."""
    return ode_array(x.as_array(), u.as_array(), p)


def rk4_step_array(
    x: np.ndarray,
    u0: np.ndarray,
    u1: np.ndarray,
    dt: float,
    p: VehicleParams,
    substeps: int = 1,
) -> np.ndarray:
    """Classical RK4 over one control interval, broadcasting over nodes.

    The control is interpolated linearly from u0 at the interval start to
    u1 at its end; each RK4 stage samples the interpolant at its own time.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    h = dt / substeps
    y = np.asarray(x, dtype=float)
    for m in range(substeps):
        la = m / substeps
        lm = (m + 0.5) / substeps
        lb = (m + 1) / substeps
        ua = (1.0 - la) * u0 + la * u1
        um = (1.0 - lm) * u0 + lm * u1
        ub = (1.0 - lb) * u0 + lb * u1
        k1 = ode_array(y, ua, p)
        k2 = ode_array(y + 0.5 * h * k1, um, p)
        k3 = ode_array(y + 0.5 * h * k2, um, p)
        k4 = ode_array(y + h * k3, ub, p)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def rk4_step(
    x: State, u0: Control, u1: Control, dt: float, p: VehicleParams, substeps: int = 1
) -> State:
    y = rk4_step_array(x.as_array(), u0.as_array(), u1.as_array(), dt, p, substeps)
    return State.from_array(y)


def shoot(
    x: State,
    controls,
    T: float,
    p: VehicleParams,
    substeps_per_interval: int = 1,
) -> list[State]:
    """Propagate through a piecewise-linear control profile of duration T.

    controls holds the node values (>= 2); interval k interpolates between
    nodes k and k+1. Returns the state at every control node.
    """
    u = np.asarray(
        [c.as_array() if isinstance(c, Control) else np.asarray(c, float) for c in controls]
    )
    if u.shape[0] < 2:
        raise ValueError("need at least two control nodes")
    if T <= 0.0:
        raise ValueError("horizon T must be positive")
    n_int = u.shape[0] - 1
    dt = T / n_int
    y = x.as_array()
    out = [State.from_array(y)]
    for k in range(n_int):
        y = rk4_step_array(y, u[k], u[k + 1], dt, p, substeps_per_interval)
        out.append(State.from_array(y))
    return out


def rk4_interval_with_jacobians(
    x: np.ndarray,
    u0: np.ndarray,
    u1: np.ndarray,
    dt_per_dT: float,
    T: float,
    p: VehicleParams,
    substeps: int = 1,
):
    """RK4 over a batch of intervals plus derivatives of the endpoint map.

    All intervals share the duration dt = dt_per_dT * T (one stage). Inputs
    x (N, 4), u0/u1 (N, 2). Returns the propagated states together with the
    Jacobians of the endpoint w.r.t. the interval start state (N, 4, 4), the
    two control nodes (N, 4, 2) each, and the stage time T (N, 4).

    Forward-mode accumulation: each RK4 stage contributes through the chain
    A_k = df/dx and B_k = df/du; the stage sample times are fixed fractions
    of the interval, so the control interpolation weights do not depend on T.
    """
    N = x.shape[0]
    dt = dt_per_dT * T
    h = dt / substeps
    h_T = dt_per_dT / substeps  # dh/dT

    y = np.array(x, dtype=float)
    Dx = np.broadcast_to(np.eye(4), (N, 4, 4)).copy()
    Du0 = np.zeros((N, 4, 2))
    Du1 = np.zeros((N, 4, 2))
    DT = np.zeros((N, 4))

    eye2 = np.eye(2)
    for m in range(substeps):
        la = m / substeps
        lm = (m + 0.5) / substeps
        lb = (m + 1) / substeps
        stage_y = y
        sDx, sDu0, sDu1, sDT = Dx, Du0, Du1, DT

        ks = []
        dks = []  # tuples (Dk_x, Dk_u0, Dk_u1, Dk_T)
        for lam, coeff in ((la, 0.0), (lm, 0.5), (lm, 0.5), (lb, 1.0)):
            if ks:
                k_prev = ks[-1]
                dk_prev = dks[-1]
                yy = stage_y + coeff * h * k_prev
                Dyy_x = sDx + coeff * h * dk_prev[0]
                Dyy_u0 = sDu0 + coeff * h * dk_prev[1]
                Dyy_u1 = sDu1 + coeff * h * dk_prev[2]
                Dyy_T = sDT + coeff * h * dk_prev[3] + coeff * h_T * k_prev
            else:
                yy = stage_y
                Dyy_x, Dyy_u0, Dyy_u1, Dyy_T = sDx, sDu0, sDu1, sDT
            uu = (1.0 - lam) * u0 + lam * u1
            k = ode_array(yy, uu, p)
            A, B = ode_jacobians(yy, uu, p)
            Dk_x = np.einsum("nij,njk->nik", A, Dyy_x)
            Dk_u0 = np.einsum("nij,njk->nik", A, Dyy_u0) + (1.0 - lam) * np.einsum(
                "nij,jk->nik", B, eye2
            )
            Dk_u1 = np.einsum("nij,njk->nik", A, Dyy_u1) + lam * np.einsum(
                "nij,jk->nik", B, eye2
            )
            Dk_T = np.einsum("nij,nj->ni", A, Dyy_T)
            ks.append(k)
            dks.append((Dk_x, Dk_u0, Dk_u1, Dk_T))

        ksum = ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3]
        y = stage_y + (h / 6.0) * ksum
        Dx = sDx + (h / 6.0) * (dks[0][0] + 2 * dks[1][0] + 2 * dks[2][0] + dks[3][0])
        Du0 = sDu0 + (h / 6.0) * (dks[0][1] + 2 * dks[1][1] + 2 * dks[2][1] + dks[3][1])
        Du1 = sDu1 + (h / 6.0) * (dks[0][2] + 2 * dks[1][2] + 2 * dks[2][2] + dks[3][2])
        DT = (
            sDT
            + (h / 6.0) * (dks[0][3] + 2 * dks[1][3] + 2 * dks[2][3] + dks[3][3])
            + (h_T / 6.0) * ksum
        )
    return y, Dx, Du0, Du1, DT
