"""Construction of self-gravitating kinetic steady states.

A steady profile is determined by two negative multipliers (lambda, mu) and
takes the form Q(r, u) = G(((kinetic(u) + phi(r) - lambda)/mu)_+), where G is
the inverse derivative of the convex Casimir weight and phi is the profile's
own gravitational potential. Writing psi = phi - lambda turns the
self-consistency problem into an autonomous radial ODE,

    (r^2 psi')' = r^2 h(psi),    psi(0) = psi0 < 0, psi'(0) = 0,

where h(psi) is the velocity-space moment of G at local depth -psi. The
profile's support ends where psi crosses zero; matching the exterior vacuum
solution A - B/r there and requiring phi -> 0 at infinity *emits* lambda = -A.
Two independent solvers are provided (outward shooting, and a damped
Newton-Kantorovich iteration on the phi self-consistency equation) so each
can serve as the other's oracle.

Velocity moments use the scaled-energy variable q = kinetic(u)/|mu| with
A = (lambda - phi)/|mu|, under which u^2 du = w(q) dq with

    w(q) = |mu| c (1 + |mu| q/c^2) sqrt((1 + |mu| q/c^2)^2 - 1)   (finite c)
    w(q) = sqrt(2) |mu|^(3/2) sqrt(q)                             (classical)

The sqrt(q) endpoint behaviour is absorbed by the substitution q = A t^2
before adaptive Gauss-Kronrod integration.
"""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_simpson, quad, quad_vec, simpson
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import (
    FixedPointDivergenceError,
    NonNegativeLambdaError,
    NumericsError,
    ResolutionError,
    SupportExceedsGridError,
    TargetsUnreachableError,
)
from .kernel import (
    CasimirSpec,
    ModelParams,
    kinetic_weight,
    kinetic_weight_inverse,
    make_polytrope,
)
from .radial import (
    PhaseDensity,
    RadialField,
    RadialGrid,
    SpeedGrid,
    read_radial_field,
    write_phase_density,
    write_radial_field,
)

__all__ = [
    "GroundState",
    "SolveTargets",
    "IdentityReport",
    "SupportReport",
    "density_from_potential",
    "ode_rhs",
    "integrate_state",
    "fixed_point_solve",
    "solve_targets",
    "virial_residual",
    "multiplier_identities",
    "support_check",
    "state_to_dir",
    "state_from_dir",
]

_TINY = 1e-300


# --- velocity-space moments -------------------------------------------------

def _kind_factor(spec: CasimirSpec, params: ModelParams, mu_abs: float,
                 q, s, g_s, kind: str):
    """Kernel K(q, s) G(s) for the supported moment kinds.

    kinds: "rho" (plain density), "kin" (kinetic weight), "cas" (j(Q)),
    "jpq" (j'(Q) Q, using j'(G(s)) = s), "vir" (u^2/sqrt(1+u^2/c^2)),
    "mom" (|v|), "ineg" (c^2 (1 - 1/sqrt(1+u^2/c^2))).
    """
    if kind == "rho":
        return g_s
    if kind == "cas":
        return np.asarray(spec.j(g_s), dtype=float)
    if kind == "jpq":
        return s * g_s
    if params.is_classical:
        if kind == "kin":
            return mu_abs * q * g_s
        if kind == "vir":
            return 2.0 * mu_abs * q * g_s
        if kind == "mom":
            return np.sqrt(2.0 * mu_abs * q) * g_s
        if kind == "ineg":
            return mu_abs * q * g_s
    else:
        c = params.c
        x = mu_abs * q / c ** 2
        y = 1.0 + x
        if kind == "kin":
            return mu_abs * q * g_s
        if kind == "vir":
            # y^2 - 1 as x(2 + x): cancellation-free in the large-c regime
            return c ** 2 * x * (2.0 + x) / y * g_s
        if kind == "mom":
            return c * np.sqrt(x * (2.0 + x)) * g_s
        if kind == "ineg":
            return c ** 2 * x / y * g_s
    raise ValueError(f"unknown moment kind {kind!r}")


def _q_weight(params: ModelParams, mu_abs: float, q):
    """Jacobian u^2 du/dq of the scaled-energy substitution."""
    if params.is_classical:
        return math.sqrt(2.0) * mu_abs ** 1.5 * np.sqrt(np.maximum(q, 0.0))
    c = params.c
    x = mu_abs * q / c ** 2
    return mu_abs * c * (1.0 + x) * np.sqrt(x * (2.0 + x))


def _velocity_moment(spec: CasimirSpec, params: ModelParams, mu: float,
                     a_depth: float, kind: str = "rho") -> float:
    """4 pi int_0^A K(q) G(A-q) w(q) dq by scalar adaptive quadrature."""
    if a_depth <= 0.0:
        return 0.0
    mu_abs = abs(mu)

    def integrand(t):
        q = a_depth * t * t
        s = a_depth - q
        g_s = np.asarray(spec.g_inv(np.maximum(s, 0.0)), dtype=float)
        return float(_kind_factor(spec, params, mu_abs, q, s, g_s, kind)
                     * _q_weight(params, mu_abs, q) * 2.0 * a_depth * t)

    val, _ = quad(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-11, limit=200)
    return 4.0 * np.pi * val


def _moment_profile(spec: CasimirSpec, params: ModelParams, mu: float,
                    a_values: np.ndarray, kind: str = "rho") -> np.ndarray:
    """Vectorized moments at many depths A_i sharing one adaptive subdivision.

    Substituting q = A t^2 maps every depth to the common interval t in [0, 1],
    so quad_vec can integrate the whole profile at once.
    """
    a = np.asarray(a_values, dtype=float)
    out = np.zeros_like(a)
    mask = a > 0
    if not np.any(mask):
        return out
    am = a[mask]
    mu_abs = abs(mu)

    def integrand(t):
        q = am * t * t
        s = am - q
        g_s = np.asarray(spec.g_inv(np.maximum(s, 0.0)), dtype=float)
        return (_kind_factor(spec, params, mu_abs, q, s, g_s, kind)
                * _q_weight(params, mu_abs, q) * 2.0 * am * t)

    val, _ = quad_vec(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-11, norm="max")
    out[mask] = 4.0 * np.pi * np.maximum(val, 0.0)
    return out


class _MomentTable:
    """Cubic-spline tables of moment profiles in the variable sqrt(A).

    The moments behave like A^(3/2 + 1/(p-1)) near A = 0, which the sqrt
    substitution turns into a C^3-or-better function for every p > 3/2.
    """

    def __init__(self, spec, params, mu, a_max, kinds=("rho",), n_tab=1025):
        self.a_max = float(a_max) * (1.0 + 1e-9) + _TINY
        zeta = np.linspace(0.0, math.sqrt(self.a_max), n_tab)
        a_nodes = zeta * zeta
        self._splines = {}
        for kind in kinds:
            vals = _moment_profile(spec, params, mu, a_nodes, kind)
            self._splines[kind] = CubicSpline(zeta, vals)

    def __call__(self, a_depth, kind: str = "rho"):
        a = np.asarray(a_depth, dtype=float)
        scalar = a.ndim == 0
        a = np.atleast_1d(a)
        if np.any(a > self.a_max * (1.0 + 1e-8)):
            raise ValueError("depth outside tabulated range")
        out = np.zeros_like(a)
        mask = a > 0
        if np.any(mask):
            out[mask] = np.maximum(
                self._splines[kind](np.sqrt(np.minimum(a[mask], self.a_max))), 0.0)
        return float(out[0]) if scalar else out

    def derivative(self, a_depth, kind: str = "rho"):
        """d(moment)/dA, finite where the profile is (zero outside support)."""
        a = np.atleast_1d(np.asarray(a_depth, dtype=float))
        out = np.zeros_like(a)
        mask = a > 0
        if np.any(mask):
            zeta = np.sqrt(np.minimum(a[mask], self.a_max))
            out[mask] = self._splines[kind](zeta, 1) / (2.0 * zeta)
        return out


# --- public pointwise operations --------------------------------------------

def density_from_potential(spec: CasimirSpec, params: ModelParams, lam: float,
                           mu: float, phi_val: float) -> float:
    """Spatial density of the steady profile at local potential value phi_val."""
    if not (lam < 0 and mu < 0):
        raise ValueError("multipliers lambda and mu must be negative")
    if phi_val >= lam:
        return 0.0
    return _velocity_moment(spec, params, mu, (phi_val - lam) / mu, "rho")


def ode_rhs(spec: CasimirSpec, params: ModelParams, mu: float, psi_val: float) -> float:
    """Right-hand side h(psi) of the radial ODE; zero for psi >= 0."""
    if not mu < 0:
        raise ValueError("mu must be negative")
    if psi_val >= 0.0:
        return 0.0
    return _velocity_moment(spec, params, mu, -psi_val / abs(mu), "rho")


# --- the solved-state container ----------------------------------------------

@dataclass
class GroundState:
    """A solved steady state with its profiles and scalar functionals."""

    params: ModelParams
    spec: CasimirSpec
    lam: float
    mu: float
    psi0: float
    a: float
    phi: RadialField
    rho: RadialField
    r_support: float
    m1: float
    mj: float
    ekin: float
    epot: float
    hc: float
    f: PhaseDensity
    u_bound: float
    trivial: bool = False
    # auxiliary moments used by the identity verifiers
    jpq: float = 0.0        # int j'(Q) Q
    vir_kin: float = 0.0    # int u^2/sqrt(1+u^2/c^2) Q   (u^2 Q classically)
    mom1: float = 0.0       # int |v| Q
    ineg: float = 0.0       # int c^2 (1 - 1/sqrt(1+u^2/c^2)) Q
    phi_q: float = 0.0      # int phi Q dx dv = int phi rho dx
    w_profile: np.ndarray = field(default=None, repr=False)  # enclosed int s^2 rho


@dataclass(frozen=True)
class SolveTargets:
    """Mass targets (m1, mj) for the two-parameter root find."""

    m1_target: float
    mj_target: float
    tol: float = 1e-6

    def __post_init__(self):
        if not (self.m1_target > 0 and self.mj_target > 0 and self.tol > 0):
            raise ValueError("targets and tolerance must be positive")


def _edge_exponent(spec: CasimirSpec) -> float:
    """Vanishing rate of rho at the support edge, rho ~ depth^(1/(p-1)+3/2)."""
    return 1.0 / (spec.p - 1.0) + 1.5


def _radial_total(r: np.ndarray, dens: np.ndarray, k: int, r_supp: float,
                  beta: float) -> float:
    """4 pi int_0^R r^2 dens dr: composite Simpson to node k plus edge sliver."""
    core = simpson(r[: k + 1] ** 2 * dens[: k + 1], x=r[: k + 1])
    sliver = r[k] ** 2 * dens[k] * (r_supp - r[k]) / (beta + 1.0)
    return float(4.0 * np.pi * (core + sliver))


def _finalize_state(spec, params, lam, mu, grid: RadialGrid, psi: np.ndarray,
                    w: np.ndarray, r_supp: float, m_speed: int) -> GroundState:
    """Tabulate profiles and functionals for a solved (psi, w) pair."""
    r = grid.nodes
    mu_abs = abs(mu)
    k = int(np.searchsorted(r, r_supp) - 1)  # last node strictly inside support
    if k < 2:
        raise ResolutionError("support spans fewer than three radial nodes")

    a_depth = np.zeros_like(r)
    a_depth[: k + 1] = np.maximum(-psi[: k + 1], 0.0) / mu_abs

    kinds = ("rho", "kin", "cas", "jpq", "vir", "mom", "ineg")
    prof = {kd: _moment_profile(spec, params, mu, a_depth[: k + 1], kd) for kd in kinds}
    rho = np.zeros_like(r)
    rho[: k + 1] = prof["rho"]

    beta = _edge_exponent(spec)
    m1 = _radial_total(r, rho, k, r_supp, beta)
    mj = _radial_total(r, np.concatenate([prof["cas"], np.zeros(len(r) - k - 1)]),
                       k, r_supp, beta)
    ekin = _radial_total(r, np.concatenate([prof["kin"], np.zeros(len(r) - k - 1)]),
                         k, r_supp, beta)
    jpq = _radial_total(r, np.concatenate([prof["jpq"], np.zeros(len(r) - k - 1)]),
                        k, r_supp, beta)
    vir_kin = _radial_total(r, np.concatenate([prof["vir"], np.zeros(len(r) - k - 1)]),
                            k, r_supp, beta)
    mom1 = _radial_total(r, np.concatenate([prof["mom"], np.zeros(len(r) - k - 1)]),
                         k, r_supp, beta)
    ineg = _radial_total(r, np.concatenate([prof["ineg"], np.zeros(len(r) - k - 1)]),
                         k, r_supp, beta)

    phi = psi + lam
    w_r = float(w[-1])  # exterior enclosed mass is constant
    # field energy: 2 pi ( int_0^R (w/r)^2 / ... dr + exact vacuum tail w_R^2/R )
    integ = np.zeros(k + 1)
    integ[1:] = (w[1 : k + 1] / r[1 : k + 1]) ** 2
    core = simpson(integ, x=r[: k + 1])
    sliver = (r_supp - r[k]) * 0.5 * ((w[k] / r[k]) ** 2 + (w_r / r_supp) ** 2)
    epot = float(2.0 * np.pi * (core + sliver + w_r ** 2 / r_supp))
    hc = ekin - epot

    phi_rho = r * r * phi * rho
    phi_q = float(4.0 * np.pi * (simpson(phi_rho[: k + 1], x=r[: k + 1])
                                 + r[k] ** 2 * phi[k] * rho[k]
                                 * (r_supp - r[k]) / (beta + 1.0)))

    psi0 = float(psi[0])
    u_bound = float(kinetic_weight_inverse(params, -psi0))
    grid_u = SpeedGrid(u_max=1.2 * u_bound, m=m_speed)

    psi_spline = CubicSpline(r, psi)
    b_ext = w_r

    def profile(rr, uu):
        rr = np.asarray(rr, dtype=float)
        uu = np.asarray(uu, dtype=float)
        psi_r = np.where(rr < r_supp, psi_spline(np.minimum(rr, r_supp)),
                         -lam - b_ext / np.maximum(rr, r_supp))
        arg = (-psi_r - kinetic_weight(params, uu)) / mu_abs
        return np.asarray(spec.g_inv(np.maximum(arg, 0.0)), dtype=float)

    f = PhaseDensity.from_callable(grid, grid_u, profile)

    return GroundState(
        params=params, spec=spec, lam=float(lam), mu=float(mu), psi0=psi0,
        a=psi0 / mu, phi=RadialField(grid=grid, values=phi),
        rho=RadialField(grid=grid, values=rho), r_support=float(r_supp),
        m1=m1, mj=mj, ekin=ekin, epot=epot, hc=hc, f=f, u_bound=u_bound,
        jpq=jpq, vir_kin=vir_kin, mom1=mom1, ineg=ineg, phi_q=phi_q,
        w_profile=w,
    )


def _trivial_state(spec, params, grid: RadialGrid, mu: float, m_speed: int) -> GroundState:
    zeros = np.zeros(grid.n)
    f = PhaseDensity(grid_r=grid, grid_u=SpeedGrid(u_max=1.0, m=m_speed),
                     values=np.zeros((grid.n, m_speed)))
    return GroundState(params=params, spec=spec, lam=0.0, mu=mu, psi0=0.0, a=0.0,
                       phi=RadialField(grid=grid, values=zeros),
                       rho=RadialField(grid=grid, values=zeros.copy()),
                       r_support=0.0, m1=0.0, mj=0.0, ekin=0.0, epot=0.0, hc=0.0,
                       f=f, u_bound=0.0, trivial=True, w_profile=zeros.copy())


# --- shooting solver ----------------------------------------------------------

class _FastMasses:
    """Cheap (m1, mj) of a shot, used inside the target root find."""

    __slots__ = ("m1", "mj", "lam", "r_support", "psi0", "mu")

    def __init__(self, m1, mj, lam, r_support, psi0, mu):
        self.m1, self.mj, self.lam = m1, mj, lam
        self.r_support, self.psi0, self.mu = r_support, psi0, mu


def _shoot(spec, params, psi0, mu, grid: RadialGrid, table: _MomentTable):
    """Integrate the radial system outward; return (psi, w, R, w_R, lambda).

    Works in the regularized variable z = r psi, whose equation
    z'' = r h(z/r) has a smooth vector field at the origin (a fixed-step
    Runge-Kutta on the raw (psi, r^2 psi') system loses two orders to the
    coordinate singularity).
    """
    r = grid.nodes
    h = grid.h
    mu_abs = abs(mu)

    def rhs(p):
        if p >= 0.0:
            return 0.0
        return table(-p / mu_abs)

    if rhs(psi0) <= 0.0:
        raise NumericsError("central density vanished for negative psi0")

    def deriv(rr, y):
        z, v = y
        p = z / rr if rr > 0.0 else psi0
        return np.array([v, rr * rhs(p)])

    def rk4(rr, y, step):
        k1 = deriv(rr, y)
        k2 = deriv(rr + 0.5 * step, y + 0.5 * step * k1)
        k3 = deriv(rr + 0.5 * step, y + 0.5 * step * k2)
        k4 = deriv(rr + step, y + step * k3)
        return y + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)

    z = np.empty_like(r)
    v = np.empty_like(r)
    z[0], v[0] = 0.0, psi0
    y = np.array([0.0, psi0])
    crossing = None
    for i in range(grid.n - 1):
        y_new = rk4(r[i], y, h)
        if not np.all(np.isfinite(y_new)):
            raise NumericsError("shooting integration produced non-finite values")
        if y_new[0] >= 0.0:
            crossing = i
            break
        y = y_new
        z[i + 1], v[i + 1] = y_new

    if crossing is None:
        raise SupportExceedsGridError(
            "psi never crossed zero inside the grid; enlarge r_max")
    if crossing < 2:
        raise ResolutionError("support ends within the first two radial cells")

    # bisect the crossing radius inside the bracketing step
    lo, hi = 0.0, h
    y_lo = np.array([z[crossing], v[crossing]])
    tol = 1e-12 * grid.r_max
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        y_mid = rk4(r[crossing], y_lo, mid)
        if y_mid[0] >= 0.0:
            hi = mid
        else:
            lo = mid
    tau = 0.5 * (lo + hi)
    r_supp = r[crossing] + tau
    y_end = rk4(r[crossing], y_lo, tau)
    w_r = float(r_supp * y_end[1] - y_end[0])  # w = r z' - z

    lam = -w_r / r_supp
    if not lam < 0.0:
        raise NonNegativeLambdaError("exterior match produced lambda >= 0")

    psi = np.empty_like(r)
    w = np.empty_like(r)
    psi[0], w[0] = psi0, 0.0
    inner = slice(1, crossing + 1)
    psi[inner] = z[inner] / r[inner]
    w[inner] = r[inner] * v[inner] - z[inner]
    outer = r >= r_supp
    psi[outer] = -lam - w_r / r[outer]
    w[outer] = w_r
    return psi, w, float(r_supp), w_r, lam


def integrate_state(spec: CasimirSpec, params: ModelParams, psi0: float,
                    mu: float, grid: RadialGrid, m_speed: int = 257,
                    fast: bool = False):
    """Shoot the radial system outward from depth psi0 < 0 at multiplier mu < 0.

    Returns a GroundState (or a cheap mass summary when fast=True). The
    emitted lambda equals -w(R)/R from the exterior vacuum match; the support
    radius must satisfy R <= r_max/4 so the vacuum tail is well separated.
    """
    if not mu < 0:
        raise ValueError("mu must be negative")
    if psi0 == 0.0:
        return _trivial_state(spec, params, grid, mu, m_speed)
    if not psi0 < 0:
        raise ValueError("psi0 must be negative (0 gives the trivial state)")

    table = _MomentTable(spec, params, mu, -psi0 / abs(mu), kinds=("rho", "cas"),
                         n_tab=513 if fast else 1025)
    psi, w, r_supp, w_r, lam = _shoot(spec, params, psi0, mu, grid, table)

    if r_supp > grid.r_max / 4.0:
        raise SupportExceedsGridError(
            f"support radius {r_supp:.3g} exceeds r_max/4 = {grid.r_max / 4:.3g}; "
            "enlarge the grid")

    if fast:
        r = grid.nodes
        k = int(np.searchsorted(r, r_supp) - 1)
        a_depth = np.maximum(-psi[: k + 1], 0.0) / abs(mu)
        rho = table(a_depth, "rho")
        cas = table(a_depth, "cas")
        beta = _edge_exponent(spec)
        m1 = _radial_total(r, rho, k, r_supp, beta)
        mj = _radial_total(r, cas, k, r_supp, beta)
        return _FastMasses(m1=m1, mj=mj, lam=lam, r_support=r_supp,
                           psi0=psi0, mu=mu)

    return _finalize_state(spec, params, lam, mu, grid, psi, w, r_supp, m_speed)


# --- fixed-point solver (independent oracle) ----------------------------------

def _poisson_linear(grid: RadialGrid, source: np.ndarray) -> np.ndarray:
    """The enclosed-mass Poisson operator applied to an arbitrary source.

    Same discretization as radial.poisson_solve, without the sign and
    support checks (the Newton correction equation needs signed sources).
    """
    r = grid.nodes
    m = cumulative_simpson(r * r * source, x=r, initial=0.0)
    g = np.zeros_like(m)
    g[1:] = m[1:] / (r[1:] ** 2)
    t = cumulative_simpson(g, x=r, initial=0.0)
    return (-m[-1] / r[-1]) - (t[-1] - t)


def fixed_point_solve(spec: CasimirSpec, params: ModelParams, lam: float,
                      mu: float, grid: RadialGrid, max_iter: int = 60,
                      tol: float = 1e-10, damping: float = 0.5,
                      m_speed: int = 257) -> GroundState:
    """Solve the self-consistency equation phi = poisson(rho(phi)) at fixed
    (lambda, mu), independently of the shooting integration.

    The nontrivial profile is an *unstable* fixed point of the plain sweep
    phi <- poisson(rho(phi)): the linearized map has a real spectral radius
    of about 4.5 for polytropic states, so no amount of plain damping
    converges (it is the separatrix between decay to vacuum and mass
    runaway). The update therefore solves the linearized self-consistency
    equation (I - K rho'(phi)) delta = -(phi - K rho(phi)) by GMRES on the
    same discrete Poisson operator K, with backtracking damping on the
    residual norm; ``damping`` is the backtracking factor. tol bounds the
    final sup-norm Picard residual |phi - poisson(rho(phi))|.
    """
    from scipy.sparse.linalg import LinearOperator, gmres

    if not (lam < 0 and mu < 0):
        raise ValueError("multipliers lambda and mu must be negative")
    r = grid.nodes
    n = grid.n
    mu_abs = abs(mu)
    table = _MomentTable(spec, params, mu, 8.0 * abs(lam) / mu_abs,
                         kinds=("rho",), n_tab=769)

    def picard_residual(phi_vec):
        nonlocal table
        a_depth = np.maximum(lam - phi_vec, 0.0) / mu_abs
        if np.max(a_depth) > table.a_max:
            table = _MomentTable(spec, params, mu, 2.0 * np.max(a_depth),
                                 kinds=("rho",), n_tab=769)
        rho = table(a_depth, "rho")
        if rho[n // 2] > 0:
            raise SupportExceedsGridError(
                "iterated density reached r_max/2; enlarge the grid")
        return phi_vec - _poisson_linear(grid, rho), a_depth

    def newton(phi):
        resid_vec, a_depth = picard_residual(phi)
        resid = float(np.max(np.abs(resid_vec)))
        for _ in range(max_iter):
            if resid < tol:
                return phi
            drho_dphi = -table.derivative(a_depth, "rho") / mu_abs  # <= 0

            def matvec(v):
                return v - _poisson_linear(grid, drho_dphi * v)

            op = LinearOperator((n, n), matvec=matvec)
            delta, info = gmres(op, -resid_vec, rtol=1e-12, atol=0.0, maxiter=400)
            if info != 0:
                raise FixedPointDivergenceError(
                    f"linear correction solve failed (gmres info {info})")
            alpha, accepted = 1.0, None
            for _ in range(12):
                try:
                    rv_try, ad_try = picard_residual(phi + alpha * delta)
                except SupportExceedsGridError:
                    alpha *= damping
                    continue
                if not np.all(np.isfinite(rv_try)):
                    raise NumericsError(
                        "fixed-point iteration produced non-finite values")
                if float(np.max(np.abs(rv_try))) < resid:
                    accepted = (phi + alpha * delta, rv_try, ad_try)
                    break
                alpha *= damping
            if accepted is None:
                raise FixedPointDivergenceError(
                    f"no descent step found (residual stuck at {resid:.3e})")
            phi, resid_vec, a_depth = accepted
            resid = float(np.max(np.abs(resid_vec)))
        raise FixedPointDivergenceError(
            f"no convergence after {max_iter} iterations (residual {resid:.3e})")

    # seed ladder: Gaussian wells of varying depth and width; the shallow ones
    # fall into the trivial root's basin, so start from the moderate-depth seeds
    phi = None
    last_exc = None
    for kappa, sig_frac in ((3.0, 1 / 8), (4.0, 1 / 12), (3.0, 1 / 6),
                            (4.0, 1 / 8), (2.0, 1 / 6), (6.0, 1 / 12)):
        seed = kappa * lam * np.exp(-((r / (grid.r_max * sig_frac)) ** 2))
        try:
            cand = newton(seed)
        except (FixedPointDivergenceError, SupportExceedsGridError) as exc:
            last_exc = exc
            continue
        if cand[0] - lam < 0.0:  # nontrivial well
            phi = cand
            break
        last_exc = FixedPointDivergenceError(
            "iteration collapsed to the trivial zero state")
    if phi is None:
        raise FixedPointDivergenceError(
            f"all seeds failed to reach a nontrivial state ({last_exc})")

    psi = phi - lam
    rho = table(np.maximum(-psi, 0.0) / mu_abs, "rho")
    w = cumulative_simpson(r * r * rho, x=r, initial=0.0)

    sign_change = np.nonzero(psi >= 0.0)[0]
    if len(sign_change) == 0:
        raise SupportExceedsGridError("converged support exceeds the grid")
    i_cross = int(sign_change[0])
    psi_spl = CubicSpline(r, psi)
    r_supp = float(brentq(psi_spl, r[i_cross - 1], r[i_cross], xtol=1e-14))
    return _finalize_state(spec, params, lam, mu, grid, psi, w, r_supp, m_speed)


# --- target solver -------------------------------------------------------------

def solve_targets(spec: CasimirSpec, params: ModelParams, targets: SolveTargets,
                  grid: RadialGrid, m_speed: int = 257, kj_estimate=None,
                  max_iter: int = 40) -> GroundState:
    """Find (psi0, mu) so the state carries the requested (m1, mj) masses.

    Damped Newton on log-parameters with a finite-difference Jacobian,
    initialised by a coarse logarithmic scan. If a threshold estimate is
    supplied and the targets sit above it, a warning is issued (the estimate
    is an upper bound, so no hard error is justified).
    """
    if kj_estimate is not None and not params.is_classical:
        p = spec.p
        s_val = (targets.m1_target ** ((2 * p - 3) / (3 * (p - 1)))
                 * targets.mj_target ** (1 / (3 * (p - 1))))
        if s_val >= 2.0 * params.c * kj_estimate.best_quotient:
            warnings.warn("targets exceed 2c x estimated interpolation constant; "
                          "the constrained infimum may be -infinity", stacklevel=2)

    scan_grid = RadialGrid(r_max=grid.r_max, n=min(grid.n, 513))
    log_m1t = math.log(targets.m1_target)
    log_mjt = math.log(targets.mj_target)

    def residual(x, y, use_grid):
        shot = integrate_state(spec, params, -math.exp(x), -math.exp(y),
                               use_grid, fast=True)
        return np.array([math.log(shot.m1) - log_m1t,
                         math.log(shot.mj) - log_mjt])

    best = None
    for x in np.linspace(-3.5, 3.5, 11):
        for y in np.linspace(-3.5, 3.5, 11):
            try:
                shot = integrate_state(spec, params, -math.exp(x), -math.exp(y),
                                       scan_grid, fast=True)
            except Exception:
                continue
            if shot.r_support > 0.22 * grid.r_max:  # keep a buffer below r_max/4
                continue
            f_val = np.array([math.log(shot.m1) - log_m1t,
                              math.log(shot.mj) - log_mjt])
            score = float(np.max(np.abs(f_val)))
            if best is None or score < best[0]:
                best = (score, x, y)
    if best is None:
        raise TargetsUnreachableError(
            "no shooting parameters in the scan window produce a valid state")

    x, y = best[1], best[2]
    try:
        f_val = residual(x, y, grid)
    except Exception as exc:
        raise TargetsUnreachableError(f"shooting failed at the scan optimum: {exc}")
    for _ in range(max_iter):
        err = float(np.max(np.abs(np.exp(f_val) - 1.0)))
        if err < targets.tol:
            break
        eps = 1e-6
        jac = np.empty((2, 2))
        try:
            jac[:, 0] = (residual(x + eps, y, grid) - f_val) / eps
            jac[:, 1] = (residual(x, y + eps, grid) - f_val) / eps
            step = np.linalg.solve(jac, -f_val)
        except Exception as exc:
            raise TargetsUnreachableError(f"Jacobian evaluation failed: {exc}")
        norm0 = float(np.linalg.norm(f_val))
        alpha, accepted = 1.0, None
        for _ in range(10):
            try:
                f_try = residual(x + alpha * step[0], y + alpha * step[1], grid)
            except Exception:
                f_try = None
            if f_try is not None and float(np.linalg.norm(f_try)) < norm0:
                accepted = (alpha, f_try)
                break
            alpha *= 0.5
        if accepted is None:
            raise TargetsUnreachableError(
                "target solve stalled (no descent step fits the grid)")
        x += accepted[0] * step[0]
        y += accepted[0] * step[1]
        f_val = accepted[1]
    else:
        raise TargetsUnreachableError(
            f"target solve did not converge within {max_iter} iterations")

    state = integrate_state(spec, params, -math.exp(x), -math.exp(y), grid,
                            m_speed=m_speed)
    return state


# --- identity verifiers --------------------------------------------------------

def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), _TINY)


def virial_residual(state: GroundState) -> float:
    """Relative defect of the kinetic/potential balance of a steady state.

    Compares int u^2/sqrt(1+u^2/c^2) Q against -(1/2) int phi rho dx computed
    from the tabulated profiles; zero for the trivial state.
    """
    if state.trivial or state.m1 == 0.0:
        return 0.0
    lhs = state.vir_kin
    rhs = -0.5 * state.phi_q
    return (lhs - rhs) / max(abs(lhs), abs(rhs), _TINY)


@dataclass(frozen=True)
class IdentityReport:
    """Relative residuals of the stationary-state identities plus sign checks."""

    residuals: dict
    mu_negative: bool
    lambda_negative: bool
    convexity_gap_positive: bool  # int (j'(Q) Q - j(Q)) > 0

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values())


def multiplier_identities(state: GroundState) -> IdentityReport:
    """Check the integral identities tying (lambda, mu) to the functionals.

    All quantities are recomputed from the tabulated state; hc stands in for
    the constrained infimum attained by the profile.
    """
    ekin, hc, m1, mj = state.ekin, state.hc, state.m1, state.mj
    jpq, lam, mu = state.jpq, state.lam, state.mu
    res = {
        "virial": abs(virial_residual(state)),
        "el_integrated": _rel(ekin + state.phi_q, lam * m1 + mu * jpq),
        "multiplier_energy": _rel(-ekin + 2.0 * hc, lam * m1 + mu * jpq),
        "multiplier_masses": _rel(-(2.0 / 3.0) * ekin + (5.0 / 3.0) * hc,
                                  lam * m1 + mu * mj),
        "mu_identity": _rel(3.0 * mu * (jpq - mj), hc - ekin),
        "lambda_identity": _rel(3.0 * lam * m1 * (jpq - mj),
                                -ekin * (2.0 * jpq - 3.0 * mj)
                                + hc * (5.0 * jpq - 6.0 * mj)),
        "virial_energy": _rel(state.vir_kin, ekin - hc),
        "hamiltonian_form": _rel(hc, -state.ineg),
    }
    return IdentityReport(residuals=res, mu_negative=mu < 0,
                          lambda_negative=lam < 0,
                          convexity_gap_positive=(jpq - mj) > 0)


@dataclass(frozen=True)
class SupportReport:
    r_support: float
    u_bound: float
    ok: bool
    max_off_support: float      # largest |Q| found outside the support box
    phi_below_lambda: bool      # phi <= lambda wherever rho > 0


def support_check(state: GroundState) -> SupportReport:
    """Verify compact support: Q = 0 outside {r <= R} x {kinetic <= -psi0}."""
    r = state.f.grid_r.nodes
    u = state.f.grid_u.nodes
    gam = kinetic_weight(state.params, u)
    outside = (r[:, None] > state.r_support) | (gam[None, :] > (state.lam - state.phi.values[0]))
    max_off = float(np.max(np.abs(state.f.values[outside]), initial=0.0))
    on_supp = state.rho.values > 0
    phi_ok = bool(np.all(state.phi.values[on_supp] <= state.lam + 1e-12 * abs(state.lam)))
    return SupportReport(r_support=state.r_support, u_bound=state.u_bound,
                         ok=(max_off == 0.0) and phi_ok,
                         max_off_support=max_off, phi_below_lambda=phi_ok)


# --- serialization ---------------------------------------------------------------

def _c_token(params: ModelParams):
    return "inf" if params.is_classical else params.c


def state_to_dir(state: GroundState, outdir) -> None:
    """Write state.json plus CSV profiles (phi, rho, f) under outdir."""
    os.makedirs(os.path.join(outdir, "profiles"), exist_ok=True)
    write_radial_field(os.path.join(outdir, "profiles", "phi.csv"), state.phi)
    write_radial_field(os.path.join(outdir, "profiles", "rho.csv"), state.rho)
    write_phase_density(os.path.join(outdir, "profiles", "f.csv"), state.f)
    report = multiplier_identities(state) if not state.trivial else None
    doc = {
        "c": _c_token(state.params),
        "casimir": state.spec.name,
        "p": state.spec.p,
        "lambda": state.lam,
        "mu": state.mu,
        "psi0": state.psi0,
        "a": state.a,
        "r_support": state.r_support,
        "m1": state.m1,
        "mj": state.mj,
        "ekin": state.ekin,
        "epot": state.epot,
        "hc": state.hc,
        "trivial": state.trivial,
        "residuals": report.residuals if report else {},
        "profiles": {"phi": "profiles/phi.csv", "rho": "profiles/rho.csv",
                     "f": "profiles/f.csv"},
    }
    with open(os.path.join(outdir, "state.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def state_from_dir(indir, spec: Optional[CasimirSpec] = None,
                   m_speed: int = 257) -> GroundState:
    """Rebuild a GroundState from a solve output directory.

    The Casimir weight is reconstructed for polytropes (or supplied
    explicitly); profiles are re-derived from (lambda, mu, phi) so the
    identity verifiers run on a faithful state, not on stale numbers.
    """
    with open(os.path.join(indir, "state.json")) as fh:
        doc = json.load(fh)
    if spec is None:
        if not str(doc["casimir"]).startswith("polytrope"):
            raise ValueError("non-polytrope state needs an explicit CasimirSpec")
        spec = make_polytrope(float(doc["p"]))
    params = ModelParams(c=math.inf if doc["c"] == "inf" else float(doc["c"]))
    phi = read_radial_field(os.path.join(indir, doc["profiles"]["phi"]))
    rho = read_radial_field(os.path.join(indir, doc["profiles"]["rho"]))
    grid = phi.grid
    lam, mu = float(doc["lambda"]), float(doc["mu"])
    psi = phi.values - lam
    w = cumulative_simpson(grid.nodes ** 2 * rho.values, x=grid.nodes, initial=0.0)
    return _finalize_state(spec, params, lam, mu, grid, psi, w,
                           float(doc["r_support"]), m_speed)
