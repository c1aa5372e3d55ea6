"""Closed-form latency, energy and accuracy models and the weighted objective.

Every function here is pure. Vectorised helpers take whole ``DecisionVars``
and ``Scenario`` objects; the per-index wrappers (``latency_components``,
``device_energy``, ``server_energy``) exist for readability in tests and
reports.

Units: ``s`` pixels, ``R`` Mbps (converted to bit/s for the transmission
delay), latencies seconds, ``f`` and ``F`` GHz, ``r`` and ``S`` TFLOPS,
``C(s)`` TFLOPs, powers watts, energies joules.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .scenario import Scenario

MBPS = 1e6
F_SANITY = (0.1, 10.0)
A_FLOOR = 1e-6


class ModelDomainError(ValueError):
    """A model was evaluated outside its physical domain."""


@dataclass(frozen=True)
class ModelCurves:
    """Coefficients of the measured device/server models.

    ``C(s) = c_scale * s**c_exp + c_offset`` and
    ``A(s) = 1 - acc_scale * exp(-acc_rate * sqrt(s))``; the power curves are
    polynomials with coefficients listed from the highest degree down.
    """

    sigma: float = 8.0
    t_pre: float = 4e-4
    A_min: float = 0.6
    c_scale: float = 7e-10
    c_exp: float = 1.5
    c_offset: float = 0.083
    acc_scale: float = 1.578
    acc_rate: float = 6.5e-3
    p_tr: tuple[float, float] = (0.018, 0.7)
    p_bs: tuple[float, float] = (0.079, 0.59)
    p_pre: tuple[float, float, float, float] = (-0.01071, 0.06055, -0.1028, 0.107)
    p_server: tuple[float, float] = (0.083, 0.32)

    # task complexity C(s) and its first two derivatives in s
    def complexity(self, s):
        return self.c_scale * np.power(s, self.c_exp) + self.c_offset

    def complexity_d1(self, s):
        return self.c_scale * self.c_exp * np.power(s, self.c_exp - 1.0)

    def complexity_d2(self, s):
        p = self.c_exp
        return self.c_scale * p * (p - 1.0) * np.power(s, p - 2.0)

    def accuracy(self, s):
        return 1.0 - self.acc_scale * np.exp(-self.acc_rate * np.sqrt(s))

    def accuracy_d1(self, s):
        rs = np.sqrt(s)
        return self.acc_scale * self.acc_rate * np.exp(-self.acc_rate * rs) / (2.0 * rs)

    def accuracy_d2(self, s):
        rs = np.sqrt(s)
        b = self.acc_rate
        e = np.exp(-b * rs)
        return -self.acc_scale * b * e * (b * rs + 1.0) / (4.0 * s * rs)

    def accuracy_inverse(self, a: float) -> float:
        """Smallest resolution reaching accuracy ``a``."""
        if not 1.0 - self.acc_scale < a < 1.0:
            raise ModelDomainError(f"accuracy {a} not reachable by A(s)")
        return (np.log(self.acc_scale / (1.0 - a)) / self.acc_rate) ** 2

    def power_tr(self, R_mbps):
        return self.p_tr[0] * R_mbps + self.p_tr[1]

    def power_bs(self, f):
        return self.p_bs[0] * f + self.p_bs[1]

    def power_pre(self, f):
        return np.polyval(self.p_pre, f)

    def power_pre_d1(self, f):
        return np.polyval(np.polyder(self.p_pre), f)

    def power_server(self, x):
        return self.p_server[0] * x * x + self.p_server[1]


@dataclass(frozen=True)
class DecisionVars:
    """Optimisation state.

    ``w`` is the processing-delay auxiliary (``C(s)/r`` replacement), ``u`` the
    auxiliary of the ``C(s)*r`` product inside the server-power term, ``z`` the
    shared per-server capacity auxiliary and ``v`` the per-pair server-energy
    auxiliary. ``z`` and ``v`` follow the closed forms of the product
    replacement step and are kept for diagnostics.
    """

    f: np.ndarray
    s: np.ndarray
    A_hat: np.ndarray
    r: np.ndarray
    w: np.ndarray = None
    z: np.ndarray = None
    v: np.ndarray = None
    u: np.ndarray = None

    @property
    def K(self) -> int:
        return self.A_hat.shape[0]

    @property
    def N(self) -> int:
        return self.A_hat.shape[1]

    def with_(self, **kw) -> "DecisionVars":
        return replace(self, **kw)

    def copy(self) -> "DecisionVars":
        def c(x):
            return None if x is None else np.array(x, dtype=float, copy=True)

        return DecisionVars(c(self.f), c(self.s), c(self.A_hat), c(self.r),
                            c(self.w), c(self.z), c(self.v), c(self.u))


@dataclass
class ObjectiveBreakdown:
    L_t: np.ndarray
    L_cn: np.ndarray
    L_p: np.ndarray
    L: np.ndarray
    E_img: np.ndarray
    E_com: np.ndarray
    E_bs: np.ndarray
    E_k: np.ndarray
    A_k: np.ndarray
    E_n: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    Q: float = field(default=float("nan"))

    def recompose(self) -> float:
        """Weighted sum rebuilt from the stored components."""
        K = self.E_k.size
        N = self.E_n.size
        dev = self.E_k + self.lambda1 * self.L - self.lambda2 * self.A_k
        return float(self.E_n.sum() / N + dev.sum() / K)

    @property
    def mean_accuracy(self) -> float:
        return float(self.A_k.mean())

    @property
    def mean_latency(self) -> float:
        return float(self.L.mean())

    @property
    def mean_device_energy(self) -> float:
        return float(self.E_k.mean())

    @property
    def mean_server_energy(self) -> float:
        return float(self.E_n.mean())


def _positive(name, x):
    x = np.asarray(x, dtype=float)
    if not np.all(x > 0):
        raise ModelDomainError(f"{name} must be strictly positive")
    return x


def accuracy(s, curves: ModelCurves | None = None):
    curves = curves or ModelCurves()
    return curves.accuracy(_positive("s", s))


def replaced_processing_latency(s, r, w, curves: ModelCurves | None = None):
    """Upper bound ``C(s)^2 w + 1/(4 w r^2)`` of ``C(s)/r``; tight at ``w = 1/(2 C r)``."""
    curves = curves or ModelCurves()
    s = _positive("s", s)
    r = _positive("r", r)
    w = _positive("w", w)
    c = curves.complexity(s)
    return c * c * w + 1.0 / (4.0 * w * r * r)


def capacity_surrogate(A_hat, r, z):
    """Left side of the product-replaced capacity constraint, one value per server.

    ``sum_k (a_kn^2 z_n + r_k^2 / (4 z_n))`` majorises ``sum_k a_kn r_k`` for any
    ``z_n > 0``.
    """
    A_hat = np.asarray(A_hat, dtype=float)
    r = _positive("r", r)
    z = _positive("z", z)
    return (A_hat ** 2).sum(axis=0) * z + (r ** 2).sum() / (4.0 * z)


# ---------------------------------------------------------------------------
# vectorised evaluation

def _check_vars(vars: DecisionVars, scn: "Scenario", need_f=True):
    s = _positive("s", vars.s)
    r = _positive("r", vars.r)
    _positive("R", scn.R)
    if need_f:
        f = np.asarray(vars.f, dtype=float)
        if np.any(f < F_SANITY[0]) or np.any(f > F_SANITY[1]):
            raise ModelDomainError("CPU frequency outside sanity range [0.1, 10] GHz")
    return s, r


def latencies(vars: DecisionVars, scn: "Scenario"):
    """Arrays ``(L_t, L_cn, L_p, L)`` over devices."""
    s, r = _check_vars(vars, scn, need_f=False)
    cv = scn.curves
    L_t = cv.sigma * s / (scn.R * MBPS)
    L_cn = (vars.A_hat * scn.l).sum(axis=1)
    L_p = cv.complexity(s) / r
    return L_t, L_cn, L_p, L_t + L_cn + L_p


def device_energies(vars: DecisionVars, scn: "Scenario", lat=None):
    """Arrays ``(E_img, E_com, E_bs, E_k)`` over devices."""
    _check_vars(vars, scn)
    cv = scn.curves
    L_t, _, _, L = lat if lat is not None else latencies(vars, scn)
    E_img = cv.t_pre * cv.power_pre(vars.f)
    E_com = cv.power_tr(scn.R) * L_t
    E_bs = cv.power_bs(vars.f) * L
    return E_img, E_com, E_bs, E_img + E_com + E_bs


def server_power_matrix(r, scn: "Scenario"):
    """``P_n(r_k F_n / S_n)`` for every device/server pair, shape (K, N)."""
    x = np.outer(r, scn.F / scn.S)
    return scn.curves.power_server(x)


def server_energies(vars: DecisionVars, scn: "Scenario"):
    s, r = _check_vars(vars, scn, need_f=False)
    L_p = scn.curves.complexity(s) / r
    return (vars.A_hat * server_power_matrix(r, scn) * L_p[:, None]).sum(axis=0)


def objective(vars: DecisionVars, scn: "Scenario") -> ObjectiveBreakdown:
    lat = latencies(vars, scn)
    E_img, E_com, E_bs, E_k = device_energies(vars, scn, lat)
    b = ObjectiveBreakdown(
        L_t=lat[0], L_cn=lat[1], L_p=lat[2], L=lat[3],
        E_img=E_img, E_com=E_com, E_bs=E_bs, E_k=E_k,
        A_k=scn.curves.accuracy(vars.s),
        E_n=server_energies(vars, scn),
        lambda1=np.asarray(scn.lambda1, dtype=float),
        lambda2=np.asarray(scn.lambda2, dtype=float),
    )
    b.Q = b.recompose()
    return b


def objective_value(vars: DecisionVars, scn: "Scenario") -> float:
    return objective(vars, scn).Q


def latency_components(k: int, vars: DecisionVars, scn: "Scenario"):
    L_t, L_cn, L_p, L = latencies(vars, scn)
    return float(L_t[k]), float(L_cn[k]), float(L_p[k]), float(L[k])


def device_energy(k: int, vars: DecisionVars, scn: "Scenario"):
    E_img, E_com, E_bs, E_k = device_energies(vars, scn)
    return float(E_img[k]), float(E_com[k]), float(E_bs[k]), float(E_k[k])


def server_energy(n: int, vars: DecisionVars, scn: "Scenario") -> float:
    return float(server_energies(vars, scn)[n])


# ---------------------------------------------------------------------------
# auxiliaries and surrogate

def optimal_w(s, r, curves: ModelCurves):
    return 1.0 / (2.0 * curves.complexity(s) * r)


def optimal_u(s, r, curves: ModelCurves):
    return r / (2.0 * curves.complexity(s))


def shared_z(A_hat, r, floor=1e6):
    """Per-server capacity auxiliary ``sum(r) / (2 sum_k a_kn)``; empty servers get ``floor``."""
    col = np.asarray(A_hat, dtype=float).sum(axis=0)
    z = np.full(col.shape, floor)
    busy = col >= 1e-9
    z[busy] = np.sum(r) / (2.0 * col[busy])
    return z


def server_term(s, r, w, u, scn: "Scenario"):
    """Convex majoriser of ``P_n(r F_n/S_n) C(s)/r`` per pair, shape (K, N).

    ``P_n(x) = a x^2 + b`` splits the product into ``a (F/S)^2 C r + b C/r``;
    both pieces are replaced by their AM-GM bounds with auxiliaries ``u`` and
    ``w``. Exact when ``u = r/(2C)`` and ``w = 1/(2Cr)``.
    """
    cv = scn.curves
    c = cv.complexity(s)
    alpha = cv.p_server[0] * (scn.F / scn.S) ** 2
    y1 = c * c * u + r * r / (4.0 * u)
    y2 = c * c * w + 1.0 / (4.0 * w * r * r)
    return np.outer(y1, alpha) + cv.p_server[1] * y2[:, None]


def pair_energy_amgm(A_hat, y, v):
    """AM-GM bound ``a^2 v + y^2 / (4 v)`` of ``a * y`` (tight at ``v = y / (2a)``)."""
    return A_hat ** 2 * v + y * y / (4.0 * v)


def optimal_v(A_hat, y):
    return y / (2.0 * np.maximum(A_hat, A_FLOOR))


def dc_product_bound(a, y, a_e, y_e, gamma, y_lin=None):
    """Convex majoriser of ``a * y`` built around ``(a_e, y_e)``.

    With ``p = gamma a`` and ``q = y / gamma``, ``a y = ((p+q)^2 - (p-q)^2) / 4``
    and the concave part is replaced by its tangent. When the tangent slope
    multiplies ``y`` with a negative sign, ``y`` is replaced by its
    linearisation ``y_lin`` (a lower bound for convex ``y``), which keeps the
    result a convex upper bound. Tight at the expansion point.
    """
    p = gamma * a
    q = y / gamma
    h = gamma * a_e - y_e / gamma
    q_hat = q if y_lin is None else np.where(h >= 0, q, y_lin / gamma)
    return 0.25 * (p + q) ** 2 - 0.25 * h * h - 0.5 * h * (p - h) + 0.5 * h * q_hat


def objective_surrogate(vars: DecisionVars, scn: "Scenario",
                        anchor: DecisionVars | None = None) -> float:
    """Weighted objective with every product replaced by its convex bound.

    Processing delay uses ``vars.w``, the server power factor uses ``vars.u``,
    and the ``a * (server term)`` products are bounded by ``dc_product_bound``
    around ``anchor`` (``vars`` itself when omitted, which makes the bound
    tight). Matches ``objective`` when the auxiliaries sit at their closed forms.
    """
    anchor = anchor if anchor is not None else vars
    cv = scn.curves
    s, r = _check_vars(vars, scn)
    K, N = vars.A_hat.shape
    L_t = cv.sigma * s / (scn.R * MBPS)
    L_cn = (vars.A_hat * scn.l).sum(axis=1)
    L_pt = replaced_processing_latency(s, r, vars.w, cv)
    L = L_t + L_cn + L_pt
    E_k = cv.t_pre * cv.power_pre(vars.f) + cv.power_tr(scn.R) * L_t + cv.power_bs(vars.f) * L
    dev = E_k + scn.lambda1 * L - scn.lambda2 * cv.accuracy(s)

    y = server_term(s, r, vars.w, vars.u, scn)
    y_e = server_term(anchor.s, anchor.r, vars.w, vars.u, scn)
    y_lin = y_e + _server_term_linear_delta(anchor, vars, scn)
    gamma = np.sqrt(np.maximum(y_e, 1e-12))
    e_n = dc_product_bound(vars.A_hat, y, anchor.A_hat, y_e, gamma, y_lin).sum(axis=0)
    return float(e_n.sum() / N + dev.sum() / K)


def _server_term_linear_delta(anchor: DecisionVars, vars: DecisionVars, scn: "Scenario"):
    """First-order change of ``server_term`` from ``anchor`` to ``vars`` (w, u fixed)."""
    cv = scn.curves
    s0, r0 = anchor.s, anchor.r
    c = cv.complexity(s0)
    dc = cv.complexity_d1(s0)
    alpha = cv.p_server[0] * (scn.F / scn.S) ** 2
    w, u = vars.w, vars.u
    ds = vars.s - s0
    dr = vars.r - r0
    d1 = 2 * c * dc * u * ds + r0 / (2 * u) * dr
    d2 = 2 * c * dc * w * ds - 1.0 / (2 * w * r0 ** 3) * dr
    return np.outer(d1, alpha) + cv.p_server[1] * d2[:, None]


# ---------------------------------------------------------------------------
# constraints

CONSTRAINT_NAMES = ("C1", "C2", "C3", "C4", "C5", "C6", "C7")


def constraint_residuals(vars: DecisionVars, scn: "Scenario") -> dict[str, float]:
    """Worst signed residual per constraint family (positive = violated).

    C1 accuracy floor, C2 latency budget, C3 frequency box, C4 resolution box,
    C5 binarity of the assignment (max distance to {0, 1}), C6 one server per
    device (max |row sum - 1|), C7 server capacity ``sum_k a_kn r_k - S_n``.
    """
    cv = scn.curves
    A = np.asarray(vars.A_hat, dtype=float)
    acc = cv.accuracy(vars.s)
    _, _, _, L = latencies(vars, scn)
    f = np.asarray(vars.f, dtype=float)
    s = np.asarray(vars.s, dtype=float)
    return {
        "C1": float(np.max(cv.A_min - acc)),
        "C2": float(np.max(L - scn.L_max)),
        "C3": float(max(np.max(scn.f_min - f), np.max(f - scn.f_max))),
        "C4": float(max(np.max(scn.s_min - s), np.max(s - scn.s_max))),
        "C5": float(np.max(np.minimum(np.abs(A), np.abs(1.0 - A)))),
        "C6": float(np.max(np.abs(A.sum(axis=1) - 1.0))),
        "C7": float(np.max((A * vars.r[:, None]).sum(axis=0) - scn.S)),
    }
