"""Quasi-Newton NLL minimization with bounded parameters and Hessian errors.

The minimizer is BFGS over internal (unconstrained) coordinates with
central finite-difference gradients. Doubly-bounded parameters map through
the sine transform ext = lo + (hi - lo) * (sin(int) + 1) / 2; one-sided
bounds use the standard square-root transforms. Convergence is declared
when the estimated distance to minimum, EDM = g^T H^-1 g / 2, drops below
the tolerance. The error definition is 0.5 (the NLL convention), so the
one-sigma interval is the inverse-Hessian diagonal square root with no
extra factor.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import BinnedDataSet, Variable, set_value, snapshot
from .engine import Backend, NormalizationStore, binned_nll, nll, resolve_norms
from .errors import (
    NoFreeParameters,
    NonFiniteObjective,
    NonPositiveDefinite,
    OutOfBounds,
    ParafitError,
    SingularHessianApprox,
)
from .pdf import PdfNode

log = logging.getLogger("parafit.fit")

ERRDEF_NLL = 0.5


@dataclass
class MinimizerOptions:
    edm_tol: float = 1e-6
    max_calls: int | None = None
    armijo_c: float = 1e-4
    shrink: float = 0.5
    max_line_steps: int = 40
    trace: list | None = None  # accepted (n_calls, objective) pairs, if provided


@dataclass
class FitResult:
    """Converged values, uncertainties, covariance and bookkeeping."""

    status: str  # converged | max_calls | failed
    nll_min: float
    names: tuple[str, ...]
    values: np.ndarray
    errors: np.ndarray
    covariance: np.ndarray
    edm: float
    n_calls: int
    n_grad: int
    wall_time_s: float
    at_limit: tuple[str, ...] = ()
    message: str = ""
    all_parameters: tuple[tuple[str, float, float, bool], ...] = ()
    timing: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Result document with the stable serialization layout."""
        return {
            "status": self.status,
            "nll": self.nll_min,
            "edm": self.edm,
            "n_calls": self.n_calls,
            "wall_time_s": self.wall_time_s,
            "parameters": [
                {"name": n, "value": v, "error": e, "fixed": fx}
                for n, v, e, fx in self.all_parameters
            ],
            "covariance": [float(v) for v in np.asarray(self.covariance).reshape(-1)],
        }


class FcnHandle:
    """Objective over the external free-parameter vector, with a call counter."""

    def __init__(self, objective):
        self._objective = objective
        self.n_calls = 0

    def __call__(self, x: np.ndarray) -> float:
        self.n_calls += 1
        return float(self._objective(np.asarray(x, dtype=np.float64)))


# --- bound transforms ----------------------------------------------------------


def to_internal(x: float, lower: float, upper: float) -> float:
    """External -> internal coordinate for one parameter."""
    lo_f, hi_f = math.isfinite(lower), math.isfinite(upper)
    if lo_f and hi_f:
        span = upper - lower
        u = 2.0 * (x - lower) / span - 1.0
        return math.asin(min(1.0, max(-1.0, u)))
    if lo_f:
        return math.sqrt(max((x - lower + 1.0) ** 2 - 1.0, 0.0))
    if hi_f:
        return math.sqrt(max((upper - x + 1.0) ** 2 - 1.0, 0.0))
    return x


def to_external(theta: float, lower: float, upper: float) -> float:
    """Internal -> external coordinate; always lands inside the bounds."""
    lo_f, hi_f = math.isfinite(lower), math.isfinite(upper)
    if lo_f and hi_f:
        x = lower + (upper - lower) * (math.sin(theta) + 1.0) / 2.0
        return min(max(x, lower), upper)
    if lo_f:
        return lower - 1.0 + math.sqrt(theta * theta + 1.0)
    if hi_f:
        return upper + 1.0 - math.sqrt(theta * theta + 1.0)
    return theta


def _dext_dint(theta: float, lower: float, upper: float) -> float:
    lo_f, hi_f = math.isfinite(lower), math.isfinite(upper)
    if lo_f and hi_f:
        return (upper - lower) * math.cos(theta) / 2.0
    if lo_f:
        return theta / math.sqrt(theta * theta + 1.0)
    if hi_f:
        return -theta / math.sqrt(theta * theta + 1.0)
    return 1.0


# --- finite differences ----------------------------------------------------------


def fd_gradient(fcn, x: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Central-difference gradient in external coordinates."""
    g = np.empty_like(x)
    for k in range(len(x)):
        h = steps[k]
        xp = x.copy(); xp[k] += h
        xm = x.copy(); xm[k] -= h
        fp, fm = fcn(xp), fcn(xm)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteObjective(f"objective non-finite near component {k}")
        g[k] = (fp - fm) / (2.0 * h)
    return g


def hesse(fcn, at: np.ndarray, steps: np.ndarray, bounds: list[tuple[float, float]] | None = None):
    """Central finite-difference Hessian of the objective, inverted.

    Returns (covariance, errors). With errdef 0.5 and an NLL objective the
    errors are the one-sigma intervals directly. Steps shrink to stay within
    bounds; a parameter sitting on its limit falls back to an inward
    one-sided stencil.
    """
    at = np.asarray(at, dtype=np.float64)
    n = len(at)
    if bounds is None:
        bounds = [(-math.inf, math.inf)] * n
    h = np.array(steps, dtype=np.float64)
    side = np.zeros(n)  # 0: symmetric, +1/-1: one-sided inward
    for k, (lo, hi) in enumerate(bounds):
        room_up = hi - at[k]
        room_dn = at[k] - lo
        cap = 0.49 * min(room_up, room_dn)
        if cap > h[k] * 1e-9 and math.isfinite(cap):
            h[k] = min(h[k], cap)
        elif math.isfinite(cap):
            side[k] = 1.0 if room_up >= room_dn else -1.0
            h[k] = min(h[k], 0.49 * max(room_up, room_dn))
            if h[k] <= 0.0:
                raise NonPositiveDefinite([0.0])

    f0 = fcn(at)

    def shifted(k_offsets: dict[int, float]) -> float:
        x = at.copy()
        for k, d in k_offsets.items():
            x[k] += d
        return fcn(x)

    H = np.empty((n, n), dtype=np.float64)
    for k in range(n):
        if side[k] == 0.0:
            H[k, k] = (shifted({k: h[k]}) - 2.0 * f0 + shifted({k: -h[k]})) / h[k] ** 2
        else:
            s = side[k]
            H[k, k] = (f0 - 2.0 * shifted({k: s * h[k]}) + shifted({k: 2.0 * s * h[k]})) / h[k] ** 2
    for k in range(n):
        for l in range(k + 1, n):
            dk = side[k] if side[k] else 1.0
            dl = side[l] if side[l] else 1.0
            if side[k] == 0.0 and side[l] == 0.0:
                v = (
                    shifted({k: h[k], l: h[l]})
                    - shifted({k: h[k], l: -h[l]})
                    - shifted({k: -h[k], l: h[l]})
                    + shifted({k: -h[k], l: -h[l]})
                ) / (4.0 * h[k] * h[l])
            else:
                v = (
                    shifted({k: dk * h[k], l: dl * h[l]})
                    - shifted({k: dk * h[k]})
                    - shifted({l: dl * h[l]})
                    + f0
                ) / (dk * h[k] * dl * h[l])
            H[k, l] = H[l, k] = v

    eig = np.linalg.eigvalsh(H)
    if not (eig > 0.0).all():
        raise NonPositiveDefinite(eig.tolist())
    covariance = np.linalg.inv(H)
    covariance = 0.5 * (covariance + covariance.T)
    errors = np.sqrt(np.diag(covariance))
    return covariance, errors


# --- BFGS minimizer --------------------------------------------------------------


def _internal_steps(theta: np.ndarray, ext_steps: np.ndarray, bounds) -> np.ndarray:
    out = np.empty_like(theta)
    for k, (lo, hi) in enumerate(bounds):
        deriv = abs(_dext_dint(theta[k], lo, hi))
        if deriv < 1e-12:
            out[k] = 1e-3
        else:
            h = ext_steps[k] / deriv
            if math.isfinite(lo) and math.isfinite(hi):
                h = min(h, 0.5)
            out[k] = h
    return out


def minimize(
    fcn: FcnHandle,
    params: list[Variable],
    options: MinimizerOptions | None = None,
) -> FitResult:
    """BFGS over the non-fixed parameters of `params`.

    `fcn` takes the external free-parameter vector. The result carries
    covariance and errors from a finite-difference Hessian at the minimum;
    if that Hessian is not positive definite the status is "failed" and
    the eigenvalues are reported in the message.
    """
    opts = options or MinimizerOptions()
    free = [p for p in params if not p.fixed]
    if not free:
        raise NoFreeParameters("no non-fixed parameters to minimize")
    for p in free:
        if not (p.lower <= p.value <= p.upper):
            raise OutOfBounds(f"{p.name!r} starts outside its bounds")
    bounds = [(p.lower, p.upper) for p in free]
    names = tuple(p.name for p in free)
    ext_steps = np.array([p.step for p in free], dtype=np.float64)
    step_floor = ext_steps * 2.0**-20
    n = len(free)
    max_calls = opts.max_calls or 200 + 100 * n + 5 * n * n

    t_start = time.perf_counter()

    theta = np.array([to_internal(p.value, *b) for p, b in zip(free, bounds)])

    def phi(th: np.ndarray) -> float:
        x = np.array([to_external(t, *b) for t, b in zip(th, bounds)])
        return fcn(x)

    def phi_grad(th: np.ndarray) -> np.ndarray:
        hs = _internal_steps(th, ext_steps, bounds)
        return fd_gradient(phi, th, hs)

    n_grad = 0
    f = phi(theta)
    if not math.isfinite(f):
        raise NonFiniteObjective(f"objective is {f!r} at the starting point")

    # Seed gradient and a diagonal curvature estimate from one stencil pass;
    # starting the inverse-Hessian approximation at the right scale is what
    # lets a refit from the minimum converge on its first EDM check.
    g = np.empty(n)
    b_diag = np.ones(n)
    seed_steps = _internal_steps(theta, ext_steps, bounds)
    for k in range(n):
        h = seed_steps[k]
        up = theta.copy(); up[k] += h
        dn = theta.copy(); dn[k] -= h
        fp, fm = phi(up), phi(dn)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteObjective(f"objective non-finite near start, component {k}")
        g[k] = (fp - fm) / (2.0 * h)
        curvature = (fp - 2.0 * f + fm) / (h * h)
        if math.isfinite(curvature) and curvature > 0.0:
            b_diag[k] = 1.0 / curvature
    n_grad += 1
    if opts.trace is not None:
        opts.trace.append((fcn.n_calls, f))

    B = np.diag(b_diag)
    resets = 0
    status = "converged"
    message = ""
    edm = math.inf

    while True:
        edm = 0.5 * float(g @ B @ g)
        if not math.isfinite(edm) or edm < 0.0:
            if resets == 0:
                B = np.eye(n)
                resets += 1
                continue
            raise SingularHessianApprox(f"EDM became {edm!r} after a reset")
        if edm < opts.edm_tol:
            status = "converged"
            break
        if fcn.n_calls >= max_calls:
            status = "max_calls"
            message = f"stopped after {fcn.n_calls} objective calls"
            break

        d = -(B @ g)
        slope = float(g @ d)
        if slope >= 0.0:
            if resets == 0:
                B = np.eye(n)
                resets += 1
                continue
            raise SingularHessianApprox("search direction is not a descent direction")

        t = 1.0
        f_new = None
        for _ in range(opts.max_line_steps):
            try:
                cand = phi(theta + t * d)
            except ParafitError:
                cand = math.inf
            if math.isfinite(cand) and cand <= f + opts.armijo_c * t * slope:
                f_new = cand
                break
            t *= opts.shrink
        if f_new is None:
            if resets == 0:
                B = np.eye(n)
                resets += 1
                continue
            status = "failed"
            message = "line search could not find a decrease"
            break

        theta_new = theta + t * d
        g_new = phi_grad(theta_new)
        n_grad += 1
        s = theta_new - theta
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y) + 1e-300):
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            B = V @ B @ V.T + rho * np.outer(s, s)
        # shrink finite-difference steps once the objective change sinks to
        # the noise floor, to sharpen gradients right at the minimum
        if abs(f - f_new) < 64.0 * np.finfo(float).eps * max(1.0, abs(f)):
            ext_steps = np.maximum(ext_steps * 0.5, step_floor)
        theta, f, g = theta_new, f_new, g_new
        if opts.trace is not None:
            opts.trace.append((fcn.n_calls, f))

    x_ext = np.array([to_external(t, *b) for t, b in zip(theta, bounds)])
    at_limit = tuple(
        p.name
        for p, (lo, hi), v in zip(free, bounds, x_ext)
        if (math.isfinite(lo) and math.isfinite(hi) and (hi - lo) > 0
            and min(v - lo, hi - v) < 1e-5 * (hi - lo))
    )

    covariance = np.zeros((n, n))
    errors = np.zeros(n)
    if status == "converged":
        try:
            covariance, errors = hesse(fcn, x_ext, ext_steps, bounds)
        except NonPositiveDefinite as exc:
            status = "failed"
            message = str(exc)

    return FitResult(
        status=status,
        nll_min=f,
        names=names,
        values=x_ext,
        errors=errors,
        covariance=covariance,
        edm=edm,
        n_calls=fcn.n_calls,
        n_grad=n_grad,
        wall_time_s=time.perf_counter() - t_start,
        at_limit=at_limit,
        message=message,
    )


# --- the fit manager ----------------------------------------------------------------


class FitManager:
    """Binds a model to a dataset, minimizes, and writes results back.

    The manager owns the FCN (an NLL for unbinned data, a Poisson NLL for
    binned data) and a normalization store that persists across objective
    calls, so only the integrals whose parameters moved are recomputed.
    """

    def __init__(
        self,
        pdf: PdfNode,
        data,
        backend: Backend | None = None,
        options: MinimizerOptions | None = None,
    ):
        self.pdf = pdf
        self.data = data
        self.backend = backend or Backend()
        self.options = options or MinimizerOptions()
        self.store = NormalizationStore()
        self.parameters: tuple[Variable, ...] = pdf.param_closure()
        self._binned = isinstance(data, BinnedDataSet)

    def free_parameters(self) -> list[Variable]:
        return [p for p in self.parameters if not p.fixed]

    def fcn(self) -> FcnHandle:
        """Direct handle on the objective over the free-parameter vector."""
        free = self.free_parameters()
        evaluate = binned_nll if self._binned else nll

        def objective(x: np.ndarray) -> float:
            for var, value in zip(free, x):
                set_value(var, float(value))
            snap = snapshot(self.parameters)
            return evaluate(self.pdf, self.data, snap, self.backend, self.store)

        return FcnHandle(objective)

    def fit(self) -> FitResult:
        free = self.free_parameters()
        if not free:
            raise NoFreeParameters("all model parameters are fixed")
        saved = [(p, p.value) for p in self.parameters]
        t0 = time.perf_counter()
        resolve_norms(self.pdf, snapshot(self.parameters), self.store)
        t_norm = time.perf_counter() - t0
        handle = self.fcn()
        try:
            result = minimize(handle, free, self.options)
        except ParafitError:
            for p, v in saved:
                set_value(p, v)
            raise
        t_total = time.perf_counter() - t0
        if result.status == "converged":
            for var, value in zip(free, result.values):
                set_value(var, float(value))
            for var, err in zip(free, result.errors):
                var.error = float(err)
        else:
            for p, v in saved:
                set_value(p, v)
        free_names = set(result.names)
        err_map = dict(zip(result.names, result.errors))
        val_map = dict(zip(result.names, result.values))
        result.all_parameters = tuple(
            (
                p.name,
                float(val_map.get(p.name, p.value)),
                float(err_map.get(p.name, 0.0)),
                p.name not in free_names,
            )
            for p in self.parameters
        )
        result.timing = {
            "normalization_s": t_norm,
            "minimization_s": t_total - t_norm,
            "total_s": t_total,
        }
        log.info(
            "fit %s: nll=%.10g edm=%.3g calls=%d norm=%.3fs minimize=%.3fs",
            result.status, result.nll_min, result.edm, result.n_calls,
            t_norm, t_total - t_norm,
        )
        return result


def fit_manager_run(
    pdf: PdfNode,
    data,
    backend: Backend | None = None,
    options: MinimizerOptions | None = None,
) -> FitResult:
    """One-shot convenience: build a manager, fit, return the result."""
    return FitManager(pdf, data, backend=backend, options=options).fit()
