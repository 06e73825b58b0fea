"""Light-tailed increment laws for the Lindley recursion.

Each model exposes its log moment generating function, the convex
conjugate of that function (analytically where a closed form exists and
numerically otherwise), the positive root of the log-MGF, and a sampler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .rng import as_generator

__all__ = [
    "FAMILIES",
    "ModelError",
    "NumericNonconvergence",
    "OutOfDomain",
    "IncrementModel",
    "ConvexConjugate",
    "ValidationReport",
    "two_point",
    "lattice",
    "gaussian",
    "exp_minus_constant",
    "model_from_spec",
    "log_mgf",
    "grad_log_mgf",
    "hess_log_mgf",
    "legendre",
    "legendre_grad",
    "tilt_root_beta",
    "sample_increments",
    "validate_assumptions",
    "TWO_POINT",
    "GAUSSIAN",
]

FAMILIES = ("two-point", "lattice-finite-support", "gaussian", "exp-minus-constant")

# interior safety margin used when probing near a finite domain endpoint
_EDGE = 1e-12


class ModelError(ValueError):
    pass


class NumericNonconvergence(RuntimeError):
    pass


class OutOfDomain(ValueError):
    pass


@dataclass(frozen=True)
class IncrementModel:
    """An increment law U, tagged by family with a flat parameter tuple.

    Parameters per family:

    * ``two-point``: ``(q,)`` with U = +1 w.p. q and -1 otherwise.
    * ``lattice-finite-support``: ``(v1, p1, v2, p2, ...)`` integer values
      with probabilities.
    * ``gaussian``: ``(mean, sigma)``.
    * ``exp-minus-constant``: ``(rate, c)``, U = E - c with E ~ Exp(rate).
    """

    family: str
    params: tuple
    mu: float = field(init=False)
    theta_minus: float = field(init=False)
    theta_plus: float = field(init=False)
    supports_assumption2: bool = field(init=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        params = tuple(float(x) for x in self.params)
        object.__setattr__(self, "params", params)
        fam = self.family
        if fam == "two-point":
            if len(params) != 1 or not 0.0 <= params[0] <= 1.0:
                raise ModelError("two-point needs one parameter q in [0, 1]")
            q = params[0]
            mu, tm, tp = 2.0 * q - 1.0, -math.inf, math.inf
        elif fam == "lattice-finite-support":
            if len(params) < 2 or len(params) % 2:
                raise ModelError("lattice needs (value, prob) pairs")
            vals = np.array(params[0::2])
            probs = np.array(params[1::2])
            if np.any(vals != np.round(vals)):
                raise ModelError("lattice values must be integers")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise ModelError("lattice probabilities must be nonnegative and sum to 1")
            if len(set(vals.tolist())) != len(vals):
                raise ModelError("lattice values must be distinct")
            mu, tm, tp = float(vals @ probs), -math.inf, math.inf
        elif fam == "gaussian":
            if len(params) != 2 or params[1] <= 0:
                raise ModelError("gaussian needs (mean, sigma > 0)")
            mu, tm, tp = params[0], -math.inf, math.inf
        else:
            if len(params) != 2 or params[0] <= 0:
                raise ModelError("exp-minus-constant needs (rate > 0, c)")
            r, c = params
            mu, tm, tp = 1.0 / r - c, -math.inf, r
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "theta_minus", tm)
        object.__setattr__(self, "theta_plus", tp)
        # exact-tail regularity holds for every family offered here
        object.__setattr__(self, "supports_assumption2", True)

    # -- support -----------------------------------------------------------
    @property
    def lattice_support(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Integer values and probabilities for lattice families, else None."""
        if self.family == "two-point":
            q = self.params[0]
            vals, probs = np.array([-1.0, 1.0]), np.array([1.0 - q, q])
        elif self.family == "lattice-finite-support":
            vals, probs = np.array(self.params[0::2]), np.array(self.params[1::2])
        else:
            return None
        keep = probs > 0
        order = np.argsort(vals[keep])
        return vals[keep][order], probs[keep][order]

    def support_range(self) -> tuple[float, float]:
        """Essential infimum and supremum of U."""
        lat = self.lattice_support
        if lat is not None:
            return float(lat[0][0]), float(lat[0][-1])
        if self.family == "gaussian":
            return -math.inf, math.inf
        return -self.params[1], math.inf

    def atom_at(self, v: float) -> float:
        """P(U = v); zero for the continuous families."""
        lat = self.lattice_support
        if lat is None:
            return 0.0
        hit = lat[0] == v
        return float(lat[1][hit].sum())

    def prob_positive(self) -> float:
        fam = self.family
        if fam == "gaussian":
            m, s = self.params
            return 0.5 * math.erfc(-m / (s * math.sqrt(2.0)))
        if fam == "exp-minus-constant":
            r, c = self.params
            return math.exp(-r * c) if c > 0 else 1.0
        vals, probs = self.lattice_support
        return float(probs[vals > 0].sum())

    @property
    def is_lattice(self) -> bool:
        return self.lattice_support is not None

    def spec(self) -> dict:
        return {"family": self.family, "params": list(self.params)}


def two_point(q: float) -> IncrementModel:
    return IncrementModel("two-point", (q,))


def lattice(values, probs) -> IncrementModel:
    flat = []
    for v, p in zip(values, probs):
        flat += [v, p]
    return IncrementModel("lattice-finite-support", tuple(flat))


def gaussian(mean: float, sigma: float) -> IncrementModel:
    return IncrementModel("gaussian", (mean, sigma))


def exp_minus_constant(rate: float, c: float) -> IncrementModel:
    return IncrementModel("exp-minus-constant", (rate, c))


def model_from_spec(family: str, params) -> IncrementModel:
    return IncrementModel(family.strip().lower(), tuple(params))


TWO_POINT = two_point(0.3)
GAUSSIAN = gaussian(-1.0, 1.0)


# -- log-MGF and derivatives ----------------------------------------------

def _lattice_tilt(model, theta):
    vals, probs = model.lattice_support
    th = np.asarray(theta, dtype=float)
    logw = np.log(probs)[None, :] + np.multiply.outer(th.ravel(), vals)
    lam = logsumexp(logw, axis=1)
    w = np.exp(logw - lam[:, None])
    m1 = w @ vals
    m2 = w @ vals**2
    return lam.reshape(th.shape), m1.reshape(th.shape), (m2 - m1**2).reshape(th.shape)


def log_mgf(model: IncrementModel, theta):
    """log E exp(theta U); +inf outside (theta_minus, theta_plus)."""
    th = np.asarray(theta, dtype=float)
    fam = model.family
    if fam == "two-point":
        q = model.params[0]
        with np.errstate(divide="ignore"):
            out = np.logaddexp(math.log(q) + th if q > 0 else -np.inf * np.ones_like(th),
                               math.log1p(-q) - th if q < 1 else -np.inf * np.ones_like(th))
    elif fam == "lattice-finite-support":
        out = _lattice_tilt(model, th)[0]
    elif fam == "gaussian":
        m, s = model.params
        out = m * th + 0.5 * s * s * th * th
    else:
        r, c = model.params
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(th < r, np.log(r / np.maximum(r - th, 1e-300)) - c * th, np.inf)
    return out if np.ndim(out) else float(out)


def grad_log_mgf(model: IncrementModel, theta):
    """Derivative of the log-MGF (the tilted mean)."""
    th = np.asarray(theta, dtype=float)
    fam = model.family
    if fam == "two-point":
        q = model.params[0]
        out = np.tanh(th + 0.5 * math.log(q / (1.0 - q)))
    elif fam == "lattice-finite-support":
        out = _lattice_tilt(model, th)[1]
    elif fam == "gaussian":
        m, s = model.params
        out = m + s * s * th
    else:
        r, c = model.params
        with np.errstate(divide="ignore"):
            out = np.where(th < r, 1.0 / np.maximum(r - th, 1e-300) - c, np.inf)
    return out if np.ndim(out) else float(out)


def hess_log_mgf(model: IncrementModel, theta):
    th = np.asarray(theta, dtype=float)
    fam = model.family
    if fam == "two-point":
        q = model.params[0]
        out = 1.0 - np.tanh(th + 0.5 * math.log(q / (1.0 - q))) ** 2
    elif fam == "lattice-finite-support":
        out = _lattice_tilt(model, th)[2]
    elif fam == "gaussian":
        out = np.full_like(th, model.params[1] ** 2)
    else:
        r, _ = model.params
        with np.errstate(divide="ignore"):
            out = np.where(th < r, 1.0 / np.maximum(r - th, 1e-300) ** 2, np.inf)
    return out if np.ndim(out) else float(out)


# -- convex conjugate -----------------------------------------------------

@dataclass(frozen=True)
class ConvexConjugate:
    """Legendre transform of the log-MGF of ``model``.

    ``mode='analytic'`` uses the closed form when the family has one and
    silently falls back to the numeric route otherwise.
    """

    model: IncrementModel
    mode: str = "analytic"
    tol: float = 1e-12

    def __post_init__(self):
        if self.mode not in ("analytic", "numeric"):
            raise ValueError("mode must be 'analytic' or 'numeric'")

    @property
    def uses_closed_form(self) -> bool:
        return self.mode == "analytic" and self.model.family != "lattice-finite-support"

    def __call__(self, v):
        return legendre(self, v)

    def grad(self, v):
        return legendre_grad(self, v)


def _analytic_value(model, v):
    fam = model.family
    v = np.asarray(v, dtype=float)
    if fam == "gaussian":
        m, s = model.params
        return (v - m) ** 2 / (2.0 * s * s)
    if fam == "exp-minus-constant":
        r, c = model.params
        x = r * (v + c)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x > 0, x - 1.0 - np.log(np.where(x > 0, x, 1.0)), np.inf)
    q = model.params[0]
    a = (1.0 + v) / 2.0
    b = (1.0 - v) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0) / q), 0.0)
        tb = np.where(b > 0, b * np.log(np.where(b > 0, b, 1.0) / (1.0 - q)), 0.0)
    out = ta + tb
    return np.where((v < -1.0) | (v > 1.0), np.inf, out)


def _analytic_grad(model, v):
    fam = model.family
    v = np.asarray(v, dtype=float)
    if fam == "gaussian":
        m, s = model.params
        return (v - m) / (s * s)
    if fam == "exp-minus-constant":
        r, c = model.params
        return r - 1.0 / (v + c)
    q = model.params[0]
    return 0.5 * np.log((1.0 + v) * (1.0 - q) / ((1.0 - v) * q))


def _theta_cap(model, side):
    lim = model.theta_plus if side > 0 else model.theta_minus
    if math.isinf(lim):
        return lim
    return lim - side * _EDGE * max(1.0, abs(lim))


def _conjugate_argmax(model, v, tol):
    """Maximizer theta* of theta*v - Lambda(theta) for v inside the support."""
    mu = model.mu
    if v == mu:
        return 0.0
    side = 1.0 if v > mu else -1.0
    cap = _theta_cap(model, side)
    # bracket: h'(theta) = v - Lambda'(theta) changes sign between 0 and far
    near, far = 0.0, side
    for _ in range(200):
        if side * far >= side * cap:
            far = cap
            if side * (v - grad_log_mgf(model, far)) > 0:
                raise NumericNonconvergence(f"no interior maximizer for v={v}")
            break
        if side * (v - grad_log_mgf(model, far)) <= 0:
            break
        near, far = far, 2.0 * far
    else:
        raise NumericNonconvergence(f"bracket expansion failed for v={v}")
    lo, hi = min(near, far), max(near, far)

    def h(t):
        return t * v - log_mgf(model, t)

    # coarse golden-section on the concave objective
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c1, c2 = b - g * (b - a), a + g * (b - a)
    f1, f2 = h(c1), h(c2)
    for _ in range(40):
        if b - a <= 1e-3 * (1.0 + abs(a) + abs(b)):
            break
        if f1 >= f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - g * (b - a)
            f1 = h(c1)
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + g * (b - a)
            f2 = h(c2)
    # widen slightly so the root of h' stays bracketed, then safeguarded Newton
    a = max(lo, a - 1e-3 * (1.0 + abs(a)))
    b = min(hi, b + 1e-3 * (1.0 + abs(b)))
    t = 0.5 * (a + b)
    for _ in range(200):
        d1 = v - grad_log_mgf(model, t)
        if d1 == 0.0:
            return t
        if d1 > 0:
            a = t
        else:
            b = t
        d2 = hess_log_mgf(model, t)
        step = d1 / d2 if d2 > 0 else math.inf
        t_new = t + step
        if not (a < t_new < b):
            t_new = 0.5 * (a + b)
        if abs(t_new - t) <= tol * (1.0 + abs(t)):
            return t_new
        t = t_new
        if b - a <= tol * (1.0 + abs(t)):
            return t
    raise NumericNonconvergence(f"Newton refinement did not converge for v={v}")


def _numeric_value_scalar(model, v, tol):
    lo, hi = model.support_range()
    if v < lo or v > hi:
        return math.inf
    if v == lo or v == hi:
        atom = model.atom_at(v)
        return -math.log(atom) if atom > 0 else math.inf
    t = _conjugate_argmax(model, v, tol)
    return max(t * v - log_mgf(model, t), 0.0)


def legendre(conj: ConvexConjugate, v):
    """Lambda*(v) = sup_theta {theta v - Lambda(theta)}, vectorized over v."""
    model = conj.model
    if conj.uses_closed_form:
        out = _analytic_value(model, v)
        return out if np.ndim(out) else float(out)
    arr = np.asarray(v, dtype=float)
    out = np.array([_numeric_value_scalar(model, float(x), conj.tol) for x in arr.ravel()])
    out = out.reshape(arr.shape)
    return out if np.ndim(out) else float(out)


def legendre_grad(conj: ConvexConjugate, v):
    """Gradient of Lambda* (the maximizing theta); defined strictly inside the support."""
    model = conj.model
    arr = np.asarray(v, dtype=float)
    lo, hi = model.support_range()
    if np.any(arr <= lo) or np.any(arr >= hi):
        raise OutOfDomain(f"gradient of the conjugate needs v in ({lo}, {hi})")
    if conj.uses_closed_form:
        out = _analytic_grad(model, arr)
    else:
        out = np.array([_conjugate_argmax(model, float(x), conj.tol) for x in arr.ravel()])
        out = out.reshape(arr.shape)
    return out if np.ndim(out) else float(out)


# -- tilting root ---------------------------------------------------------

def tilt_root_beta(model: IncrementModel, tol: float = 1e-14) -> float:
    """sup{theta >= 0 : E exp(theta U) <= 1}."""
    if model.mu >= 0:
        raise ModelError("the tilting root needs a negative mean")
    if model.family == "gaussian":
        m, s = model.params
        return -2.0 * m / (s * s)
    cap = _theta_cap(model, 1.0)
    hi = 1.0
    while True:
        if hi >= cap:
            hi = cap
            if log_mgf(model, hi) <= 0:
                return model.theta_plus
            break
        if log_mgf(model, hi) > 0:
            break
        hi *= 2.0
        if hi > 1e300:
            return model.theta_plus
    # minimizer of Lambda on (0, hi): root of Lambda', which is negative at 0
    a, b = 0.0, hi
    for _ in range(200):
        mid = 0.5 * (a + b)
        if grad_log_mgf(model, mid) < 0:
            a = mid
        else:
            b = mid
        if b - a < 1e-12 * (1.0 + b):
            break
    a, b = a, hi
    t = 0.5 * (a + b)
    for _ in range(200):
        f = log_mgf(model, t)
        if f < 0:
            a = t
        else:
            b = t
        d = grad_log_mgf(model, t)
        t_new = t - f / d if d > 0 else 0.5 * (a + b)
        if not (a < t_new < b):
            t_new = 0.5 * (a + b)
        if abs(t_new - t) <= tol * (1.0 + t):
            return t_new
        t = t_new
    return t


# -- sampling and validation ---------------------------------------------

def sample_increments(model: IncrementModel, count: int, stream=None) -> np.ndarray:
    """``count`` i.i.d. draws of U from ``stream`` (Generator, seed, or id tuple)."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    rng = as_generator(stream)
    fam = model.family
    if fam == "two-point":
        return np.where(rng.random(count) < model.params[0], 1.0, -1.0)
    if fam == "lattice-finite-support":
        vals, probs = model.lattice_support
        return vals[rng.choice(len(vals), size=count, p=probs)]
    if fam == "gaussian":
        m, s = model.params
        return m + s * rng.standard_normal(count)
    r, c = model.params
    return rng.standard_exponential(count) / r - c


@dataclass
class ValidationReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(passed for _, passed, _ in self.checks)

    def failures(self) -> list[str]:
        return [name for name, passed, _ in self.checks if not passed]

    def __str__(self):
        lines = [f"{'PASS' if ok else 'FAIL'}  {name}: {detail}" for name, ok, detail in self.checks]
        return "\n".join(lines)


def validate_assumptions(model: IncrementModel) -> ValidationReport:
    checks = [
        ("negative-mean", model.mu < 0, f"mu = {model.mu:.6g}"),
        ("mgf-domain", model.theta_minus < 0 < model.theta_plus,
         f"theta in ({model.theta_minus}, {model.theta_plus})"),
        ("positive-increments", model.prob_positive() > 0,
         f"P(U>0) = {model.prob_positive():.6g}"),
        ("tail-regularity", model.supports_assumption2, "family metadata"),
    ]
    return ValidationReport(checks)
