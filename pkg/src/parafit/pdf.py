"""Composable probability-density nodes.

A model is a tree of :class:`PdfNode` objects: primitive kernels at the
leaves (gaussian, exponential, polynomial) and combination nodes above them
(weighted sums, products over disjoint observables). Kernels are evaluated
unnormalized and in float64; each node's normalization integral over its
observables' bounds is computed separately so it can be cached.

Combination nodes always work with *normalized* children, so their own
normalization is exactly 1: a sum node with simplex fractions and a product
node over disjoint axes both integrate to one by construction.

Additional kinds (the Dalitz-plot model) register themselves in
:data:`KIND_OPS` instead of being hard-wired here.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import ParameterSnapshot, Variable
from .errors import (
    FractionOutOfRange,
    NegativeDensity,
    NonFiniteDensity,
    NonPositiveNorm,
    OverlappingObservables,
    UnboundedObservable,
)

_node_ids = itertools.count()

_SQRT_2 = math.sqrt(2.0)
_SQRT_HALF_PI = math.sqrt(0.5 * math.pi)

GL_NODES_DEFAULT = 64
GL_PANELS_DEFAULT = 16


@dataclass(frozen=True)
class NormalizationValue:
    """A node's normalization integral plus the parameter generations it was
    computed from (the cache fingerprint)."""

    value: float
    fingerprint: tuple[int, ...]

    def __post_init__(self):
        if not (math.isfinite(self.value) and self.value > 0.0):
            raise NonPositiveNorm(f"normalization {self.value!r} is not positive and finite")


class PdfNode:
    """One node of a density tree.

    Nodes are immutable after construction; they hold references to the
    Variables that parameterize them, never copies, so a fit writing back
    into a Variable is immediately visible to the model.
    """

    __slots__ = ("id", "kind", "observables", "parameters", "children", "payload")

    def __init__(
        self,
        kind: str,
        observables: Sequence[Variable],
        parameters: Sequence[Variable],
        children: Sequence["PdfNode"] = (),
        payload: object = None,
    ):
        self.id = next(_node_ids)
        self.kind = kind
        self.observables = tuple(observables)
        self.parameters = tuple(parameters)
        self.children = tuple(children)
        self.payload = payload

    def observable_names(self) -> tuple[str, ...]:
        return tuple(o.name for o in self.observables)

    def walk(self):
        """Depth-first iteration over the tree, children before parents."""
        for child in self.children:
            yield from child.walk()
        yield self

    def param_closure(self) -> tuple[Variable, ...]:
        """All parameters of the subtree in deterministic order, deduplicated."""
        seen: dict[int, Variable] = {}
        for node in self.walk():
            for p in node.parameters:
                seen.setdefault(id(p), p)
        return tuple(seen.values())

    def fingerprint(self) -> tuple[int, ...]:
        """Generations of the subtree's parameters; keys the norm cache."""
        return tuple(p.generation for p in self.param_closure())

    def __repr__(self) -> str:
        return f"PdfNode({self.kind}#{self.id}, obs={self.observable_names()})"


def _pval(var: Variable, snap: ParameterSnapshot | None) -> float:
    return snap.value_of(var) if snap is not None else var.value


def _check_finite(kind: str, values: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(values)
    if bad.any():
        raise NonFiniteDensity(int(np.argmax(bad)), f"{kind} kernel produced a non-finite value")
    return values


# --- primitive kernels ---------------------------------------------------------


def _gaussian_kernel(node, columns, snap):
    mu = _pval(node.parameters[0], snap)
    sigma = _pval(node.parameters[1], snap)
    x = columns[node.observables[0].name]
    z = (x - mu) / sigma
    return _check_finite("gaussian", np.exp(-0.5 * z * z))


def _gaussian_norm(node, snap, child_norms):
    mu = _pval(node.parameters[0], snap)
    sigma = _pval(node.parameters[1], snap)
    if not sigma > 0.0:
        raise NonPositiveNorm(f"gaussian sigma {sigma!r} must be > 0")
    obs = node.observables[0]
    hi = math.erf((obs.upper - mu) / (sigma * _SQRT_2)) if not math.isinf(obs.upper) else 1.0
    lo = math.erf((obs.lower - mu) / (sigma * _SQRT_2)) if not math.isinf(obs.lower) else -1.0
    return sigma * _SQRT_HALF_PI * (hi - lo)


def _exponential_kernel(node, columns, snap):
    alpha = _pval(node.parameters[0], snap)
    x = columns[node.observables[0].name]
    return _check_finite("exponential", np.exp(alpha * x))


def _exponential_norm(node, snap, child_norms):
    alpha = _pval(node.parameters[0], snap)
    obs = node.observables[0]
    lo, hi = obs.lower, obs.upper
    if alpha == 0.0:
        if math.isinf(lo) or math.isinf(hi):
            raise UnboundedObservable("flat exponential needs finite bounds")
        return hi - lo
    # exp(alpha*inf) and exp(-alpha*inf) resolve to 0 or inf; inf means the
    # integral diverges on that side.
    upper_term = math.exp(alpha * hi) if not math.isinf(hi) else (0.0 if alpha < 0 else math.inf)
    lower_term = math.exp(alpha * lo) if not math.isinf(lo) else (0.0 if alpha > 0 else math.inf)
    if math.isinf(upper_term) or math.isinf(lower_term):
        raise UnboundedObservable(f"exponential with alpha={alpha} diverges over [{lo}, {hi}]")
    return (upper_term - lower_term) / alpha


def _poly_coeffs(node, snap):
    return np.array([_pval(c, snap) for c in node.parameters], dtype=np.float64)


def _polynomial_kernel(node, columns, snap):
    coeffs = _poly_coeffs(node, snap)
    x = columns[node.observables[0].name]
    vals = np.polynomial.polynomial.polyval(x, coeffs)
    vals = np.asarray(vals, dtype=np.float64)
    _check_finite("polynomial", vals)
    neg = vals < 0.0
    if neg.any():
        i = int(np.argmax(neg))
        raise NegativeDensity(i, float(vals[i]))
    return vals


def gauss_legendre_points(lo: float, hi: float, nodes: int, panels: int):
    """Composite Gauss-Legendre abscissas and weights over [lo, hi]."""
    xi, wi = np.polynomial.legendre.leggauss(nodes)
    width = (hi - lo) / panels
    starts = lo + width * np.arange(panels)
    centers = starts + 0.5 * width
    x = (centers[:, None] + 0.5 * width * xi[None, :]).reshape(-1)
    w = np.broadcast_to(0.5 * width * wi, (panels, nodes)).reshape(-1)
    return x, w


def _polynomial_norm(node, snap, child_norms):
    obs = node.observables[0]
    if math.isinf(obs.lower) or math.isinf(obs.upper):
        raise UnboundedObservable("polynomial normalization needs finite bounds")
    nodes, panels = node.payload
    x, w = gauss_legendre_points(obs.lower, obs.upper, nodes, panels)
    vals = _polynomial_kernel(node, {obs.name: x}, snap)
    return float(np.dot(w, vals))


# --- combination nodes -----------------------------------------------------------


def _fractions(node, snap) -> np.ndarray:
    f = np.array([_pval(v, snap) for v in node.parameters], dtype=np.float64)
    rest = 1.0 - f.sum()
    if (f < 0.0).any() or (f > 1.0).any() or rest < 0.0:
        raise FractionOutOfRange(f"fractions {f.tolist()} leave remainder {rest}")
    return np.append(f, rest)


def _add_kernel(node, columns, snap, norms):
    weights = _fractions(node, snap)
    total = None
    for w, child in zip(weights, node.children):
        dens = eval_batch(child, columns, snap, norms) / norms[child.id]
        total = w * dens if total is None else total + w * dens
    return total


def _prod_kernel(node, columns, snap, norms):
    total = None
    for child in node.children:
        dens = eval_batch(child, columns, snap, norms) / norms[child.id]
        total = dens if total is None else total * dens
    return total


# --- kind dispatch ----------------------------------------------------------------

# kind -> (kernel(node, columns, snap, norms) -> ndarray,
#          norm(node, snap, child_norms) -> float)
KIND_OPS: dict[str, tuple[Callable, Callable]] = {
    "gaussian": (lambda n, c, s, _: _gaussian_kernel(n, c, s), _gaussian_norm),
    "exponential": (lambda n, c, s, _: _exponential_kernel(n, c, s), _exponential_norm),
    "polynomial": (lambda n, c, s, _: _polynomial_kernel(n, c, s), _polynomial_norm),
    "add": (_add_kernel, lambda n, s, cn: 1.0),
    "prod": (_prod_kernel, lambda n, s, cn: 1.0),
}


def register_kind(kind: str, kernel: Callable, norm: Callable) -> None:
    """Plug an extra node kind into the dispatch table."""
    KIND_OPS[kind] = (kernel, norm)


# --- public operations --------------------------------------------------------------


def eval_batch(
    node: PdfNode,
    columns: Mapping[str, np.ndarray],
    snap: ParameterSnapshot | None = None,
    norms: Mapping[int, float] | None = None,
) -> np.ndarray:
    """Unnormalized density of `node` for every event in `columns`.

    Combination nodes need their children's normalizations; pass `norms`
    (node id -> value) resolved by the engine's cache, or leave it None to
    compute them on the fly.
    """
    for name in node.observable_names():
        if name not in columns:
            raise KeyError(f"column {name!r} missing from data")
    if norms is None and node.children:
        norms = {n.id: normalize(n, snap).value for n in node.walk() if n is not node}
    kernel, _ = KIND_OPS[node.kind]
    return kernel(node, columns, snap, norms)


def normalize_value(node: PdfNode, snap: ParameterSnapshot | None, child_norms: Mapping[int, float]) -> float:
    """Normalization integral given already-resolved child norms."""
    _, norm_fn = KIND_OPS[node.kind]
    value = float(norm_fn(node, snap, child_norms))
    if not (math.isfinite(value) and value > 0.0):
        raise NonPositiveNorm(f"{node.kind} normalization {value!r}")
    return value


def normalize(node: PdfNode, snap: ParameterSnapshot | None = None) -> NormalizationValue:
    """Recursive, uncached normalization of a subtree."""
    child_norms: dict[int, float] = {}
    for n in node.walk():
        if n is not node:
            child_norms.setdefault(n.id, normalize_value(n, snap, child_norms))
    return NormalizationValue(normalize_value(node, snap, child_norms), node.fingerprint())


# --- builders ---------------------------------------------------------------------------


def _as_param(value, name: str) -> Variable:
    if isinstance(value, Variable):
        return value
    return Variable(name, float(value), fixed=True)


def gaussian(obs: Variable, mu, sigma) -> PdfNode:
    """exp(-(x - mu)^2 / (2 sigma^2)), unnormalized."""
    return PdfNode("gaussian", [obs], [_as_param(mu, "mu"), _as_param(sigma, "sigma")])


def exponential(obs: Variable, alpha) -> PdfNode:
    """exp(alpha * x), unnormalized."""
    return PdfNode("exponential", [obs], [_as_param(alpha, "alpha")])


def polynomial(
    obs: Variable,
    coefficients: Sequence,
    quad_nodes: int = GL_NODES_DEFAULT,
    quad_panels: int = GL_PANELS_DEFAULT,
) -> PdfNode:
    """sum_k a_k x^k with coefficients in ascending power order.

    Negative evaluations raise instead of clamping; a density that dips
    below zero is a modelling bug, and hiding it biases fits.
    """
    params = [_as_param(c, f"c{k}") for k, c in enumerate(coefficients)]
    if not params:
        raise ValueError("polynomial needs at least one coefficient")
    return PdfNode("polynomial", [obs], params, payload=(int(quad_nodes), int(quad_panels)))


def add_pdf(children: Sequence[PdfNode], fractions: Sequence) -> PdfNode:
    """Weighted sum of normalized children.

    Takes children-1 fraction parameters; the last weight is implied as
    1 - sum(fractions), so the weights always lie on the simplex.
    """
    children = list(children)
    if len(children) < 2:
        raise ValueError("a sum node needs at least two children")
    fracs = [_as_param(f, f"f{k}") for k, f in enumerate(fractions)]
    if len(fracs) != len(children) - 1:
        raise FractionOutOfRange(
            f"{len(children)} children need {len(children) - 1} fractions, got {len(fracs)}"
        )
    values = [f.value for f in fracs]
    if any(not 0.0 <= v <= 1.0 for v in values) or sum(values) > 1.0:
        raise FractionOutOfRange(f"fractions {values} must lie in [0,1] and sum to <= 1")
    obs_names = {c.observable_names() for c in children}
    if len(obs_names) != 1:
        raise OverlappingObservables("sum children must share the same observables")
    observables = children[0].observables
    return PdfNode("add", observables, fracs, children)


def prod_pdf(children: Sequence[PdfNode]) -> PdfNode:
    """Product of normalized children over pairwise disjoint observables."""
    children = list(children)
    if len(children) < 2:
        raise ValueError("a product node needs at least two children")
    seen: dict[str, int] = {}
    observables: list[Variable] = []
    for k, child in enumerate(children):
        for obs in child.observables:
            if obs.name in seen:
                raise OverlappingObservables(
                    f"observable {obs.name!r} appears in children {seen[obs.name]} and {k}"
                )
            seen[obs.name] = k
            observables.append(obs)
    return PdfNode("prod", observables, [], children)
