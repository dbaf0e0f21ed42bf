"""Named, serializable building blocks for experiment configs.

Every entry has a category, a name, a parameter schema (name -> type and
default) and a builder. Listing order is stable: categories in a fixed
order, names sorted within each category.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ParameterError
from .fem import FieldFunction, LinearCoefficient, constant_coefficient, identity_coefficient
from . import nonlinearity as nl

CATEGORIES = ("flux_data", "source_data", "solution", "coefficient", "nonlinearity", "weight")

REQUIRED = object()


@dataclass(frozen=True)
class Entry:
    category: str
    name: str
    params: dict          # name -> (type label, default or REQUIRED)
    build: Callable
    doc: str = ""

    def schema(self):
        out = {}
        for k, (typ, default) in self.params.items():
            out[k] = {"type": typ} if default is REQUIRED else {"type": typ, "default": default}
        return out

    def resolve(self, params):
        params = dict(params or {})
        unknown = set(params) - set(self.params)
        if unknown:
            raise ParameterError(f"{self.name}: unknown parameters {sorted(unknown)}")
        out = {}
        for k, (_, default) in self.params.items():
            if k in params:
                out[k] = params[k]
            elif default is REQUIRED:
                raise ParameterError(f"{self.name}: missing parameter {k!r}")
            else:
                out[k] = default
        return out


_ENTRIES: dict = {}


def _register(category, name, params=None, doc=""):
    def deco(fn):
        _ENTRIES[(category, name)] = Entry(category, name, params or {}, fn, doc)
        return fn
    return deco


def get(category, name):
    try:
        return _ENTRIES[(category, name)]
    except KeyError:
        known = ", ".join(names(category))
        raise ParameterError(f"unknown {category} {name!r}; known: {known}") from None


def names(category):
    return sorted(n for c, n in _ENTRIES if c == category)


def build(category, name, params=None, **context):
    entry = get(category, name)
    return entry.build(**entry.resolve(params), **context)


def listing():
    """``[(category, name, schema, doc), ...]`` in stable order."""
    return [(c, n, _ENTRIES[(c, n)].schema(), _ENTRIES[(c, n)].doc)
            for c in CATEGORIES for n in names(c)]


# -- manufactured and singular solutions ------------------------------


@_register("solution", "sin_sin", doc="sin(pi x) sin(pi y); vanishes on the unit square boundary")
def _sin_sin():
    def value(x):
        return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])

    def grad(x):
        sx, sy = np.sin(np.pi * x[..., 0]), np.sin(np.pi * x[..., 1])
        cx, cy = np.cos(np.pi * x[..., 0]), np.cos(np.pi * x[..., 1])
        return np.pi * np.stack([cx * sy, sx * cy], axis=-1)

    return FieldFunction(value, grad, name="sin_sin")


@_register("solution", "bubble", doc="x(1-x) y(1-y)")
def _bubble():
    def value(x):
        X, Y = x[..., 0], x[..., 1]
        return X * (1 - X) * Y * (1 - Y)

    def grad(x):
        X, Y = x[..., 0], x[..., 1]
        return np.stack([(1 - 2 * X) * Y * (1 - Y), X * (1 - X) * (1 - 2 * Y)], axis=-1)

    return FieldFunction(value, grad, name="bubble")


def _smoothstep(t):
    """Quintic cutoff: 1 for t <= 0, 0 for t >= 1, C^2 in between."""
    t = np.clip(t, 0.0, 1.0)
    return 1.0 - t ** 3 * (10 - 15 * t + 6 * t ** 2), -30.0 * t ** 2 * (1 - t) ** 2


@_register("solution", "log_cutoff",
           {"center": ("point", [0.5, 0.5]), "r0": ("number", 0.15), "r1": ("number", 0.35)},
           doc="eta(r) log r with r = |x - center|, eta = 1 for r <= r0 and 0 for r >= r1")
def log_cutoff(center, r0, r1):
    c = np.asarray(center, dtype=float)
    if c.shape != (2,):
        raise ParameterError("log_cutoff center must be a 2D point")
    if not 0 < r0 < r1:
        raise ParameterError("log_cutoff needs 0 < r0 < r1")
    width = r1 - r0

    def value(x):
        r = np.linalg.norm(x - c, axis=-1)
        eta, _ = _smoothstep((r - r0) / width)
        with np.errstate(divide="ignore"):
            return np.where(r < r1, eta * np.log(r), 0.0)

    def grad(x):
        d = x - c
        r = np.linalg.norm(d, axis=-1)
        eta, deta = _smoothstep((r - r0) / width)
        with np.errstate(divide="ignore", invalid="ignore"):
            radial = np.where(r < r1, deta / width * np.log(r) + eta / r, 0.0)
            return (radial / r)[..., None] * d

    return FieldFunction(value, grad, singular_points=(tuple(c),), name="log_cutoff")


# -- data ---------------------------------------------------------------


@_register("flux_data", "zero")
def _zero_flux(**_):
    return lambda x: np.zeros(np.shape(x)), ()


@_register("flux_data", "constant", {"value": ("vector", REQUIRED)})
def _constant_flux(value, **_):
    v = np.asarray(value, dtype=float)
    if v.shape != (2,):
        raise ParameterError("constant flux needs a 2-vector")
    return lambda x: np.broadcast_to(v, np.shape(x)).copy(), ()


@_register("flux_data", "solution_flux",
           doc="a(x, grad u*) for the configured exact solution u* and model; makes u* exact")
def _solution_flux(exact=None, model=None, **_):
    if exact is None or exact.grad is None:
        raise ParameterError("solution_flux needs an exact solution with a gradient")
    if model is None:
        raise ParameterError("solution_flux needs a model")
    if isinstance(model, LinearCoefficient):
        A = model.A
        fn = lambda x: np.einsum("...ij,...j->...i", A(x), exact.grad(x))
    else:
        fn = lambda x: model.a(x, exact.grad(x))
    return fn, tuple(exact.singular_points)


@_register("source_data", "zero")
def _zero_source(**_):
    return lambda x: np.zeros(np.shape(x)[:-1]), ()


@_register("source_data", "constant", {"value": ("number", 1.0)})
def _constant_source(value, **_):
    return lambda x: np.full(np.shape(x)[:-1], float(value)), ()


@_register("source_data", "sin_sin_source", {"scale": ("number", 1.0)},
           doc="scale * 2 pi^2 sin(pi x) sin(pi y), the Laplace load of sin_sin")
def _sin_sin_source(scale, **_):
    k = float(scale) * 2 * np.pi ** 2
    return (lambda x: k * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])), ()


@_register("source_data", "power_source",
           {"center": ("point", REQUIRED), "gamma": ("number", REQUIRED), "scale": ("number", 1.0)},
           doc="scale * |x - center|^gamma")
def _power_source(center, gamma, scale, **_):
    c = np.asarray(center, dtype=float)

    def fn(x):
        with np.errstate(divide="ignore"):
            return float(scale) * np.linalg.norm(x - c, axis=-1) ** float(gamma)

    return fn, (tuple(c),)


# -- coefficients and nonlinearities ------------------------------------


@_register("coefficient", "identity", {"scale": ("number", 1.0)})
def _identity(scale):
    if not scale > 0:
        raise ParameterError("identity scale must be positive")
    return identity_coefficient(float(scale))


@_register("coefficient", "constant_matrix", {"matrix": ("matrix", REQUIRED)},
           doc="constant symmetric positive definite 2x2 matrix")
def _constant_matrix(matrix):
    A = constant_coefficient(matrix)
    if not A.alpha > 0:
        raise ParameterError("coefficient matrix must be positive definite")
    return A


@_register("coefficient", "oscillating", {"alpha": ("number", 1.0), "Lambda": ("number", 2.0)},
           doc="scalar ((alpha+Lambda) + (Lambda-alpha) sin(2 pi x) sin(2 pi y)) / 2 times I")
def _oscillating(alpha, Lambda):
    a, L = float(alpha), float(Lambda)
    if not 0 < a <= L:
        raise ParameterError("need 0 < alpha <= Lambda")

    def A(x):
        s = 0.5 * ((a + L) + (L - a) * np.sin(2 * np.pi * x[..., 0]) * np.sin(2 * np.pi * x[..., 1]))
        return s[..., None, None] * np.eye(2)

    return LinearCoefficient(A, a, L, "oscillating")


@_register("nonlinearity", "linear",
           {"coefficient": ("string", "identity"), "coefficient_params": ("object", {})},
           doc="a(x, v) = A(x) v for a registered coefficient")
def _linear(coefficient, coefficient_params):
    return nl.linear(build("coefficient", coefficient, coefficient_params))


@_register("nonlinearity", "uhlenbeck_exp", doc="(1 + exp(-|v|^2)) v; alpha = 1, Lambda = 2")
def _uhlenbeck_exp():
    return nl.uhlenbeck_exp()


@_register("nonlinearity", "uhlenbeck_rational", {"a_tilde": ("number", 1.0)},
           doc="(a_tilde + 1/(1+|v|)) v")
def _uhlenbeck_rational(a_tilde):
    return nl.uhlenbeck_rational(a_tilde)


# -- weight families (built through WeightSpec.from_dict) ---------------

def _weight_family(name, params, doc):
    def fn(**kw):
        from .weights import WeightSpec
        return WeightSpec.from_dict({"family": name, **kw})
    _register("weight", name, params, doc)(fn)


_weight_family("constant", {"c": ("number", REQUIRED)}, "omega = c")
_weight_family("power", {"center": ("point", REQUIRED), "gamma": ("number", REQUIRED)},
               "omega = |x - center|^gamma")
_weight_family("lattice_min", {"children": ("weights[2]", REQUIRED)}, "pointwise minimum")
_weight_family("lattice_max", {"children": ("weights[2]", REQUIRED)}, "pointwise maximum")
_weight_family("maximal_factor",
               {"samples": ("grid", REQUIRED), "bbox": ("box", REQUIRED), "eps": ("number", REQUIRED),
                "k": ("number|grid", 1.0), "levels": ("integer", 8)},
               "k M[w]^eps with M the discrete maximal function of the grid samples")
