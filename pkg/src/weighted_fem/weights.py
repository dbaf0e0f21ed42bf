"""Muckenhoupt weights: evaluation, duals, lattice operations, and A_p diagnostics."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.signal import fftconvolve

from .errors import DegenerateWeightError, ParameterError

DEFAULT_SEED = 0xA9
FAMILIES = ("constant", "power", "lattice_min", "lattice_max", "maximal_factor")

# Sub-grid resolution for ball averages and the doubling ladder used to probe
# local integrability at singular points.
BALL_GRID = 32
PROBE_GRIDS = (32, 64, 128, 256)
# Growth above this fraction in the final quartile means "not saturated".
SATURATION_GROWTH = 0.10
# Successive resolution increments must shrink at least this much.
PROBE_DECAY = 0.9


@dataclass(frozen=True, eq=False)
class WeightSpec:
    """An evaluable weight ``x -> omega(x) > 0``.

    ``params`` depends on ``family``:

    * ``constant``: ``c``
    * ``power``: ``center`` (2,), ``gamma``; ``omega = |x - center|**gamma``
    * ``lattice_min`` / ``lattice_max``: ``children`` (two WeightSpecs)
    * ``maximal_factor``: ``samples`` (ny, nx) grid values at cell centers,
      ``bbox`` (xmin, ymin, xmax, ymax), ``eps`` exponent, ``k`` scalar or
      grid multiplier, ``levels`` number of dyadic radii minus one
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown weight family {self.family!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        fam, prm = self.family, self.params
        if fam == "constant":
            return np.full(x.shape[:-1], float(prm["c"]))
        if fam == "power":
            r = np.linalg.norm(x - np.asarray(prm["center"], dtype=float), axis=-1)
            with np.errstate(divide="ignore"):
                return np.power(r, float(prm["gamma"]))
        if fam in ("lattice_min", "lattice_max"):
            a, b = (w(x) for w in prm["children"])
            return np.minimum(a, b) if fam == "lattice_min" else np.maximum(a, b)
        return self._maximal_eval(x)

    @property
    def singular_points(self):
        """Points where the weight may be zero, infinite, or non-smooth."""
        if self.family == "power":
            return [tuple(float(t) for t in self.params["center"])]
        if self.family in ("lattice_min", "lattice_max"):
            pts = []
            for w in self.params["children"]:
                for p in w.singular_points:
                    if p not in pts:
                        pts.append(p)
            return pts
        return []

    # -- maximal factor -------------------------------------------------

    @cached_property
    def _maximal_field(self):
        prm = self.params
        w = np.asarray(prm["samples"], dtype=float)
        return discrete_maximal_function(w, prm["bbox"], prm.get("levels", 8))

    def _maximal_eval(self, x):
        prm = self.params
        ny, nx = np.shape(prm["samples"])
        xmin, ymin, xmax, ymax = prm["bbox"]
        i = np.clip(((x[..., 0] - xmin) / (xmax - xmin) * nx).astype(int), 0, nx - 1)
        j = np.clip(((x[..., 1] - ymin) / (ymax - ymin) * ny).astype(int), 0, ny - 1)
        k = np.asarray(prm.get("k", 1.0), dtype=float)
        kval = k[j, i] if k.ndim == 2 else k
        return kval * self._maximal_field[j, i] ** float(prm["eps"])

    # -- serialization --------------------------------------------------

    def to_dict(self):
        prm = self.params
        if self.family == "constant":
            return {"family": "constant", "c": float(prm["c"])}
        if self.family == "power":
            return {"family": "power", "center": [float(t) for t in prm["center"]],
                    "gamma": float(prm["gamma"])}
        if self.family in ("lattice_min", "lattice_max"):
            return {"family": self.family, "children": [w.to_dict() for w in prm["children"]]}
        k = np.asarray(prm.get("k", 1.0), dtype=float)
        return {
            "family": "maximal_factor",
            "samples": np.asarray(prm["samples"], dtype=float).tolist(),
            "bbox": [float(t) for t in prm["bbox"]],
            "eps": float(prm["eps"]),
            "k": k.tolist() if k.ndim else float(k),
            "levels": int(prm.get("levels", 8)),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        fam = d.pop("family", None)
        if fam == "constant":
            _only(d, {"c"})
            return constant(d["c"])
        if fam == "power":
            _only(d, {"center", "gamma"})
            return power(d["center"], d["gamma"])
        if fam in ("lattice_min", "lattice_max"):
            _only(d, {"children"})
            if len(d["children"]) != 2:
                raise ParameterError("lattice weights need exactly two children")
            a, b = (cls.from_dict(c) for c in d["children"])
            return combine(a, b, fam.split("_")[1])
        if fam == "maximal_factor":
            _only(d, {"samples", "bbox", "eps", "k", "levels"})
            return cls("maximal_factor", {
                "samples": np.asarray(d["samples"], dtype=float),
                "bbox": tuple(float(t) for t in d["bbox"]),
                "eps": float(d["eps"]),
                "k": np.asarray(d.get("k", 1.0), dtype=float),
                "levels": int(d.get("levels", 8)),
            })
        raise ParameterError(f"unknown weight family {fam!r}")

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _only(d, allowed):
    extra = set(d) - allowed
    if extra:
        raise ParameterError(f"unexpected weight parameters {sorted(extra)}")
    missing = {k for k in allowed if k not in ("k", "levels")} - set(d)
    if missing:
        raise ParameterError(f"missing weight parameters {sorted(missing)}")


def constant(c=1.0):
    if not c > 0:
        raise ParameterError("constant weight must be positive")
    return WeightSpec("constant", {"c": float(c)})


def power(center, gamma):
    center = tuple(float(t) for t in center)
    if len(center) != 2:
        raise ParameterError("power weight center must be a 2D point")
    return WeightSpec("power", {"center": center, "gamma": float(gamma)})


def combine(w1, w2, mode):
    """Pointwise ``min`` or ``max`` of two weights."""
    if mode not in ("min", "max"):
        raise ParameterError(f"mode must be 'min' or 'max', got {mode!r}")
    if w1.family == "constant" and w2.family == "constant":
        pick = min if mode == "min" else max
        return constant(pick(w1.params["c"], w2.params["c"]))
    return WeightSpec(f"lattice_{mode}", {"children": (w1, w2)})


def dual_weight(w, p):
    """The weight ``omega ** (-1 / (p - 1))``."""
    if not p > 1:
        raise ParameterError(f"dual weight needs p > 1, got {p}")
    s = -1.0 / (p - 1.0)
    fam, prm = w.family, w.params
    if fam == "constant":
        return constant(prm["c"] ** s)
    if fam == "power":
        return power(prm["center"], prm["gamma"] * s)
    if fam in ("lattice_min", "lattice_max"):
        # t -> t**s is decreasing, so min and max swap.
        other = "max" if fam == "lattice_min" else "min"
        a, b = prm["children"]
        return WeightSpec(f"lattice_{other}", {"children": (dual_weight(a, p), dual_weight(b, p))})
    new = dict(prm)
    new["eps"] = prm["eps"] * s
    new["k"] = np.asarray(prm.get("k", 1.0), dtype=float) ** s
    return WeightSpec("maximal_factor", new)


def discrete_maximal_function(samples, bbox, levels=8):
    """Max over radii ``2**-j * diam`` (j = 0..levels) of grid ball averages.

    ``samples`` holds values at the cell centers of a regular grid over
    ``bbox``; the result is evaluated at the same centers.
    """
    w = np.asarray(samples, dtype=float)
    ny, nx = w.shape
    xmin, ymin, xmax, ymax = bbox
    dx, dy = (xmax - xmin) / nx, (ymax - ymin) / ny
    diam = np.hypot(xmax - xmin, ymax - ymin)
    ones = np.ones_like(w)
    best = np.zeros_like(w)
    for j in range(int(levels) + 1):
        r = diam * 2.0 ** -j
        ri, rj = min(int(r / dx), nx), min(int(r / dy), ny)
        I, J = np.meshgrid(np.arange(-ri, ri + 1) * dx, np.arange(-rj, rj + 1) * dy)
        ker = (I ** 2 + J ** 2 <= r * r * (1 + 1e-12)).astype(float)
        sums = fftconvolve(w, ker, mode="same")
        counts = np.rint(fftconvolve(ones, ker, mode="same"))
        best = np.maximum(best, np.clip(sums, 0, None) / counts)
    return best


def maximal_factor_weight(samples, eps, k=1.0, bbox=(0.0, 0.0, 1.0, 1.0), levels=8):
    """Weight ``k(x) * M[w](x)**eps`` from the discrete maximal function of ``w``."""
    w = np.asarray(samples, dtype=float)
    if w.ndim != 2:
        raise ParameterError("samples must be a 2D grid")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ParameterError("samples must be finite and nonnegative")
    if not np.any(w > 0):
        raise DegenerateWeightError("maximal factor of w = 0 vanishes identically")
    if not 0 < eps < 1:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")
    k = np.asarray(k, dtype=float)
    if k.ndim == 2 and k.shape != w.shape:
        raise ParameterError("grid multiplier k must match the samples grid")
    if np.any(k <= 0) or not np.all(np.isfinite(k)):
        raise ParameterError("multiplier k must be positive and bounded")
    return WeightSpec("maximal_factor", {
        "samples": w, "bbox": tuple(float(t) for t in bbox), "eps": float(eps),
        "k": k, "levels": int(levels),
    })


# -- ball sampling ------------------------------------------------------


def _disk_offsets(n):
    s = (2 * np.arange(n) + 1) / n - 1
    X, Y = np.meshgrid(s, s)
    keep = X ** 2 + Y ** 2 <= 1
    return np.column_stack([X[keep], Y[keep]])


def _sample_balls(region, num, radii, rng):
    lo, hi = region.bounding_box
    centers = np.empty((0, 2))
    while len(centers) < num:
        cand = lo + rng.random((2 * num + 16, 2)) * (hi - lo)
        centers = np.vstack([centers, cand[region.contains(cand)]])
    rmin, rmax = radii
    r = np.exp(rng.uniform(np.log(rmin), np.log(rmax), num))
    return centers[:num], r


def _ball_means(funcs, centers, radii, grid=BALL_GRID, threads=1, chunk=128):
    """Averages of each function over each ball; shape (len(funcs), balls)."""
    off = _disk_offsets(grid)

    def work(sl):
        pts = centers[sl, None, :] + radii[sl, None, None] * off[None]
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return np.stack([np.mean(f(pts), axis=1) for f in funcs])

    slices = [slice(s, s + chunk) for s in range(0, len(centers), chunk)]
    if threads > 1 and len(slices) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, slices))
    else:
        parts = [work(s) for s in slices]
    if not parts:
        return np.empty((len(funcs), 0))
    return np.concatenate(parts, axis=1)


def _saturated(values, radii):
    """Final-quartile test on the running max taken from large to small radii."""
    order = np.argsort(-radii, kind="stable")
    run = np.maximum.accumulate(values[order])
    if not np.all(np.isfinite(run)):
        return False
    q = max(int(np.floor(0.75 * len(run))) - 1, 0)
    return bool(run[-1] <= (1 + SATURATION_GROWTH) * run[q])


def _resolution_converges(values):
    """Whether a quadrature ladder at doubling resolutions is settling down."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        return False
    d = np.abs(np.diff(v))
    if np.all(d <= 1e-12 * np.abs(v[1:])):
        return True
    # Ratios of successive increments; a log divergence gives ratio 1.
    ratios = d[1:] / np.maximum(d[:-1], 1e-300)
    return bool(ratios[-1] < PROBE_DECAY)


def _probe_centers(w, region):
    pts = [np.asarray(p) for p in w.singular_points]
    return [p for p in pts if region.contains(p[None], tol=1e-9)[0]]


@dataclass(frozen=True)
class ApEstimate:
    p: float
    value: float
    num_balls: int
    max_radius: float
    min_radius: float
    diverging: bool

    def to_dict(self):
        return {"p": self.p, "value": self.value, "diverging": self.diverging,
                "num_balls": self.num_balls}


def _default_radii(region, radii):
    if radii is None:
        d = region.diameter
        return (1e-3 * d, 0.5 * d)
    rmin, rmax = (float(t) for t in radii)
    if not 0 < rmin <= rmax:
        raise ParameterError("radii must satisfy 0 < min <= max")
    return rmin, rmax


def ap_characteristic(w, p, region, num_balls=1000, radii=None, seed=DEFAULT_SEED, threads=1):
    """Sampled estimate of the A_p characteristic of ``w`` over balls centered in ``region``.

    Balls have centers uniform in ``region`` and radii log-uniform in
    ``radii``; each singular point of ``w`` inside the region additionally
    gets balls centered on it at log-spaced radii. Ball averages use
    midpoints of a 32 x 32 grid on the ball's bounding square. The estimate
    is flagged ``diverging`` when the radius-sorted running maximum has not
    saturated, or when the average over a ball centered at a singular point
    keeps growing as that grid is refined (a non-integrable weight or dual).
    """
    if not p > 1:
        raise ParameterError(f"p must exceed 1, got {p}")
    if num_balls < 1:
        raise ParameterError("num_balls must be at least 1")
    rmin, rmax = _default_radii(region, radii)
    rng = np.random.default_rng(seed)
    centers, r = _sample_balls(region, int(num_balls), (rmin, rmax), rng)
    probes = _probe_centers(w, region)
    if probes:
        rs = np.geomspace(rmin, rmax, 8)
        centers = np.vstack([centers] + [np.tile(c, (len(rs), 1)) for c in probes])
        r = np.concatenate([r] + [rs] * len(probes))
    wd = dual_weight(w, p)

    def product(means):
        with np.errstate(over="ignore", invalid="ignore"):
            v = means[0] * means[1] ** (p - 1)
        return np.where(np.isnan(v), np.inf, v)

    vals = product(_ball_means([w, wd], centers, r, threads=threads))
    diverging = not _saturated(vals, r)
    value = float(np.max(vals))
    for c in probes:
        ladder = [product(_ball_means([w, wd], c[None], np.array([rmax]), grid=n))[0]
                  for n in PROBE_GRIDS]
        value = max(value, float(np.max(ladder)))
        if not _resolution_converges(ladder):
            diverging = True
    return ApEstimate(float(p), value, int(num_balls), rmax, rmin, diverging)


@dataclass(frozen=True)
class ReverseHolderEstimate:
    eps: float | None
    constant: float
    table: dict  # eps -> (sup ratio, accepted)


def reverse_holder_probe(w, p, region, eps_grid, num_balls=1000, radii=None, seed=DEFAULT_SEED):
    """Largest ``eps`` in ``eps_grid`` whose reverse Hoelder ratio stays bounded.

    For each ``eps`` the ratio ``(avg w**(1+eps))**(1/(1+eps)) / avg w`` is
    maximized over sampled balls; ``eps`` is accepted when that maximum
    saturates and, at every singular point, the ratio converges under grid
    refinement.
    """
    eps_grid = sorted(float(e) for e in eps_grid)
    if not eps_grid:
        raise ParameterError("eps_grid must not be empty")
    if any(e <= 0 for e in eps_grid):
        raise ParameterError("eps values must be positive")
    rmin, rmax = _default_radii(region, radii)
    rng = np.random.default_rng(seed)
    centers, r = _sample_balls(region, int(num_balls), (rmin, rmax), rng)
    probes = _probe_centers(w, region)
    table = {}
    for e in eps_grid:
        we = lambda x, e=e: w(x) ** (1 + e)

        def ratio(m, e=e):
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                v = m[1] ** (1 / (1 + e)) / m[0]
            return np.where(np.isnan(v), np.inf, v)

        vals = ratio(_ball_means([w, we], centers, r))
        ok = _saturated(vals, r)
        sup = float(np.max(vals))
        for c in probes:
            ladder = [ratio(_ball_means([w, we], c[None], np.array([rmax]), grid=n))[0]
                      for n in PROBE_GRIDS]
            sup = max(sup, float(np.max(ladder)))
            ok = ok and _resolution_converges(ladder)
        table[e] = (sup, bool(ok and np.isfinite(sup)))
    accepted = [e for e in eps_grid if table[e][1]]
    if not accepted:
        return ReverseHolderEstimate(None, float("inf"), table)
    best = max(accepted)
    return ReverseHolderEstimate(best, table[best][0], table)
