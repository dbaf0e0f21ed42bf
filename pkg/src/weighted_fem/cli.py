"""Command line front end: ``weighted-fem <command> --config FILE``.

Exit codes: 0 on success, 2 for invalid configs or parameters, 3 when a
solver or the quadrature fails (including non-integrable data).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from contextlib import contextmanager
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, io, registry
from .analysis import (convergence_study, estimate_constants, infsup_constant,
                       ritz_stability_constant, small_oscillation_check)
from .errors import (ConfigError, DegenerateWeightError, IntegrationError, MeshError,
                     ParameterError, SolverError, UnsupportedExponentError)
from .fem import FemSpace, LinearCoefficient, ProblemData, assemble_stiffness, error_norms
from .mesh import ConvexPolygon, refine_uniform, structured_square, triangulate
from .nonlinearity import check_structure
from .solvers import solve_linear, solve_quasilinear
from .weights import DEFAULT_SEED, WeightSpec, ap_characteristic, constant, reverse_holder_probe

log = logging.getLogger("weighted_fem")

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3
THREADS_ENV = "WEIGHTED_FEM_THREADS"

# -- schemas ------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_OUTPUTS_KEYS = ("csv", "json", "vtk", "matrix")


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_WEIGHT = {
    "type": "object",
    "required": ["family"],
    "properties": {"family": {"enum": registry.names("weight")}},
    "allOf": [
        {"if": {"properties": {"family": {"const": "constant"}}},
         "then": _obj({"family": {}, "c": _POS}, ["c"])},
        {"if": {"properties": {"family": {"const": "power"}}},
         "then": _obj({"family": {}, "center": _POINT, "gamma": _NUM}, ["center", "gamma"])},
        {"if": {"properties": {"family": {"enum": ["lattice_min", "lattice_max"]}}},
         "then": _obj({"family": {}, "children": {"type": "array", "minItems": 2, "maxItems": 2,
                                                  "items": {"$ref": "#/$defs/weight"}}},
                      ["children"])},
        {"if": {"properties": {"family": {"const": "maximal_factor"}}},
         "then": _obj({"family": {}, "samples": {"type": "array"}, "bbox": {
             "type": "array", "items": _NUM, "minItems": 4, "maxItems": 4},
             "eps": _NUM, "k": {"type": ["number", "array"]},
             "levels": {"type": "integer", "minimum": 0}}, ["samples", "bbox", "eps"])},
    ],
}

_DEFS = {
    "weight": _WEIGHT,
    "ref": _obj({"name": {"type": "string"}, "params": {"type": "object"}}, ["name"]),
    "model": _obj({"kind": {"enum": ["coefficient", "nonlinearity"]}, "name": {"type": "string"},
                   "params": {"type": "object"}}, ["kind", "name"]),
    "domain": _obj({"vertices": {"type": "array", "items": _POINT, "minItems": 3}}, ["vertices"]),
    "mesh": {"oneOf": [
        _obj({"kind": {"const": "structured"}, "n": {"type": "integer", "minimum": 1}}, ["kind", "n"]),
        _obj({"kind": {"const": "triangulate"}, "h": _POS}, ["kind", "h"]),
    ]},
    "outputs": _obj({k: {"type": "string", "minLength": 1} for k in _OUTPUTS_KEYS}),
    "solver": _obj({"method": {"enum": ["newton", "zarantonello"]}, "rtol": _POS,
                    "max_iter": {"type": "integer", "minimum": 1},
                    "continuation": {"type": "boolean"}}),
}

_COMMON = {
    "domain": {"$ref": "#/$defs/domain"},
    "mesh": {"$ref": "#/$defs/mesh"},
    "weight": {"$ref": "#/$defs/weight"},
    "p": {"type": "number", "exclusiveMinimum": 1},
    "outputs": {"$ref": "#/$defs/outputs"},
    "seed": {"type": "integer", "minimum": 0},
}

_PROBLEM = {
    **_COMMON,
    "data": _obj({"f": {"$ref": "#/$defs/ref"}, "g": {"$ref": "#/$defs/ref"}}),
    "exact": {"$ref": "#/$defs/ref"},
    "model": {"$ref": "#/$defs/model"},
    "solver": {"$ref": "#/$defs/solver"},
}

SCHEMAS = {
    "solve": _obj(_PROBLEM, ["model"]),
    "convergence": _obj({**_PROBLEM, "levels": {"type": "integer", "minimum": 3}}, ["model"]),
    "infsup": _obj({**_COMMON, "levels": {"type": "integer", "minimum": 1},
                    "sampled": {"type": "boolean"}, "samples": {"type": "integer", "minimum": 1}}),
    "ritz-stability": _obj({**_COMMON, "levels": {"type": "integer", "minimum": 1},
                            "probe_refinements": {"type": "integer", "minimum": 1},
                            "samples": {"type": "integer", "minimum": 1}}),
    "weight-check": _obj({**_COMMON, "num_balls": {"type": "integer", "minimum": 1},
                          "radii": {"type": "array", "items": _POS, "minItems": 2, "maxItems": 2},
                          "eps_grid": {"type": "array", "items": _POS, "minItems": 1}},
                         ["weight"]),
    "structure-check": _obj({**_COMMON, "model": {"$ref": "#/$defs/model"},
                             "sample_count": {"type": "integer", "minimum": 1},
                             "radius_schedule": {"type": "array", "items": _POS, "minItems": 1},
                             "tol": {"type": "number", "minimum": 0}}, ["model"]),
    "oscillation-check": _obj({**_COMMON, "coefficient": {"$ref": "#/$defs/ref"},
                               "C_delta_est": _POS, "C_R_est": _POS,
                               "levels": {"type": "integer", "minimum": 1},
                               "probe_refinements": {"type": "integer", "minimum": 1}},
                              ["coefficient"]),
}
for _s in SCHEMAS.values():
    _s["$defs"] = _DEFS

DEFAULT_OUTPUTS = {
    "solve": {"json": "solve.json", "vtk": "solution.vtk"},
    "convergence": {"csv": "convergence.csv", "json": "convergence.json"},
    "infsup": {"json": "infsup.json"},
    "ritz-stability": {"json": "ritz_stability.json"},
    "weight-check": {"json": "weight_check.json"},
    "structure-check": {"json": "structure_check.json"},
    "oscillation-check": {"json": "oscillation_check.json"},
}


# -- config loading with line anchors -------------------------------------

_WS = re.compile(r"[ \t\n\r]*")


def _positions(text):
    """Map JSON paths (tuples of keys/indices) to character offsets."""
    dec = json.JSONDecoder()
    where = {}

    def skip(i):
        return _WS.match(text, i).end()

    def value(i, path):
        i = skip(i)
        where.setdefault(path, i)
        c = text[i]
        if c == "{":
            i = skip(i + 1)
            if text[i] == "}":
                return i + 1
            while True:
                i = skip(i)
                key, j = json.decoder.scanstring(text, i + 1)
                where[path + (key,)] = i
                j = skip(j) + 1  # ':'
                i = skip(value(j, path + (key,)))
                if text[i] == "}":
                    return i + 1
                i += 1
        if c == "[":
            i = skip(i + 1)
            if text[i] == "]":
                return i + 1
            k = 0
            while True:
                i = skip(value(i, path + (k,)))
                k += 1
                if text[i] == "]":
                    return i + 1
                i += 1
        return dec.raw_decode(text, i)[1]

    value(0, ())
    return where


class Config:
    def __init__(self, path, command):
        self.path = str(path)
        try:
            self.text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", line=None) from exc
        try:
            self.data = json.loads(self.text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
        self._where = _positions(self.text)
        if not isinstance(self.data, dict):
            raise ConfigError("config must be a JSON object", line=1)
        validator = jsonschema.Draft202012Validator(SCHEMAS[command])
        errors = list(validator.iter_errors(self.data))
        # A misspelt key also trips "required"; report the unknown key instead.
        unknown = [e for e in errors if e.validator == "additionalProperties"]
        err = jsonschema.exceptions.best_match(unknown or errors)
        if err is not None:
            path = tuple(err.absolute_path)
            msg = err.message
            if err.validator == "additionalProperties" and isinstance(err.instance, dict):
                allowed = set(err.schema.get("properties", {}))
                extra = sorted(set(err.instance) - allowed)
                if extra:
                    path = path + (extra[0],)
                    msg = f"unknown key {extra[0]!r}"
            where = "/".join(str(p) for p in path) or "<root>"
            raise ConfigError(f"{where}: {msg}", line=self.line(path))

    def line(self, path):
        path = tuple(path)
        while path not in self._where and path:
            path = path[:-1]
        return self.text.count("\n", 0, self._where.get(path, 0)) + 1

    def get(self, key, default=None):
        return self.data.get(key, default)

    @contextmanager
    def at(self, *path):
        """Re-raise parameter errors as config errors anchored at ``path``."""
        try:
            yield
        except (ParameterError, MeshError, DegenerateWeightError) as exc:
            raise ConfigError(f"{'/'.join(map(str, path))}: {exc}", line=self.line(path)) from exc


# -- building blocks from configs -----------------------------------------


def _polygon(cfg):
    d = cfg.get("domain")
    if d is None:
        return ConvexPolygon.unit_square()
    with cfg.at("domain"):
        return ConvexPolygon(np.asarray(d["vertices"], dtype=float))


def _mesh(cfg, polygon):
    m = cfg.get("mesh", {"kind": "triangulate", "h": 0.25})
    with cfg.at("mesh"):
        if m["kind"] == "structured":
            unit = ConvexPolygon.unit_square()
            if polygon.vertices.shape != unit.vertices.shape or not np.allclose(
                    polygon.vertices, unit.vertices):
                raise ParameterError("structured meshes are only available on the unit square")
            return structured_square(m["n"])
        return triangulate(polygon, m["h"])


def _weight(cfg):
    w = cfg.get("weight")
    if w is None:
        return constant(1.0)
    with cfg.at("weight"):
        return WeightSpec.from_dict(w)


def _model(cfg, key="model"):
    m = cfg.get(key)
    with cfg.at(key):
        return registry.build(m["kind"], m["name"], m.get("params"))


def _exact(cfg):
    e = cfg.get("exact")
    if e is None:
        return None
    with cfg.at("exact"):
        return registry.build("solution", e["name"], e.get("params"))


def _problem(cfg, model, exact, omega, p):
    data = cfg.get("data", {})
    built, singular = {}, []
    for key, category in (("f", "flux_data"), ("g", "source_data")):
        ref = data.get(key, {"name": "zero"})
        with cfg.at("data", key):
            fn, pts = registry.build(category, ref["name"], ref.get("params"),
                                     exact=exact, model=model)
        built[key] = fn
        singular += [pt for pt in pts if pt not in singular]
    return ProblemData(built["f"], built["g"], p, omega, tuple(singular))


def _mesh_chain(mesh, levels):
    chain = [mesh]
    for _ in range(levels - 1):
        chain.append(refine_uniform(chain[-1]))
    return chain


def _seed(args, cfg):
    if args.seed is not None:
        return args.seed
    return cfg.get("seed", DEFAULT_SEED)


def _threads(args):
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


class _Outputs:
    def __init__(self, args, cfg, command):
        self.dir = Path(args.out)
        self.names = {**DEFAULT_OUTPUTS[command], **cfg.get("outputs", {})}
        self.prov = io.provenance(cfg.text, command)

    def path(self, kind):
        name = self.names.get(kind)
        if name is None:
            return None
        self.dir.mkdir(parents=True, exist_ok=True)
        return self.dir / name

    def json(self, obj):
        io.write_json(self.path("json"), obj, self.prov)


def _say(msg):
    print(msg, flush=True)


# -- commands -------------------------------------------------------------


def cmd_solve(args, cfg):
    polygon = _polygon(cfg)
    mesh = _mesh(cfg, polygon)
    omega = _weight(cfg)
    p = float(cfg.get("p", 2.0))
    model = _model(cfg)
    exact = _exact(cfg)
    data = _problem(cfg, model, exact, omega, p)
    space = FemSpace(mesh)
    nf, ng = data.data_norms(mesh)
    solver = cfg.get("solver", {})
    if isinstance(model, LinearCoefficient):
        u, rep = solve_linear(space, model, data)
    else:
        u, rep = solve_quasilinear(space, model, data, **solver)
    out = {"h": mesh.h, "dofs": space.num_dofs, "method": rep.method, "iterations": rep.iterations,
           "converged": rep.converged, "residual_history": rep.residual_history,
           "final_weighted_norm": rep.final_weighted_norm, "data_norms": {"f": nf, "g": ng},
           "norm_monitor": rep.final_weighted_norm / (1.0 + nf + ng)}
    fields = {"u_h": u.nodal}
    if exact is not None:
        eg, ev = error_norms(u, exact, p, omega)
        out["errors"] = {"gradient": eg, "value": ev}
        with np.errstate(all="ignore"):
            ex = np.asarray(exact(mesh.vertices), dtype=float)
        if np.all(np.isfinite(ex)):
            fields["exact"] = ex
    outs = _Outputs(args, cfg, "solve")
    outs.json(out)
    if outs.path("vtk") is not None:
        title = f"weighted_fem {__version__} config sha256 {outs.prov['config_sha256']}"
        io.write_vtk(outs.path("vtk"), mesh, fields, title)
    if outs.path("matrix") is not None:
        A = model if isinstance(model, LinearCoefficient) else model.asymptotic_coefficient()
        io.write_matrix_market(outs.path("matrix"), assemble_stiffness(space, A),
                               "; ".join(io.provenance_lines(outs.prov)))
    _say(f"level 0: h={mesh.h:.6g} dofs={space.num_dofs} iterations={rep.iterations} "
         f"residual={rep.residual_history[-1]:.3e} norm={rep.final_weighted_norm:.6g}")
    return EXIT_OK


def cmd_convergence(args, cfg):
    polygon = _polygon(cfg)
    mesh = _mesh(cfg, polygon)
    omega = _weight(cfg)
    p = float(cfg.get("p", 2.0))
    model = _model(cfg)
    exact = _exact(cfg)
    data = _problem(cfg, model, exact, omega, p)
    solver = dict(cfg.get("solver", {}))
    method = solver.pop("method", "newton")

    def report_level(lv):
        _say(f"level {lv.level}: h={lv.h:.6g} dofs={lv.dofs} err_grad={lv.err_grad:.6g} "
             f"err_val={lv.err_val:.6g} rate_grad={lv.rate_grad:.4g} rate_val={lv.rate_val:.4g} "
             f"monitor={lv.norm_monitor:.6g} iterations={lv.iterations}")

    outs = _Outputs(args, cfg, "convergence")
    try:
        rep = convergence_study(mesh, data, model, exact, levels=cfg.get("levels", 5), method=method,
                                on_level=report_level, solver_options=solver)
    except (IntegrationError, SolverError) as exc:
        partial = getattr(exc, "partial_report", None)
        if partial is not None and partial.levels and outs.path("csv") is not None:
            io.write_csv(outs.path("csv"), partial.to_csv(), outs.prov)
        raise
    if outs.path("csv") is not None:
        io.write_csv(outs.path("csv"), rep.to_csv(), outs.prov)
    if outs.path("json") is not None:
        outs.json({"levels": [vars(lv) for lv in rep.levels],
                   "norm_bound_check": rep.norm_bound_check})
    return EXIT_OK


def cmd_infsup(args, cfg):
    polygon = _polygon(cfg)
    mesh = _mesh(cfg, polygon)
    w = _weight(cfg)
    p = float(cfg.get("p", 2.0))
    sampled = cfg.get("sampled", False)
    rows = []
    for k, m in enumerate(_mesh_chain(mesh, cfg.get("levels", 3))):
        space = FemSpace(m)
        with cfg.at("p"):
            beta = infsup_constant(space, p, w, sampled=sampled, samples=cfg.get("samples", 200),
                                   seed=_seed(args, cfg))
        rows.append({"level": k, "h": m.h, "dofs": space.num_dofs, "beta": beta})
        _say(f"level {k}: h={m.h:.6g} dofs={space.num_dofs} beta={beta:.10g}")
    kind = "exact" if p == 2 else "sampled heuristic"
    _Outputs(args, cfg, "infsup").json({"p": p, "weight": w.to_dict(), "kind": kind, "levels": rows})
    return EXIT_OK


def cmd_ritz(args, cfg):
    polygon = _polygon(cfg)
    mesh = _mesh(cfg, polygon)
    w = _weight(cfg)
    p = float(cfg.get("p", 2.0))
    probes = cfg.get("probe_refinements", 2)
    rows = []
    for k, m in enumerate(_mesh_chain(mesh, cfg.get("levels", 1))):
        space = FemSpace(m)
        C = ritz_stability_constant(space, p, w, probes, samples=cfg.get("samples", 64),
                                    seed=_seed(args, cfg))
        rows.append({"level": k, "h": m.h, "dofs": space.num_dofs, "C_R": C})
        _say(f"level {k}: h={m.h:.6g} dofs={space.num_dofs} C_R={C:.10g}")
    kind = "exact" if p == 2 else "sampled lower bound"
    _Outputs(args, cfg, "ritz-stability").json(
        {"p": p, "weight": w.to_dict(), "kind": kind, "probe_refinements": probes, "levels": rows})
    return EXIT_OK


def cmd_weight_check(args, cfg):
    region = _polygon(cfg)
    w = _weight(cfg)
    p = float(cfg.get("p", 2.0))
    seed = _seed(args, cfg)
    with cfg.at("radii"):
        est = ap_characteristic(w, p, region, num_balls=cfg.get("num_balls", 1000),
                                radii=cfg.get("radii"), seed=seed, threads=_threads(args))
    out = est.to_dict()
    out.update({"max_radius": est.max_radius, "min_radius": est.min_radius, "weight": w.to_dict(),
                "seed": seed})
    if cfg.get("eps_grid"):
        rh = reverse_holder_probe(w, p, region, cfg.get("eps_grid"), cfg.get("num_balls", 1000),
                                  cfg.get("radii"), seed)
        out["reverse_holder"] = {"eps": rh.eps, "constant": rh.constant,
                                 "table": [{"eps": e, "sup_ratio": v[0], "accepted": v[1]}
                                           for e, v in sorted(rh.table.items())]}
    _Outputs(args, cfg, "weight-check").json(out)
    _say(f"level 0: p={p:g} value={est.value:.6g} diverging={str(est.diverging).lower()} "
         f"num_balls={est.num_balls}")
    return EXIT_OK


def cmd_structure_check(args, cfg):
    model = _model(cfg)
    if isinstance(model, LinearCoefficient):
        from .nonlinearity import linear
        model = linear(model)
    seed = _seed(args, cfg)
    kw = {}
    if "radius_schedule" in cfg.data:
        kw["radius_schedule"] = tuple(cfg.get("radius_schedule"))
    rep = check_structure(model, sample_count=cfg.get("sample_count", 4000), region=_polygon(cfg),
                          seed=seed, tol=cfg.get("tol", 1e-9), **kw)
    out = rep.to_dict()
    out.update({"name": model.name, "alpha": model.alpha, "Lambda": model.Lambda, "mu": model.mu,
                "ok": rep.ok, "seed": seed})
    _Outputs(args, cfg, "structure-check").json(out)
    _say(f"level 0: {model.name} ok={str(rep.ok).lower()} coercivity={rep.coercivity_ratio:.6g} "
         f"growth={rep.growth_ratio:.6g} violations={len(rep.violations)}")
    return EXIT_OK


def cmd_oscillation_check(args, cfg):
    ref = cfg.get("coefficient")
    with cfg.at("coefficient"):
        A = registry.build("coefficient", ref["name"], ref.get("params"))
    out = {"alpha": A.alpha, "Lambda": A.Lambda}
    C_delta, C_R = cfg.get("C_delta_est"), cfg.get("C_R_est")
    if C_delta is None or C_R is None:
        polygon = _polygon(cfg)
        est = estimate_constants(_mesh(cfg, polygon), _weight(cfg), levels=cfg.get("levels", 3),
                                 probe_refinements=cfg.get("probe_refinements", 2))
        out["constants"] = est.to_dict()
        C_delta = est.C_delta_est if C_delta is None else C_delta
        C_R = est.C_R_est if C_R is None else C_R
    with cfg.at("coefficient"):
        rep = small_oscillation_check(A, C_delta, C_R)
    out.update({"C_delta_est": C_delta, "C_R_est": C_R, **rep.to_dict()})
    _Outputs(args, cfg, "oscillation-check").json(out)
    _say(f"level 0: lhs={rep.lhs:.6g} holds={str(rep.holds).lower()} C_delta={C_delta:.6g} "
         f"C_R={C_R:.6g}")
    return EXIT_OK


def cmd_registry(args):
    rows = registry.listing()
    for cat, name, schema, _ in rows:
        print(f"{cat} {name} {json.dumps(schema, sort_keys=True)}")
    if args.out_given:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        io.write_json(Path(args.out) / "registry.json",
                      {"entries": [{"category": c, "name": n, "params": s, "doc": d}
                                   for c, n, s, d in rows]},
                      io.provenance("", "registry"))
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "convergence": cmd_convergence,
    "infsup": cmd_infsup,
    "ritz-stability": cmd_ritz,
    "weight-check": cmd_weight_check,
    "structure-check": cmd_structure_check,
    "oscillation-check": cmd_oscillation_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="weighted-fem",
                                     description="Finite elements with Muckenhoupt-weighted data.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(COMMANDS) + ["registry"]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "registry", help="experiment config (JSON)")
        sp.add_argument("--out", default=None, help="output directory (default: current)")
        sp.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                        help=f"RNG seed for sampling (default {DEFAULT_SEED:#x})")
        sp.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (fallback: ${THREADS_ENV}, else 1)")
        sp.add_argument("--verbose", "-v", action="store_true")
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    args.out_given = args.out is not None
    if args.out is None:
        args.out = "."
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "registry":
        return cmd_registry(args)
    try:
        cfg = Config(args.config, args.command)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        anchor = f"{args.config}:{exc.line}" if exc.line is not None else str(args.config)
        print(f"{anchor}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UnsupportedExponentError, ParameterError, MeshError, DegenerateWeightError) as exc:
        print(f"{args.config}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, SolverError) as exc:
        print(f"{args.config}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
