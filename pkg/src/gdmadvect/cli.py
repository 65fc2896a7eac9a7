"""Command line front-end.

Subcommands ``run``, ``convergence``, ``profile`` and ``diagnose`` share the
same options.  Options may also come from a ``key = value`` file given with
``--config``; flags on the command line override the file.  Every output
file carries the SHA-256 hash of the resolved configuration.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analysis
from .errors import ConfigError, GDMError, NonSimplicialMesh
from .gd import build_gd
from .mesh import generate_refined_nonconforming_mesh, generate_triangular_mesh
from .problems import CASES, get_case, lambda_supg
from .scheme import SchemeConfig, run
from .upstream import run_upwind

log = logging.getLogger("gdmadvect")

METHODS = ("cvfe", "mlnc-p1", "hfv", "upwind")
DEFAULT_SEGMENTS = {"case1": (0.9, 0.0, 0.7, 1.0), "case2": (0.0, 0.0, 1.0, 1.0)}
DEFAULT_TRI = [6, 12, 24, 48, 96]
DEFAULT_LEVELS = [2, 3, 4, 5, 6]
HFV_ONLY = ("gamma", "beta")


@dataclass
class RunConfig:
    command: str
    case: str = "case2"
    method: str = "cvfe"
    mesh_family: str = "tri"
    refinements: list = field(default_factory=list)
    theta: float = 0.5
    p: float = 2.0
    alpha: float = 2.0
    gamma: float = 0.3
    beta: float = 1.0
    lam: str = "id"
    dt: str = "auto"
    skew: bool = True
    stab: bool = True
    out: str = "out"
    seed: int = 0
    samples: int = 201
    segment: tuple | None = None

    def scheme(self):
        dt = None if self.dt == "auto" else float(self.dt)
        return SchemeConfig(theta=self.theta, p=self.p, alpha=self.alpha, dt=dt,
                            skew=self.skew, stabilised=self.stab)

    def resolved(self):
        d = asdict(self)
        d.pop("out")
        return d

    def hash(self):
        blob = json.dumps(self.resolved(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _csv_list(text, kind=int):
    items = [t for t in str(text).replace(" ", "").split(",") if t]
    try:
        return [kind(t) for t in items]
    except ValueError:
        raise ConfigError(f"cannot parse list {text!r}") from None


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _float(name):
    def conv(text):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{name}: not a number: {text!r}") from None
    return conv


# option name -> converter from string (file values and flags share them)
_CONVERTERS = {
    "case": str, "method": str, "mesh-family": str, "n": str, "levels": str,
    "theta": _float("theta"), "p": _float("p"), "alpha": _float("alpha"),
    "gamma": _float("gamma"), "beta": _float("beta"), "lambda": str, "dt": str,
    "no-skew": _bool, "no-stab": _bool, "out": str, "seed": int, "samples": int,
    "segment": str,
}


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in _CONVERTERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = val
    return values


def build_parser():
    parser = argparse.ArgumentParser(prog="gdmadvect",
                                     description="Gradient-discretisation advection solver")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [("run", "single run; writes the run record and final state"),
                           ("convergence", "refinement study; writes the error table"),
                           ("profile", "run and sample the solution along a segment"),
                           ("diagnose", "energy budget and estimator report")]:
        p = sub.add_parser(name, help=helptext, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key = value file; flags override it")
        p.add_argument("--case", choices=sorted(CASES))
        p.add_argument("--method", help="cvfe, mlnc-p1, hfv or upwind")
        p.add_argument("--mesh-family", choices=["tri", "refined"])
        p.add_argument("--n", help="comma list of subdivisions (tri family)")
        p.add_argument("--levels", help="comma list of levels (refined family)")
        p.add_argument("--theta", type=str)
        p.add_argument("--p", type=str)
        p.add_argument("--alpha", type=str)
        p.add_argument("--gamma", type=str, help="HFV cell fraction")
        p.add_argument("--beta", type=str, help="HFV stabilisation factor")
        p.add_argument("--lambda", dest="lambda", help="id or supg:<mu>")
        p.add_argument("--dt", help="time step or 'auto' (0.4 h)")
        p.add_argument("--no-skew", action="store_const", const="true")
        p.add_argument("--no-stab", action="store_const", const="true")
        p.add_argument("--out")
        p.add_argument("--seed")
        if name == "profile":
            p.add_argument("--samples")
            p.add_argument("--segment", help="x0,y0,x1,y1")
    return parser


def resolve(command, values):
    """Turn merged string options into a validated RunConfig."""
    v = {k: _CONVERTERS[k](x) for k, x in values.items()}
    cfg = RunConfig(command=command)
    if "case" in v:
        if v["case"] not in CASES:
            raise ConfigError(f"unknown case {v['case']!r}")
        cfg.case = v["case"]
    if "method" in v:
        methods = _csv_list(v["method"], str)
        if len(methods) != 1:
            raise ConfigError("exactly one method per invocation")
        if methods[0] not in METHODS:
            raise ConfigError(f"unknown method {methods[0]!r}; choose from {METHODS}")
        cfg.method = methods[0]
    cfg.mesh_family = v.get("mesh-family", "refined" if cfg.method == "hfv" else "tri")
    if cfg.mesh_family not in ("tri", "refined"):
        raise ConfigError(f"unknown mesh family {cfg.mesh_family!r}")
    if cfg.method != "hfv" and cfg.mesh_family != "tri":
        raise ConfigError(f"{cfg.method} needs the triangular mesh family")
    for k in HFV_ONLY:
        if k in v and cfg.method != "hfv":
            raise ConfigError(f"--{k} only applies to the hfv method")
    key = "n" if cfg.mesh_family == "tri" else "levels"
    other = "levels" if key == "n" else "n"
    if other in v:
        raise ConfigError(f"--{other} does not apply to the {cfg.mesh_family} family")
    if key in v:
        refs = _csv_list(v[key])
        if not refs:
            raise ConfigError("empty refinement list")
    elif command == "convergence":
        refs = DEFAULT_TRI if key == "n" else DEFAULT_LEVELS
    else:
        refs = [16] if key == "n" else [4]
    if any(r < 1 for r in refs):
        raise ConfigError("refinements must be positive")
    if command != "convergence" and len(refs) != 1:
        raise ConfigError(f"{command} takes a single refinement")
    cfg.refinements = refs
    for k in ("theta", "p", "alpha", "gamma", "beta"):
        if k in v:
            setattr(cfg, k, v[k])
    if not 0.0 < cfg.gamma <= 1.0:
        raise ConfigError(f"gamma={cfg.gamma} outside (0, 1]")
    if not cfg.beta > 0:
        raise ConfigError("beta must be > 0")
    lam = v.get("lambda", "id")
    if lam != "id":
        if not lam.startswith("supg:"):
            raise ConfigError("--lambda must be 'id' or 'supg:<mu>'")
        try:
            mu = float(lam[5:])
        except ValueError:
            raise ConfigError(f"bad supg parameter in {lam!r}") from None
        if not mu > 0:
            raise ConfigError("supg parameter must be > 0")
        lam = f"supg:{mu!r}"
    cfg.lam = lam
    dt = v.get("dt", "auto")
    if dt != "auto":
        try:
            dt = repr(float(dt))
        except ValueError:
            raise ConfigError(f"--dt must be a number or 'auto', got {dt!r}") from None
        if not float(dt) > 0:
            raise ConfigError("--dt must be > 0")
    cfg.dt = dt
    cfg.skew = not v.get("no-skew", False)
    cfg.stab = not v.get("no-stab", False)
    cfg.out = v.get("out", "out")
    seed = v.get("seed", 0)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg.seed = seed
    if "samples" in v:
        if v["samples"] < 1:
            raise ConfigError("samples must be >= 1")
        cfg.samples = v["samples"]
    if command == "profile":
        if "segment" in v:
            seg = _csv_list(v["segment"], float)
            if len(seg) != 4:
                raise ConfigError("--segment needs x0,y0,x1,y1")
            cfg.segment = tuple(seg)
        else:
            cfg.segment = DEFAULT_SEGMENTS[cfg.case]
    if command == "diagnose" and cfg.method == "upwind":
        raise ConfigError("diagnose applies to the gradient schemes only")
    # validate now; the solver builds (and warns about) the same config later
    scheme_log = logging.getLogger("gdmadvect.scheme")
    disabled, scheme_log.disabled = scheme_log.disabled, True
    try:
        cfg.scheme()
    finally:
        scheme_log.disabled = disabled
    return cfg


# -- output helpers --------------------------------------------------------------

def write_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(obj):
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(type(o).__name__)
    return json.dumps(obj, indent=1, sort_keys=True, default=default) + "\n"


def _problem(cfg):
    prob = get_case(cfg.case)
    if cfg.lam.startswith("supg:"):
        prob = prob.with_lambda(lambda_supg(prob, float(cfg.lam[5:])), cfg.lam)
    return prob


def _mesh(cfg, r):
    if cfg.mesh_family == "tri":
        return generate_triangular_mesh(r)
    return generate_refined_nonconforming_mesh(r)


def _solve(cfg, mesh, prob, store_states=False):
    if cfg.method == "upwind":
        return run_upwind(mesh, prob, cfg.scheme(), store_states=store_states)
    gd = build_gd(cfg.method, mesh, cfg.gamma, cfg.beta)
    return run(gd, prob, cfg.scheme(), store_states=store_states), gd


def _stem(cfg):
    tag = "n" if cfg.mesh_family == "tri" else "level"
    if cfg.command == "convergence":
        return f"{cfg.case}_{cfg.method}"
    return f"{cfg.case}_{cfg.method}_{tag}{cfg.refinements[0]}"


def _record_json(cfg, rec, extra=None):
    d = rec.to_json()
    d["config_hash"] = cfg.hash()
    d["resolved_config"] = cfg.resolved()
    d["u_final"] = rec.u_final
    if extra:
        d.update(extra)
    return _json_text(d)


def cmd_run(cfg):
    prob = _problem(cfg)
    rec, gd = _solve(cfg, _mesh(cfg, cfg.refinements[0]), prob)
    stem = os.path.join(cfg.out, _stem(cfg))
    errs = {}
    if prob.reference is not None:
        rep = analysis.error_report(gd, rec.u_final, prob.reference, prob.T)
        errs = {"errors": {"errl1": rep.errl1, "errl2": rep.errl2, "errlinf": rep.errlinf}}
    write_atomic(stem + ".json", _record_json(cfg, rec, errs))
    rows = [[str(i), f"{x:.9e}", f"{y:.9e}", f"{u:.9e}"]
            for i, ((x, y), u) in enumerate(zip(gd.dof_points, rec.u_final))]
    write_atomic(stem + "_state.csv", analysis.to_csv(
        ["dof", "x", "y", "value"], rows, [f"config_hash={cfg.hash()}"]))
    print(f"wrote {stem}.json and {stem}_state.csv")
    return 0


def cmd_convergence(cfg):
    prob = _problem(cfg)
    meshes = [_mesh(cfg, r) for r in cfg.refinements]
    reports = analysis.convergence_study(prob, cfg.method, meshes, cfg.scheme(),
                                         cfg.gamma, cfg.beta)
    path = os.path.join(cfg.out, _stem(cfg) + "_convergence.csv")
    write_atomic(path, analysis.to_csv(analysis.TABLE_COLUMNS, analysis.table_rows(reports),
                                       [f"config_hash={cfg.hash()}"]))
    for r in reports:
        if r.failed:
            print(f"h={r.h:.4g}: FAILED: {r.failed}", file=sys.stderr)
        else:
            rate = r.rates["l1"]
            print(f"h={r.h:.4g} errl1={r.errl1:.3e} rate={'' if rate is None else f'{rate:.2f}'}")
    print(f"wrote {path}")
    return 1 if any(r.failed for r in reports) else 0


def cmd_profile(cfg):
    prob = _problem(cfg)
    rec, gd = _solve(cfg, _mesh(cfg, cfg.refinements[0]), prob)
    x0, y0, x1, y1 = cfg.segment
    prof = analysis.extract_profile(gd, rec.u_final, (x0, y0), (x1, y1), cfg.samples)
    path = os.path.join(cfg.out, _stem(cfg) + "_profile.csv")
    rows = [[f"{s:.9e}", f"{u:.9e}"] for s, u in prof]
    write_atomic(path, analysis.to_csv(["s", "value"], rows, [f"config_hash={cfg.hash()}"]))
    print(f"wrote {path}")
    return 0


def cmd_diagnose(cfg):
    prob = _problem(cfg)
    rec, gd = _solve(cfg, _mesh(cfg, cfg.refinements[0]), prob)
    stem = os.path.join(cfg.out, _stem(cfg))
    budget = analysis.energy_budget(rec)
    rows = [[str(r["k"])] + [f"{r[c]:.9e}" for c in analysis.ENERGY_COLUMNS[1:]]
            for r in budget]
    write_atomic(stem + "_energy.csv", analysis.to_csv(
        analysis.ENERGY_COLUMNS, rows, [f"config_hash={cfg.hash()}"]))

    def cosine(x):
        return np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1])

    def cosine_grad(x):
        return np.pi * np.column_stack([-np.sin(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]),
                                        -np.cos(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1])])

    wd, samples = analysis.estimate_wd(gd, prob.velocity, prob.div_velocity, cfg.p,
                                       seed=cfg.seed, snapshots=[rec.u0, rec.u_final],
                                       return_samples=True)
    slack = [r["slack"] / r["scale"] for r in budget if r["scale"] > 0]
    report = {
        "config_hash": cfg.hash(),
        "resolved_config": cfg.resolved(),
        "energy": {"min_relative_slack": min(slack) if slack else 0.0,
                   "max_abs_relative_slack": max(map(abs, slack)) if slack else 0.0,
                   "apriori_constant": analysis.apriori_constant(rec),
                   "max_kinetic": max(r["kinetic"] for r in budget)},
        "S_D(cos pi x cos pi y)": {"value": analysis.estimate_sd(gd, cosine, cosine_grad, cfg.p),
                                   "kind": "upper estimate (squared-sum minimiser)"},
        "W_D(velocity)": {"value": wd, "kind": "sampled lower bound", "samples": samples},
        "h_D": analysis.estimate_hd(gd, cfg.p, seed=cfg.seed),
        "h_mesh": gd.h,
    }
    write_atomic(stem + "_estimators.json", _json_text(report))
    print(f"wrote {stem}_energy.csv and {stem}_estimators.json")
    return 0


COMMANDS = {"run": cmd_run, "convergence": cmd_convergence, "profile": cmd_profile,
            "diagnose": cmd_diagnose}


def main(argv=None):
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    logging.basicConfig(level=logging.INFO if args.pop("verbose", False) else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    command = args.pop("command")
    try:
        values = read_config_file(args.pop("config")) if "config" in args else {}
        values.update({k.replace("_", "-"): v for k, v in args.items()})
        cfg = resolve(command, values)
    except (ConfigError, ValueError) as exc:
        print(f"gdmadvect: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[command](cfg)
    except NonSimplicialMesh as exc:
        print(f"gdmadvect: configuration error: {exc}", file=sys.stderr)
        return 2
    except GDMError as exc:
        print(f"gdmadvect: solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
