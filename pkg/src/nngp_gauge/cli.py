"""Command-line interface.

Every subcommand prints line-delimited JSON on stdout. The first line is
the fully resolved configuration (flag > ``--config`` file > default).
Exit codes: 0 success, 1 bad input, 2 degenerate limit or forbidden
domain, 3 sweep finished with failing slope checks.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, operator_lab as ol, stein_gauge as sg
from .kernel_engine import QuadratureRule, limit_kernel, nondegeneracy_check
from .net_sampler import (InputSet, NetworkConfig, default_workers, draw_cond_covs,
                          iter_cond_cov_chunks)
from .rng import split

log = logging.getLogger("nngp_gauge")

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE, EXIT_FAIL = 0, 1, 2, 3

NETWORK_DEFAULTS = {"sigma": "relu", "depth": 2, "width": 64, "cb": 0.0, "cw": 2.0,
                    "seed": 0, "workers": None, "gh_nodes": 64, "out": None}
DEFAULTS = {
    "kernel": {"inputs": None, "derivatives": False, "directions": None, "order": None,
               "require_nondegenerate": False},
    "dist1d": {"widths": [16, 32, 64, 128, 256], "replicas": 20000, "input": [1.0],
               "selftest": False, "sampler": "gram"},
    "distnd": {"widths": [64, 128, 256, 512, 1024], "replicas": 20000, "inputs": None,
               "sampler": "gram"},
    "functional": {"widths": [32, 64, 128, 256, 512], "replicas": 20000, "center": [1.0],
                   "radius": 0.5, "nodes_per_axis": 64, "order": 0, "allow_origin": False,
                   "synthetic": False, "spectral_csv": None, "couple_replicas": 10000,
                   "sampler": "gram"},
    "sweep": {"widths": [16, 32, 64, 128, 256], "replicas": 20000, "metrics": ["tv"],
              "inputs": None, "input": [1.0], "center": None, "radius": 0.5,
              "nodes_per_axis": 64, "plot": None, "report": None, "sampler": "gram",
              "target_variance": "mean"},
    "selftest": {},
}


class InputError(ValueError):
    pass


# --------------------------------------------------------------------------
# parsing helpers


def _floats(text):
    try:
        return [float(v) for v in str(text).replace(",", " ").split()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _ints(text):
    try:
        return [int(v) for v in str(text).replace(",", " ").split()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def read_matrix_file(path) -> np.ndarray:
    """Rows of floats from JSON (list of lists) or whitespace/comma text.

    Raises :class:`InputError` with a line/column position on bad input.
    """
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise InputError(f"{path}: {e.strerror}")
    if text.lstrip().startswith(("[", "{")):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise InputError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")
        if isinstance(data, dict):
            data = data.get("inputs")
        try:
            arr = np.atleast_2d(np.asarray(data, dtype=float))
        except (TypeError, ValueError):
            raise InputError(f"{path}:1:1: expected a list of equal-length numeric rows")
        if arr.ndim != 2:
            raise InputError(f"{path}:1:1: expected a list of equal-length numeric rows")
        return arr
    rows = []
    for ln, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        if not body.strip():
            continue
        row = []
        col = 1
        for tok in body.replace(",", " ").split(" "):
            if tok.strip():
                try:
                    row.append(float(tok))
                except ValueError:
                    raise InputError(f"{path}:{ln}:{col}: cannot parse {tok!r} as a number")
            col += len(tok) + 1
        if rows and len(row) != len(rows[0]):
            raise InputError(f"{path}:{ln}:1: expected {len(rows[0])} values, got {len(row)}")
        rows.append(row)
    if not rows:
        raise InputError(f"{path}:1:1: no input rows")
    return np.array(rows)


def _add_network(p):
    p.add_argument("--sigma", help="relu | leaky_relu:a | tanh | gelu | identity | polynomial:c0,c1,..")
    p.add_argument("--depth", type=int, help="hidden layers L")
    p.add_argument("--width", type=int, help="hidden width (kernel: unused)")
    p.add_argument("--cb", type=float, help="bias variance C_b")
    p.add_argument("--cw", type=float, help="weight variance C_W")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker processes (env NNGP_GAUGE_WORKERS)")
    p.add_argument("--gh-nodes", dest="gh_nodes", type=int)
    p.add_argument("--config", help="JSON file with default values for any flag")
    p.add_argument("--out", help="also write the JSON lines to this file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nngp-gauge", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kernel", help="limit kernel table and non-degeneracy report")
    _add_network(p)
    p.add_argument("--inputs", help="file of input rows (JSON or text)")
    p.add_argument("--derivatives", action="store_const", const=True,
                   help="add coordinate-axis derivative directions")
    p.add_argument("--directions", help="file of derivative directions")
    p.add_argument("--order", type=int, help="non-degeneracy order q")
    p.add_argument("--require-nondegenerate", dest="require_nondegenerate",
                   action="store_const", const=True)

    p = sub.add_parser("dist1d", help="TV / W1 / bounds at one input per width")
    _add_network(p)
    p.add_argument("--widths", type=_ints)
    p.add_argument("--replicas", type=int)
    p.add_argument("--input", type=_floats)
    p.add_argument("--sampler", choices=("gram", "weights"))
    p.add_argument("--selftest", action="store_const", const=True,
                   help="check the two-atom lower-bound example instead")

    p = sub.add_parser("distnd", help="convex-distance bound and Bures W2 over inputs")
    _add_network(p)
    p.add_argument("--widths", type=_ints)
    p.add_argument("--replicas", type=int)
    p.add_argument("--inputs")
    p.add_argument("--sampler", choices=("gram", "weights"))

    p = sub.add_parser("functional", help="functional bounds on a ball grid")
    _add_network(p)
    p.add_argument("--widths", type=_ints)
    p.add_argument("--replicas", type=int)
    p.add_argument("--center", type=_floats)
    p.add_argument("--radius", type=float)
    p.add_argument("--nodes-per-axis", dest="nodes_per_axis", type=int)
    p.add_argument("--order", type=int)
    p.add_argument("--allow-origin", dest="allow_origin", action="store_const", const=True)
    p.add_argument("--synthetic", action="store_const", const=True,
                   help="use Sigma = K (all bounds vanish)")
    p.add_argument("--spectral-csv", dest="spectral_csv")
    p.add_argument("--couple-replicas", dest="couple_replicas", type=int)
    p.add_argument("--sampler", choices=("gram", "weights"))

    p = sub.add_parser("sweep", help="width sweep with slope fits")
    _add_network(p)
    p.add_argument("--widths", type=_ints)
    p.add_argument("--replicas", type=int)
    p.add_argument("--metrics", type=lambda s: [m for m in s.replace(",", " ").split()])
    p.add_argument("--inputs")
    p.add_argument("--input", type=_floats)
    p.add_argument("--center", type=_floats, help="ball grid for functional metrics")
    p.add_argument("--radius", type=float)
    p.add_argument("--nodes-per-axis", dest="nodes_per_axis", type=int)
    p.add_argument("--plot", help="SVG output path")
    p.add_argument("--report", help="JSON report path (CSV written alongside)")
    p.add_argument("--sampler", choices=("gram", "weights"))
    p.add_argument("--target-variance", dest="target_variance", choices=("mean", "limit"))

    p = sub.add_parser("selftest", help="fast closed-form checks")
    p.add_argument("--out")
    p.add_argument("--config")
    return ap


def resolve(args) -> dict:
    """Merge defaults < config file < explicit flags."""
    cmd = args.command
    base = dict(NETWORK_DEFAULTS) if cmd != "selftest" else {"out": None}
    base.update(DEFAULTS[cmd])
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        try:
            file_cfg = json.loads(Path(cfg_path).read_text())
        except OSError as e:
            raise InputError(f"{cfg_path}: {e.strerror}")
        except json.JSONDecodeError as e:
            raise InputError(f"{cfg_path}:{e.lineno}:{e.colno}: {e.msg}")
        if not isinstance(file_cfg, dict):
            raise InputError(f"{cfg_path}:1:1: config must be a JSON object")
        unknown = set(file_cfg) - set(base)
        if unknown:
            raise InputError(f"{cfg_path}: unknown keys {sorted(unknown)}")
        base.update(file_cfg)
    for k, v in vars(args).items():
        if k in base and v is not None:
            base[k] = v
    if base.get("workers") is None and cmd != "selftest":
        base["workers"] = default_workers()
    base["command"] = cmd
    return base


class _Emitter:
    def __init__(self, path):
        self.fh = open(path, "w") if path else None

    def __call__(self, kind, payload):
        line = json.dumps({"type": kind, **payload}, sort_keys=True, default=_jsonable)
        print(line, flush=True)
        if self.fh:
            self.fh.write(line + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"not serializable: {type(o)}")


def _network(c, n_in, width=None):
    return NetworkConfig.uniform(c["depth"], n_in, width or c["width"], c["sigma"],
                                 c_w=c["cw"], c_b=c["cb"])


# --------------------------------------------------------------------------
# commands


def cmd_kernel(c, emit):
    if not c["inputs"]:
        raise InputError("--inputs is required")
    X = read_matrix_file(c["inputs"])
    V = None
    if c["directions"]:
        V = read_matrix_file(c["directions"])
    elif c["derivatives"]:
        V = np.eye(X.shape[1])
    inputs = InputSet(X, V)
    net = _network(c, X.shape[1])
    table = limit_kernel(net, inputs, QuadratureRule(c["gh_nodes"]))
    emit("kernel_table", table.to_dict())
    nd = nondegeneracy_check(table, c["order"])
    emit("nondegeneracy", nd)
    if c["require_nondegenerate"] and not nd["pass"]:
        return EXIT_DEGENERATE
    return EXIT_OK


def _selftest_rows():
    rows = []
    mix = sg.MixtureVarianceSample(np.array([0.0, 2.0]), 1.0)
    low = sg.cosine_lower_bound(mix).estimate
    ref = abs(0.5 * (1 + np.exp(-1.0)) - np.exp(-0.5))
    rows.append({"check": "cosine lower bound, A uniform on {0, 2}", "value": low,
                 "expected": ref, "ok": bool(abs(low - ref) < 1e-12 and abs(low - 0.0774) < 5e-5)})
    ps = ol.powers_stormer([[4.0]], [[1.0]])
    rows.append({"check": "Powers-Stormer scalar (4, 1)", "value": ps,
                 "ok": bool(abs(ps["lhs"] - 1) < 1e-12
                            and abs(ps["rhs"] - (np.sqrt(3) + np.sqrt(2) * 3 ** 0.25)) < 1e-12)})
    net = NetworkConfig.uniform(3, 2, 8, "relu", c_w=2.0)
    t = limit_kernel(net, InputSet(np.array([[1.0, 1.0]]), np.eye(2)))
    diag = [float(t.matrix(l)[0, 0]) for l in range(1, t.n_layers + 1)]
    dd = [float(t.matrix(l)[1, 1]) for l in range(1, t.n_layers + 1)]
    rows.append({"check": "ReLU K_aa = 2|x|^2/n0 and ddK = 2/n0", "value": [diag, dd],
                 "ok": bool(np.allclose(diag, 2.0, atol=1e-12) and np.allclose(dd, 1.0, atol=1e-12))})
    fit = harness.fit_slope([(n, 7.0 / n, 0.0) for n in (16, 32, 64, 128)])
    rows.append({"check": "fit_slope on 7/n", "value": fit["slope"],
                 "ok": bool(abs(fit["slope"] + 1) < 1e-12)})
    tv = sg.tv_mixture_vs_gaussian(sg.MixtureVarianceSample(np.full(8, 4.0), 1.0)).estimate
    rows.append({"check": "TV(N(0,4), N(0,1)) <= Gaussian pair bound", "value": tv,
                 "ok": bool(tv <= sg.gaussian_pair_bounds(4.0, 1.0)["tv_bound"])})
    return rows


def cmd_selftest(c, emit):
    ok = True
    for r in _selftest_rows():
        emit("selftest", r)
        ok &= r["ok"]
    return EXIT_OK if ok else EXIT_INPUT


def cmd_dist1d(c, emit):
    if c["selftest"]:
        rows = _selftest_rows()[:1]
        emit("selftest", rows[0])
        return EXIT_OK if rows[0]["ok"] else EXIT_INPUT
    x = np.atleast_2d(np.asarray(c["input"], dtype=float))
    inputs = InputSet(x)
    k = limit_kernel(_network(c, x.shape[1]), inputs, QuadratureRule(c["gh_nodes"])).output[0, 0]
    for i, n in enumerate(c["widths"]):
        net = _network(c, x.shape[1], n)
        batch = draw_cond_covs(net, inputs, c["replicas"], split(c["seed"], i), c["sampler"],
                               workers=c["workers"])
        a = batch.entry(0)
        row = {"width": n, "limit_variance": float(k)}
        if k <= 0 or not np.mean(a) > 0:
            # degenerate limit: Z = 0, only W1 <= E|F| <= sqrt(E A) is available
            row.update({"tv": None, "w1": float(np.sqrt(2 / np.pi) * np.mean(np.sqrt(a))),
                        "w1_bound": float(np.sqrt(np.mean(a))),
                        "note": "degenerate limit variance: W1 <= Var^(1/2) fallback, TV skipped"})
            emit("dist1d", row)
            continue
        mix = sg.MixtureVarianceSample(a, None, n)
        d = sg.mixture_distances(mix)
        low = sg.cosine_lower_bound(mix)
        sb = sg.stein_bounds_estimate(mix)
        row.update({
            "tv": d["tv"].estimate, "tv_se": d["tv"].std_error, "tv_error_bound": d["tv"].error_bound,
            "w1": d["w1"].estimate, "w1_se": d["w1"].std_error,
            "lower": low.estimate, "lower_se": low.std_error,
            "tv_bound": sb["tv_bound"], "tv_bound_se": sb["tv_bound_se"],
            "w1_bound": sb["w1_bound"], "w1_bound_se": sb["w1_bound_se"],
        })
        vals = {"tv": (row["tv"], row["tv_se"], row["tv_error_bound"]),
                "w1": (row["w1"], row["w1_se"], 0),
                "lower": (row["lower"], row["lower_se"], 0),
                "tv_bound": (sb["tv_bound_raw"], sb["tv_bound_se"], 0),
                "w1_bound": (row["w1_bound"], row["w1_bound_se"], 0)}
        bad = [ch for ch in harness._sandwich(n, vals) if not ch["ok"]]
        row["warnings"] = [f"{b['check']}: {b['lhs']:.4g} > {b['rhs']:.4g} + {b['slack']:.2g}"
                           for b in bad]
        for w in row["warnings"]:
            log.warning("width %d: %s", n, w)
        emit("dist1d", row)
    return EXIT_OK


def cmd_distnd(c, emit):
    if not c["inputs"]:
        raise InputError("--inputs is required")
    X = read_matrix_file(c["inputs"])
    inputs = InputSet(X)
    K = limit_kernel(_network(c, X.shape[1]), inputs, QuadratureRule(c["gh_nodes"])).output
    for i, n in enumerate(c["widths"]):
        net = _network(c, X.shape[1], n)
        batch = draw_cond_covs(net, inputs, c["replicas"], split(c["seed"], i), c["sampler"],
                               workers=c["workers"])
        cb = sg.convex_bound_estimate(batch.sigma)
        bw = sg.bures_w2(batch.sigma.mean(axis=0), K)
        emit("distnd", {"width": n, **cb, "bures_w2": bw["w2"], "hs_bound": bw["hs_bound"]})
    return EXIT_OK


def cmd_functional(c, emit):
    grid = ol.Grid(tuple(c["center"]), c["radius"], c["nodes_per_axis"], c["order"])
    if grid.contains_origin and not c["allow_origin"]:
        print("error: the input ball contains the origin; the functional bounds need a "
              "domain that does not contain the origin (pass --allow-origin to override)",
              file=sys.stderr)
        emit("error", {"reason": "grid contains the origin", "grid": grid.to_dict()})
        return EXIT_DEGENERATE
    net0 = _network(c, grid.dim)
    K = ol.limit_operator(net0, grid, QuadratureRule(c["gh_nodes"]))
    emit("eigen", ol.eigen_summability(K))
    if c["spectral_csv"]:
        Path(c["spectral_csv"]).write_text(ol.spectral_csv(K))
    inputs = grid.input_set()
    for i, n in enumerate(c["widths"]):
        seed = split(c["seed"], i)
        if c["synthetic"]:
            b, cc = ol.draw_terms(K.matrix[None], K)
            mean = K.matrix
        else:
            bs, cs, acc = [], [], 0.0
            for _, sig, _, _, _ in iter_cond_cov_chunks(
                    _network(c, grid.dim, n), inputs, c["replicas"], seed, c["sampler"],
                    workers=c["workers"]):
                w = ol.discretize_batch(sig, grid)
                tb, tc = ol.draw_terms(w, K)
                bs.append(tb)
                cs.append(tc)
                acc = acc + w.sum(axis=0)
            b, cc = np.concatenate(bs), np.concatenate(cs)
            mean = acc / c["replicas"]
        fb = ol.functional_bound_from_terms(b, cc)
        mean_op = ol.DiscreteOperator(mean, K.weights, K.multiplicity, 0.0, K.grid_digest)
        ps = ol.powers_stormer(mean_op, K)
        cp = ol.couple_fields(K, mean_op, c["couple_replicas"], seed)
        emit("functional", {"width": n, **fb, "powers_stormer": ps, "coupling": cp})
    return EXIT_OK


def cmd_sweep(c, emit):
    grid = None
    inputs = None
    if c["center"] is not None:
        grid = ol.Grid(tuple(c["center"]), c["radius"], c["nodes_per_axis"])
        n_in = grid.dim
    else:
        X = read_matrix_file(c["inputs"]) if c["inputs"] else np.atleast_2d(
            np.asarray(c["input"], dtype=float))
        inputs = InputSet(X)
        n_in = X.shape[1]
    scfg = harness.SweepConfig(
        _network(c, n_in), tuple(c["widths"]), c["replicas"], tuple(c["metrics"]),
        c["seed"], inputs, grid, sampler=c["sampler"], target_variance=c["target_variance"],
        workers=c["workers"], quadrature_nodes=c["gh_nodes"])
    try:
        rep = harness.run_sweep(scfg)
    except harness.DegenerateLimitError as e:
        emit("error", {"reason": str(e), "nondegeneracy": e.report})
        return EXIT_DEGENERATE
    for p in rep.points:
        emit("point", p)
    for m, f in rep.fits.items():
        emit("fit", {"metric": m, **f})
    for ch in rep.checks:
        if not ch["ok"]:
            log.warning("sandwich check failed: %s", ch)
    if c["report"]:
        harness.persist(rep, c["report"])
    if c["plot"]:
        from .svgplot import report_svg
        Path(c["plot"]).write_text(report_svg(rep, "width sweep"))
    emit("summary", {"pass": rep.passed, "environment": rep.environment})
    return EXIT_OK if rep.passed else EXIT_FAIL


COMMANDS = {"kernel": cmd_kernel, "dist1d": cmd_dist1d, "distnd": cmd_distnd,
            "functional": cmd_functional, "sweep": cmd_sweep, "selftest": cmd_selftest}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        c = resolve(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    emit = _Emitter(c.get("out"))
    try:
        emit("config", {"resolved": c})
        return COMMANDS[c["command"]](c, emit)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        emit.close()


if __name__ == "__main__":
    sys.exit(main())
