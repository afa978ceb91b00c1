"""Command-line entry point: ``gpasmooth {simulate,fit,predict,bandwidth,bench}``.

Every command takes ``--config FILE`` holding flat ``key=value`` lines (``#``
starts a comment); flags given on the command line override the file. Keys
are the long flag names with dashes or underscores.

Exit codes: 0 ok, 1 runtime failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bandwidth import DEFAULT_CANDIDATES, DEFAULT_CH, DEFAULT_TRIM, WeightFn
from .cluster import Cluster, CostLedger, Strategy, partition_random, partition_sorted, run_bandwidth, run_predict, run_train
from .experiments import MraeConfig, RmseConfig, run_mrae_bench, run_rmse_bench
from .gpa import Grid, ModelFormatError, MultiGrid, SupportMode, design_grid, load_model, save_model
from .kernels import default_kernel_for_order, kernel_from_name
from .moments import Sample
from .synthdata import SETTINGS, generate, get_setting, optimal_bandwidth

NA = "NA"


class UsageError(Exception):
    """Bad or missing configuration; maps to exit code 2."""


# ---------------------------------------------------------------- config

def read_config(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _resolve(args, defaults: dict, types: dict) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(defaults)
    if args.config is not None:
        try:
            file_cfg = read_config(args.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, value in file_cfg.items():
            cfg[key] = _convert(key, value, types)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _convert(key, value, types):
    conv = types.get(key, str)
    try:
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad value for {key}: {value!r}") from exc


def _int_list(text):
    return [int(float(v)) for v in str(text).split(",") if v.strip()]


def _str_list(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _bandwidth_arg(text):
    try:
        return float(text)
    except ValueError:
        if text not in ("oracle", "oneshot", "pilot"):
            raise ValueError(text) from None
        return text


# ---------------------------------------------------------------- CSV I/O

def _fmt(v) -> str:
    return NA if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def read_table(path):
    """Header plus float matrix from a CSV file; ``NA`` cells are rejected."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not rows:
        raise UsageError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    try:
        data = np.array([[float(c) for c in r] for r in body], dtype=float)
    except ValueError as exc:
        raise UsageError(f"{path}: non-numeric cell ({exc})") from exc
    if data.size and data.shape[1] != len(header):
        raise UsageError(f"{path}: rows do not match the header width")
    return header, data.reshape(-1, len(header))


def _covariate_columns(header):
    if "x" in header:
        return [header.index("x")]
    cols = [i for i, h in enumerate(header) if h.startswith("x") and h[1:].isdigit()]
    if not cols:
        raise UsageError("no covariate columns (expected x or x1, x2, ...)")
    return sorted(cols, key=lambda i: int(header[i][1:]))


def read_sample(path) -> Sample:
    header, data = read_table(path)
    if "y" not in header:
        raise UsageError(f"{path}: no y column")
    xc = _covariate_columns(header)
    x = data[:, xc[0]] if len(xc) == 1 else data[:, xc]
    return Sample(x, data[:, header.index("y")])


def write_table(path, header, columns) -> None:
    cols = [np.asarray(c, dtype=float).reshape(-1) for c in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


def _write_ledger(path, ledger: CostLedger) -> None:
    if path:
        Path(path).write_text(ledger.report() + "\n")


# ---------------------------------------------------------------- shared pieces

COMMON = {"config": None, "setting": None, "input": None, "N": None, "M": 1, "partition": "random",
          "kernel": None, "delta": DEFAULT_TRIM, "seed": 0, "sigma": 1.0}
TYPES = {"N": int, "M": int, "N_star": int, "B": int, "seed": int, "J": int, "nu": int, "n0": int, "candidates": int,
         "delta": float, "sigma": float, "multiplier": float, "c_h": float, "bandwidth": _bandwidth_arg,
         "lo": float, "hi": float}


def _add_common(p, data=True):
    p.add_argument("--config", help="flat key=value file; flags override it")
    if data:
        src = p.add_mutually_exclusive_group()
        src.add_argument("--setting", choices=sorted(SETTINGS), help="synthetic setting to simulate")
        src.add_argument("--input", help="CSV with header x (or x1..xp) and y")
        p.add_argument("--N", "--n", dest="N", type=int, help="sample size for --setting")
        p.add_argument("--M", "--machines", dest="M", type=int, help="number of simulated machines")
        p.add_argument("--partition", choices=("random", "sorted"))
        p.add_argument("--sigma", type=float, help="noise level for --setting")
    p.add_argument("--kernel", help="epanechnikov, fourth-order or poly:[...] (default follows nu)")
    p.add_argument("--delta", "--trim", dest="delta", type=float, help="trim fraction of the CV weight")
    p.add_argument("--seed", type=int)


def _load_data(cfg):
    if cfg["input"]:
        return read_sample(cfg["input"]), None
    if cfg["setting"] is None:
        raise UsageError("give --input or --setting")
    if cfg["N"] is None:
        raise UsageError("--setting needs --N")
    setting = get_setting(cfg["setting"], sigma=float(cfg["sigma"]), seed=int(cfg["seed"]))
    return generate(setting, int(cfg["N"])).sample, setting


def _cluster(sample, cfg):
    M = int(cfg["M"])
    if cfg["partition"] == "random":
        plan = partition_random(sample, M, int(cfg["seed"]))
    elif cfg["partition"] == "sorted":
        plan = partition_sorted(sample, M)
    else:
        raise UsageError(f"unknown partition {cfg['partition']!r}")
    return Cluster(sample, plan)


def _kernel(cfg):
    if cfg.get("kernel"):
        return kernel_from_name(cfg["kernel"])
    return default_kernel_for_order(int(cfg.get("nu") or 1))


def _select_h(cfg, cluster, setting, kernel, ledger):
    method = cfg["bandwidth"]
    if isinstance(method, float):
        return method
    weight = WeightFn(float(cfg["delta"]))
    if method == "oracle":
        if setting is None:
            raise UsageError("the oracle bandwidth needs a synthetic --setting")
        if kernel.order != 2:
            raise UsageError("the oracle bandwidth needs a second-order kernel; pass --bandwidth or --kernel")
        return optimal_bandwidth(setting, kernel, cluster.N, weight)
    if method == "pilot" and cfg.get("n0") is None:
        raise UsageError("pilot bandwidth needs --n0")
    h, led = run_bandwidth(method, cluster, kernel, weight, n0=cfg.get("n0"), seed=int(cfg["seed"]),
                           c_h=float(cfg.get("c_h", DEFAULT_CH)), count=int(cfg.get("candidates", DEFAULT_CANDIDATES)))
    ledger += led
    return h


# ---------------------------------------------------------------- commands

SIM_DEFAULTS = {"config": None, "setting": None, "N": None, "seed": 0, "sigma": 1.0, "out": None}


def cmd_simulate(args) -> int:
    cfg = _resolve(args, SIM_DEFAULTS, TYPES)
    if cfg["setting"] is None or cfg["N"] is None or not cfg["out"]:
        raise UsageError("simulate needs --setting, --N and --out")
    setting = get_setting(cfg["setting"], sigma=float(cfg["sigma"]), seed=int(cfg["seed"]))
    data = generate(setting, int(cfg["N"]))
    write_table(cfg["out"], ["x", "y", "mu_true"], [data.sample.x1, data.sample.y, data.truth])
    return 0


FIT_DEFAULTS = {**COMMON, "bandwidth": "oracle", "n0": None, "c_h": DEFAULT_CH, "candidates": DEFAULT_CANDIDATES, "J": None, "multiplier": 1.0,
                "nu": 1, "support": None, "model": "model.json", "ledger": None}


def _grid_for(cfg, sample, h):
    support = cfg["support"]
    if support is None:
        lo, hi = (float(sample.x.min()), float(sample.x.max()))
    elif str(support).lower() == SupportMode.DIVERGING.value:
        if sample.p != 1:
            raise UsageError("diverging support is univariate only")
        if cfg["J"] is not None:
            raise UsageError("J is derived from N in diverging mode")
        return design_grid(sample.n, h, "diverging", float(cfg["multiplier"]))
    else:
        try:
            lo, hi = (float(v) for v in str(support).split(","))
        except ValueError as exc:
            raise UsageError(f"support must be 'lo,hi' or 'diverging', got {support!r}") from exc
    if cfg["J"] is not None:
        axis = Grid(lo, hi, int(cfg["J"]))
    else:
        axis = design_grid(sample.n, h, (lo, hi), float(cfg["multiplier"]))
    return axis if sample.p == 1 else MultiGrid(axis, sample.p)


def cmd_fit(args) -> int:
    cfg = _resolve(args, FIT_DEFAULTS, TYPES)
    sample, setting = _load_data(cfg)
    if setting is not None and cfg["support"] is None:
        cfg["support"] = "{},{}".format(*setting.covariate_law.support)
    kernel = _kernel(cfg)
    cluster = _cluster(sample, cfg)
    ledger = CostLedger()
    h = _select_h(cfg, cluster, setting, kernel, ledger)
    grid = _grid_for(cfg, sample, h)
    model, led = run_train(Strategy.GPA, cluster, kernel, h, grid, nu=int(cfg["nu"]))
    ledger += led
    bad = np.flatnonzero(model.undefined_mask)
    if bad.size:
        pts = grid.points.reshape(grid.size, -1)[bad]
        shown = ", ".join(str(tuple(float(v) for v in p)) if p.size > 1 else repr(float(p[0])) for p in pts[:20])
        more = f" (+{bad.size - 20} more)" if bad.size > 20 else ""
        level = "error" if bad.size == grid.size else "warning"
        print(f"{level}: empty kernel window at {bad.size} of {grid.size} grid point(s): {shown}{more}",
              file=sys.stderr)
        if bad.size == grid.size:
            print("hint: widen the bandwidth or shrink the support", file=sys.stderr)
            return 1
    save_model(model, cfg["model"])
    _write_ledger(cfg["ledger"], ledger)
    print(f"h={h!r}\nJ={grid.J}\nmodel={cfg['model']}")
    print(ledger.report())
    return 0


PREDICT_DEFAULTS = {"config": None, "model": None, "points": None, "out": None, "nu": None, "ledger": None}


def cmd_predict(args) -> int:
    cfg = _resolve(args, PREDICT_DEFAULTS, TYPES)
    if not cfg["model"] or not cfg["points"] or not cfg["out"]:
        raise UsageError("predict needs --model, --points and --out")
    try:
        model = load_model(cfg["model"])
    except OSError as exc:
        raise UsageError(f"cannot read model: {exc}") from exc
    header, data = read_table(cfg["points"])
    xc = _covariate_columns(header)
    if len(xc) != model.p:
        raise ValueError(f"model is {model.p}-dimensional but the points file has {len(xc)} covariate column(s)")
    x = data[:, xc[0]] if model.p == 1 else data[:, xc]
    nu = None if cfg["nu"] is None else int(cfg["nu"])
    pred, ledger = run_predict(Strategy.GPA, model, x, nu=nu)
    names = [header[i] for i in xc]
    write_table(cfg["out"], names + ["mu_hat"], [data[:, i] for i in xc] + [pred])
    _write_ledger(cfg["ledger"], ledger)
    print(ledger.report())
    return 0


BW_DEFAULTS = {**COMMON, "method": "oneshot", "n0": None, "c_h": DEFAULT_CH, "candidates": DEFAULT_CANDIDATES}


def cmd_bandwidth(args) -> int:
    cfg = _resolve(args, BW_DEFAULTS, TYPES)
    sample, setting = _load_data(cfg)
    kernel = _kernel(cfg)
    cluster = _cluster(sample, cfg)
    ledger = CostLedger()
    cfg["bandwidth"] = cfg["method"]
    h = _select_h(cfg, cluster, setting, kernel, ledger)
    print(f"h={h!r}")
    print(ledger.report())
    return 0


BENCH_DEFAULTS = {"config": None, "kind": "rmse", "setting": "1", "sigma": 1.0, "N": "10000", "N_star": 5000,
                  "M": 50, "B": 100, "seed": 0, "partition": "random", "bandwidth": "oracle", "J": None,
                  "multiplier": 1.0, "nu": 1, "delta": DEFAULT_TRIM, "n0": None, "c_h": DEFAULT_CH,
                  "candidates": DEFAULT_CANDIDATES, "strategies": "global,oneshot,gpa", "kernel": None,
                  "out_dir": None}

_LABELS = {"global": "global", "oneshot": "one-shot", "gpa": "GPA", "pilot": "pilot"}


def _bench_rows(cfg):
    setting = get_setting(cfg["setting"], sigma=float(cfg["sigma"]))
    kernel = _kernel(cfg)
    Ns = _int_list(cfg["N"])
    n0s = _int_list(cfg["n0"]) if cfg["n0"] is not None else [None] * len(Ns)
    if len(n0s) != len(Ns):
        raise UsageError("n0 needs one value per N")
    B, seed = int(cfg["B"]), int(cfg["seed"])
    if B < 1:
        raise UsageError("B must be at least 1")
    for N, n0 in zip(Ns, n0s):
        if cfg["kind"] == "rmse":
            rc = RmseConfig(setting, kernel, N, int(cfg["N_star"]), int(cfg["M"]), cfg["partition"],
                            cfg["bandwidth"], None if cfg["J"] is None else int(cfg["J"]),
                            float(cfg["multiplier"]), int(cfg["nu"]), float(cfg["delta"]), n0,
                            float(cfg["c_h"]), tuple(_str_list(cfg["strategies"])))
            yield run_rmse_bench(rc, B, seed)
        elif cfg["kind"] == "mrae":
            if n0 is None:
                raise UsageError("mrae bench needs n0")
            yield run_mrae_bench(MraeConfig(setting, kernel, N, int(cfg["M"]), n0, float(cfg["delta"]),
                                            float(cfg["c_h"]), int(cfg["candidates"])), B, seed)
        else:
            raise UsageError(f"unknown bench kind {cfg['kind']!r}")


def format_table(results) -> str:
    if not results:
        return ""
    names = list(results[0].columns)
    head = ["N"] + [f"{_LABELS.get(n, n)} mean (se)" for n in names]
    lines = []
    for res in results:
        cells = [str(res.config["N"])]
        for n in names:
            c = res.columns[n]
            cells.append(NA if c.na else f"{c.mean:.4f} ({c.se:.4f})" + (f" [{c.n_na} NA]" if c.n_na else ""))
        lines.append(cells)
    widths = [max(len(r[i]) for r in [head] + lines) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.rjust(w) for c, w in zip(r, widths))  # noqa: E731
    return "\n".join([fmt(head), fmt(["-" * w for w in widths])] + [fmt(r) for r in lines])


def cmd_bench(args) -> int:
    cfg = _resolve(args, BENCH_DEFAULTS, {**TYPES, "N": str, "n0": str})
    results = list(_bench_rows(cfg))
    text = f"{results[0].kind.upper()} over B={cfg['B']} replications, seeds {cfg['seed']}.." \
           f"{int(cfg['seed']) + int(cfg['B']) - 1}\n" + format_table(results)
    print(text)
    if cfg["out_dir"]:
        out = Path(cfg["out_dir"])
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "bench.txt").write_text(text + "\n")
            doc = {"version": __version__, "rows": [r.as_dict() for r in results]}
            (out / "bench.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
            for i, r in enumerate(results):
                (out / f"ledger_{i}.txt").write_text(r.ledger.report() + "\n")
        except OSError as exc:
            raise UsageError(f"cannot write results: {exc}") from exc
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpasmooth", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic sample to CSV")
    p.add_argument("--config")
    p.add_argument("--setting", choices=sorted(SETTINGS))
    p.add_argument("--N", "--n", dest="N", type=int)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output CSV (x, y, mu_true)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a grid model across simulated machines")
    _add_common(p)
    p.add_argument("--bandwidth", type=_bandwidth_arg, help="oracle, oneshot, pilot or a number")
    p.add_argument("--n0", "--pilot-size", dest="n0", type=int, help="pilot sample size")
    p.add_argument("--c-h", "--ch", dest="c_h", type=float, help="candidate range factor for CV")
    p.add_argument("--candidates", type=int, help="number of candidate bandwidths")
    p.add_argument("--J", type=int, help="grid segments (overrides the multiplier rule)")
    p.add_argument("--multiplier", "--grid-multiplier", dest="multiplier", type=float, help="grid multiplier c")
    p.add_argument("--nu", type=int, help="interpolation order stored with the model")
    p.add_argument("--support", help="'lo,hi' or 'diverging' (default: data range)")
    p.add_argument("--model", help="output model file")
    p.add_argument("--ledger", help="write the cost ledger here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict from a saved model")
    p.add_argument("--config")
    p.add_argument("--model")
    p.add_argument("--points", "--input", dest="points", help="CSV with header x (or x1..xp)")
    p.add_argument("--out", help="output CSV")
    p.add_argument("--nu", "--order", dest="nu", type=int, help="override the interpolation order")
    p.add_argument("--ledger")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bandwidth", help="distributed CV bandwidth selection")
    _add_common(p)
    p.add_argument("--method", choices=("oneshot", "pilot", "oracle"))
    p.add_argument("--n0", "--pilot-size", dest="n0", type=int)
    p.add_argument("--c-h", "--ch", dest="c_h", type=float)
    p.add_argument("--candidates", type=int)
    p.set_defaults(func=cmd_bandwidth)

    p = sub.add_parser("bench", help="Monte Carlo RMSE or bandwidth MRAE tables")
    p.add_argument("--config")
    p.add_argument("--kind", choices=("rmse", "mrae"))
    p.add_argument("--setting", choices=sorted(SETTINGS))
    p.add_argument("--sigma", type=float)
    p.add_argument("--N", help="sample size, or a comma list for several rows")
    p.add_argument("--N-star", dest="N_star", type=int, help="test sample size")
    p.add_argument("--M", "--machines", dest="M", type=int)
    p.add_argument("--B", type=int, help="replications")
    p.add_argument("--seed", type=int, help="first seed; replications use seed..seed+B-1")
    p.add_argument("--partition", choices=("random", "sorted"))
    p.add_argument("--bandwidth", type=_bandwidth_arg)
    p.add_argument("--J", type=int)
    p.add_argument("--multiplier", "--grid-multiplier", dest="multiplier", type=float)
    p.add_argument("--nu", type=int)
    p.add_argument("--delta", "--trim", dest="delta", type=float)
    p.add_argument("--n0", "--pilot-size", dest="n0", help="pilot size, or a comma list matching N")
    p.add_argument("--c-h", "--ch", dest="c_h", type=float)
    p.add_argument("--candidates", type=int)
    p.add_argument("--strategies", help="comma list from global,oneshot,gpa")
    p.add_argument("--kernel")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ModelFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
