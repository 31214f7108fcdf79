"""Command-line front end.

``heavytail run --config cfg.json --out DIR`` executes the experiments listed
under "experiments" and writes, per experiment, NAME.csv and NAME.json plus
a manifest.json holding the config hash and the seed of every experiment.
The other subcommands are thin wrappers for one-off queries.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import counterexample as ce
from . import jump_sim as js
from . import rare_event as rev
from .cadlag import (StepPath, j1_distance, m1prime_interval, m1prime_upper, rate_j1, rate_m1prime,
                     rate_rw, uniform_distance)
from .rng import THREADS_ENV, stream
from .tail_models import DEFAULT_N_GRID, LIMIT_IDS, TailParams, verify_limit

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2

KINDS = ("verify-limits", "simulate", "exact-k-jump", "boundary-crossing", "one-big-jump",
         "truncated-sum", "product", "lemma31", "lemma32")


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config

@dataclass
class Experiment:
    name: str
    kind: str
    params: dict = field(default_factory=dict)
    n_grid: list | None = None
    budget: int | None = None
    seed: int = 0


@dataclass
class RunConfig:
    tail: TailParams
    levy: js.LevyConfig
    experiments: list
    output_dir: str | None = None
    formats: tuple = ("csv", "json")
    counterexample: dict = field(default_factory=dict)
    text: str = ""

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


def _line_of(text: str, needle: str) -> int | None:
    m = re.search(re.escape(needle), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(text, *needles) -> str:
    for nd in needles:
        ln = _line_of(text, nd)
        if ln:
            return f"line {ln}: "
    return ""


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno} column {e.colno}: {e.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError("line 1: top level must be a JSON object")
    try:
        tail = TailParams.from_dict(raw.get("tail", {}))
        levy_raw = dict(raw.get("levy", {}))
        levy_raw.setdefault("tail", tail.to_dict())
        levy = js.LevyConfig.from_dict(levy_raw)
    except (ValueError, TypeError) as e:
        raise ConfigError(_where(text, '"tail"', '"levy"') + str(e)) from None
    exps, seen = [], set()
    for k, e in enumerate(raw.get("experiments", [])):
        name = e.get("name", f"exp{k}") if isinstance(e, dict) else f"exp{k}"
        loc = _where(text, f'"{name}"') or f"experiment #{k}: "
        if not isinstance(e, dict):
            raise ConfigError(f"{loc}experiment must be an object")
        kind = e.get("kind")
        if kind not in KINDS:
            where = _where(text, f'"{kind}"') or loc
            raise ConfigError(f"{where}unknown experiment kind {kind!r}; expected one of {list(KINDS)}")
        if name in seen or not re.fullmatch(r"[A-Za-z0-9_.-]+", name):
            raise ConfigError(f"{loc}experiment names must be unique and filename-safe ({name!r})")
        seen.add(name)
        if "seed" not in e:
            raise ConfigError(f"{loc}experiment {name!r} needs an explicit seed")
        extra = set(e) - {"name", "kind", "params", "n_grid", "budget", "seed"}
        if extra:
            raise ConfigError(f"{loc}unknown keys {sorted(extra)}")
        exps.append(Experiment(name, kind, dict(e.get("params", {})), e.get("n_grid"), e.get("budget"), int(e["seed"])))
    fmt = raw.get("format", {"csv": True, "json": True})
    formats = tuple(f for f in ("csv", "json") if fmt.get(f, True))
    return RunConfig(tail, levy, exps, raw.get("output_dir"), formats, dict(raw.get("counterexample", {})), text)


# ---------------------------------------------------------------------------
# output

def atomic_write(path: Path, data: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if hasattr(x, "to_json") and not isinstance(x, (str, bytes)):
        v = x.to_json()
        if isinstance(v, str):
            try:
                return json.loads(v)
            except json.JSONDecodeError:
                return v
        return v
    if callable(x):
        return getattr(x, "__name__", "callable")
    return x


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# experiments: each returns (csv_text, json_dict, extra_files)

def _grid(exp, default):
    return list(exp.n_grid) if exp.n_grid else list(default)


def _exp_verify_limits(exp, cfg):
    ids = exp.params.get("limits", list(LIMIT_IDS))
    aux = exp.params.get("aux", {})
    grid = [float(n) if float(n) != int(n) else int(n) for n in _grid(exp, DEFAULT_N_GRID)]
    reports = [verify_limit(i, cfg.tail, aux.get(i), grid) for i in ids]
    extra = {f"{exp.name}_{r.limit_id}.csv": r.to_csv() for r in reports}
    rows = ["limit_id,n,value,target"]
    for r in reports:
        rows += [f"{r.limit_id},{n},{v!r},{float(r.target)!r}" for n, v in zip(r.n_grid, r.values)]
    return "\n".join(rows) + "\n", {"reports": [r.to_dict() for r in reports]}, extra


def _exp_simulate(exp, cfg):
    p = exp.params
    n, k, trials = int(p.get("n", 50)), int(p.get("k", 3)), int(p.get("trials", 4))
    res = int(p.get("resolution", js.DEFAULT_RESOLUTION))
    recs, lines = [], ["trial,t,value"]
    for i in range(trials):
        s = js.sample_x_bar(cfg.levy, n, k, res, stream(exp.seed, i))
        rec = s.to_record()
        rec.update(seed=exp.seed, trial=i)
        recs.append(rec)
        lines += [f"{i},{t!r},{v!r}" for t, v in zip(s.total.times.tolist(), s.total.values.tolist())]
    jl = "".join(json.dumps(_jsonable(r), sort_keys=True) + "\n" for r in recs)
    return "\n".join(lines) + "\n", {"n": n, "k": k, "trials": trials, "resolution": res}, {f"{exp.name}.jsonl": jl}


def _exp_exact_k_jump(exp, cfg):
    p = exp.params
    i, x, kind = int(p.get("i", 1)), float(p.get("x", 1.0)), p.get("kind", "levy")
    rep = rev.ldp_slope_check(f"size_{i}>={x}", rev.exact_k_jump_family(cfg.tail, i, x, kind), (i, i),
                              _grid(exp, DEFAULT_N_GRID), float(p.get("tolerance", rev.DEFAULT_TOLERANCE)))
    return rep.to_csv(), rep.to_dict(), {}


def _exp_boundary(exp, cfg):
    p = exp.params
    rep = rev.boundary_crossing_check(float(p.get("b", 1.5)), float(p.get("c", 1.0)),
                                      _grid(exp, [2**q for q in range(5, 11)]),
                                      int(exp.budget or 100_000), p.get("j"), exp.seed, cfg.levy,
                                      float(p.get("tolerance", 0.6)))
    return rep.to_csv(), rep.to_dict(), {}


def _exp_one_big_jump(exp, cfg):
    p = exp.params
    budget = int(exp.budget or 10**5)
    x = p.get("x")
    if x is None:
        x = rev.tail_quantile_x1(cfg.levy, float(p.get("level", 1e-3)), budget, exp.seed)
    rep = rev.one_big_jump_check(cfg.levy, float(x), [int(n) for n in _grid(exp, [50])], budget, exp.seed)
    return rep.to_csv(), rep.to_dict(), {}


def _exp_truncated(exp, cfg):
    p = exp.params
    rep = rev.truncated_sum_tail_check(cfg.tail, float(p.get("delta", 1.0)), float(p.get("eps", 8.0)),
                                       int(p.get("M", 1)), [int(n) for n in _grid(exp, [100, 1000, 10000])],
                                       int(exp.budget or 20_000), exp.seed)
    return rep.to_csv(), rep.to_dict(), {}


def _exp_product(exp, cfg):
    p = exp.params
    tails = [TailParams.from_dict(t) for t in p.get("tails", [cfg.tail.to_dict()] * 2)]
    events = [None if e is None else (int(e[0]), float(e[1])) for e in p.get("events", [[1, 1.0], [1, 1.0]])]
    rep = rev.product_ldp_check(tails, events, _grid(exp, DEFAULT_N_GRID))
    return rep.to_csv(), rep.to_dict(), {}


def _ce_params(cfg):
    return ce.CounterexampleParams.from_dict({"tail": cfg.tail.to_dict(), **cfg.counterexample})


def _exp_lemma31(exp, cfg):
    p = exp.params
    rep = ce.lemma31_evidence(_ce_params(cfg), [int(n) for n in _grid(exp, [16, 100, 1000, 10**4])],
                              int(p.get("samples", 20)), exp.seed, int(p.get("n_z", 60)), int(p.get("n_v", 200)))
    return rep.to_csv(), rep.to_dict(), {}


def _exp_lemma32(exp, cfg):
    p = exp.params
    grid = p.get("log_n_grid", [6.0, 8.0, 10.0, 12.0])
    rep = ce.lemma32_experiment(_ce_params(cfg), [float(v) for v in grid], int(exp.budget or 200), cfg.levy, exp.seed)
    return rep.to_csv(), rep.to_dict(), {}


HANDLERS = {
    "verify-limits": _exp_verify_limits, "simulate": _exp_simulate, "exact-k-jump": _exp_exact_k_jump,
    "boundary-crossing": _exp_boundary, "one-big-jump": _exp_one_big_jump, "truncated-sum": _exp_truncated,
    "product": _exp_product, "lemma31": _exp_lemma31, "lemma32": _exp_lemma32,
}


def run_config(cfg: RunConfig, out: Path, seed_override: int | None = None) -> int:
    manifest = {"config_sha256": cfg.sha256, "seeds": {}, "experiments": []}
    failed = False
    for exp in cfg.experiments:
        if seed_override is not None:
            exp.seed = int(seed_override)
        manifest["seeds"][exp.name] = exp.seed
        entry = {"name": exp.name, "kind": exp.kind, "seed": exp.seed, "files": []}
        try:
            csv_text, report, extra = HANDLERS[exp.kind](exp, cfg)
            files = dict(extra)
            if "csv" in cfg.formats:
                files[f"{exp.name}.csv"] = csv_text
            if "json" in cfg.formats:
                files[f"{exp.name}.json"] = dumps({"name": exp.name, "kind": exp.kind, "seed": exp.seed,
                                                   "params": exp.params, "report": report})
            for fname, data in sorted(files.items()):
                atomic_write(out / fname, data)
            entry["files"] = sorted(files)
            entry["status"] = "ok"
        except Exception as e:  # recorded, run continues
            failed = True
            entry["status"] = "error"
            entry["error"] = f"{type(e).__name__}: {e}"
            print(f"experiment {exp.name!r} failed: {entry['error']}", file=sys.stderr)
        manifest["experiments"].append(entry)
    atomic_write(out / "manifest.json", dumps(manifest))
    return EXIT_FAILED if failed else EXIT_OK


# ---------------------------------------------------------------------------
# subcommands

def _read_stdin_json():
    text = sys.stdin.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"stdin line {e.lineno} column {e.colno}: {e.msg}") from None


def _load_cfg(args) -> RunConfig:
    if getattr(args, "config", None):
        return parse_config(Path(args.config).read_text())
    return parse_config("{}")


def cmd_run(args) -> int:
    if not args.config:
        raise ConfigError("run needs --config")
    cfg = _load_cfg(args)
    out = Path(args.out or cfg.output_dir or "out")
    return run_config(cfg, out, args.seed_override)


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    seed = args.seed if args.seed_override is None else args.seed_override
    for i in range(args.trials):
        s = js.sample_x_bar(cfg.levy, args.n, args.k, args.resolution, stream(seed, i))
        rec = s.to_record()
        rec.update(seed=seed, trial=i)
        sys.stdout.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
    return EXIT_OK


def _path(d) -> StepPath:
    return StepPath.from_dict(d)


def cmd_distance(args) -> int:
    data = _read_stdin_json()
    if isinstance(data, dict):
        p, q = _path(data["p"]), _path(data["q"])
    else:
        p, q = _path(data[0]), _path(data[1])
    metric = args.metric.lower()
    if metric == "j1":
        val = j1_distance(p, q)
    elif metric in ("m1p", "m1prime"):
        lo, hi = m1prime_interval(p, q)
        print(json.dumps({"lower": lo, "upper": hi}))
        return EXIT_OK
    elif metric == "m1p-upper":
        val = m1prime_upper(p, q)
    else:
        val = uniform_distance(p, q)
    print(repr(round(val, 6)) if args.round else repr(float(val)))
    return EXIT_OK


def cmd_rate(args) -> int:
    p = _path(_read_stdin_json())
    rates = {"I_J1": rate_j1(p), "I_M1p": rate_m1prime(p), "I_rw": rate_rw(p)}
    print(json.dumps({k: v.to_json() for k, v in rates.items()}, separators=(",", ":")))
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _load_cfg(args)
    seed = args.seed if args.seed_override is None else args.seed_override
    if args.event == "boundary":
        ev = rev.boundary_crossing_event(args.b, args.c)
        j = math.ceil(args.b / args.c) if args.j is None else args.j
        res = rev.estimate_big_jump_conditioned(ev, args.n, j, args.trials, seed, rev.LevySampler(cfg.levy))
    else:
        lp = rev.log_jump_vector_prob(cfg.tail, args.n, rev.size_at_least(args.i, args.x), kind=args.kind)
        res = rev.exact_result(args.n, lp, rev.speed(cfg.tail, args.n))
    sys.stdout.write(dumps(res.to_dict()))
    return EXIT_OK


def cmd_verify_limits(args) -> int:
    cfg = _load_cfg(args)
    ids = args.limit or list(LIMIT_IDS)
    out = Path(args.out) if args.out else None
    for i in ids:
        rep = verify_limit(i, cfg.tail)
        if out:
            atomic_write(out / f"{i}.csv", rep.to_csv())
        else:
            print(f"{i}: value={rep.values[-1]!r} target={rep.target!r} err={rep.max_abs_error_at_largest_n:.4g}")
    return EXIT_OK


def cmd_counterexample(args) -> int:
    cfg = _load_cfg(args)
    params = _ce_params(cfg)
    seed = args.seed if args.seed_override is None else args.seed_override
    if args.lemma == "31":
        rep = ce.lemma31_evidence(params, samples=args.samples, seed=seed)
    else:
        rep = ce.lemma32_experiment(params, budget=args.budget, cfg=cfg.levy, seed=seed)
    sys.stdout.write(dumps({"N": params.N, **rep.to_dict()}))
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out or "out")
    mpath = out / "manifest.json"
    if not mpath.exists():
        raise ConfigError(f"no manifest at {mpath}")
    man = json.loads(mpath.read_text())
    print(f"config sha256 {man['config_sha256']}")
    for e in man["experiments"]:
        tail = e.get("error", ", ".join(e["files"]))
        print(f"{e['name']:<24} {e['kind']:<18} seed={e['seed']:<8} {e['status']:<6} {tail}")
    return EXIT_FAILED if any(e["status"] != "ok" for e in man["experiments"]) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed-override", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")

    ap = argparse.ArgumentParser(prog="heavytail", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run the experiments of a config").set_defaults(func=cmd_run)

    s = sub.add_parser("simulate", parents=[common], help="dump Xbar_n decompositions as JSON lines")
    s.add_argument("--n", type=int, default=50)
    s.add_argument("--k", type=int, default=3)
    s.add_argument("--trials", type=int, default=1)
    s.add_argument("--resolution", type=int, default=js.DEFAULT_RESOLUTION)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("distance", parents=[common], help="distance between two StepPath JSONs on stdin")
    d.add_argument("--metric", default="j1", choices=["j1", "m1p", "m1p-upper", "uniform"])
    d.add_argument("--round", action="store_true", help="round to 6 decimals")
    d.set_defaults(func=cmd_distance)

    sub.add_parser("rate", parents=[common], help="rate functions of a StepPath JSON on stdin").set_defaults(func=cmd_rate)

    e = sub.add_parser("estimate", parents=[common], help="one rare-event estimate")
    e.add_argument("--event", choices=["boundary", "k-jump"], default="boundary")
    e.add_argument("--n", type=int, default=64)
    e.add_argument("--trials", type=int, default=100_000)
    e.add_argument("--b", type=float, default=1.5)
    e.add_argument("--c", type=float, default=1.0)
    e.add_argument("--j", type=int, default=None)
    e.add_argument("--i", type=int, default=1)
    e.add_argument("--x", type=float, default=1.0)
    e.add_argument("--kind", choices=["levy", "rw"], default="levy")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("verify-limits", parents=[common], help="evaluate the limit lemmas")
    v.add_argument("--limit", action="append", choices=list(LIMIT_IDS))
    v.set_defaults(func=cmd_verify_limits)

    c = sub.add_parser("counterexample", parents=[common], help="separation and lower-bound evidence")
    c.add_argument("--lemma", choices=["31", "32"], default="32")
    c.add_argument("--samples", type=int, default=20)
    c.add_argument("--budget", type=int, default=200)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_counterexample)

    sub.add_parser("report", parents=[common], help="summarise a run's manifest").set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_USAGE
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        os.environ[THREADS_ENV] = str(args.threads)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
