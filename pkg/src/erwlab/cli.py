"""Command-line entry point: ``erwlab {simulate,couple,bdchain,fit}``.

Exit codes: 0 success, 1 a checked property failed, 2 usage or validation
error.  Machine-readable results go to stdout or files; progress and
diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from erwlab import __version__

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CSV_HEADER = ("t", "stat", "mean", "ci_lo", "ci_hi", "replicas")
DRIFT_REFUSAL = (
    "refusing --assert-lower in drift mode: the lower-bound and coupling arguments need "
    "downward-closed visited sets, which a drift p < 1 does not preserve; whether the "
    "bounds survive is an open problem")


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# ------------------------------------------------------------- parsing

def _int_expr(s: str) -> int:
    s = s.strip()
    if "^" in s:
        b, e = s.split("^")
        return int(b) ** int(e)
    if "e" in s.lower():
        v = float(s)
        if v != int(v):
            raise ValueError(s)
        return int(v)
    return int(s)


def parse_schedule(spec) -> tuple[int, ...]:
    """'1024,4096', '2^10..2^24' (doubling), or 'lo:hi:ratio'."""
    if isinstance(spec, (list, tuple)):
        return tuple(int(v) for v in spec)
    spec = str(spec).strip()
    from erwlab.experiments import geometric_schedule
    try:
        if ".." in spec:
            lo, hi = spec.split("..")
            return geometric_schedule(_int_expr(lo), _int_expr(hi), 2)
        if ":" in spec:
            lo, hi, ratio = spec.split(":")
            r = _int_expr(ratio)
            if r < 2:
                raise ValueError("ratio")
            return geometric_schedule(_int_expr(lo), _int_expr(hi), r)
        return tuple(_int_expr(v) for v in spec.split(","))
    except ValueError:
        raise UsageError(f"bad --t-schedule {spec!r}") from None


def parse_site(s) -> tuple[int, int, int]:
    if isinstance(s, (list, tuple)):
        v = tuple(int(x) for x in s)
    else:
        v = tuple(int(x) for x in str(s).replace(" ", "").strip("()").split(","))
    if len(v) != 3:
        raise UsageError(f"bad site {s!r}; expected x,y,z")
    return v


def parse_targets(spec) -> tuple:
    if isinstance(spec, (list, tuple)) and spec and isinstance(spec[0], (list, tuple)):
        return tuple(parse_site(v) for v in spec)
    return tuple(parse_site(v) for v in str(spec).split(";") if v.strip())


def read_configuration(path) -> list[tuple[int, int, int]]:
    """Sites from a JSON list of triples or from lines 'x y z' / 'x,y,z'."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
        return [parse_site(v) for v in data]
    except json.JSONDecodeError:
        pass
    sites = []
    for line in text.splitlines():
        line = line.split("#")[0].strip()
        if line:
            sites.append(parse_site(line.replace(" ", ",") if "," not in line else line))
    return sites


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def write_manifest(out: Path, command: str, config: dict, seed: int, seed_source: str,
                   files: list[Path], started: str) -> Path:
    man = {
        "command": command,
        "argv": sys.argv[1:],
        "config": config,
        "master_seed": seed,
        "seed_source": seed_source,
        "tool": "erwlab",
        "version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": {f.name: _sha256(f) for f in files},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return path


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def _resolve_seed(flag) -> tuple[int, str]:
    if flag is not None:
        return int(flag), "flag"
    env = os.environ.get("ERWLAB_SEED")
    if env is not None:
        try:
            return int(env), "env:ERWLAB_SEED"
        except ValueError:
            raise UsageError(f"ERWLAB_SEED={env!r} is not an integer") from None
    return 0, "default"


def _load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}") from None
    if "config" in data and "command" in data:  # a manifest
        data = dict(data["config"], master_seed=data["master_seed"])
    return {k.replace("-", "_"): v for k, v in data.items()}


# ----------------------------------------------------------- simulate

SIM_DEFAULTS = {"t_schedule": "1024", "replicas": 2, "mode": "erw", "targets": "0,0,0",
                "threads": 1, "cylinder_radius": 0}


def cmd_simulate(args) -> int:
    from erwlab.experiments import (
        EnsembleConfig, estimate_returns, no_plateau, parse_mode, run_ensemble,
        summary_rows,
    )

    started = _now()
    conf = dict(SIM_DEFAULTS)
    if args.config:
        conf.update(_load_config_file(args.config))
    for k in ("t_schedule", "replicas", "mode", "targets", "threads", "cylinder_radius"):
        v = getattr(args, k)
        if v is not None:
            conf[k] = v
    seed_flag = args.seed if args.seed is not None else conf.get("master_seed", conf.get("seed"))
    seed, seed_source = _resolve_seed(seed_flag)
    if args.seed is None and ("master_seed" in conf or "seed" in conf):
        seed_source = "config"
    try:
        mode, p = parse_mode(conf["mode"]) if isinstance(conf["mode"], str) else conf["mode"]
        if "drift_p" in conf and mode == "drift" and ":" not in str(conf["mode"]):
            p = float(conf["drift_p"])
    except ValueError as e:
        raise UsageError(str(e)) from None
    if args.assert_lower and mode == "drift":
        _err(DRIFT_REFUSAL)
        return EXIT_USAGE
    try:
        cfg = EnsembleConfig(parse_schedule(conf["t_schedule"]), int(conf["replicas"]), seed,
                             mode, p, parse_targets(conf["targets"]),
                             cylinder_radius=int(conf.get("cylinder_radius", 0)))
    except ValueError as e:
        raise UsageError(str(e)) from None
    threads = int(conf["threads"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    done = [0]

    def progress(k):
        done[0] += k
        if not args.quiet and (done[0] % max(1, cfg.replicas // 20) == 0
                               or done[0] == cfg.replicas):
            _err(f"simulate: {done[0]}/{cfg.replicas} replicas")

    res = run_ensemble(cfg, threads, args.cache, progress)
    rows = summary_rows(res)
    csv_path = out / "simulate.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t, name, m, lo, hi, n in rows:
            w.writerow((t, name, repr(float(m)), repr(float(lo)), repr(float(hi)), n))
    ret = estimate_returns(res)
    summary = {
        "config": cfg.as_dict(),
        "replicas": cfg.replicas,
        "returns": [[r.t, r.mean, r.ci_lo, r.ci_hi] for r in ret],
    }
    status = EXIT_OK
    if args.assert_lower:
        means = [r.mean for r in ret]
        mono = all(b >= a for a, b in zip(means, means[1:]))
        growth = no_plateau(ret) if len(ret) > 1 else True
        summary["assert_lower"] = {"nondecreasing": mono, "no_plateau": growth}
        if not (mono and growth):
            _err("simulate: lower-bound assertion failed")
            status = EXIT_FAIL
    sum_path = out / "summary.json"
    sum_path.write_text(_dump(summary))
    conf_out = cfg.as_dict()
    conf_out["threads"] = threads
    conf_out["mode"] = f"drift:{p}" if mode == "drift" else mode
    conf_out.pop("drift_p", None)
    conf_out["t_schedule"] = list(cfg.t_schedule)
    conf_out.pop("master_seed", None)
    write_manifest(out, "simulate", conf_out, seed, seed_source, [csv_path, sum_path], started)
    return status


# -------------------------------------------------------------- couple

def cmd_couple(args) -> int:
    from erwlab.coupling import couple_many
    from erwlab.lattice import is_legal_configuration

    started = _now()
    seed, seed_source = _resolve_seed(args.seed)
    vis_S = read_configuration(args.vis_s) if args.vis_s else []
    vis_R = read_configuration(args.vis_r) if args.vis_r else []
    for name, cfg in (("vis-s", vis_S), ("vis-r", vis_R)):
        verdict = is_legal_configuration(cfg)
        if not verdict:
            _err(f"couple: {name} is illegal: {verdict.reason} at {tuple(verdict.site)}")
            return EXIT_USAGE
    extra = set(vis_R) - set(vis_S)
    if extra:
        _err(f"couple: vis-r is not contained in vis-s: {min(extra)}")
        return EXIT_USAGE
    w, v = parse_site(args.start), parse_site(args.target)
    if v[2] != 0:
        _err(f"couple: target {v} is not a floor vertex")
        return EXIT_USAGE
    if w[2] < 0:
        _err("couple: start must lie in the half-space")
        return EXIT_USAGE

    def progress(i, n):
        if not args.quiet and (i % max(1, n // 10) == 0 or i == n):
            _err(f"couple: {i}/{n} runs")

    summ = couple_many(w, vis_R, vis_S, args.t, args.runs, v, args.checked, seed, progress)
    report = summ.as_dict()
    report.update({"start": list(w), "target": list(v), "checked": args.checked,
                   "seed": seed, "vis_r": [list(s) for s in vis_R],
                   "vis_s": [list(s) for s in vis_S]})
    ks, pr, ps = summ.tail_probabilities()
    report["tail"] = [[int(k), float(a), float(b)] for k, a, b in zip(ks, pr, ps)]
    text = _dump(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "couple.json"
        path.write_text(text)
        write_manifest(out, "couple", {k: report[k] for k in (
            "start", "target", "checked", "vis_r", "vis_s")} | {"t": args.t, "runs": args.runs},
            seed, seed_source, [path], started)
    else:
        sys.stdout.write(text)
    if not summ.ok:
        _err(f"couple: {summ.violations} invariant violations, "
             f"{summ.dominance_failures} runs with V_R < V_S")
        return EXIT_FAIL
    return EXIT_OK


# ------------------------------------------------------------- bdchain

BD_CHECKS = ("exact-vs-solve", "dominance", "growth", "perturb")


def parse_chain_spec(text: str):
    """JSON object or 'n=4,q=1/3,start=2' (q may be a ';'-separated list)."""
    from erwlab.bdchains import BDChain

    text = text.strip()
    if text.startswith("{"):
        d = json.loads(text)
    else:
        d = {}
        for part in text.replace("\n", ",").split(","):
            if not part.strip():
                continue
            k, _, v = part.partition("=")
            d[k.strip()] = v.strip()
    try:
        n = int(d["n"])
        q = d["q"]
        if isinstance(q, str):
            q = [s for s in q.replace(" ", ";").split(";") if s]
        elif not isinstance(q, list):
            q = [q]
        q = [Fraction(v) if isinstance(v, str) else v for v in q]
        if len(q) == 1:
            q = q * (n - 2)
        return BDChain(n, tuple(q), int(d.get("start", 2)))
    except (KeyError, ValueError, ZeroDivisionError) as e:
        raise UsageError(f"bad chain spec: {e}") from None


def _float_or_frac(s):
    return Fraction(s) if isinstance(s, str) else s


def cmd_bdchain(args) -> int:
    from erwlab import bdchains as bd

    checks = args.check or list(BD_CHECKS)
    p = Fraction(args.p)
    qbar = Fraction(args.qbar)
    report: dict = {"checks": checks}
    failures = 0
    if args.spec:
        text = Path(args.spec).read_text() if Path(args.spec).is_file() else args.spec
        ch = parse_chain_spec(text)
        r = bd.hit_prob_exact(ch)
        report["chain"] = {"n": ch.n, "q": [str(v) for v in ch.q], "start": ch.start}
        report["r"] = str(r)
        report["r_float"] = float(r)
        print(f"r_{ch.start} = {r}", file=sys.stderr)
        if "exact-vs-solve" in checks:
            err = bd.relative_error(r, bd.hit_prob_solve(ch))
            report["exact_vs_solve_rel_err"] = err
            failures += err > 1e-12
        if "growth" in checks and all(v <= qbar for v in ch.q) and qbar < Fraction(1, 2):
            g = bd.growth_ratio_check(ch, qbar)
            report["growth"] = {"c": str(g.c), "violations": g.violations}
            failures += not g.holds
        if "perturb" in checks and all(p <= v <= qbar for v in ch.q) and qbar < Fraction(1, 2):
            pr = bd.perturb_bound_report(ch, p, qbar)
            report["perturb"] = {"C_impl": pr.C_impl}
            failures += not pr.bounded
    if args.random:
        try:
            nmax, count = (int(x) for x in args.random.split(","))
        except ValueError:
            raise UsageError("--random expects n,count") from None
        if nmax < 3 or count < 1:
            raise UsageError("--random needs n >= 3 and count >= 1")
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        rep = {}
        if "exact-vs-solve" in checks:
            worst = 0.0
            for _ in range(count):
                ch = bd.random_chain(rng, int(rng.integers(3, nmax + 1)))
                e, s = bd.hit_probs_exact(ch), bd.hit_probs_solve(ch)
                worst = max(worst, max(bd.relative_error(a, b) for a, b in zip(e, s)))
            rep["exact-vs-solve"] = {"max_rel_err": worst, "ok": worst <= 1e-12}
            failures += worst > 1e-12
        if "dominance" in checks:
            bad = 0
            for _ in range(count):
                A, B = bd.random_dominated_pair(rng, int(rng.integers(3, nmax + 1)))
                bad += not bd.dominance_check(A, B).holds
            rep["dominance"] = {"pairs": count, "violations": bad}
            failures += bad
        if "growth" in checks:
            bad = 0
            for _ in range(count):
                ch = bd.random_chain(rng, int(rng.integers(3, nmax + 1)), Fraction(1, 1000),
                                     qbar, denom=1000)
                bad += not bd.growth_ratio_check(ch, qbar).holds
            rep["growth"] = {"chains": count, "qbar": str(qbar), "violations": bad}
            failures += bad
        if "perturb" in checks:
            tr = bd.perturb_trend(p, qbar, range(5, nmax + 1))
            rep["perturb"] = {"p": str(p), "qbar": str(qbar), "slope": tr.slope,
                              "slope_ci": list(tr.slope_ci), "max_C": float(tr.C.max()),
                              "no_increasing_trend": tr.no_increasing_trend}
            failures += not bool(np.all(np.isfinite(tr.C)))
        report["random"] = rep
    if not args.spec and not args.random:
        raise UsageError("bdchain needs --spec or --random")
    sys.stdout.write(_dump(report))
    return EXIT_FAIL if failures else EXIT_OK


# ----------------------------------------------------------------- fit

def read_summary_csv(path, stat: str = "V") -> tuple[np.ndarray, np.ndarray]:
    try:
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = tuple(next(rd))
            if header != CSV_HEADER:
                raise UsageError(f"unexpected CSV header {header}")
            t, y = [], []
            for row in rd:
                if len(row) != len(CSV_HEADER):
                    raise UsageError(f"malformed CSV row {row}")
                if row[1] == stat:
                    t.append(int(row[0]))
                    y.append(float(row[2]))
    except (OSError, StopIteration, ValueError) as e:
        raise UsageError(f"cannot read {path}: {e}") from None
    return np.array(t), np.array(y)


def cmd_fit(args) -> int:
    from erwlab.experiments import fit_scaling

    t, y = read_summary_csv(args.inp, args.stat)
    if t.size < 5:
        raise UsageError(f"need at least 5 horizons of {args.stat!r}, found {t.size}")
    res = fit_scaling(t, y)
    out = res.as_dict()
    out["stat"] = args.stat
    out["horizons"] = [int(v) for v in t]
    sys.stdout.write(_dump(out))
    if args.expect and res.winner != args.expect:
        _err(f"fit: expected {args.expect} to win, got {res.winner}")
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="erwlab", description="Excited random walk laboratory.")
    ap.add_argument("--version", action="version", version=f"erwlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run an ensemble and write CSV + summary + manifest")
    s.add_argument("--t-schedule", dest="t_schedule",
                   help="comma list, 'lo..hi' (doubling) or 'lo:hi:ratio'")
    s.add_argument("--replicas", type=int)
    s.add_argument("--seed", type=int, help="master seed (default: $ERWLAB_SEED or 0)")
    s.add_argument("--mode", help="erw | symmetric | drift:p")
    s.add_argument("--targets", help="';'-separated sites x,y,z (origin always included)")
    s.add_argument("--cylinder-radius", dest="cylinder_radius", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--config", help="JSON config (or a manifest); flags override it")
    s.add_argument("--cache", help="reuse/store the raw ensemble in this directory")
    s.add_argument("--out", default="erwlab-out")
    s.add_argument("--assert-lower", dest="assert_lower", action="store_true",
                   help="fail unless mean V(t;0) is nondecreasing and grows")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("couple", help="run checked couplings and report dominance")
    c.add_argument("--t", type=int, required=True)
    c.add_argument("--runs", type=int, default=100)
    c.add_argument("--vis-s", dest="vis_s", help="configuration file for S")
    c.add_argument("--vis-r", dest="vis_r", help="configuration file for R (default empty)")
    c.add_argument("--start", default="0,0,0")
    c.add_argument("--target", default="0,0,0")
    c.add_argument("--checked", action="store_true")
    c.add_argument("--seed", type=int)
    c.add_argument("--out")
    c.add_argument("--quiet", action="store_true")
    c.set_defaults(func=cmd_couple)

    b = sub.add_parser("bdchain", help="exact hitting probabilities and chain checks")
    b.add_argument("--spec", help="chain spec (file, JSON, or 'n=4,q=1/3,start=2')")
    b.add_argument("--random", help="n,count: random chains with n <= N")
    b.add_argument("--check", action="append", choices=BD_CHECKS)
    b.add_argument("--p", default="1/10")
    b.add_argument("--qbar", default="1/5")
    b.add_argument("--seed", type=int)
    b.set_defaults(func=cmd_bdchain)

    f = sub.add_parser("fit", help="compare scaling models on a simulate CSV")
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--stat", default="V")
    f.add_argument("--expect", choices=("sqrt_log", "log", "constant"))
    f.set_defaults(func=cmd_fit)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as e:
        _err(f"erwlab: {e}")
        return EXIT_USAGE
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)


if __name__ == "__main__":
    sys.exit(main())
