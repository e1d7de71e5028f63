"""mg1w command line: value functions, bounds, approximations, policies, simulation."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from typing import Optional

import numpy as np

from . import config as cfgmod
from .approx_uniform import SampledCost, approximate, measured_error, periodic_modulus_estimate, periodic_trig_terms
from .dispatch import ServerSpec, policy_map
from .errors import (
    AdmissibilityError,
    ConfigError,
    DivergentSeries,
    DomainError,
    Mg1wError,
    StabilityViolation,
    UnsupportedModel,
)
from .piecewise import w_piecewise
from .series_taylor import (
    Convergence,
    ExpPolyGermSource,
    GrowthClass,
    Germ,
    convergence_classify,
    exp_decay_derivative_bounds,
    filter_germ,
    polynomial_bounds,
    taylor_w,
)
from .service_models import stability_check
from .simulator import SimConfig, sim_discharge_cost
from .wfunction_core import ExpPolyCost, relative_value, w_for_exp_poly_cost

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_STABILITY, EXIT_DIVERGENCE = 0, 1, 2, 3, 4


class Table:
    """Rows to emit plus '#'-prefixed header facts."""

    def __init__(self, columns, header=None):
        self.columns = list(columns)
        self.header = dict(header or {})
        self.rows: list[list] = []

    def add(self, *vals):
        self.rows.append(list(vals))

    def check_finite(self):
        for r in self.rows:
            for v in r:
                if isinstance(v, float) and not math.isfinite(v):
                    raise Mg1wError(f"non-finite value in output row {r}")
        for k, v in self.header.items():
            if isinstance(v, float) and not math.isfinite(v):
                raise Mg1wError(f"non-finite header value {k}")

    def render(self, fmt: str) -> str:
        self.check_finite()
        if fmt == "json":
            doc = {"header": self.header, "rows": [dict(zip(self.columns, r)) for r in self.rows]}
            return json.dumps(doc, indent=1) + "\n"
        buf = io.StringIO()
        for k, v in self.header.items():
            buf.write(f"# {k}={_fmt(v)}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.columns)
        for r in self.rows:
            wr.writerow([_fmt(v) for v in r])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _real(z) -> float:
    return float(np.real(z))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _header(doc: dict, **extra) -> dict:
    return {"spec_hash": cfgmod.spec_hash(doc), **extra}


def _exact_w(spec, cost):
    if cost.exact is not None:
        return w_for_exp_poly_cost(spec, cost.exact)
    if cost.piecewise is not None:
        return w_piecewise(spec, cost.piecewise)
    raise ConfigError(f"cost kind '{cost.kind}' has no exact w-function; use 'bounds' or 'approx'")


def cmd_wfn(doc: dict) -> Table:
    spec = cfgmod.build_queue(doc["queue"])
    stability_check(spec)
    wres = _exact_w(spec, cfgmod.build_cost(doc["cost"]))
    u = cfgmod.grid_values(doc["grid"])
    w = np.real(wres.w.evaluate(u))
    wp = np.real(wres.wprime.evaluate(u))
    rv = np.real(relative_value(spec, wres, u))
    t = Table(["u", "w", "wprime", "relvalue"], _header(doc, rho=spec.rho, cbar=_real(wres.mean_cost)))
    for row in zip(u, w, wp, rv):
        t.add(*(float(x) for x in row))
    return t


def _exp_decay_germ(a: float, n: int) -> Germ:
    # derivatives of 1 - e^{-au} at zero
    return Germ([0.0] + [-((-a) ** j) for j in range(1, n + 1)])


def cmd_bounds(doc: dict) -> tuple[Table, int]:
    spec = cfgmod.build_queue(doc["queue"])
    stability_check(spec)
    if doc["cost"]["kind"] != "exp_decay":
        raise ConfigError("bounds: cost kind must be 'exp_decay' (derivative bounds are known in closed form)")
    a = float(doc["cost"]["a"])
    regime = convergence_classify(spec, GrowthClass(1.0, abs(a)))
    orders = [int(round(x)) for x in cfgmod.grid_values(doc["orders"])]
    if min(orders) < 0:
        raise ConfigError("bounds: orders must be nonnegative")
    u = cfgmod.grid_values(doc["grid"])
    t = Table(["u", "n", "lower", "upper"], _header(doc, rho=spec.rho, regime=regime.value))
    for n in orders:
        ib = polynomial_bounds(spec, _exp_decay_germ(a, n), exp_decay_derivative_bounds(a, n))
        lo, hi = ib(u)
        for x, l, h in zip(u, lo, hi):
            t.add(float(x), n, float(l), float(h))
    code = EXIT_OK if regime is Convergence.CONVERGES else EXIT_DIVERGENCE
    return t, code


def cmd_taylor(doc: dict) -> Table:
    spec = cfgmod.build_queue(doc["queue"])
    stability_check(spec)
    cost = cfgmod.build_cost(doc["cost"])
    if cost.exact is None:
        raise ConfigError("taylor: cost must be 'exppoly' or 'exp_decay'")
    n = int(doc["n"])
    src = ExpPolyGermSource(cost.exact.terms)
    wg = filter_germ(spec, src, n)
    u = cfgmod.grid_values(doc["grid"])
    vals = np.real(taylor_w(wg, u))
    t = Table(["u", "w"], _header(doc, rho=spec.rho, order=n))
    for x, v in zip(u, vals):
        t.add(float(x), float(v))
    return t


def cmd_approx(doc: dict) -> Table:
    cost = cfgmod.build_cost(doc["cost"])
    n = int(doc["n"])
    tau = float(doc["tau"])
    if cost.kind == "periodic":
        T = cost.period
        terms = periodic_trig_terms(cost.fn, T, n)
        eta = 6.0 * periodic_modulus_estimate(cost.fn, T, T / (n * math.pi))
        u = cfgmod.grid_values(doc.get("grid", {"min": 0.0, "max": T, "steps": 201}))
        p = np.real(ExpPolyCost(terms)(u))
        c = np.asarray(cost.fn(u), dtype=float) * np.ones_like(u)
        t = Table(["u", "cost", "approx", "lower", "upper"], _header(doc, method="korovkin_fourier", eta=eta))
    else:
        if cost.fn is None:
            raise ConfigError("approx: cost kind must be 'sampled', 'example7' or 'periodic'")
        mod = None if cost.modulus is None else (lambda delta: cost.modulus(tau, delta))
        sc = SampledCost(cost.fn, tau, mod)
        ap = approximate(sc, n, doc.get("method", "near_best"))
        eta = float(ap.eta)
        u = cfgmod.grid_values(doc.get("grid", {"min": 0.0, "max": tau, "steps": 201}))
        p = np.asarray(ap(u), dtype=float)
        c = np.asarray(sc(u), dtype=float)
        t = Table(
            ["u", "cost", "approx", "lower", "upper"],
            _header(doc, method=ap.method, eta=eta, measured_error=float(measured_error(sc, ap))),
        )
    for x, cv, pv in zip(u, c, p):
        t.add(float(x), float(cv), float(pv), float(pv - eta), float(pv + eta))
    return t


def build_fleet(doc: dict) -> list[ServerSpec]:
    fleet = []
    for i, s in enumerate(doc["servers"]):
        spec = cfgmod.build_queue({k: s[k] for k in ("lambda", "model")})
        cost = cfgmod.build_cost(s["cost"])
        sid = s.get("id", str(i + 1))
        if cost.exact is not None:
            fleet.append(ServerSpec(sid, spec, cost.exact))
        elif cost.fn is not None and cost.period is None:
            if cost.tail is None:
                raise ConfigError(f"server {sid}: sampled cost needs a 'tail' envelope")
            fleet.append(ServerSpec(sid, spec, cost.fn, tail=cost.tail, modulus=cost.modulus))
        else:
            raise ConfigError(f"server {sid}: cost kind '{cost.kind}' is not supported for dispatching")
    return fleet


def cmd_policy(doc: dict) -> Table:
    fleet = build_fleet(doc)
    dp = doc["dispatch"]
    grid = cfgmod.grid_values(dp["grid"])
    kw = {}
    if "eps0" in dp or "tmax" in dp:
        from .dispatch import eps_schedule

        kw["eps"] = eps_schedule(dp.get("eps0", 0.5), dp.get("tmax", 12))
    if "tau_max" in dp:
        kw["tau_max"] = float(dp["tau_max"])
    if "n_max" in dp:
        kw["n_max"] = int(dp["n_max"])
    if "mode" in dp:
        kw["mode"] = dp["mode"]
    rows = policy_map(fleet, grid, dp["d"], **kw)
    resolved = sum(r["winner"] != "unresolved" for r in rows)
    t = Table(["u1", "u2", "winner", "n_star", "rounds"], _header(doc, points=len(rows), resolved=resolved))
    for r in rows:
        t.add(r["u1"], r["u2"], r["winner"], r["n_star"], r["rounds"])
    return t


def cmd_simulate(doc: dict, threads: int = 1) -> Table:
    spec = cfgmod.build_queue(doc["queue"])
    stability_check(spec)
    cost = cfgmod.build_cost(doc["cost"])
    reps = int(doc.get("reps", 10_000))
    sc = SimConfig(spec, cost.evaluator(), seed=int(doc.get("seed", 0)), replications=reps, threads=threads)
    t = Table(["u0", "mean", "stderr", "reps"], _header(doc, rho=spec.rho, seed=sc.seed))
    for u0 in cfgmod.grid_values(doc["u0"]):
        est = sim_discharge_cost(sc, float(u0))
        t.add(float(u0), est.mean, est.stderr, est.n)
    return t


def cmd_verify(doc: dict) -> tuple[Table, int]:
    from .acceptance import run_all

    results = run_all(quick=bool(doc.get("quick", False)))
    t = Table(["criterion", "status", "measured"], _header(doc))
    for r in results:
        t.add(r.number, "PASS" if r.passed else "FAIL", r.detail)
    return t, EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mg1w", description="Value functions of M/G/1 FCFS queues under waiting costs.")
    p.add_argument("command", choices=list(cfgmod.REQUIRED))
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--grid", help='evaluation grid "a:b:steps"')
    p.add_argument("--threads", type=int, default=1, help="worker threads for simulation")
    p.add_argument("--quick", action="store_true", help="verify: reduced sample sizes")
    return p


def _apply_overrides(doc: dict, args) -> dict:
    doc = dict(doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.reps is not None:
        doc["reps"] = args.reps
    if args.grid is not None:
        if args.command == "policy" and "dispatch" in doc:
            doc["dispatch"] = dict(doc["dispatch"], grid=args.grid)
        elif args.command == "simulate":
            doc["u0"] = args.grid
        else:
            doc["grid"] = args.grid
    if args.quick:
        doc["quick"] = True
    return doc


def run(argv: Optional[list[str]] = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = _parser().parse_args(argv)
    try:
        if args.config:
            raw = cfgmod.parse_text(_read(args.config), args.config)
        else:
            raw = {}
        if raw.get("command", args.command) != args.command:
            raise ConfigError(f"{args.config}: config is for command '{raw['command']}', not '{args.command}'")
        doc = cfgmod.validate(_apply_overrides(raw, args), args.command, args.config or "<args>")
        code = EXIT_OK
        cmd = args.command
        if cmd == "wfn":
            table = cmd_wfn(doc)
        elif cmd == "bounds":
            table, code = cmd_bounds(doc)
        elif cmd == "taylor":
            table = cmd_taylor(doc)
        elif cmd == "approx":
            table = cmd_approx(doc)
        elif cmd == "policy":
            table = cmd_policy(doc)
        elif cmd == "simulate":
            table = cmd_simulate(doc, threads=args.threads)
        else:
            table, code = cmd_verify(doc)
        text = table.render(args.format)
    except (ConfigError, AdmissibilityError, UnsupportedModel, DomainError) as exc:
        print(f"mg1w: config error: {exc}", file=stderr)
        return EXIT_CONFIG
    except StabilityViolation as exc:
        print(f"mg1w: {exc}", file=stderr)
        return EXIT_STABILITY
    except DivergentSeries as exc:
        print(f"mg1w: divergent series: {exc}", file=stderr)
        return EXIT_DIVERGENCE
    except Mg1wError as exc:
        print(f"mg1w: internal check failed: {exc}", file=stderr)
        return EXIT_FAIL
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        stdout.write(text)
    if code == EXIT_DIVERGENCE:
        print("mg1w: divergence regime: the Taylor series of w does not converge for this cost", file=stderr)
    return code


def _read(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
