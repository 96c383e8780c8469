"""Command-line front end: JSON scenario configs in, JSON/CSV reports out."""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bsde import richardson
from .contracts import (ContinuousFee, ContractSpec, DiscreteFlows, EuropeanClaim, Exogenous,
                        HedgerQ, Mixed, Negotiated, PiecewiseLinear)
from .generators import GeneratorSpec
from .market import AssetDynamics, ConfigError, Model, NumericError, RateEnvironment, Regime
from .pricing import (PricingRequest, fair_range, price, price_single_rate, report_from,
                      select_regime, solve)
from . import properties as props

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


# ---------------------------------------------------------------- config

def _need(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise ConfigError(f"config field {where}.{key} present")
    return d[key]


def _num(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"config field {where} is a finite number")
    return float(v)


def _norm_map(d: dict, where: str) -> dict:
    kind = d.get("type", "piecewise")
    if kind in ("call", "put"):
        return {"type": kind, "strike": _num(_need(d, "strike", where), where + ".strike")}
    if kind == "constant":
        return {"type": kind, "value": _num(_need(d, "value", where), where + ".value")}
    if kind == "linear":
        return {"type": kind, "slope": _num(d.get("slope", 1.0), where + ".slope")}
    if kind == "haircut":
        return {"type": kind, "alpha1": _num(d.get("alpha1", 0.0), where + ".alpha1"),
                "alpha2": _num(d.get("alpha2", 0.0), where + ".alpha2")}
    if kind == "piecewise":
        return {"type": kind,
                "knots": [_num(v, where + ".knots") for v in _need(d, "knots", where)],
                "values": [_num(v, where + ".values") for v in _need(d, "values", where)],
                "left_slope": _num(d.get("left_slope", 0.0), where + ".left_slope"),
                "right_slope": _num(d.get("right_slope", 0.0), where + ".right_slope")}
    raise ConfigError(f"config field {where}.type in call|put|constant|linear|haircut|piecewise")


def _build_map(d: dict) -> PiecewiseLinear:
    kind = d["type"]
    if kind == "call":
        return PiecewiseLinear.call(d["strike"])
    if kind == "put":
        return PiecewiseLinear.put(d["strike"])
    if kind == "constant":
        return PiecewiseLinear.constant(d["value"])
    if kind == "linear":
        return PiecewiseLinear.linear(d["slope"])
    if kind == "haircut":
        return PiecewiseLinear.haircut(d["alpha1"], d["alpha2"])
    return PiecewiseLinear(tuple(d["knots"]), tuple(d["values"]), d["left_slope"], d["right_slope"])


def _norm_leg(d: dict, where: str) -> dict:
    kind = _need(d, "kind", where)
    if kind == "european":
        return {"kind": kind, "payoff": _norm_map(_need(d, "payoff", where), where + ".payoff")}
    if kind == "discrete":
        return {"kind": kind, "events": [
            {"t": _num(_need(e, "t", where), where + ".events.t"),
             "payoff": _norm_map(_need(e, "payoff", where), where + ".events.payoff")}
            for e in _need(d, "events", where)]}
    if kind == "fee":
        return {"kind": kind, "rate": _num(_need(d, "rate", where), where + ".rate"),
                "start": _num(d.get("start", 0.0), where + ".start")}
    raise ConfigError(f"config field {where}.kind in european|discrete|fee|mixed|zero")


def _norm_contract(d: dict) -> dict:
    T = _num(_need(d, "maturity", "contract"), "contract.maturity")
    kind = _need(d, "kind", "contract")
    if kind == "zero":
        return {"kind": kind, "maturity": T}
    if kind == "mixed":
        return {"kind": kind, "maturity": T,
                "legs": [_norm_leg(l, "contract.legs") for l in _need(d, "legs", "contract")]}
    out = _norm_leg(d, "contract")
    out["maturity"] = T
    return out


def _build_leg(d: dict):
    if d["kind"] == "european":
        return EuropeanClaim(_build_map(d["payoff"]))
    if d["kind"] == "discrete":
        return DiscreteFlows(tuple((e["t"], _build_map(e["payoff"])) for e in d["events"]))
    return ContinuousFee(d["rate"], d["start"])


def _build_contract(d: dict) -> ContractSpec:
    if d["kind"] == "zero":
        return ContractSpec.zero(d["maturity"])
    if d["kind"] == "mixed":
        return ContractSpec(d["maturity"], Mixed(tuple(_build_leg(l) for l in d["legs"])))
    return ContractSpec(d["maturity"], _build_leg(d))


def _norm_collateral(d: dict) -> dict:
    kind = _need(d, "kind", "collateral")
    if kind == "none":
        return {"kind": kind}
    if kind == "hedger_q":
        if "map" in d:
            return {"kind": kind, "map": _norm_map(d["map"], "collateral.map")}
        return {"kind": kind, "map": _norm_map({"type": "haircut", "alpha1": d.get("alpha1", 0.0),
                                                "alpha2": d.get("alpha2", 0.0)}, "collateral")}
    if kind == "negotiated":
        return {"kind": kind, "alpha": _num(d.get("alpha", 0.5), "collateral.alpha"),
                "hedger_map": _norm_map(d.get("hedger_map", {"type": "linear"}), "collateral.hedger_map"),
                "counterparty_map": _norm_map(d.get("counterparty_map", {"type": "linear"}),
                                              "collateral.counterparty_map")}
    if kind == "exogenous":
        return {"kind": kind,
                "level": _norm_map(d.get("level", {"type": "constant", "value": 0.0}), "collateral.level"),
                "profile": _norm_map(d.get("profile", {"type": "constant", "value": 1.0}),
                                     "collateral.profile")}
    raise ConfigError("config field collateral.kind in none|hedger_q|negotiated|exogenous")


def _build_collateral(d: dict):
    if d["kind"] == "none":
        return HedgerQ.zero()
    if d["kind"] == "hedger_q":
        return HedgerQ(_build_map(d["map"]))
    if d["kind"] == "negotiated":
        return Negotiated(d["alpha"], _build_map(d["hedger_map"]), _build_map(d["counterparty_map"]))
    return Exogenous(_build_map(d["level"]), _build_map(d["profile"]))


_PROPERTY_IDS = ("ordering", "sandwich", "bsvp", "homogeneity", "endowment_independence",
                 "monotone_ordering")


@dataclass(frozen=True)
class ScenarioConfig:
    model: str
    rates: dict
    asset: dict
    contract: dict
    collateral: dict = field(default_factory=lambda: {"kind": "none"})
    endowments: dict = field(default_factory=lambda: {"x1": 0.0, "x2": 0.0})
    measure: str | None = None
    solver: dict = field(default_factory=dict)
    properties: list = field(default_factory=list)
    convergence: dict = field(default_factory=dict)
    search: dict = field(default_factory=dict)
    seed: int = 0
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> ScenarioConfig:
        if not isinstance(raw, dict):
            raise ConfigError("config is a JSON object")
        model = _need(raw, "model", "config")
        if model not in [m.value for m in Model]:
            raise ConfigError("config field model in bergman|partial_netting|single_rate")
        r = _need(raw, "rates", "config")
        rates = {k: _num(_need(r, k, "rates"), f"rates.{k}") for k in ("r_l", "r_b", "r_c")}
        rates["r_ib"] = [_num(v, "rates.r_ib") for v in np.atleast_1d(r.get("r_ib", rates["r_b"]))]
        rates["beta"] = [_num(v, "rates.beta") for v in np.atleast_1d(r.get("beta", rates["r_b"]))]
        rates["r_mid"] = None if r.get("r_mid") is None else _num(r["r_mid"], "rates.r_mid")
        a = _need(raw, "asset", "config")
        asset = {"s0": _num(_need(a, "s0", "asset"), "asset.s0"),
                 "mu": _num(a.get("mu", 0.0), "asset.mu"),
                 "sigma": _num(_need(a, "sigma", "asset"), "asset.sigma"),
                 "kappa": _num(a.get("kappa", 0.0), "asset.kappa")}
        e = raw.get("endowments", {})
        endow = {"x1": _num(e.get("x1", 0.0), "endowments.x1"),
                 "x2": _num(e.get("x2", 0.0), "endowments.x2")}
        measure = raw.get("measure")
        if measure is not None and measure not in [g.value for g in Regime]:
            raise ConfigError("config field measure in lending|beta")
        s = raw.get("solver", {})
        n = s.get("n_steps", 200)
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise ConfigError("n_steps ≥ 1")
        solver = {"n_steps": n, "richardson": bool(s.get("richardson", False)),
                  "coupled_fixed_point": bool(s.get("coupled_fixed_point", False))}
        plist = []
        for p in raw.get("properties", []):
            pid = _need(p, "id", "properties")
            if pid not in _PROPERTY_IDS:
                raise ConfigError(f"config field properties.id in {'|'.join(_PROPERTY_IDS)}")
            plist.append(dict(sorted(p.items())))
        conv = {"n": [int(v) for v in raw.get("convergence", {}).get("n", [250, 500, 1000, 2000])]}
        if len(conv["n"]) < 2 or any(v < 1 for v in conv["n"]):
            raise ConfigError("convergence.n lists at least two step counts ≥ 1")
        sr = raw.get("search", {})
        search = {"n_steps": int(sr.get("n_steps", 20)),
                  "amount_points": int(sr.get("amount_points", 41)),
                  "amount_range": _num(sr.get("amount_range", 5.0), "search.amount_range"),
                  "scale": _num(sr.get("scale", 1.0), "search.scale"),
                  "times": None if sr.get("times") is None else [_num(t, "search.times") for t in sr["times"]],
                  "tol": _num(sr.get("tol", 1e-4), "search.tol")}
        seed = raw.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed is a non-negative integer")
        o = raw.get("output", {})
        fmts = o.get("formats", ["json", "csv"])
        if not set(fmts) <= {"json", "csv"}:
            raise ConfigError("output.formats within json|csv")
        output = {"dir": o.get("dir", "."), "formats": sorted(set(fmts))}
        cfg = cls(model, rates, asset, _norm_contract(_need(raw, "contract", "config")),
                  _norm_collateral(raw.get("collateral", {"kind": "none"})), endow, measure, solver,
                  plist, conv, search, seed, output)
        cfg.request()
        return cfg

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def with_overrides(self, steps: int | None = None, seed: int | None = None) -> ScenarioConfig:
        d = self.to_dict()
        if steps is not None:
            d["solver"]["n_steps"] = steps
        if seed is not None:
            d["seed"] = seed
        return ScenarioConfig.from_dict(d)

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def request(self, n_steps: int | None = None) -> PricingRequest:
        r = self.rates
        rates = RateEnvironment(r["r_l"], r["r_b"], r["r_c"], tuple(r["r_ib"]), tuple(r["beta"]))
        a = self.asset
        asset = AssetDynamics(a["s0"], a["sigma"], a["mu"], a["kappa"])
        return PricingRequest(Model(self.model), rates, asset, _build_contract(self.contract),
                              _build_collateral(self.collateral), self.endowments["x1"],
                              self.endowments["x2"], r["r_mid"],
                              n_steps or self.solver["n_steps"],
                              None if self.measure is None else Regime(self.measure),
                              self.solver["coupled_fixed_point"])


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError("config file readable", str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("config file is valid JSON", str(exc)) from exc
    return ScenarioConfig.from_dict(raw)


# ---------------------------------------------------------------- output

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not math.isfinite(v):
            raise NumericError("non-finite number in report")
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, obj) -> None:
    _write_atomic(path, json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                    for v in row])
    _write_atomic(path, buf.getvalue())


# ---------------------------------------------------------------- runs

def run_price(cfg: ScenarioConfig, out: Path, formats=("csv", "json")) -> int:
    req = cfg.request()
    res = solve(req)
    rep = report_from(res, req)
    rng = fair_range(rep, [0])[0]
    doc = {
        "config_hash": cfg.digest(),
        "model": cfg.model,
        "x1": req.x1,
        "x2": req.x2,
        "regime": rep.regime.value,
        "families": [f.value for f in rep.families],
        "coupling": rep.mode.value,
        "n_steps": req.n_steps,
        "P_h0": rep.P_h0,
        "P_c0": rep.P_c0,
        "range_t0": {"lower": rep.P_c0, "upper": rep.P_h0, "empty": bool(rng.any_empty),
                     "tolerance": rng.tolerance},
        "curves": {
            "t": rep.times,
            "P_h_min": [float(p.min()) for p in rep.P_h],
            "P_h_max": [float(p.max()) for p in rep.P_h],
            "P_c_min": [float(p.min()) for p in rep.P_c],
            "P_c_max": [float(p.max()) for p in rep.P_c],
            "range_empty": [bool(e.any_empty) for e in fair_range(rep)],
        },
    }
    if cfg.solver["richardson"]:
        fine = price(req.with_(n_steps=2 * req.n_steps))
        doc["richardson"] = {"n": req.n_steps, "n_fine": 2 * req.n_steps,
                             "P_h0": richardson(rep.P_h0, fine.P_h0),
                             "P_c0": richardson(rep.P_c0, fine.P_c0)}
    if cfg.rates["r_mid"] is not None and cfg.model != Model.SINGLE_RATE.value \
            and isinstance(req.collateral, HedgerQ):
        doc["benchmark"] = {"r_mid": cfg.rates["r_mid"], "P_r0": price_single_rate(req)[1]}
    if "json" in formats:
        _write_json(out / "price_report.json", doc)
    if "csv" in formats:
        rows = []
        n = len(rep.times) - 1
        for i, t in enumerate(rep.times):
            for j in range(i + 1):
                xh = rep.xi_h[i][j] if i < n else None
                xc = rep.xi_c[i][j] if i < n else None
                rows.append((float(t), j, rep.S[i][j], rep.P_h[i][j], rep.P_c[i][j], xh, xc))
        _write_csv(out / "price_surface.csv", ("t", "node", "S", "P_h", "P_c", "xi_h", "xi_c"), rows)
    return EXIT_OK


def _coupled_spec(req: PricingRequest) -> GeneratorSpec | None:
    if not isinstance(req.collateral, Negotiated):
        return None
    sel = select_regime(req)
    return GeneratorSpec(sel.families[0], req.rates, req.x1, req.x2, req.collateral)


def evaluate_properties(cfg: ScenarioConfig) -> list[props.PropertyVerdict]:
    req = cfg.request()
    out = []
    for p in cfg.properties:
        pid = p["id"]
        if pid == "ordering":
            out.append(props.check_ordering(price(req), p.get("tol")))
        elif pid == "sandwich":
            r_mids = p.get("r_mid", [req.rates.r_l, 0.5 * (req.rates.r_l + req.rates.r_b), req.rates.r_b])
            out.append(props.check_sandwich(req, r_mids, p.get("tol", 1e-6)))
        elif pid == "bsvp":
            spec = _coupled_spec(req)
            if spec is None:
                out.append(props.PropertyVerdict.not_applicable(pid, "needs negotiated collateral"))
                continue
            out.append(props.check_bsvp(spec, req.asset, None, int(p.get("n_samples", 10_000)),
                                        float(p.get("M", 0.0)), cfg.seed, req.contract.maturity))
        elif pid == "homogeneity":
            out.append(props.check_homogeneity(req, tuple(p.get("lambdas", (0.5, 2.0, 10.0))),
                                               p.get("tol", 1e-8)))
        elif pid == "endowment_independence":
            out.append(props.check_endowment_independence(req, tuple(p.get("x1", (0.0, 1.0, 5.0)))))
        else:
            out.append(props.check_monotone_ordering(req))
    return out


def run_properties(cfg: ScenarioConfig, out: Path) -> int:
    verdicts = evaluate_properties(cfg)
    _write_json(out / "verdicts.json", {"config_hash": cfg.digest(), "seed": cfg.seed,
                                        "verdicts": [v.to_dict() for v in verdicts]})
    ok = all(v.passed for v in verdicts if v.applicable)
    return EXIT_OK if ok else EXIT_FAIL


def convergence_table(cfg: ScenarioConfig, ns=None):
    """Rows (n, price, |price - extrapolated|, ratio of successive errors)."""
    ns = sorted(cfg.convergence["n"] if ns is None else ns)
    req = cfg.request()
    prices = [price(req.with_(n_steps=n)).P_h0 for n in ns]
    ext = richardson(prices[-2], prices[-1]) if ns[-1] == 2 * ns[-2] else prices[-1]
    errs = [abs(p - ext) for p in prices]
    rows = []
    for k, (n, p, e) in enumerate(zip(ns, prices, errs)):
        ratio = errs[k - 1] / e if k > 0 and e > 0 else None
        rows.append((n, p, e, ratio))
    return rows


def run_convergence(cfg: ScenarioConfig, out: Path, ns=None) -> int:
    rows = convergence_table(cfg, ns)
    _write_csv(out / "convergence.csv", ("n", "price", "error_vs_extrapolated", "ratio"), rows)
    return EXIT_OK


def run_search(cfg: ScenarioConfig, out: Path) -> int:
    req = cfg.request()
    s = cfg.search
    amounts = np.linspace(-s["amount_range"], s["amount_range"], s["amount_points"]) * s["scale"]
    res = props.search_range_violation(req, amounts, s["times"], s["n_steps"], s["tol"])
    doc = res.to_dict()
    doc.update({"config_hash": cfg.digest(), "x1": req.x1, "x2": req.x2})
    _write_json(out / "violation.json", doc)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bilateral", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("price", "properties", "convergence", "search"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="output directory (default: config output.dir)")
        p.add_argument("--steps", type=int, default=None, help="override solver.n_steps")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--format", choices=("json", "csv", "both"), default=None)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(args.steps, args.seed)
        out = Path(args.out or cfg.output["dir"])
        formats = (cfg.output["formats"] if args.format is None
                   else ("json", "csv") if args.format == "both" else (args.format,))
        if args.command == "price":
            return run_price(cfg, out, formats)
        if args.command == "properties":
            return run_properties(cfg, out)
        if args.command == "convergence":
            return run_convergence(cfg, out)
        return run_search(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, ArithmeticError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
