"""Command-line front end: ``disorder-lab <subcommand> --config PATH``.

A config is a JSON or TOML file with exactly one model block (``pinning`` or
``polymer``) plus optional ``campaign``, ``exact_check``, ``rate`` and
``endpoint`` blocks. Example (JSON)::

    {"seed": 7,
     "polymer": {"law": {"kind": "gaussian"}, "beta": 0.5, "d": 1,
                 "n_list": [50, 100], "replicas": 200},
     "campaign": {"n": 200, "replicas": 5000, "x_grid": [0.25, 0.5]}}

Exit codes: 0 success, 2 config error, 3 runtime error, 4 verification failure.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from .disorder import FiniteSupport, Gaussian, PolymerShape, Rademacher, SeedSpec, ShiftedExponential, sample_field
from .errors import ConfigurationError, DomainError
from .ldp import DEFAULT_LAMBDA_GRID, free_energy_from_log_z, rate_function_estimate, rate_rows
from .parallel import DEFAULT_CHUNK, THREADS_ENV, map_replicas, resolve_threads
from .pinning import PinningModel, PinningParams, RenewalLaw
from .polymer import ClosedWindow, ExpTilt, One, OpenWindow, PolymerModel, PolymerParams, endpoint_distribution
from .verify import DEFAULT_T_GRID, DEFAULT_X_FRACTIONS, CampaignConfig, exact_conditional_check, run_campaign

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VERIFY = 4

MODEL_BLOCKS = ("pinning", "polymer")


class ConfigError(Exception):
    """Malformed configuration; the message names the offending field or line."""


# --------------------------------------------------------------------------
# config parsing
# --------------------------------------------------------------------------


def load_config_text(text: str, path: str = "<config>") -> Dict[str, Any]:
    if path.endswith(".toml"):
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _get(block: dict, key: str, where: str, default=..., kind=None):
    if key not in block:
        if default is ...:
            raise ConfigError(f"missing field '{where}.{key}'")
        return default
    value = block[key]
    if kind is not None:
        try:
            if kind is int and (isinstance(value, bool) or int(value) != value):
                raise ValueError
            value = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"field '{where}.{key}' must be {kind.__name__}, got {value!r}") from None
    return value


def _block(cfg: dict, key: str, where: str = "") -> dict:
    value = cfg.get(key)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"field '{where}{key}' must be a table/object")
    return value


def parse_law(block: dict, where: str):
    if not isinstance(block, dict):
        raise ConfigError(f"field '{where}' must be a table/object")
    kind = _get(block, "kind", where)
    centered = bool(block.get("centered", kind != "finite"))
    if kind == "gaussian":
        return Gaussian(_get(block, "sigma", where, 1.0, float), centered)
    if kind == "rademacher":
        return Rademacher(_get(block, "p", where, 0.5, float), centered)
    if kind == "shifted_exponential":
        return ShiftedExponential(_get(block, "rate", where, 1.0, float), centered)
    if kind == "finite":
        points = _get(block, "points", where)
        try:
            points = tuple((float(v), float(p)) for v, p in points)
        except (TypeError, ValueError):
            raise ConfigError(f"field '{where}.points' must be a list of [value, probability] pairs") from None
        return FiniteSupport(points, centered)
    raise ConfigError(f"field '{where}.kind': unknown law {kind!r}")


def parse_renewal(block, where: str) -> RenewalLaw:
    if not isinstance(block, dict) or len(block) != 1:
        raise ConfigError(f"field '{where}' must hold exactly one of geometric, explicit, srw_return")
    (kind, value), = block.items()
    if kind == "geometric":
        return RenewalLaw.geometric(float(value))
    if kind == "explicit":
        return RenewalLaw.explicit(value)
    if kind == "srw_return":
        return RenewalLaw.srw_return(
            _get(value, "dim", f"{where}.srw_return", kind=int), _get(value, "k_max", f"{where}.srw_return", kind=int)
        )
    raise ConfigError(f"field '{where}': unknown renewal kind {kind!r}")


def parse_window(block: dict, where: str, d: int):
    """``{x, eps, mode: closed|open}``; a boolean ``closed`` or ``open`` key is also accepted."""
    if not isinstance(block, dict):
        raise ConfigError(f"field '{where}' must be a table/object")
    x = _get(block, "x", where)
    eps = _get(block, "eps", where, kind=float)
    if "closed" in block or "open" in block:
        closed = bool(block["closed"]) if "closed" in block else not bool(block["open"])
    else:
        mode = block.get("mode", "closed")
        if mode not in ("closed", "open"):
            raise ConfigError(f"field '{where}.mode' must be 'closed' or 'open', got {mode!r}")
        closed = mode == "closed"
    x = tuple(float(v) for v in np.atleast_1d(x))
    if len(x) != d:
        raise ConfigError(f"field '{where}.x' must have {d} coordinates")
    return x, eps, closed


@dataclass(frozen=True)
class FixedWeights:
    weights: tuple

    def __call__(self, n: int) -> list:
        return list(self.weights)


@dataclass(frozen=True)
class ScaledTilt:
    """Exponential tilt centred at ``n x`` for horizon ``n``."""

    lam: float
    x: tuple

    def __call__(self, n: int) -> list:
        return [ExpTilt(self.lam, tuple(n * v for v in self.x))]


def parse_weight(block, where: str, d: int):
    """Return ``weight_fn(n) -> [EndpointWeight]`` and a label, or ``(None, None)``."""
    if block is None:
        return None, None
    if block == "one" or block == {"one": {}}:
        return FixedWeights((One(),)), "one"
    if not isinstance(block, dict) or len(block) != 1:
        raise ConfigError(f"field '{where}' must hold exactly one of one, exp_tilt, window")
    (kind, value), = block.items()
    if kind == "exp_tilt":
        here = f"{where}.exp_tilt"
        if not isinstance(value, dict):
            raise ConfigError(f"field '{here}' must be a table/object")
        lam = _get(value, "lambda" if "lambda" in value else "lam", here, kind=float)
        # "center" is a fixed real point x_n; "x" is a point of B_d scaled by n
        key = "center" if "center" in value else "x"
        point = tuple(float(v) for v in np.atleast_1d(_get(value, key, here)))
        if len(point) != d:
            raise ConfigError(f"field '{here}.{key}' must have {d} coordinates")
        try:
            ExpTilt(lam, point)
        except ConfigurationError as exc:
            raise ConfigError(f"{here}: {exc}") from exc
        if key == "center":
            return FixedWeights((ExpTilt(lam, point),)), "exp_tilt"
        return ScaledTilt(lam, point), "exp_tilt"
    if kind == "window":
        x, eps, closed = parse_window(value, f"{where}.window", d)
        try:
            w = (ClosedWindow if closed else OpenWindow)(x, eps)
        except (ConfigurationError, DomainError) as exc:
            raise ConfigError(f"{where}.window: {exc}") from exc
        return FixedWeights((w,)), "window"
    raise ConfigError(f"field '{where}': unknown weight kind {kind!r}")


@dataclass
class RunConfig:
    raw: bytes
    data: dict
    model_kind: str
    model: Any
    seed: SeedSpec
    threads: Optional[int]
    chunk_size: int
    n_list: List[int]
    replicas: int
    weight_fn: Any = None
    weight_label: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)


def parse_config(raw: bytes, path: str = "<config>", seed_override: Optional[int] = None) -> RunConfig:
    try:
        data = load_config_text(raw.decode("utf-8"), path)
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 text: {exc}") from exc
    present = [k for k in MODEL_BLOCKS if k in data]
    if len(present) != 1:
        raise ConfigError(f"config must contain exactly one model block ({' or '.join(MODEL_BLOCKS)}), found {present}")
    kind = present[0]
    block = _block(data, kind)
    try:
        law = parse_law(_get(block, "law", kind), f"{kind}.law")
        beta = _get(block, "beta", kind, kind=float)
        if kind == "pinning":
            renewal = parse_renewal(_get(block, "q", kind), f"{kind}.q")
            model = PinningModel(law, renewal, PinningParams(beta, _get(block, "h", kind, 0.0, float)))
            weight_fn, label = None, None
        else:
            d = _get(block, "d", kind, 1, int)
            model = PolymerModel(law, beta, d)
            weight_fn, label = parse_weight(block.get("weight"), f"{kind}.weight", d)
        model.check()
        seed_value = seed_override if seed_override is not None else _get(data, "seed", "config", 0, int)
        seed = SeedSpec(seed_value)
        n_list = [int(n) for n in block.get("n_list", [])]
        replicas = _get(block, "replicas", kind, 100, int)
    except (ConfigurationError, DomainError) as exc:
        raise ConfigError(f"{kind}: {exc}") from exc
    threads = data.get("threads")
    return RunConfig(
        raw, data, kind, model, seed,
        None if threads is None else int(threads),
        _get(data, "chunk_size", "config", DEFAULT_CHUNK, int),
        n_list, replicas, weight_fn, label,
    )


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------


def _f17(v) -> str:
    return format(float(v), ".17g")


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


class OutputWriter:
    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: Dict[str, str] = {}
        out_dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str) -> None:
        data = text.encode("utf-8")
        (self.out_dir / name).write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def manifest(self, cfg: RunConfig, command: str, threads: int, tasks: dict, started: float) -> None:
        manifest = {
            "command": command,
            "config_sha256": hashlib.sha256(cfg.raw).hexdigest(),
            "master_seed": cfg.seed.master_seed,
            "version": __version__,
            "outputs": dict(self.files),
            "threads": threads,
            "tasks": tasks,
            "wall_clock_seconds": time.perf_counter() - started,
        }
        (self.out_dir / "manifest.json").write_text(dump_json(manifest))


def _replica_log_z(model, n_list, seed, weight_fn, replicas):
    if weight_fn is None:
        return model.log_partitions(n_list, seed, replicas)
    return model.log_partitions(n_list, seed, replicas, weight_fn=weight_fn)


def replica_csv(n_list, log_z, log_y=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replica", "n", "log_z"] + (["log_y"] if log_y is not None else []))
    for r in range(log_z.shape[0]):
        for k, n in enumerate(n_list):
            row = [r, n, _f17(log_z[r, k])]
            if log_y is not None:
                row.append(_f17(log_y[r, k, 0]))
            w.writerow(row)
    return buf.getvalue()


def endpoint_csv(dist: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = len(next(iter(dist)))
    w.writerow([f"y{i + 1}" for i in range(d)] + ["probability"])
    for site in sorted(dist):
        w.writerow(list(site) + [_f17(dist[site])])
    return buf.getvalue()


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _tasks(replicas: int, chunk: int) -> dict:
    return {"replicas": replicas, "chunks": -(-replicas // chunk)}


def cmd_run(cfg: RunConfig, out: OutputWriter, threads: int, expected: str) -> int:
    if cfg.model_kind != expected:
        raise ConfigError(f"{expected}-run needs a '{expected}' model block, found '{cfg.model_kind}'")
    if not cfg.n_list:
        raise ConfigError(f"missing field '{expected}.n_list'")
    if cfg.replicas < 2:
        raise ConfigError(f"field '{expected}.replicas' must be >= 2")
    parts = map_replicas(
        partial(_replica_log_z, cfg.model, cfg.n_list, cfg.seed, cfg.weight_fn),
        range(cfg.replicas), threads, cfg.chunk_size,
    )
    log_y = None
    if cfg.weight_fn is None:
        log_z = np.concatenate(parts)
    else:
        log_z = np.concatenate([p[0] for p in parts])
        log_y = np.concatenate([p[1] for p in parts])
    try:
        fe = free_energy_from_log_z(cfg.n_list, log_z)
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from exc
    out.write("replicas.csv", replica_csv(cfg.n_list, log_z, log_y))
    summary = {"model": cfg.model_kind, "free_energy": fe.to_dict()}
    if cfg.weight_label is not None:
        summary["weight"] = cfg.weight_label
    out.write("free_energy.json", dump_json(summary))

    endpoint = _block(cfg.data, "endpoint")
    if endpoint:
        if cfg.model_kind != "polymer":
            raise ConfigError("field 'endpoint' is only available for the polymer model")
        n = _get(endpoint, "n", "endpoint", kind=int)
        replica = _get(endpoint, "replica", "endpoint", 0, int)
        fld = sample_field(cfg.model.law, PolymerShape(cfg.model.d, n), cfg.seed, replica)
        dist = endpoint_distribution(fld, PolymerParams(cfg.model.beta, cfg.model.d, n))
        out.write("endpoint.csv", endpoint_csv(dist))
    return EXIT_OK


def _campaign_config(cfg: RunConfig, block: dict) -> CampaignConfig:
    try:
        return CampaignConfig(
            model=cfg.model,
            n=_get(block, "n", "campaign", kind=int),
            replicas=_get(block, "replicas", "campaign", kind=int),
            seed=cfg.seed,
            x_grid=block.get("x_grid"),
            x_fractions=tuple(block.get("x_fractions", DEFAULT_X_FRACTIONS)),
            t_grid=tuple(block.get("t_grid", DEFAULT_T_GRID)),
            holdout=_get(block, "holdout", "campaign", 0.25, float),
            confidence=_get(block, "confidence", "campaign", 0.99, float),
            bound_divisor=_get(block, "bound_divisor", "campaign", 1.0, float),
            chunk_size=cfg.chunk_size,
        )
    except ConfigurationError as exc:
        raise ConfigError(f"campaign: {exc}") from exc


def cmd_verify(cfg: RunConfig, out: OutputWriter, threads: int) -> int:
    campaign = _block(cfg.data, "campaign")
    exact = _block(cfg.data, "exact_check")
    if not campaign and not exact:
        raise ConfigError("verify needs a 'campaign' and/or an 'exact_check' block")
    ok = True
    tasks = {}
    if campaign:
        cc = _campaign_config(cfg, campaign)
        report = run_campaign(cc, threads)
        if not report.recheck():
            raise RuntimeError("campaign report failed its own recomputation")
        out.write("campaign.json", dump_json(report.to_dict()))
        out.write("campaign_tails.csv", report.tail_csv())
        ok &= report.all_pass
        tasks["campaign"] = _tasks(cc.replicas, cc.chunk_size)
    if exact:
        ns = exact.get("n", [])
        ns = [int(v) for v in np.atleast_1d(ns)]
        if not ns:
            raise ConfigError("missing field 'exact_check.n'")
        reports = []
        for n in ns:
            try:
                reports.append(exact_conditional_check(cfg.model, n))
            except (ConfigurationError, DomainError) as exc:
                raise ConfigError(f"exact_check: {exc}") from exc
        out.write("exact_check.json", dump_json({"reports": [r.to_dict() for r in reports],
                                                  "all_ok": all(r.ok for r in reports)}))
        ok &= all(r.ok for r in reports)
        tasks["exact_check"] = {"instances": len(reports), "configurations": sum(r.configurations for r in reports)}
    cfg.extra["tasks"] = tasks
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_rate(cfg: RunConfig, out: OutputWriter, threads: int) -> int:
    if cfg.model_kind != "polymer":
        raise ConfigError("rate needs a 'polymer' model block")
    block = _block(cfg.data, "rate")
    if not block:
        raise ConfigError("missing block 'rate'")
    d = cfg.model.d
    x = np.atleast_1d(np.asarray(_get(block, "x", "rate"), dtype=float))
    windows = [parse_window(w, f"rate.windows[{i}]", d) for i, w in enumerate(block.get("windows", []))]
    n_list = block.get("n_list", cfg.n_list)
    replicas = _get(block, "replicas", "rate", cfg.replicas, int)
    try:
        point = rate_function_estimate(
            cfg.model, x, n_list, replicas, cfg.seed,
            lambda_grid=block.get("lambda_grid", DEFAULT_LAMBDA_GRID),
            windows=windows, threads=threads, chunk_size=cfg.chunk_size,
        )
    except (ConfigurationError, DomainError) as exc:
        raise ConfigError(f"rate: {exc}") from exc
    out.write("rate.json", dump_json(point.to_dict()))
    out.write("rate_rows.csv", rate_rows(point))
    cfg.extra["tasks"] = _tasks(replicas, cfg.chunk_size)
    return EXIT_OK


SELF_TEST_CONFIG = {
    "seed": 20240601,
    "polymer": {"law": {"kind": "gaussian"}, "beta": 0.5, "d": 1, "n_list": [8, 16], "replicas": 8},
    "campaign": {"n": 20, "replicas": 200, "x_grid": [0.1, 0.2, 0.4], "t_grid": [0.5, 1.0]},
}


def cmd_self_test(out: OutputWriter, threads: int, force_failure: bool, started: float) -> int:
    """Desk-scale oracle checks plus a small campaign; ``force_failure`` shrinks every bound by 1e10."""
    from .pinning import log_partition as pin_dp, log_partition_bruteforce as pin_bf
    from .polymer import log_partition as pol_dp, log_partition_bruteforce as pol_bf
    from .disorder import PinningShape

    checks = {}
    seed = SeedSpec(SELF_TEST_CONFIG["seed"])
    pin = PinningModel(Rademacher(), RenewalLaw.geometric(0.5), PinningParams(0.5, 0.1))
    fld = sample_field(pin.law, PinningShape(10), seed, 0)
    checks["pinning_bruteforce"] = abs(pin_dp(fld, pin.renewal, pin.params).log_z - pin_bf(fld, pin.renewal, pin.params).log_z) <= 1e-10
    pfld = sample_field(Gaussian(), PolymerShape(1, 8), seed, 0)
    pp = PolymerParams(0.5, 1, 8)
    checks["polymer_bruteforce"] = abs(pol_dp(pfld, pp).log_z - pol_bf(pfld, pp).log_z) <= 1e-10
    checks["exact_lemma"] = exact_conditional_check(PolymerModel(Rademacher(), 0.5, 1), 3).ok

    data = json.loads(json.dumps(SELF_TEST_CONFIG))
    if force_failure:
        data["campaign"]["bound_divisor"] = 1e10
    cfg = parse_config(json.dumps(data).encode(), "self-test.json")
    report = run_campaign(_campaign_config(cfg, data["campaign"]), threads)
    checks["campaign"] = report.all_pass and report.recheck()
    out.write("self_test.json", dump_json({"checks": checks, "forced_failure": force_failure}))
    out.write("campaign_tails.csv", report.tail_csv())
    out.manifest(cfg, "self-test", threads, _tasks(report.replicas, cfg.chunk_size), started)
    return EXIT_OK if all(checks.values()) else EXIT_VERIFY


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="disorder-lab", description="Quenched pinning and directed polymer experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("pinning-run", "polymer-run", "verify", "rate", "self-test"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=name != "self-test", help="JSON or TOML config file")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--threads", type=int, help=f"worker processes (default ${THREADS_ENV} or all cores)")
        sp.add_argument("--out", default="out", help="output directory")
        if name == "self-test":
            sp.add_argument("--force-failure", action="store_true", help="divide every bound by 1e10")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    out = OutputWriter(Path(args.out))
    try:
        if args.command == "self-test":
            threads = resolve_threads(args.threads if args.threads is not None else (1 if THREADS_ENV not in os.environ else None))
            return cmd_self_test(out, threads, args.force_failure, started)
        try:
            raw = Path(args.config).read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        cfg = parse_config(raw, args.config, args.seed)
        threads = args.threads
        if threads is None and THREADS_ENV not in os.environ:
            threads = cfg.threads
        threads = resolve_threads(threads)
        if args.command == "pinning-run":
            code = cmd_run(cfg, out, threads, "pinning")
        elif args.command == "polymer-run":
            code = cmd_run(cfg, out, threads, "polymer")
        elif args.command == "verify":
            code = cmd_verify(cfg, out, threads)
        else:
            code = cmd_rate(cfg, out, threads)
        tasks = cfg.extra.get("tasks") or _tasks(cfg.replicas, cfg.chunk_size)
        out.manifest(cfg, args.command, threads, tasks, started)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit code
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
