"""Batch pipeline driver: build a surrogate over the prior, calibrate it
against observations, run the data-informed forward analysis, and report.

Exit codes: 0 success, 2 configuration error, 3 oracle error, 4 numerical
failure.  All output files carry the provenance hash of the effective
configuration; anything time-dependent goes to the log on stderr only, so
reruns with identical config and seeds are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import bayes, forward, misc
from .bayes import GaussianPosterior, ObservationSet
from .leja import SymmetricLeja, WeightedGaussianLeja
from .misc import AdaptStop
from .oracle import CachedOracle, EvalCache, ExternalProcessModel, FidelitySpec, OracleError, builtin_model
from .params import Gaussian, ParamSpace, ParamSpec, Uniform

__all__ = ["main", "load_config", "cmd_build", "cmd_calibrate", "cmd_forward", "cmd_report",
           "ConfigError", "NumericalError", "PipelineConfig"]

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ORACLE = 3
EXIT_NUMERICAL = 4

SURROGATE_FILE = "surrogate.json"
BUILD_REPORT_FILE = "build_report.json"
POSTERIOR_FILE = "posterior.json"
CALIBRATION_TABLE_FILE = "calibration_table.csv"
PRIOR_BANDS_FILE = "bands_prior.csv"
POST_BANDS_FILE = "bands_posterior.csv"
REDUCTION_FILE = "reduction.json"
REPORT_FILE = "report.txt"
REPORT_SUMMARY_FILE = "report_summary.csv"
CACHE_FILE = "cache.jsonl"
FORWARD_PRIOR_SURROGATE = "surrogate_forward_prior.json"
FORWARD_POST_SURROGATE = "surrogate_forward_posterior.json"


class ConfigError(Exception):
    """The configuration file is missing, malformed, or inconsistent."""


class NumericalError(Exception):
    """A numerical step produced an unusable result."""


def _config_hash(doc: dict) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"missing key {key!r} in {where}")
    return doc[key]


def _expand_qois(spec, where: str) -> tuple[str, ...]:
    """QoI lists are either explicit or {prefix, count[, start]} patterns."""
    if isinstance(spec, list):
        return tuple(str(q) for q in spec)
    if isinstance(spec, dict) and "prefix" in spec and "count" in spec:
        start = int(spec.get("start", 1))
        return tuple(f"{spec['prefix']}{i}" for i in range(start, start + int(spec["count"])))
    raise ConfigError(f"{where}: expected a QoI list or a prefix/count pattern, got {spec!r}")


def _parse_stop(doc, where: str) -> AdaptStop:
    if doc is None:
        return AdaptStop(max_work=50.0)
    known = {"max_work", "max_candidates", "profit_floor"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"{where}: unknown budget keys {sorted(extra)}")
    return AdaptStop(
        max_work=float(doc["max_work"]) if "max_work" in doc else None,
        max_candidates=int(doc["max_candidates"]) if "max_candidates" in doc else None,
        profit_floor=float(doc.get("profit_floor", AdaptStop.profit_floor)),
    )


def _parse_space(docs) -> ParamSpace:
    specs = []
    for i, doc in enumerate(docs):
        where = f"parameters[{i}]"
        name = str(_require(doc, "name", where))
        kind = str(_require(doc, "distribution", where)).lower()
        try:
            if kind == "uniform":
                dist = Uniform(float(_require(doc, "lo", where)), float(_require(doc, "hi", where)))
            elif kind == "gaussian":
                dist = Gaussian(float(_require(doc, "mean", where)), float(_require(doc, "std", where)))
            else:
                raise ConfigError(f"{where}: unknown distribution {kind!r}")
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
        specs.append(ParamSpec(name, dist, doc.get("transform")))
    try:
        return ParamSpace(specs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class PipelineConfig:
    seed: int
    out_dir: Path
    space: ParamSpace
    oracle_doc: dict
    lanes: int
    calibration_qois: tuple[str, ...]
    observations: Path | None
    n_starts: int
    build_stop: AdaptStop
    forward_qois: tuple[str, ...]
    forward_samples: int
    forward_stop: AdaptStop
    density_qois: tuple[str, ...]
    kde_bandwidth: float | None
    config_hash: str
    config_dir: Path

    def resolve(self, path: str | Path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.config_dir / path


def load_config(path: str | Path, *, seed=None, out=None, lanes=None) -> PipelineConfig:
    """Parse and validate the YAML pipeline configuration.

    ``seed``, ``out`` and ``lanes`` are command-line overrides; the
    provenance hash covers the effective (post-override) configuration.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    if seed is not None:
        doc["seed"] = int(seed)
    if out is not None:
        doc["output_dir"] = str(out)
    oracle_doc = dict(_require(doc, "oracle", "config"))
    if lanes is not None:
        oracle_doc["lanes"] = int(lanes)
    doc["oracle"] = oracle_doc
    if "builtin" not in oracle_doc and "command" not in oracle_doc:
        raise ConfigError("oracle: need either 'builtin: <name>' or 'command: <line>'")

    calib = _require(doc, "calibration", "config")
    fwd = _require(doc, "forward", "config")
    cfg = PipelineConfig(
        seed=int(_require(doc, "seed", "config")),
        out_dir=Path(str(_require(doc, "output_dir", "config"))),
        space=_parse_space(_require(doc, "parameters", "config")),
        oracle_doc=oracle_doc,
        lanes=int(oracle_doc.get("lanes", 1)),
        calibration_qois=_expand_qois(_require(calib, "qois", "calibration"), "calibration.qois"),
        observations=Path(str(calib["observations"])) if "observations" in calib else None,
        n_starts=int(calib.get("n_starts", 20)),
        build_stop=_parse_stop(calib.get("budget"), "calibration.budget"),
        forward_qois=_expand_qois(_require(fwd, "qois", "forward"), "forward.qois"),
        forward_samples=int(fwd.get("samples", forward.DEFAULT_SAMPLES)),
        forward_stop=_parse_stop(fwd.get("budget"), "forward.budget"),
        density_qois=tuple(fwd.get("densities", ())),
        kde_bandwidth=float(fwd["bandwidth"]) if "bandwidth" in fwd else None,
        config_hash="",
        config_dir=path.resolve().parent,
    )
    if cfg.forward_samples < 2:
        raise ConfigError(f"forward.samples must be >= 2, got {cfg.forward_samples}")
    unknown = [q for q in cfg.density_qois if q not in cfg.forward_qois]
    if unknown:
        raise ConfigError(f"forward.densities lists QoIs outside forward.qois: {unknown}")
    cfg.config_hash = _config_hash(doc)
    return cfg


def _make_oracle(cfg: PipelineConfig, cache_path: Path | None):
    doc = cfg.oracle_doc
    if "builtin" in doc:
        backend = builtin_model(str(doc["builtin"]))
        if backend.dim != cfg.space.dim:
            raise ConfigError(f"builtin model {backend.name!r} has dimension {backend.dim}, "
                              f"config declares {cfg.space.dim} parameters")
    else:
        fid_docs = doc.get("fidelities")
        if not fid_docs:
            raise ConfigError("oracle.command needs an explicit 'fidelities' list")
        try:
            fidelities = tuple(FidelitySpec(int(f["alpha"]), float(f["cost_weight"]))
                               for f in fid_docs)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad oracle.fidelities entry: {exc}") from exc
        domain = doc.get("domain")
        if domain is not None:
            domain = tuple((float(d["lo"]), float(d["hi"])) for d in domain)
        workdir = cfg.resolve(doc["workdir"]) if "workdir" in doc else None
        backend = ExternalProcessModel(
            str(doc["command"]), workdir, dim=cfg.space.dim, fidelities=fidelities,
            domain=domain, lanes=cfg.lanes, timeout=float(doc.get("timeout", 60.0)))
    cache = EvalCache(cache_path)
    return CachedOracle(backend, cache)


def _prior_families(space: ParamSpace):
    fams = []
    for spec in space.params:
        dist = spec.distribution
        if isinstance(dist, Uniform):
            fams.append(SymmetricLeja(dist.lo, dist.hi))
        else:
            fams.append(WeightedGaussianLeja(dist.mean, dist.std))
    return tuple(fams)


def _posterior_families(posterior: GaussianPosterior):
    stds = posterior.marginal_std()
    if np.any(stds <= 0.0):
        raise NumericalError("posterior has a zero-variance direction; "
                             "cannot place Gaussian knots")
    return tuple(WeightedGaussianLeja(float(m), float(s))
                 for m, s in zip(posterior.mean, stds))


def _stage_seed(base: int, stage: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=base, spawn_key=(stage,))


def _adaptive_surrogate(cfg, oracle, families, qois, stop):
    state = misc.init_adapt(oracle, families, qois, config_hash=cfg.config_hash)
    misc.adapt(state, oracle, stop)
    return state


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def cmd_build(cfg: PipelineConfig) -> dict:
    """Adaptive build of the calibration surrogate over the prior space."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    oracle = _make_oracle(cfg, cfg.out_dir / CACHE_FILE)
    try:
        state = _adaptive_surrogate(cfg, oracle, _prior_families(cfg.space),
                                    cfg.calibration_qois, cfg.build_stop)
        misc.serialize(state.surrogate, cfg.out_dir / SURROGATE_FILE)
        points_sets: dict[int, set] = {}
        for entry, itp in state.surrogate.interpolants.items():
            points_sets.setdefault(entry.alpha, set()).update(
                map(tuple, itp.grid.points.tolist()))
        points_by_alpha = {a: len(keys) for a, keys in sorted(points_sets.items())}
        # evaluation counts derive from the adaptive trajectory (charged
        # points x QoIs), not from the shared cache, so reruns against a
        # warm cache report identical numbers
        evals_by_alpha: dict[int, int] = {}
        for alpha, _ in state.charged:
            evals_by_alpha[alpha] = evals_by_alpha.get(alpha, 0) + len(cfg.calibration_qois)
        report = {
            "config_hash": cfg.config_hash,
            "qois": list(cfg.calibration_qois),
            "index_set": [{"alpha": e.alpha, "beta": list(e.beta),
                           "coeff": state.surrogate.coefficients.get(e, 0)}
                          for e in state.index_set],
            "committed": [{"alpha": e.alpha, "beta": list(e.beta), "profit": p}
                          for e, p in state.committed],
            "surrogate_points_by_fidelity": points_by_alpha,
            "work_spent": state.work_spent,
            "work_by_fidelity": {str(a): w for a, w in sorted(state.work_by_alpha.items())},
            "evaluations_by_fidelity": {str(a): n for a, n in sorted(evals_by_alpha.items())},
            "evaluations_total": sum(evals_by_alpha.values()),
        }
        _write_json(cfg.out_dir / BUILD_REPORT_FILE, report)
        log.info("build: %d entries, work %.1f, backend calls %s",
                 len(state.index_set), state.work_spent, oracle.backend_points)
        return {"report": report, "backend_points": dict(oracle.backend_points)}
    finally:
        oracle.close()


def _posterior_to_json(posterior: GaussianPosterior, cfg) -> dict:
    return {
        "config_hash": cfg.config_hash,
        "parameters": list(cfg.space.names),
        "mean": [float(x) for x in posterior.mean],
        "covariance": [float(x) for x in posterior.covariance.reshape(-1)],
        "sigma_meas": float(posterior.sigma_meas),
        "sigma_floored": posterior.sigma_floored,
        "warnings": list(posterior.warnings),
        "multistart": [
            {"start": list(r.start), "point": list(r.point), "misfit": r.misfit,
             "objective": r.objective, "iterations": r.iterations}
            for r in posterior.multistart
        ],
    }


def _posterior_from_json(doc: dict) -> GaussianPosterior:
    mean = np.asarray(doc["mean"], dtype=float)
    cov = np.asarray(doc["covariance"], dtype=float).reshape(mean.size, mean.size)
    return GaussianPosterior(mean, cov, float(doc["sigma_meas"]),
                             sigma_floored=bool(doc.get("sigma_floored", False)),
                             warnings=tuple(doc.get("warnings", ())))


def _prior_rows(space: ParamSpace):
    for spec in space.params:
        dist = spec.distribution
        if isinstance(dist, Uniform):
            mean, std = dist.center, dist.std
            lo, hi = dist.lo, dist.hi
        else:
            mean, std = dist.mean, dist.std
            lo, hi = dist.bounds()
        yield spec.name, mean, std, lo, hi


def cmd_calibrate(cfg: PipelineConfig) -> dict:
    """MAP + Laplace posterior from the built surrogate and observations."""
    if cfg.observations is None:
        raise ConfigError("calibration.observations is required for the calibrate step")
    obs_path = cfg.resolve(cfg.observations)
    if not obs_path.exists():
        raise ConfigError(f"observations file {obs_path} does not exist")
    surrogate_path = cfg.out_dir / SURROGATE_FILE
    if not surrogate_path.exists():
        raise ConfigError(f"surrogate file {surrogate_path} not found; run 'build' first")
    surrogate = misc.deserialize(surrogate_path, expect_dim=cfg.space.dim)
    try:
        obs = ObservationSet.from_csv(obs_path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    missing = [n for n in obs.names if n not in surrogate.qoi_names]
    if missing:
        raise ConfigError(f"observations reference QoIs missing from the surrogate: {missing}")

    posterior = bayes.calibrate(surrogate, obs, cfg.space, cfg.n_starts,
                                _stage_seed(cfg.seed, 1))
    if posterior.warnings:
        for w in posterior.warnings:
            log.warning("calibrate: %s", w)
    _write_json(cfg.out_dir / POSTERIOR_FILE, _posterior_to_json(posterior, cfg))

    stds = posterior.marginal_std()
    with open(cfg.out_dir / CALIBRATION_TABLE_FILE, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config {cfg.config_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stage", "parameter", "mean", "std", "cov", "interval_lo", "interval_hi"])
        for name, mean, std, lo, hi in _prior_rows(cfg.space):
            cv = std / abs(mean) if mean != 0.0 else math.inf
            writer.writerow(["prior", name] + [repr(float(x)) for x in (mean, std, cv, lo, hi)])
        for n, name in enumerate(cfg.space.names):
            mean, std = float(posterior.mean[n]), float(stds[n])
            cv = std / abs(mean) if mean != 0.0 else math.inf
            writer.writerow(["posterior", name] + [repr(float(x)) for x in
                                                   (mean, std, cv, mean - 3 * std, mean + 3 * std)])
    log.info("calibrate: MAP %s, sigma %.3g", np.round(posterior.mean, 6), posterior.sigma_meas)
    return {"posterior": posterior}


def cmd_forward(cfg: PipelineConfig) -> dict:
    """Prior- and posterior-based forward analyses for the prediction QoIs.

    The posterior push uses a surrogate rebuilt on Gaussian knots centered
    at the posterior marginals (the posterior usually overflows the prior
    box); the prior push uses knots on the original prior ranges.
    """
    posterior_path = cfg.out_dir / POSTERIOR_FILE
    if not posterior_path.exists():
        raise ConfigError(f"posterior file {posterior_path} not found; run 'calibrate' first")
    try:
        posterior = _posterior_from_json(json.loads(posterior_path.read_text(encoding="utf-8")))
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read posterior file {posterior_path}: {exc}") from exc

    oracle = _make_oracle(cfg, cfg.out_dir / CACHE_FILE)
    try:
        prior_state = _adaptive_surrogate(cfg, oracle, _prior_families(cfg.space),
                                          cfg.forward_qois, cfg.forward_stop)
        misc.serialize(prior_state.surrogate, cfg.out_dir / FORWARD_PRIOR_SURROGATE)
        post_state = _adaptive_surrogate(cfg, oracle, _posterior_families(posterior),
                                         cfg.forward_qois, cfg.forward_stop)
        misc.serialize(post_state.surrogate, cfg.out_dir / FORWARD_POST_SURROGATE)
        backend_points = dict(oracle.backend_points)
    finally:
        oracle.close()

    prior_push = forward.push_samples(prior_state.surrogate, cfg.space,
                                      cfg.forward_samples, _stage_seed(cfg.seed, 2))
    post_push = forward.push_samples(post_state.surrogate, posterior,
                                     cfg.forward_samples, _stage_seed(cfg.seed, 3))
    prior_bands = forward.summarize_bands(prior_push, cfg.kde_bandwidth)
    post_bands = forward.summarize_bands(post_push, cfg.kde_bandwidth)
    comment = f"config {cfg.config_hash}"
    forward.write_bands_csv(prior_bands, cfg.out_dir / PRIOR_BANDS_FILE, comment)
    forward.write_bands_csv(post_bands, cfg.out_dir / POST_BANDS_FILE, comment)

    try:
        reduction = forward.uncertainty_reduction(prior_bands, post_bands)
    except ValueError as exc:
        raise NumericalError(str(exc)) from exc
    _write_json(cfg.out_dir / REDUCTION_FILE, {
        "config_hash": cfg.config_hash,
        "reduction_percent": reduction,
        "prior_extrapolated_fraction": prior_push.extrapolated_fraction,
        "posterior_extrapolated_fraction": post_push.extrapolated_fraction,
        "samples": cfg.forward_samples,
    })

    if cfg.density_qois:
        ddir = cfg.out_dir / "densities"
        ddir.mkdir(exist_ok=True)
        for name in cfg.density_qois:
            j = cfg.forward_qois.index(name)
            for tag, push in (("prior", prior_push), ("posterior", post_push)):
                pdf = forward.kde(push.samples[:, j], cfg.kde_bandwidth)
                forward.write_density_csv(pdf, ddir / f"{name}_{tag}.csv", comment)

    if prior_push.extrapolated_fraction > 0 or post_push.extrapolated_fraction > 0:
        log.warning("forward: extrapolated sample fraction prior=%.3g posterior=%.3g",
                    prior_push.extrapolated_fraction, post_push.extrapolated_fraction)
    log.info("forward: reduction %.2f%%", reduction)
    return {"reduction": reduction, "prior_bands": prior_bands, "post_bands": post_bands,
            "backend_points": backend_points}


def cmd_report(cfg: PipelineConfig) -> dict:
    """Consolidate the build/calibrate/forward artifacts into one summary."""
    out = cfg.out_dir
    missing = [f for f in (BUILD_REPORT_FILE, POSTERIOR_FILE, REDUCTION_FILE)
               if not (out / f).exists()]
    if missing:
        raise ConfigError(f"cannot report: missing artifacts {missing} in {out}")
    build_report = json.loads((out / BUILD_REPORT_FILE).read_text(encoding="utf-8"))
    posterior_doc = json.loads((out / POSTERIOR_FILE).read_text(encoding="utf-8"))
    reduction_doc = json.loads((out / REDUCTION_FILE).read_text(encoding="utf-8"))

    rows = [("config_hash", cfg.config_hash),
            ("work_spent", build_report["work_spent"]),
            ("evaluations_total", build_report["evaluations_total"])]
    for a, n in sorted(build_report["surrogate_points_by_fidelity"].items()):
        rows.append((f"surrogate_points_alpha_{a}", n))
    for name, m in zip(posterior_doc["parameters"], posterior_doc["mean"]):
        rows.append((f"posterior_mean_{name}", m))
    cov = np.asarray(posterior_doc["covariance"]).reshape(len(posterior_doc["mean"]), -1)
    for i, name in enumerate(posterior_doc["parameters"]):
        rows.append((f"posterior_std_{name}", math.sqrt(max(cov[i, i], 0.0))))
    rows.append(("sigma_meas", posterior_doc["sigma_meas"]))
    rows.append(("reduction_percent", reduction_doc["reduction_percent"]))
    rows.append(("prior_extrapolated_fraction", reduction_doc["prior_extrapolated_fraction"]))
    rows.append(("posterior_extrapolated_fraction",
                 reduction_doc["posterior_extrapolated_fraction"]))

    lines = [f"# pipeline summary (config {cfg.config_hash})"]
    lines += [f"{k}: {v}" for k, v in rows]
    (out / REPORT_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")
    with open(out / REPORT_SUMMARY_FILE, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config {cfg.config_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "value"])
        writer.writerows(rows)
    return {"rows": rows}


_COMMANDS = {"build": cmd_build, "calibrate": cmd_calibrate,
             "forward": cmd_forward, "report": cmd_report}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="miscuq",
                                     description="Multi-fidelity surrogate UQ pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0].lower())
        p.add_argument("--config", required=True, help="pipeline configuration file (YAML)")
        p.add_argument("--out", help="override the configured output directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--lanes", type=int, help="override oracle concurrency")
        p.add_argument("--quiet", action="store_true", help="only log warnings")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr,
                        level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, lanes=args.lanes)
        _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (OracleError, misc.BuildError) as exc:
        log.error("oracle error: %s", exc)
        return EXIT_ORACLE
    except (NumericalError, np.linalg.LinAlgError, misc.SurrogateFormatError,
            bayes.CalibrationError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
