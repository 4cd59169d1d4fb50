"""Multi-index stochastic collocation surrogates.

A surrogate is a coefficient-weighted sum of tensor interpolants, one per
extended index [alpha, beta] with nonzero combination weight, all sharing
the same per-dimension knot families.  ``adapt`` grows the index set with
the greedy a-posteriori loop: probe every reduced-margin candidate, commit
the most profitable one, repeat until a stop criterion fires.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .interp import TensorInterpolant, build_grid
from .leja import SymmetricLeja, WeightedGaussianLeja
from .multiindex import ExtIndex, MultiIndexSet, combination_coefficients, reduced_margin
from .oracle import point_key

__all__ = [
    "BuildError",
    "SurrogateFormatError",
    "MiscSurrogate",
    "build",
    "AdaptStop",
    "AdaptState",
    "init_adapt",
    "adapt",
    "serialize",
    "deserialize",
]

log = logging.getLogger(__name__)

PROBE_COUNT = 64


class BuildError(Exception):
    """A required oracle evaluation failed; lists the missing points."""

    def __init__(self, failures):
        self.failures = tuple(failures)
        lines = "; ".join(f"alpha={a} v={tuple(p)}: {err}" for a, p, err in self.failures[:5])
        more = "" if len(self.failures) <= 5 else f" (+{len(self.failures) - 5} more)"
        super().__init__(f"{len(self.failures)} oracle evaluation(s) failed: {lines}{more}")


class SurrogateFormatError(ValueError):
    """Surrogate file is missing, corrupt, or has an incompatible layout."""


@dataclass
class MiscSurrogate:
    """Evaluable combination-technique surrogate over shared knot families."""

    index_set: MultiIndexSet
    coefficients: dict[ExtIndex, int]
    interpolants: dict[ExtIndex, TensorInterpolant]
    families: tuple
    qoi_names: tuple[str, ...]
    config_hash: str | None = None

    @property
    def dim(self) -> int:
        return len(self.families)

    @property
    def domain(self) -> tuple[tuple[float, float], ...]:
        return tuple(f.domain for f in self.families)

    def evaluate_many(self, points) -> np.ndarray:
        """Weighted sum of the tensor interpolants at (S, dim) points."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[None, :]
        if points.shape[1] != self.dim:
            raise ValueError(f"points have dimension {points.shape[1]}, surrogate has {self.dim}")
        out = np.zeros((points.shape[0], len(self.qoi_names)))
        for entry, c in sorted(self.coefficients.items()):
            out += c * self.interpolants[entry].evaluate_many(points)
        return out

    def evaluate(self, v) -> np.ndarray:
        return self.evaluate_many(np.asarray(v, dtype=float)[None, :])[0]

    def extrapolation_mask(self, points) -> np.ndarray:
        """True per point when any coordinate leaves its family's domain."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[None, :]
        mask = np.zeros(points.shape[0], dtype=bool)
        for n, (lo, hi) in enumerate(self.domain):
            mask |= (points[:, n] < lo) | (points[:, n] > hi)
        return mask

    def evaluate_flagged(self, v):
        """(values, extrapolated) pair for a single point."""
        v = np.asarray(v, dtype=float)
        return self.evaluate(v), bool(self.extrapolation_mask(v[None, :])[0])


def build(index_set, oracle, families, qois, config_hash=None) -> MiscSurrogate:
    """Construct the surrogate for a downward-closed index set.

    Only entries with nonzero combination weight are evaluated; nested grids
    re-use cached points, so repeated builds cost no oracle calls.
    """
    index_set = index_set if isinstance(index_set, MultiIndexSet) else MultiIndexSet(index_set)
    families = tuple(families)
    qois = tuple(qois)
    coeffs = combination_coefficients(index_set)
    interpolants: dict[ExtIndex, TensorInterpolant] = {}
    failures = []
    for entry in sorted(coeffs):
        grid = build_grid(entry.beta, families)
        results = oracle.eval_batch(entry.alpha, grid.points, qois)
        bad = [(entry.alpha, p, r.error) for p, r in zip(grid.points, results) if not r.ok]
        if bad:
            failures.extend(bad)
            continue
        values = np.asarray([r.values for r in results])
        interpolants[entry] = TensorInterpolant(grid, values)
    if failures:
        raise BuildError(failures)
    return MiscSurrogate(index_set, coeffs, interpolants, families, qois, config_hash)


@dataclass(frozen=True)
class AdaptStop:
    """Stop criteria for the adaptive loop; any one firing ends the loop."""

    max_work: float | None = None
    max_candidates: int | None = None
    profit_floor: float = 1e-8  # relative to the surrogate's output range


@dataclass
class _Probe:
    entry: ExtIndex
    surrogate: MiscSurrogate
    delta_s: float
    delta_w: float

    @property
    def profit(self) -> float:
        return self.delta_s / self.delta_w


@dataclass
class AdaptState:
    """Mutable bookkeeping carried across adaptive iterations."""

    index_set: MultiIndexSet
    surrogate: MiscSurrogate
    families: tuple
    qois: tuple[str, ...]
    probe_points: np.ndarray
    charged: set = field(default_factory=set)
    work_spent: float = 0.0
    work_by_alpha: dict = field(default_factory=dict)
    committed: list = field(default_factory=list)  # (entry, profit) history
    skipped: list = field(default_factory=list)    # (entry, error) from the last pass
    config_hash: str | None = None

    def committed_points(self, alpha: int) -> set:
        """Union of grid point keys over entries of the set at one fidelity."""
        keys: set = set()
        for entry in self.index_set:
            if entry.alpha != alpha:
                continue
            for p in build_grid(entry.beta, self.families).points:
                keys.add(point_key(p))
        return keys


def _probe_grid(families, count: int) -> np.ndarray:
    """Deterministic low-discrepancy probe points spanning the family boxes."""
    dim = len(families)
    unit = qmc.Halton(d=dim, scramble=False).random(count)
    lo = np.array([f.probe_interval[0] for f in families])
    hi = np.array([f.probe_interval[1] for f in families])
    return lo + unit * (hi - lo)


def _charge(state: AdaptState, oracle, alpha: int, grid_points) -> None:
    """Add uncharged points to the work ledger.

    Charges are keyed by (fidelity, point) and never repeat, so the ledger
    is a function of the adaptive trajectory alone: replaying a run against
    a warm cache spends the same logical work and stops at the same place.
    """
    cost = oracle.cost_weight(alpha)
    for p in grid_points:
        key = (alpha, point_key(p))
        if key not in state.charged:
            state.charged.add(key)
            state.work_spent += cost
            state.work_by_alpha[alpha] = state.work_by_alpha.get(alpha, 0.0) + cost


def init_adapt(oracle, families, qois, *, probe_count: int = PROBE_COUNT,
               config_hash=None) -> AdaptState:
    """Fresh adaptive state at the minimal index set [1, (1, ..., 1)]."""
    families = tuple(families)
    qois = tuple(qois)
    index_set = MultiIndexSet([ExtIndex(1, (1,) * len(families))])
    surrogate = build(index_set, oracle, families, qois, config_hash)
    state = AdaptState(index_set, surrogate, families, qois,
                       _probe_grid(families, probe_count), config_hash=config_hash)
    for entry in index_set:
        _charge(state, oracle, entry.alpha, build_grid(entry.beta, families).points)
    return state


def _try_candidate(state: AdaptState, oracle, cand: ExtIndex,
                   base_values: np.ndarray) -> _Probe:
    grid = build_grid(cand.beta, state.families)
    results = oracle.eval_batch(cand.alpha, grid.points, state.qois)
    bad = [(cand.alpha, p, r.error) for p, r in zip(grid.points, results) if not r.ok]
    if bad:
        raise BuildError(bad)
    good_points = [p for p, r in zip(grid.points, results) if r.ok]
    _charge(state, oracle, cand.alpha, good_points)
    tentative_set = state.index_set.with_entry(cand)
    tentative = build(tentative_set, oracle, state.families, state.qois, state.config_hash)
    new_values = tentative.evaluate_many(state.probe_points)
    delta_s = float(np.abs(new_values - base_values).sum(axis=1).mean())
    fresh = {point_key(p) for p in grid.points} - state.committed_points(cand.alpha)
    delta_w = oracle.cost_weight(cand.alpha) * len(fresh)
    return _Probe(cand, tentative, delta_s, delta_w)


def adapt(state: AdaptState, oracle, stop: AdaptStop) -> AdaptState:
    """Run the greedy enlargement loop until a stop criterion fires.

    Each iteration probes every reduced-margin candidate (its evaluations go
    to the cache whether or not it is selected), computes the tentative
    enlarged surrogate, and commits the candidate with the highest profit
    ``|change at the probe points| / (cost-weighted new points)``.
    Candidates whose evaluations fail are skipped for the iteration.
    """
    while True:
        if stop.max_work is not None and state.work_spent >= stop.max_work:
            log.info("adapt stop: work %.3g >= budget %.3g", state.work_spent, stop.max_work)
            break
        if stop.max_candidates is not None and len(state.committed) >= stop.max_candidates:
            log.info("adapt stop: %d candidates committed", len(state.committed))
            break
        registered = {f.alpha for f in oracle.fidelities}
        margin = [c for c in reduced_margin(state.index_set) if c.alpha in registered]
        if not margin:
            log.info("adapt stop: empty reduced margin")
            break
        base_values = state.surrogate.evaluate_many(state.probe_points)
        probes: list[_Probe] = []
        state.skipped = []
        for cand in margin:
            try:
                probes.append(_try_candidate(state, oracle, cand, base_values))
            except BuildError as exc:
                state.skipped.append((cand, str(exc)))
                log.info("adapt: candidate %s unavailable (%s)", cand, exc)
        if not probes:
            log.info("adapt stop: no candidate available")
            break
        best = min(probes, key=lambda pr: (-pr.profit, pr.entry))
        span = float((base_values.max(axis=0) - base_values.min(axis=0)).sum())
        floor = stop.profit_floor * span
        if best.profit < floor or best.profit == 0.0:
            log.info("adapt stop: best profit %.3g below floor %.3g", best.profit, floor)
            break
        state.index_set = best.surrogate.index_set
        state.surrogate = best.surrogate
        state.committed.append((best.entry, best.profit))
        log.info("adapt: committed %s profit %.3g work %.3g",
                 best.entry, best.profit, state.work_spent)
    return state


_FORMAT = "misc-surrogate"
_VERSION = 1


def _family_to_json(f) -> dict:
    if isinstance(f, SymmetricLeja):
        return {"kind": "symmetric-leja", "lo": float(f.lo).hex(), "hi": float(f.hi).hex()}
    if isinstance(f, WeightedGaussianLeja):
        return {"kind": "gaussian-leja", "mean": float(f.mean).hex(), "std": float(f.std).hex()}
    raise SurrogateFormatError(f"cannot serialize knot family {f!r}")


def _family_from_json(d):
    try:
        kind = d["kind"]
        if kind == "symmetric-leja":
            return SymmetricLeja(float.fromhex(d["lo"]), float.fromhex(d["hi"]))
        if kind == "gaussian-leja":
            return WeightedGaussianLeja(float.fromhex(d["mean"]), float.fromhex(d["std"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise SurrogateFormatError(f"bad knot family record {d!r}: {exc}") from exc
    raise SurrogateFormatError(f"unknown knot family kind {kind!r}")


def serialize(surrogate: MiscSurrogate, path: str | Path) -> None:
    """Write a surrogate to a self-describing JSON container.

    Knot abscissas are not stored: family specs regenerate them
    bit-identically.  Grid values are hex-encoded doubles, so a round trip
    is bit-exact.
    """
    entries = []
    for entry in surrogate.index_set:
        rec = {"alpha": entry.alpha, "beta": list(entry.beta),
               "coeff": surrogate.coefficients.get(entry, 0)}
        if entry in surrogate.interpolants:
            itp = surrogate.interpolants[entry]
            rec["values"] = [v.hex() for v in itp.values.reshape(-1).tolist()]
        entries.append(rec)
    doc = {
        "format": _FORMAT,
        "version": _VERSION,
        "dim": surrogate.dim,
        "qois": list(surrogate.qoi_names),
        "families": [_family_to_json(f) for f in surrogate.families],
        "entries": entries,
        "config_hash": surrogate.config_hash,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
                          encoding="utf-8")


def deserialize(path: str | Path, expect_dim: int | None = None) -> MiscSurrogate:
    """Load a surrogate written by :func:`serialize`."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise SurrogateFormatError(f"corrupt surrogate file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != _FORMAT:
        raise SurrogateFormatError(f"{path} is not a surrogate container")
    if doc.get("version") != _VERSION:
        raise SurrogateFormatError(
            f"unsupported surrogate version {doc.get('version')!r} (expected {_VERSION})")
    try:
        dim = int(doc["dim"])
        qois = tuple(doc["qois"])
        families = tuple(_family_from_json(d) for d in doc["families"])
        raw_entries = doc["entries"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SurrogateFormatError(f"corrupt surrogate payload in {path}: {exc}") from exc
    if len(families) != dim:
        raise SurrogateFormatError(f"{path}: {len(families)} families for dim {dim}")
    if expect_dim is not None and dim != expect_dim:
        raise SurrogateFormatError(f"{path} has dimension {dim}, expected {expect_dim}")
    entries = []
    coeffs: dict[ExtIndex, int] = {}
    interpolants: dict[ExtIndex, TensorInterpolant] = {}
    try:
        for rec in raw_entries:
            entry = ExtIndex(int(rec["alpha"]), tuple(int(b) for b in rec["beta"]))
            entries.append(entry)
            c = int(rec["coeff"])
            if c != 0:
                coeffs[entry] = c
            if "values" in rec:
                grid = build_grid(entry.beta, families)
                flat = np.array([float.fromhex(h) for h in rec["values"]])
                if flat.size % len(grid) != 0:
                    raise SurrogateFormatError(
                        f"{path}: values length {flat.size} does not tile grid {len(grid)}")
                interpolants[entry] = TensorInterpolant(grid, flat.reshape(len(grid), -1))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SurrogateFormatError):
            raise
        raise SurrogateFormatError(f"corrupt surrogate payload in {path}: {exc}") from exc
    index_set = MultiIndexSet(entries, dim=dim)
    missing = [e for e in coeffs if e not in interpolants]
    if missing:
        raise SurrogateFormatError(f"{path}: missing grid values for {missing}")
    recomputed = combination_coefficients(index_set)
    if recomputed != coeffs:
        raise SurrogateFormatError(f"{path}: stored coefficients disagree with the index set")
    return MiscSurrogate(index_set, coeffs, interpolants, families, qois,
                         doc.get("config_hash"))
