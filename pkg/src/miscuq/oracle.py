"""The model boundary: builtin analytic multi-fidelity models, an external
process protocol for real simulators, and a persistent evaluation cache.

Wire protocol for external oracles (newline-delimited JSON, UTF-8):

    request:  {"id": <int>, "fidelity": <int>, "params": [<real>...],
               "qois": ["<name>", ...]}
    response: {"id": <int>, "values": [<real>...]}
              or {"id": <int>, "error": "<message>"}

Requests arrive on the child's standard input, responses leave on standard
output, anything on standard error is treated as free-form logging.

The cache file is an append-only JSON-lines log; point coordinates and
values are stored as hex-encoded binary doubles so a cache hit is
bit-identical to the original evaluation.
"""

from __future__ import annotations

import json
import math
import queue
import select
import shlex
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "OracleError",
    "OracleProtocolError",
    "FidelitySpec",
    "EvalRequest",
    "EvalResult",
    "EvalCache",
    "point_key",
    "BeamAnalogModel",
    "builtin_model",
    "ExternalProcessModel",
    "CachedOracle",
]


class OracleError(Exception):
    """The backend could not serve a request batch."""


class OracleProtocolError(OracleError):
    """An external backend broke the line protocol; the batch is aborted."""


@dataclass(frozen=True)
class FidelitySpec:
    alpha: int
    cost_weight: float

    def __post_init__(self) -> None:
        if self.alpha < 1:
            raise ValueError(f"fidelity level must be >= 1, got {self.alpha}")
        if not self.cost_weight > 0.0:
            raise ValueError(f"cost weight must be positive, got {self.cost_weight}")


@dataclass(frozen=True)
class EvalRequest:
    id: int
    alpha: int
    params: tuple[float, ...]
    qois: tuple[str, ...]

    def to_wire(self) -> str:
        return json.dumps({"id": self.id, "fidelity": self.alpha,
                           "params": list(self.params), "qois": list(self.qois)})


@dataclass(frozen=True)
class EvalResult:
    values: tuple[float, ...] | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def point_key(v) -> tuple[str, ...]:
    """Canonical cache key: the exact binary image of the coordinates."""
    return tuple(float(x).hex() for x in v)


class EvalCache:
    """Map (fidelity, point, qoi) -> value, persisted as an append-only log."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._store: dict[tuple[int, tuple[str, ...], str], float] = {}
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                    key = (int(rec["alpha"]), tuple(rec["point"]), rec["qoi"])
                    self._store[key] = float.fromhex(rec["value"])
                except (ValueError, KeyError, TypeError) as exc:
                    raise OracleError(f"corrupt cache record at {self.path}:{lineno}: {exc}") from exc

    def get(self, alpha: int, key: tuple[str, ...], qoi: str) -> float | None:
        return self._store.get((alpha, key, qoi))

    def put_many(self, records) -> None:
        """records: iterable of (alpha, point key, qoi, value); appends to disk."""
        records = list(records)
        for alpha, key, qoi, value in records:
            self._store[(alpha, key, qoi)] = float(value)
        if self.path is not None and records:
            with open(self.path, "a", encoding="utf-8") as fh:
                for alpha, key, qoi, value in records:
                    fh.write(json.dumps({"alpha": alpha, "point": list(key), "qoi": qoi,
                                         "value": float(value).hex()}) + "\n")

    def __len__(self) -> int:
        return len(self._store)

    def count_by_alpha(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for alpha, _, _ in self._store:
            out[alpha] = out.get(alpha, 0) + 1
        return out

    def points_by_alpha(self) -> dict[int, set[tuple[str, ...]]]:
        out: dict[int, set[tuple[str, ...]]] = {}
        for alpha, key, _ in self._store:
            out.setdefault(alpha, set()).add(key)
        return out


class BeamAnalogModel:
    """Synthetic two-fidelity stand-in for an expensive thermomechanical code.

    Two inputs: an activation temperature ``T`` (nominal box [1130, 1450])
    and the log10 of a powder convection coefficient ``L`` (nominal box
    [-5, 0]).  Outputs are five "ridge displacements" u_1..u_5 and 120
    "residual strains" e_1..e_120:

        u_k = 0.1 k (1 + 0.3 tanh((T-1290)/160)) (1 + 0.15 (L+2.5)/2.5)
        e_j = (1.5 - 0.01 j) 1e-3 (1 + 0.2 tanh((T-1290)/160)
                                      + 0.1 sin(pi (L+2.5)/5))

    Fidelity alpha returns the exact value times a smooth multiplicative
    bias ``1 + delta_alpha cos(T/200) cos(L)`` with delta_1 = 0.05 and
    delta_2 = 0.05/36, so the bias shrinks by the same factor 36 by which
    the evaluation cost grows.  Every constant here is invented; the model
    exists to give the multi-fidelity machinery realistic structure, not to
    describe any physical process.

    The declared domain is the nominal box inflated by one box-width on each
    side; the closed forms stay tame there, which leaves headroom for
    surrogates rebuilt around data-informed (Gaussian) parameter ranges.
    """

    name = "beam-analog"
    dim = 2
    DISPLACEMENTS = 5
    STRAINS = 120
    BIAS = {1: 0.05, 2: 0.05 / 36.0}

    def __init__(self):
        self.fidelities = (FidelitySpec(1, 1.0), FidelitySpec(2, 36.0))
        self.domain = ((810.0, 1770.0), (-10.0, 5.0))
        self.qoi_names = tuple(f"u_{k}" for k in range(1, self.DISPLACEMENTS + 1)) + \
            tuple(f"e_{j}" for j in range(1, self.STRAINS + 1))

    def exact(self, v, qois) -> np.ndarray:
        t, logh = float(v[0]), float(v[1])
        s = math.tanh((t - 1290.0) / 160.0)
        out = np.empty(len(qois))
        for i, q in enumerate(qois):
            kind, _, num = q.partition("_")
            k = int(num)
            if kind == "u" and 1 <= k <= self.DISPLACEMENTS:
                out[i] = 0.1 * k * (1.0 + 0.3 * s) * (1.0 + 0.15 * (logh + 2.5) / 2.5)
            elif kind == "e" and 1 <= k <= self.STRAINS:
                out[i] = (1.5 - 0.01 * k) * 1e-3 * \
                    (1.0 + 0.2 * s + 0.1 * math.sin(math.pi * (logh + 2.5) / 5.0))
            else:
                raise OracleError(f"unknown QoI {q!r}")
        return out

    def evaluate(self, alpha: int, v, qois) -> tuple[float, ...]:
        if alpha not in self.BIAS:
            raise OracleError(f"unknown fidelity {alpha}")
        t, logh = float(v[0]), float(v[1])
        bias = 1.0 + self.BIAS[alpha] * math.cos(t / 200.0) * math.cos(logh)
        return tuple(self.exact(v, qois) * bias)

    def dispatch(self, requests) -> dict[int, EvalResult]:
        out = {}
        for req in requests:
            out[req.id] = EvalResult(values=self.evaluate(req.alpha, req.params, req.qois))
        return out

    def close(self) -> None:
        pass


_BUILTINS = {BeamAnalogModel.name: BeamAnalogModel}


def builtin_model(name: str):
    """Instantiate a registered builtin model by name."""
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise OracleError(f"unknown builtin model {name!r}; known: {sorted(_BUILTINS)}") from None


class _Lane:
    """One subprocess speaking the line protocol, strictly request/response."""

    def __init__(self, argv, cwd):
        self.proc = subprocess.Popen(
            argv, cwd=cwd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=None, bufsize=0)
        self._buf = b""

    def round_trip(self, request: EvalRequest, timeout: float) -> dict:
        try:
            self.proc.stdin.write((request.to_wire() + "\n").encode("utf-8"))
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise OracleProtocolError(
                f"oracle process died while receiving {request.to_wire()}: {exc}") from exc
        line = self._read_line(request, timeout)
        try:
            reply = json.loads(line)
        except ValueError as exc:
            raise OracleProtocolError(
                f"malformed oracle response {line!r} for {request.to_wire()}") from exc
        if not isinstance(reply, dict) or reply.get("id") != request.id:
            raise OracleProtocolError(
                f"oracle response id mismatch: sent {request.id}, got {reply!r}")
        return reply

    def _read_line(self, request: EvalRequest, timeout: float) -> str:
        fd = self.proc.stdout.fileno()
        import time
        deadline = time.monotonic() + timeout
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise OracleProtocolError(
                    f"oracle timed out after {timeout} s on {request.to_wire()}")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = self.proc.stdout.read(65536)
            if not chunk:
                code = self.proc.poll()
                raise OracleProtocolError(
                    f"oracle process exited (code {code}) before answering {request.to_wire()}")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8")

    def close(self) -> None:
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


class ExternalProcessModel:
    """Backend that evaluates points by talking to a user-supplied executable.

    ``command`` is a shell-style command line; ``lanes`` independent child
    processes are spawned lazily and work a shared request queue, so a batch
    of B points on L lanes takes about ceil(B/L) round trips.
    """

    def __init__(self, command: str, workdir: str | Path | None = None, *, dim: int,
                 fidelities, qoi_names=None, domain=None, lanes: int = 1,
                 timeout: float = 60.0):
        if lanes < 1:
            raise ValueError(f"lanes must be >= 1, got {lanes}")
        self.command = command
        self.workdir = str(workdir) if workdir is not None else None
        self.dim = int(dim)
        self.fidelities = tuple(sorted(fidelities, key=lambda f: f.alpha))
        self.qoi_names = tuple(qoi_names) if qoi_names is not None else None
        self.domain = tuple(domain) if domain is not None else None
        self.n_lanes = int(lanes)
        self.timeout = float(timeout)
        self._lanes: list[_Lane] = []

    def _ensure_lanes(self) -> None:
        if not self._lanes:
            argv = shlex.split(self.command)
            try:
                self._lanes = [_Lane(argv, self.workdir) for _ in range(self.n_lanes)]
            except OSError as exc:
                self.close()
                raise OracleError(f"cannot start oracle command {self.command!r}: {exc}") from exc

    def dispatch(self, requests) -> dict[int, EvalResult]:
        requests = list(requests)
        if not requests:
            return {}
        self._ensure_lanes()
        work: "queue.Queue[EvalRequest]" = queue.Queue()
        for req in requests:
            work.put(req)
        results: dict[int, EvalResult] = {}
        failures: list[BaseException] = []
        lock = threading.Lock()

        def run(lane: _Lane) -> None:
            while True:
                try:
                    req = work.get_nowait()
                except queue.Empty:
                    return
                try:
                    reply = lane.round_trip(req, self.timeout)
                except BaseException as exc:
                    with lock:
                        failures.append(exc)
                    return
                if "error" in reply:
                    res = EvalResult(error=str(reply["error"]))
                elif "values" in reply and isinstance(reply["values"], list):
                    vals = tuple(float(x) for x in reply["values"])
                    if len(vals) != len(req.qois):
                        with lock:
                            failures.append(OracleProtocolError(
                                f"oracle returned {len(vals)} values for {len(req.qois)} "
                                f"QoIs on {req.to_wire()}"))
                        return
                    res = EvalResult(values=vals)
                else:
                    with lock:
                        failures.append(OracleProtocolError(
                            f"oracle response {reply!r} has neither values nor error"))
                    return
                with lock:
                    results[req.id] = res

        threads = [threading.Thread(target=run, args=(lane,), daemon=True)
                   for lane in self._lanes[: max(1, min(self.n_lanes, len(requests)))]]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if failures:
            self.close()
            first = failures[0]
            if isinstance(first, OracleError):
                raise first
            raise OracleProtocolError(f"oracle dispatch failed: {first}") from first
        return results

    def close(self) -> None:
        for lane in self._lanes:
            lane.close()
        self._lanes = []

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class CachedOracle:
    """Front door for model evaluations: cache first, backend for misses.

    Results are returned in request order regardless of backend completion
    order; per-point backend failures are reported in that point's result
    without aborting the batch.  Failed points are never cached.
    """

    def __init__(self, backend, cache: EvalCache | None = None):
        self.backend = backend
        self.cache = cache if cache is not None else EvalCache()
        self.backend_points: dict[int, int] = {}
        self._fidelities = {f.alpha: f for f in backend.fidelities}
        costs = [f.cost_weight for f in sorted(backend.fidelities, key=lambda f: f.alpha)]
        if any(b <= a for a, b in zip(costs, costs[1:])):
            raise ValueError("cost weights must increase strictly with fidelity level")
        self._next_id = 0

    @property
    def fidelities(self):
        return self.backend.fidelities

    @property
    def qoi_names(self):
        return getattr(self.backend, "qoi_names", None)

    @property
    def dim(self) -> int:
        return self.backend.dim

    def cost_weight(self, alpha: int) -> float:
        return self._fidelities[alpha].cost_weight

    def _in_domain(self, v) -> bool:
        domain = getattr(self.backend, "domain", None)
        if domain is None:
            return True
        return all(lo <= x <= hi for x, (lo, hi) in zip(v, domain))

    def eval_batch(self, alpha: int, points, qois) -> list[EvalResult]:
        if alpha not in self._fidelities:
            raise OracleError(f"fidelity {alpha} is not registered "
                              f"(known: {sorted(self._fidelities)})")
        qois = tuple(qois)
        known = self.qoi_names
        if known is not None:
            missing = [q for q in qois if q not in known]
            if missing:
                raise OracleError(f"unknown QoIs {missing}")
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[None, :]
        keys = [point_key(p) for p in points]

        requests: list[EvalRequest] = []
        request_for_point: dict[int, EvalRequest] = {}
        errors: dict[int, str] = {}
        for i, (p, key) in enumerate(zip(points, keys)):
            if not self._in_domain(p):
                errors[i] = f"point {tuple(p)} outside the oracle domain"
                continue
            needed = tuple(q for q in qois if self.cache.get(alpha, key, q) is None)
            if needed:
                req = EvalRequest(self._next_id, alpha, tuple(float(x) for x in p), needed)
                self._next_id += 1
                requests.append(req)
                request_for_point[i] = req

        replies = self.backend.dispatch(requests) if requests else {}
        if requests:
            missing_ids = [r.id for r in requests if r.id not in replies]
            if missing_ids:
                raise OracleProtocolError(f"backend returned no answer for ids {missing_ids}")
            self.backend_points[alpha] = self.backend_points.get(alpha, 0) + len(requests)
            new_records = []
            for i, req in request_for_point.items():
                rep = replies[req.id]
                if rep.ok:
                    new_records.extend(
                        (alpha, keys[i], q, v) for q, v in zip(req.qois, rep.values))
                else:
                    errors[i] = rep.error
            self.cache.put_many(new_records)

        out: list[EvalResult] = []
        for i, key in enumerate(keys):
            if i in errors:
                out.append(EvalResult(error=errors[i]))
            else:
                out.append(EvalResult(values=tuple(self.cache.get(alpha, key, q) for q in qois)))
        return out

    def close(self) -> None:
        self.backend.close()
