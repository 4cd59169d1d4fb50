"""Shared test backends and small utilities."""

import math

from miscuq.leja import SymmetricLeja
from miscuq.misc import AdaptStop, adapt, init_adapt
from miscuq.oracle import CachedOracle, EvalResult, FidelitySpec
from miscuq.params import ParamSpace, ParamSpec, Uniform


class RidgeGaugeModel:
    """Synthetic backend with five independent responses; unlike the beam
    model's displacements (which are mutually proportional, hence rank-1 as
    an observation map), these jointly identify both parameters."""

    dim = 2
    qoi_names = tuple(f"y_{k}" for k in range(5))
    fidelities = (FidelitySpec(1, 1.0),)
    domain = None

    def dispatch(self, requests):
        out = {}
        for req in requests:
            x, y = req.params
            values = tuple(
                math.sin((0.8 + 0.15 * k) * x + 0.2 * k)
                + 0.6 * math.sin((1.1 + 0.1 * k) * y + 0.5 + 0.1 * k)
                for k in (int(q.split("_")[1]) for q in req.qois))
            out[req.id] = EvalResult(values=values)
        return out

    def close(self):
        pass


def ridge_surrogate(max_work=60.0):
    oracle = CachedOracle(RidgeGaugeModel())
    families = (SymmetricLeja(-1.0, 1.0), SymmetricLeja(-1.0, 1.0))
    state = init_adapt(oracle, families, RidgeGaugeModel.qoi_names)
    adapt(state, oracle, AdaptStop(max_work=max_work))
    return state.surrogate


def box_space(bounds):
    return ParamSpace(ParamSpec(f"v{i}", Uniform(lo, hi)) for i, (lo, hi) in enumerate(bounds))
