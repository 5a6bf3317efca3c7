"""Structural causal models: representation, sampling, interventions and
counterfactual inference."""

from .expr import (
    Add,
    Categorical,
    Const,
    Gate,
    Gaussian,
    Linear,
    Mul,
    Noise,
    Parent,
    Table,
)
from .inference import (
    CounterfactualResult,
    LikelihoodEstimate,
    ParticleSet,
    abduct,
    counterfactual,
    log_likelihood,
    log_likelihood_estimate,
)
from .io import dumps, loads, scm_from_dict, scm_to_dict
from .model import EndogenousVar, ExogenousVar, Scm, sample
from .model import topo_order as _topo_order


def topo_order(scm):
    """Topological order of an Scm (or a sequence of EndogenousVar)."""
    if isinstance(scm, Scm):
        return list(scm.order)
    return _topo_order(list(scm))


def var(name, parents=(), mechanism=None, noise=None, dist=None):
    """Shorthand: build an (EndogenousVar, ExogenousVar) pair.

    The exogenous variable is named ``U_<name>`` unless ``noise`` is given
    and defaults to a degenerate Gaussian (no noise).
    """
    noise = noise or f"U_{name}"
    dist = dist if dist is not None else Gaussian(0.0, 0.0)
    mech = mechanism if mechanism is not None else Noise()
    return EndogenousVar(name, tuple(parents), mech, noise), ExogenousVar(noise, dist)


def build(*pairs, labels=None):
    """Assemble an Scm from ``var(...)`` pairs in declaration order."""
    endo = [p[0] for p in pairs]
    exo = [p[1] for p in pairs]
    return Scm(exo, endo, labels)


__all__ = [
    "Add", "Categorical", "Const", "Gate", "Gaussian", "Linear", "Mul", "Noise", "Parent",
    "Table", "CounterfactualResult", "LikelihoodEstimate", "ParticleSet", "abduct",
    "counterfactual", "log_likelihood", "log_likelihood_estimate", "dumps", "loads",
    "scm_from_dict", "scm_to_dict", "EndogenousVar", "ExogenousVar", "Scm", "sample",
    "topo_order", "var", "build",
]
