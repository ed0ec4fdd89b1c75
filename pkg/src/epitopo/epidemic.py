"""Deterministic multi-pathogen metapopulation SIR dynamics.

Each pathogen runs an independent SIR process on the same mobility network.
Nodes couple through the infection matrix ``Z``: the per-node infection
rate vector ``alpha`` (a row vector) becomes ``alpha @ Z``, so ``Z[i, j]``
is how strongly infection at node ``i`` drives new cases at node ``j``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (BetaExceedsPopulation, InvalidSpec, NegativeEntry,
                     SeedOutOfRange, UnstableStep)
from .graphgen import MobilityNetwork

log = logging.getLogger(__name__)

DEFAULT_T = 150
DEFAULT_INDEX_CASES = 10
BETA_MEAN, BETA_SD = 1.1, 0.1
INV_GAMMA_MEAN, INV_GAMMA_SD = 7.5, 0.75
_TOL = 1e-9


@dataclass(frozen=True)
class PathogenParams:
    beta: float
    gamma: float
    seed_node: int
    seed_fraction: float

    def validate(self, n):
        if not self.beta > 0:
            raise InvalidSpec("beta must be positive", beta=self.beta)
        if not 0 <= self.gamma <= 1:
            raise InvalidSpec("gamma must lie in [0, 1]", gamma=self.gamma)
        if not 0 <= self.seed_node < n:
            raise SeedOutOfRange("seed node outside the network", seed_node=self.seed_node, n=n)
        if not 0 < self.seed_fraction < 1:
            raise InvalidSpec("seed_fraction must lie in (0, 1)", seed_fraction=self.seed_fraction)


@dataclass
class EpidemicDataset:
    """Daily new-case fractions ``delta_S`` with shape (n, k, T)."""

    delta_S: np.ndarray
    params_truth: list
    network_truth: MobilityNetwork | None = None
    traces: dict | None = None
    graph_spec: dict = field(default_factory=dict)
    use_approx: bool = True

    @property
    def shape(self):
        return self.delta_S.shape

    @property
    def n(self):
        return self.delta_S.shape[0]

    @property
    def k(self):
        return self.delta_S.shape[1]

    @property
    def T(self):
        return self.delta_S.shape[2]

    def initial_state(self):
        """(S0, I0), each (n, k), as used by the simulator."""
        S0 = np.ones((self.n, self.k))
        I0 = np.zeros((self.n, self.k))
        for l, p in enumerate(self.params_truth):
            S0[p.seed_node, l] -= p.seed_fraction
            I0[p.seed_node, l] = p.seed_fraction
        return S0, I0

    def susceptible_at_end(self):
        """Fraction still susceptible after the last day, (n, k)."""
        S0, _ = self.initial_state()
        return S0 - self.delta_S.sum(axis=2)


# --- infection matrix ---------------------------------------------------

def infection_matrix(net: MobilityNetwork) -> np.ndarray:
    """``Z[i, j] = rowsum(A)_i * A[i, j] * P[j] / (A[i, :] @ P)`` off the diagonal, 1 on it."""
    A = np.asarray(net.A, dtype=np.float64)
    P = np.asarray(net.P, dtype=np.float64)
    row = A.sum(axis=1)
    flow = A @ P
    isolated = row == 0
    if np.any(isolated):
        warnings.warn(f"{int(isolated.sum())} node(s) receive no travellers; "
                      "their Z rows are identity rows", stacklevel=2)
    safe = np.where(isolated, 1.0, flow)
    Z = (row / safe)[:, None] * A * P[None, :]
    Z[isolated] = 0.0
    np.fill_diagonal(Z, 1.0)
    return Z


def mobility_from_infection(Z, P) -> np.ndarray:
    """Invert ``infection_matrix`` given populations; identity rows map to zero rows."""
    Z2 = np.array(Z, dtype=np.float64)
    np.fill_diagonal(Z2, 0.0)
    if np.any(Z2 < 0):
        raise NegativeEntry("Z - I has negative entries", min=float(Z2.min()))
    P = np.asarray(P, dtype=np.float64)
    row = Z2.sum(axis=1)
    scaled = (Z2 / P[None, :]).sum(axis=1)
    empty = scaled == 0
    ratio = np.where(empty, 0.0, row / np.where(empty, 1.0, scaled))
    return Z2 * ratio[:, None] / P[None, :]


# --- per-day infection rate --------------------------------------------

def infection_rate_exact(I, P, beta):
    """``1 - (1 - beta / P) ** (I * P)``."""
    I = np.asarray(I, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta >= np.min(P)):
        raise BetaExceedsPopulation("beta must be smaller than every population",
                                    beta=float(np.max(beta)), min_population=float(np.min(P)))
    return -np.expm1(I * P * np.log1p(-beta / P))


def infection_rate_approx(I, beta):
    """``1 - exp(-beta * I)``, the large-population limit of the exact rate."""
    return -np.expm1(-np.asarray(beta, dtype=np.float64) * np.asarray(I, dtype=np.float64))


# --- simulation ---------------------------------------------------------

def simulate(net: MobilityNetwork, pathogens, T: int = DEFAULT_T,
             use_approx: bool = True, keep_traces: bool = True,
             graph_spec: dict | None = None) -> EpidemicDataset:
    """Run every pathogen for ``T`` days; ``delta_S[:, l, t] = S(t) - S(t + 1)``."""
    if T < 2:
        raise InvalidSpec("T must be at least 2", T=T)
    pathogens = list(pathogens)
    if not pathogens:
        raise InvalidSpec("at least one pathogen is required")
    n, k = net.n, len(pathogens)
    for p in pathogens:
        p.validate(n)

    Z = infection_matrix(net)
    P = net.P
    beta = np.array([p.beta for p in pathogens])
    gamma = np.array([p.gamma for p in pathogens])

    S = np.ones((n, k))
    I = np.zeros((n, k))
    R = np.zeros((n, k))
    for l, p in enumerate(pathogens):
        S[p.seed_node, l] -= p.seed_fraction
        I[p.seed_node, l] = p.seed_fraction

    delta_S = np.empty((n, k, T))
    if keep_traces:
        traces = {c: np.empty((n, k, T + 1)) for c in "SIR"}
        traces["S"][..., 0], traces["I"][..., 0], traces["R"][..., 0] = S, I, R

    for t in range(T):
        if use_approx:
            alpha = infection_rate_approx(I, beta[None, :])
        else:
            alpha = infection_rate_exact(I, P[:, None], beta[None, :])
        new = S * (Z.T @ alpha)
        recovered = I * gamma[None, :]
        S = S - new
        I = I + new - recovered
        R = R + recovered
        for name, X in (("S", S), ("I", I), ("R", R)):
            if X.min() < -_TOL or X.max() > 1 + _TOL:
                raise UnstableStep(f"compartment {name} left [0, 1]", day=t,
                                   min=float(X.min()), max=float(X.max()))
        np.maximum(S, 0.0, out=S)
        delta_S[..., t] = new
        if keep_traces:
            traces["S"][..., t + 1], traces["I"][..., t + 1], traces["R"][..., t + 1] = S, I, R

    ds = EpidemicDataset(delta_S=delta_S, params_truth=pathogens, network_truth=net,
                         traces=traces if keep_traces else None,
                         graph_spec=dict(graph_spec or {}), use_approx=use_approx)
    left = ds.susceptible_at_end()
    log.debug("simulated n=%d k=%d T=%d; min susceptible at end %.4f", n, k, T, left.min())
    return ds


def sample_seed_nodes(net: MobilityNetwork, k: int, rng_seed) -> np.ndarray:
    """``k`` independent draws, each node weighted by its degree."""
    if k < 1:
        raise InvalidSpec("k must be at least 1", k=k)
    deg = net.degree().astype(np.float64)
    if deg.sum() == 0:
        deg = np.ones_like(deg)
    rng = np.random.default_rng(rng_seed)
    return rng.choice(net.n, size=k, p=deg / deg.sum())


def _positive_normal(rng, mean, sd):
    while True:
        x = rng.normal(mean, sd)
        if x > 0:
            return float(x)


def sample_pathogens(net: MobilityNetwork, k: int, rng_seed, seed_fraction=None,
                     beta_mean=BETA_MEAN, beta_sd=BETA_SD,
                     inv_gamma_mean=INV_GAMMA_MEAN, inv_gamma_sd=INV_GAMMA_SD):
    """Draw ``k`` pathogens: degree-weighted seed nodes, beta and 1/gamma from truncated normals.

    ``seed_fraction`` defaults to ten index cases at the seed node.
    """
    rng = np.random.default_rng(rng_seed)
    seeds = sample_seed_nodes(net, k, rng)
    out = []
    for node in seeds:
        beta = _positive_normal(rng, beta_mean, beta_sd)
        inv_gamma = 0.0
        while inv_gamma <= 1.0:
            inv_gamma = _positive_normal(rng, inv_gamma_mean, inv_gamma_sd)
        frac = seed_fraction if seed_fraction is not None else DEFAULT_INDEX_CASES / net.P[node]
        out.append(PathogenParams(beta=beta, gamma=1.0 / inv_gamma,
                                  seed_node=int(node), seed_fraction=float(frac)))
    return out
