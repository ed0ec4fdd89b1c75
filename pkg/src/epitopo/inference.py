"""Encoder-decoder inference of the infection matrix and SIR parameters.

Encoders map the observed daily new cases to an estimate ``Z_hat``:

* DTI embeds every node/pathogen series, compares embeddings by per-channel
  cosine similarity, fuses the channels and adds a learnable bias;
* FTI learns ``Z_hat`` entry by entry through a sigmoid.

The EFB decoder reconstructs the daily new cases from ``Z_hat`` and the
epidemic rates in one batched pass, teacher-forced on the observed history.
ESC is the sequential rollout of the same dynamics, kept as an oracle.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .epidemic import EpidemicDataset, mobility_from_infection
from .errors import (ConfigError, GammaOutOfRange, NonFiniteLoss,
                     ShapeMismatch, UnstableStep)
from .graphgen import DEFAULT_POPULATION

log = logging.getLogger(__name__)

MODELS = ("DTEF", "FTEF")
COSINE_EPS = 1e-12
INIT_BETA = 1.0
INIT_GAMMA = 1.0 / 7.0
# Infection-matrix logits start here (sigmoid ~ 1e-3): weak initial coupling.
# Starting at sigmoid(0) = 0.5 floods every node with imports and Adam spends
# its budget deflating all entries at the same pace before links separate.
INIT_COUPLING_LOGIT = -7.0


@dataclass
class TrainConfig:
    model: str = "DTEF"
    embedding_dim: int = 30
    channels: int = 5
    lr: float = 1e-2
    epochs: int = 2000
    rng_seed: int = 0
    use_ground_truth_params: bool = False
    fixed_beta: list | None = None
    fixed_gamma: list | None = None
    symmetrize: bool = True
    stop_window: int = 100
    stop_tol: float = 1e-7
    track_metrics: bool = True

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}", allowed=",".join(MODELS))
        for name in ("embedding_dim", "channels", "epochs"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        return self


# --- parameters ---------------------------------------------------------

@dataclass
class DTIParams:
    W_u: ad.Tensor
    b_u: ad.Tensor
    W_v: ad.Tensor
    b_v: ad.Tensor
    W_F: ad.Tensor
    Z_b: ad.Tensor
    zeta: ad.Tensor

    @classmethod
    def init(cls, n, T, z, c, rng):
        zc = z * c
        return cls(
            W_u=ad.tensor(rng.normal(0.0, 1.0 / math.sqrt(T), (zc, T))),
            b_u=ad.tensor(0.0),
            W_v=ad.tensor(rng.normal(0.0, 1.0 / math.sqrt(T), (zc, T))),
            b_v=ad.tensor(0.0),
            W_F=ad.tensor(rng.normal(0.0, 1.0 / math.sqrt(c), (1, c))),
            Z_b=ad.tensor(rng.normal(INIT_COUPLING_LOGIT, 0.1, (n, n))),
            zeta=ad.tensor(0.0),
        )


@dataclass
class FTIParams:
    W_z: ad.Tensor

    @classmethod
    def init(cls, n, rng):
        return cls(W_z=ad.tensor(rng.normal(INIT_COUPLING_LOGIT, 1.0 / math.sqrt(n), (n, n))))


@dataclass
class EpidemicParamsLearnable:
    """``beta_hat = exp(beta_raw)``, ``gamma_hat = sigmoid(gamma_raw)``, both (k, n)."""

    beta_raw: ad.Tensor
    gamma_raw: ad.Tensor

    @classmethod
    def init(cls, k, n, beta=INIT_BETA, gamma=INIT_GAMMA):
        return cls.from_values(np.full((k, n), beta), np.full((k, n), gamma), trainable=True)

    @classmethod
    def from_values(cls, beta, gamma, trainable=False):
        beta = np.asarray(beta, dtype=np.float64)
        gamma = np.asarray(gamma, dtype=np.float64)
        raw_g = np.log(gamma) - np.log1p(-gamma)
        make = ad.tensor if trainable else ad.constant
        return cls(beta_raw=make(np.log(beta)), gamma_raw=make(raw_g))

    def beta(self):
        return ad.exp(self.beta_raw)

    def gamma(self):
        return ad.sigmoid(self.gamma_raw)


def _params_of(obj):
    return [v for v in vars(obj).values() if isinstance(v, ad.Tensor) and v.requires_grad]


# --- encoders -----------------------------------------------------------

def _unit_diagonal(Z_offdiag, n):
    mask = 1.0 - np.eye(n)
    return Z_offdiag * mask + np.eye(n)


def dti_forward(delta_S, params: DTIParams, embedding_dim=30, channels=5, symmetrize=True):
    """Infer ``Z_hat`` (n, n) from the (n, k, T) daily new cases."""
    X = delta_S if isinstance(delta_S, ad.Tensor) else ad.constant(delta_S)
    if X.ndim != 3:
        raise ShapeMismatch("delta_S must be (n, k, T)", shape=X.shape)
    n, k, T = X.shape
    z, c = int(embedding_dim), int(channels)
    if params.W_u.shape != (z * c, T) or params.W_v.shape != (z * c, T):
        raise ShapeMismatch("embedding weights must be (z*c, T)",
                            W_u=params.W_u.shape, expected=(z * c, T))
    if params.W_F.shape != (1, c) or params.Z_b.shape != (n, n):
        raise ShapeMismatch("fusion weight or bias has the wrong shape",
                            W_F=params.W_F.shape, Z_b=params.Z_b.shape)

    def embed(W, b):
        E = ad.matmul(X, ad.transpose(W)) + b              # (n, k, z*c)
        E = ad.reshape(E, (n, k, z, c))
        return ad.transpose(E, (1, 3, 0, 2))               # (k, c, n, z)

    U = embed(params.W_u, params.b_u)
    V = embed(params.W_v, params.b_v)
    dots = ad.matmul(U, ad.transpose(V, (0, 1, 3, 2)))    # (k, c, n, n)
    nu = ad.l2_norm(U, axis=-1, keepdims=True)             # (k, c, n, 1)
    nv = ad.transpose(ad.l2_norm(V, axis=-1, keepdims=True), (0, 1, 3, 2))
    sim = dots / (nu * nv + COSINE_EPS)
    avg = ad.mean(sim, axis=0)                             # (c, n, n)
    fused = ad.reshape(ad.matmul(params.W_F, ad.reshape(avg, (c, n * n))), (n, n))
    Z = _unit_diagonal(ad.sigmoid(fused + params.Z_b), n)
    if symmetrize:
        s = ad.sigmoid(params.zeta)
        Z = s * Z + (1.0 - s) * ad.transpose(Z)
    return Z


def fti_forward(params: FTIParams):
    n = params.W_z.shape[0]
    return _unit_diagonal(ad.sigmoid(params.W_z), n)


# --- decoders -----------------------------------------------------------

def observed_states(delta_S, gamma_hat, S0=None, I0=None):
    """End-of-day susceptible and infected fractions rebuilt from observed cases.

    ``S_bar(t) = S0 - sum_{s<=t} dS(s)`` and
    ``I_hat(t) = (1-g)^(t+1) I0 + sum_{s<=t} (1-g)^(t-s) dS(s)``, both (n, k, T).
    ``efb_forward`` uses these one day earlier, as the state entering day t.
    """
    X = np.asarray(delta_S, dtype=np.float64)
    n, k, T = X.shape
    gamma_hat = gamma_hat if isinstance(gamma_hat, ad.Tensor) else ad.constant(gamma_hat)
    S0 = np.ones((n, k)) if S0 is None else np.asarray(S0, dtype=np.float64)
    I0 = np.zeros((n, k)) if I0 is None else np.asarray(I0, dtype=np.float64)
    S_bar = S0[..., None] - np.cumsum(X, axis=2)
    keep = 1.0 - ad.transpose(gamma_hat)
    shifted = np.concatenate([X[..., 1:], np.zeros((n, k, 1))], axis=2)
    I_hat = ad.linear_recurrence(keep, shifted, keep * I0 + X[..., 0])
    return S_bar, I_hat


def efb_forward(delta_S, Z_hat, beta_hat, gamma_hat, S0=None, I0=None, return_infected=False):
    """Batched teacher-forced reconstruction of the daily new cases.

    For day ``t`` the decoder uses the susceptible fraction and infected
    fraction *entering* that day, both rebuilt from the observed history::

        S_in(t) = S0 - sum_{s<t} dS(s)
        I_in(t) = (1-g)^t I0 + sum_{s<t} (1-g)^(t-1-s) dS(s)
        dS_hat(t) = S_in(t) * ((1 - exp(-b * I_in(t))) @ Z_hat)

    ``S0`` defaults to 1 and ``I0`` to 0 (the initial state is unobserved).
    ``beta_hat``/``gamma_hat`` are (k, n); arrays or tensors.
    """
    X = np.asarray(delta_S.data if isinstance(delta_S, ad.Tensor) else delta_S, dtype=np.float64)
    if X.ndim != 3:
        raise ShapeMismatch("delta_S must be (n, k, T)", shape=X.shape)
    n, k, T = X.shape
    Z_hat = Z_hat if isinstance(Z_hat, ad.Tensor) else ad.constant(Z_hat)
    beta_hat = beta_hat if isinstance(beta_hat, ad.Tensor) else ad.constant(beta_hat)
    gamma_hat = gamma_hat if isinstance(gamma_hat, ad.Tensor) else ad.constant(gamma_hat)
    if Z_hat.shape != (n, n) or beta_hat.shape != (k, n) or gamma_hat.shape != (k, n):
        raise ShapeMismatch("decoder inputs do not match delta_S",
                            Z=Z_hat.shape, beta=beta_hat.shape, gamma=gamma_hat.shape, data=X.shape)
    g = gamma_hat.data
    if np.any(g <= 0) or np.any(g >= 1):
        raise GammaOutOfRange("gamma_hat must lie strictly inside (0, 1)",
                              min=float(g.min()), max=float(g.max()))

    S0 = np.ones((n, k)) if S0 is None else np.asarray(S0, dtype=np.float64)
    I0 = np.zeros((n, k)) if I0 is None else np.asarray(I0, dtype=np.float64)
    S_in = S0[..., None] - (np.cumsum(X, axis=2) - X)              # (n, k, T)

    keep = ad.reshape(1.0 - ad.transpose(gamma_hat), (n, k))       # (n, k)
    I_in = ad.linear_recurrence(keep, X, I0)                        # (n, k, T)

    beta_nk = ad.reshape(ad.transpose(beta_hat), (n, k, 1))
    alpha = -ad.expm1(-(beta_nk * I_in))                         # (n, k, T)
    coupled = ad.matmul(ad.transpose(alpha, (1, 2, 0)), Z_hat)     # (k, T, n)
    out = ad.transpose(coupled, (2, 0, 1)) * S_in
    if return_infected:
        return out, I_in
    return out


def esc_forward(Z_hat, beta_hat, gamma_hat, S0, I0, T):
    """Sequential rollout of the same dynamics from an initial state.

    ``S0``/``I0`` are (n, k); returns (n, k, T). Works on tensors so it can be
    differentiated, although it is used here as a reference.
    """
    Z_hat = Z_hat if isinstance(Z_hat, ad.Tensor) else ad.constant(Z_hat)
    beta = ad.transpose(beta_hat if isinstance(beta_hat, ad.Tensor) else ad.constant(beta_hat))
    gamma = ad.transpose(gamma_hat if isinstance(gamma_hat, ad.Tensor) else ad.constant(gamma_hat))
    S = ad.constant(np.asarray(S0, dtype=np.float64))
    I = ad.constant(np.asarray(I0, dtype=np.float64))
    if S.shape != beta.shape or I.shape != beta.shape:
        raise ShapeMismatch("initial state must be (n, k)", S0=S.shape, beta=beta.shape)
    days = []
    for t in range(int(T)):
        alpha = -ad.expm1(-(beta * I))
        new = S * ad.matmul(ad.transpose(Z_hat), alpha)
        S = S - new
        I = I + new - I * gamma
        for name, X in (("S", S), ("I", I)):
            if X.data.min() < -1e-9 or X.data.max() > 1 + 1e-9:
                raise UnstableStep(f"compartment {name} left [0, 1]", day=t)
        days.append(new)
    return ad.stack(days, axis=2)


# --- loss ---------------------------------------------------------------

def loss_fn(delta_S_hat, delta_S, beta_hat, gamma_hat):
    """``(||dS_hat - dS||_2 + var(gamma) + var(beta)) / T``.

    Variances run across nodes for each pathogen and are summed over pathogens.
    """
    X = np.asarray(delta_S.data if isinstance(delta_S, ad.Tensor) else delta_S)
    if delta_S_hat.shape != X.shape:
        raise ShapeMismatch("prediction and data differ in shape",
                            prediction=delta_S_hat.shape, data=X.shape)
    T = X.shape[2]
    fit = ad.l2_norm(delta_S_hat - X)
    spread = ad.sum(ad.variance(gamma_hat, axis=1)) + ad.sum(ad.variance(beta_hat, axis=1))
    return (fit + spread) * (1.0 / T)


# --- training -----------------------------------------------------------

@dataclass
class TrainResult:
    Z_hat: np.ndarray
    A_hat: np.ndarray
    beta_hat: np.ndarray
    gamma_hat: np.ndarray
    loss_history: list
    metric_history: dict = field(default_factory=dict)
    epochs_run: int = 0
    duration_s: float = 0.0
    params: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def beta_summary(self):
        return self.beta_hat.mean(axis=1)

    @property
    def gamma_summary(self):
        return self.gamma_hat.mean(axis=1)


def recover_mobility(Z_hat, P):
    """``A_hat`` from an inferred ``Z_hat``: drop the unit diagonal, clamp, invert."""
    Z2 = np.array(Z_hat, dtype=np.float64)
    np.fill_diagonal(Z2, 0.0)
    np.maximum(Z2, 0.0, out=Z2)
    return mobility_from_infection(Z2, P)


class Model:
    """Learnable state of one DTEF or FTEF session."""

    def __init__(self, config: TrainConfig, n, k, T, truth=None):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.rng_seed)
        if config.model == "DTEF":
            self.encoder = DTIParams.init(n, T, config.embedding_dim, config.channels, rng)
        else:
            self.encoder = FTIParams.init(n, rng)
        if config.use_ground_truth_params:
            beta, gamma = _fixed_rates(config, truth, k)
            self.epi = EpidemicParamsLearnable.from_values(
                np.repeat(beta[:, None], n, axis=1), np.repeat(gamma[:, None], n, axis=1))
        else:
            self.epi = EpidemicParamsLearnable.init(k, n)

    def parameters(self):
        return _params_of(self.encoder) + _params_of(self.epi)

    def encode(self, delta_S):
        if self.config.model == "DTEF":
            return dti_forward(delta_S, self.encoder, self.config.embedding_dim,
                               self.config.channels, self.config.symmetrize)
        return fti_forward(self.encoder)

    def forward(self, delta_S):
        """Returns ``(loss, Z_hat, beta_hat, gamma_hat)`` as tensors."""
        Z = self.encode(delta_S)
        beta, gamma = self.epi.beta(), self.epi.gamma()
        pred = efb_forward(delta_S, Z, beta, gamma)
        return loss_fn(pred, delta_S, beta, gamma), Z, beta, gamma

    def state_dict(self):
        out = {f"encoder.{k}": v.data.copy() for k, v in vars(self.encoder).items()}
        out.update({f"epi.{k}": v.data.copy() for k, v in vars(self.epi).items()})
        return out


def _fixed_rates(config, truth, k):
    if config.fixed_beta is not None and config.fixed_gamma is not None:
        beta = np.broadcast_to(np.asarray(config.fixed_beta, dtype=float), (k,)).copy()
        gamma = np.broadcast_to(np.asarray(config.fixed_gamma, dtype=float), (k,)).copy()
    elif truth:
        beta = np.array([p.beta for p in truth])
        gamma = np.array([p.gamma for p in truth])
    else:
        raise ConfigError("ground-truth parameters requested but none are available")
    return beta, gamma


def train(dataset: EpidemicDataset, config: TrainConfig, on_epoch=None) -> TrainResult:
    """Fit the chosen model to ``dataset.delta_S`` with Adam.

    Stops after ``config.epochs`` epochs, or earlier once the best loss so far
    improved by less than ``stop_tol`` over the last ``stop_window`` epochs.
    """
    from . import metrics  # local import keeps module load light

    config.validate()
    X = np.asarray(dataset.delta_S, dtype=np.float64)
    n, k, T = X.shape
    net = dataset.network_truth
    P = net.P if net is not None else np.full(n, DEFAULT_POPULATION)
    model = Model(config, n, k, T, truth=dataset.params_truth)
    opt = ad.Adam(model.parameters(), lr=config.lr)

    truth_A = net.A if (net is not None and config.track_metrics) else None
    truth_binary = truth_A is not None and not net.weighted
    history = {name: [] for name in ("spectral", "pearson", "jaccard", "pr_auc", "sparsity")}
    losses, best_hist, best = [], [], math.inf
    start = time.perf_counter()

    for epoch in range(int(config.epochs)):
        opt.zero_grad()
        loss, Z, beta, gamma = model.forward(X)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteLoss("loss is not finite", epoch=epoch)
        loss.backward()
        opt.step()
        losses.append(value)

        if truth_A is not None:
            A_hat = recover_mobility(Z.data, P)
            history["spectral"].append(metrics.spectral_similarity(truth_A, A_hat))
            history["pearson"].append(metrics.pearson(truth_A, A_hat))
            history["jaccard"].append(metrics.jaccard(truth_A, A_hat))
            history["pr_auc"].append(metrics.pr_auc(net.binary(), A_hat) if truth_binary else None)
            history["sparsity"].append(metrics.sparsity_index(A_hat))
        if on_epoch is not None:
            on_epoch(epoch, value)

        # improvement of the best loss over the last window; a transient
        # spike in the raw loss does not count as a stall
        w = config.stop_window
        best = min(best, value)
        best_hist.append(best)
        if w and epoch >= w and best_hist[epoch - w] - best < config.stop_tol:
            log.info("early stop at epoch %d (loss %.3e)", epoch, value)
            break

    # final evaluation at the trained parameters
    _, Z, beta, gamma = model.forward(X)
    Z_hat = Z.data.copy()
    return TrainResult(
        Z_hat=Z_hat,
        A_hat=recover_mobility(Z_hat, P),
        beta_hat=beta.data.copy(),
        gamma_hat=gamma.data.copy(),
        loss_history=losses,
        metric_history=history if truth_A is not None else {},
        epochs_run=len(losses),
        duration_s=time.perf_counter() - start,
        params=model.state_dict(),
        config=asdict(config),
    )
