"""Mixed-datatype factor analysis.

Gaussian blocks use exact EM; binomial and multinomial blocks use a quadratic
variational bound on the logistic/softmax likelihood, fitted by conditional
maximization (xi -> alpha -> loadings -> means). The latent posterior stays
Gaussian for any mix of block kinds, so one E-step serves them all.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, gammaln, log_expit

from .data import CovariateBlock, Dataset

logger = logging.getLogger(__name__)

HEYWOOD_REL_THRESHOLD = 1e-8
PSI_FLOOR = 1e-12
XI_LIMIT = 1e-8


@dataclass(frozen=True)
class BlockParams:
    """Loadings W (d_x x d_z), means mu (d_x), and noise diagonal psi (normal blocks)."""

    W: np.ndarray
    mu: np.ndarray
    psi: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "W", np.asarray(self.W, dtype=float))
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float).ravel())
        if self.psi is not None:
            psi = np.asarray(self.psi, dtype=float).ravel()
            if np.any(psi <= 0):
                raise ValueError("psi entries must be positive")
            object.__setattr__(self, "psi", psi)

    @property
    def d_x(self) -> int:
        return self.W.shape[0]

    @property
    def d_z(self) -> int:
        return self.W.shape[1]


@dataclass(frozen=True)
class VariationalState:
    """Per-feature, per-sample xi (stored as the non-negative root) and, for
    multinomial blocks, the per-sample constraint parameter alpha."""

    xi: np.ndarray
    alpha: np.ndarray | None = None

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        if np.any(xi < 0):
            raise ValueError("xi must be non-negative")
        object.__setattr__(self, "xi", xi)
        if self.alpha is not None:
            object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float).ravel())


@dataclass(frozen=True)
class LatentPosterior:
    """Per-sample posterior mean (d_z x N) and covariance stack (N x d_z x d_z)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))

    @property
    def n_samples(self) -> int:
        return self.mean.shape[1]

    def second_moments(self) -> np.ndarray:
        """E[z z^T | x] per sample: cov_n + mean_n mean_n^T, shape (N, d_z, d_z)."""
        m = self.mean
        return self.cov + np.einsum("jn,kn->njk", m, m)

    def sum_second_moments(self) -> np.ndarray:
        return self.cov.sum(axis=0) + self.mean @ self.mean.T


@dataclass(frozen=True)
class FaModel:
    d_z: int
    block_params: tuple[BlockParams, ...]
    variational: tuple[VariationalState | None, ...]
    heywood_flag: bool = False

    def __post_init__(self):
        if self.d_z < 1:
            raise ValueError("d_z must be >= 1")
        object.__setattr__(self, "block_params", tuple(self.block_params))
        object.__setattr__(self, "variational", tuple(self.variational))


def lambda_of_xi(xi):
    """(sigma(xi) - 1/2) / (2 xi), with the analytic limit 1/8 at xi = 0."""
    xi = np.asarray(xi, dtype=float)
    out = np.full(xi.shape, 0.125)
    big = np.abs(xi) > XI_LIMIT
    out[big] = (expit(xi[big]) - 0.5) / (2.0 * xi[big])
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# per-block quadratic contributions to the latent posterior
# ---------------------------------------------------------------------------

def _centered_counts(block: CovariateBlock, params: BlockParams,
                     state: VariationalState) -> tuple[np.ndarray, np.ndarray]:
    """lam (d_x x N) and the centering term x - b/2 - 2 b lam * (mu [- alpha])."""
    lam = lambda_of_xi(state.xi)
    offset = params.mu[:, None]
    if block.kind == "multinomial":
        offset = offset - state.alpha[None, :]
    c = block.values - block.b / 2.0 - 2.0 * block.b * lam * offset
    return lam, c


def _block_quadratic(block: CovariateBlock, params: BlockParams,
                     state: VariationalState | None):
    """Precision contribution (either (d_z,d_z) shared or (N,d_z,d_z)) and
    linear contribution h (d_z x N) of one block's (bounded) likelihood."""
    W = params.W
    if block.kind == "normal":
        Wp = W / params.psi[:, None]
        prec = W.T @ Wp
        h = Wp.T @ (block.values - params.mu[:, None])
        return prec, h
    lam, c = _centered_counts(block, params, state)
    prec = 2.0 * block.b * np.einsum("in,ij,ik->njk", lam, W, W)
    h = W.T @ c
    return prec, h


def _posterior_from_quadratic(prec_total, h, d_z: int) -> LatentPosterior:
    N = h.shape[1]
    if prec_total.ndim == 2:
        C = np.linalg.inv(prec_total)
        C = 0.5 * (C + C.T)
        return LatentPosterior(mean=C @ h, cov=np.broadcast_to(C, (N, d_z, d_z)).copy())
    C = np.linalg.inv(prec_total)
    C = 0.5 * (C + np.transpose(C, (0, 2, 1)))
    mean = np.einsum("njk,kn->jn", C, h)
    return LatentPosterior(mean=mean, cov=C)


def gaussian_estep(params: BlockParams, X: np.ndarray) -> LatentPosterior:
    """Exact posterior for a single normal block."""
    d_z = params.d_z
    Wp = params.W / params.psi[:, None]
    prec = params.W.T @ Wp + np.eye(d_z)
    h = Wp.T @ (np.asarray(X, dtype=float) - params.mu[:, None])
    return _posterior_from_quadratic(prec, h, d_z)


def gaussian_mstep(X: np.ndarray, posterior: LatentPosterior,
                   psi_floor: np.ndarray | float = PSI_FLOOR) -> BlockParams:
    """Closed-form update: means, then loadings, then noise diagonal."""
    X = np.asarray(X, dtype=float)
    N = X.shape[1]
    if N <= posterior.mean.shape[0]:
        raise ValueError("need N > d_z")
    mu = X.mean(axis=1)
    Xc = X - mu[:, None]
    S_xz = Xc @ posterior.mean.T
    S_zz = posterior.sum_second_moments()
    W = np.linalg.solve(S_zz.T, S_xz.T).T
    psi = (np.einsum("ij,ij->i", Xc, Xc) - np.einsum("ij,ij->i", W, S_xz)) / N
    floor = np.broadcast_to(np.asarray(psi_floor, dtype=float), psi.shape)
    psi = np.maximum(psi, floor)
    return BlockParams(W=W, mu=mu, psi=psi)


def binomial_estep(params: BlockParams, state: VariationalState,
                   X: np.ndarray, b: int = 1) -> LatentPosterior:
    block = CovariateBlock(name="_", kind="binomial", b=b, values=X,
                           feature_names=[f"f{i}" for i in range(np.shape(X)[0])])
    prec, h = _block_quadratic(block, params, state)
    return _posterior_from_quadratic(prec + np.eye(params.d_z), h, params.d_z)


def multinomial_estep(params: BlockParams, state: VariationalState,
                      X: np.ndarray, b: int = 1) -> LatentPosterior:
    block = CovariateBlock(name="_", kind="multinomial", b=b, values=X,
                           feature_names=[f"f{i}" for i in range(np.shape(X)[0])])
    prec, h = _block_quadratic(block, params, state)
    return _posterior_from_quadratic(prec + np.eye(params.d_z), h, params.d_z)


def diverse_estep(block_params, variational, blocks) -> LatentPosterior:
    """Joint posterior given all blocks; accumulates each block's quadratic terms."""
    d_z = block_params[0].d_z
    N = blocks[0].n_samples
    prec = np.broadcast_to(np.eye(d_z), (N, d_z, d_z)).copy()
    h = np.zeros((d_z, N))
    for block, params, state in zip(blocks, block_params, variational):
        p, hb = _block_quadratic(block, params, state)
        prec += p  # (d_z,d_z) broadcasts over samples
        h += hb
    return _posterior_from_quadratic(prec, h, d_z)


# ---------------------------------------------------------------------------
# conditional M-step updates for the variational blocks
# ---------------------------------------------------------------------------

def update_xi(params: BlockParams, posterior: LatentPosterior,
              alpha: np.ndarray | None = None) -> np.ndarray:
    """Optimal xi^2 = E[(W_i z + mu_i - alpha_n)^2]; returns the non-negative root."""
    W, mu = params.W, params.mu
    ezz = posterior.second_moments()
    quad = np.einsum("ij,njk,ik->in", W, ezz, W)
    offset = mu[:, None] if alpha is None else mu[:, None] - alpha[None, :]
    xi_sq = quad + 2.0 * (W @ posterior.mean) * offset + offset**2
    return np.sqrt(np.maximum(xi_sq, 0.0))


def update_alpha(params: BlockParams, posterior: LatentPosterior,
                 xi: np.ndarray) -> np.ndarray:
    lam = lambda_of_xi(xi)
    denom = lam.sum(axis=0)
    if np.any(denom <= 0):
        raise FloatingPointError("degenerate multinomial variational weights")
    d_x = params.d_x
    lin = params.W @ posterior.mean + params.mu[:, None]
    return ((lam * lin).sum(axis=0) - (1.0 - d_x / 2.0) / 2.0) / denom


def update_W(block_values: np.ndarray, b: int, params: BlockParams,
             posterior: LatentPosterior, xi: np.ndarray,
             alpha: np.ndarray | None = None) -> np.ndarray:
    """Per-feature d_z-dimensional solves via the Cholesky factor of the
    weighted second-moment accumulation."""
    lam = lambda_of_xi(xi)
    offset = params.mu[:, None] if alpha is None else params.mu[:, None] - alpha[None, :]
    c = block_values - b / 2.0 - 2.0 * b * lam * offset
    ezz = posterior.second_moments()
    M = 2.0 * b * np.einsum("in,njk->ijk", lam, ezz)
    r = c @ posterior.mean.T
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        logger.warning("semidefinite accumulation in loading update; adding ridge")
        M = M + 1e-10 * np.eye(params.d_z)
    return np.linalg.solve(M, r[:, :, None])[:, :, 0]


def update_mu(block_values: np.ndarray, b: int, W: np.ndarray,
              posterior: LatentPosterior, xi: np.ndarray,
              alpha: np.ndarray | None = None) -> np.ndarray:
    lam = lambda_of_xi(xi)
    lin = W @ posterior.mean
    if alpha is not None:
        lin = lin - alpha[None, :]
    num = (block_values - b / 2.0 - 2.0 * b * lam * lin).sum(axis=1)
    return num / (2.0 * b * lam.sum(axis=1))


def _zero_last_row(params: BlockParams) -> BlockParams:
    W = params.W.copy()
    mu = params.mu.copy()
    W[-1, :] = 0.0
    mu[-1] = 0.0
    return replace(params, W=W, mu=mu)


def binomial_mstep(params: BlockParams, posterior: LatentPosterior,
                   X: np.ndarray, b: int = 1,
                   refresh: bool = True) -> tuple[BlockParams, VariationalState]:
    """Conditional updates xi^2 -> W -> mu. With ``refresh`` the posterior is
    recomputed between updates so each one maximizes against the current
    posterior (and hence cannot decrease the marginal bound)."""
    X = np.asarray(X, dtype=float)
    xi = update_xi(params, posterior)
    state = VariationalState(xi=xi)
    if refresh:
        posterior = binomial_estep(params, state, X, b)
    W = update_W(X, b, params, posterior, xi)
    params = replace(params, W=W)
    if refresh:
        posterior = binomial_estep(params, state, X, b)
    mu = update_mu(X, b, W, posterior, xi)
    return replace(params, mu=mu), state


def multinomial_mstep(params: BlockParams, state: VariationalState,
                      posterior: LatentPosterior, X: np.ndarray, b: int = 1,
                      refresh: bool = True) -> tuple[BlockParams, VariationalState]:
    """Conditional updates xi^2 -> alpha -> W -> mu; the last row of W and mu
    is re-zeroed exactly. xi^2 conditions on the previous alpha, which is why
    the prior variational state is an argument here and not for binomial."""
    X = np.asarray(X, dtype=float)
    xi = update_xi(params, posterior, alpha=state.alpha)
    cur = VariationalState(xi=xi, alpha=state.alpha)
    if refresh:
        posterior = multinomial_estep(params, cur, X, b)
    alpha = update_alpha(params, posterior, xi)
    cur = VariationalState(xi=xi, alpha=alpha)
    if refresh:
        posterior = multinomial_estep(params, cur, X, b)
    W = update_W(X, b, params, posterior, xi, alpha=alpha)
    W[-1, :] = 0.0
    params = replace(params, W=W)
    if refresh:
        posterior = multinomial_estep(params, cur, X, b)
    mu = update_mu(X, b, W, posterior, xi, alpha=alpha)
    mu[-1] = 0.0
    return replace(params, mu=mu), cur


# ---------------------------------------------------------------------------
# objective, initialization, and the fitting loop
# ---------------------------------------------------------------------------

def _block_constant(block: CovariateBlock, params: BlockParams,
                    state: VariationalState | None) -> np.ndarray:
    """z-independent part of each sample's (bounded) log-likelihood, length N."""
    X = block.values
    if block.kind == "normal":
        d_x = block.d_x
        Xc = X - params.mu[:, None]
        quad = np.einsum("in,in->n", Xc, Xc / params.psi[:, None])
        return -0.5 * (d_x * math.log(2 * math.pi) + np.log(params.psi).sum() + quad)
    b = block.b
    xi = state.xi
    lam = lambda_of_xi(xi)
    if block.kind == "binomial":
        comb = gammaln(b + 1) - gammaln(X + 1) - gammaln(b - X + 1)
        offset = params.mu[:, None]
        extra = np.zeros(X.shape[1])
    else:
        comb = gammaln(b + 1) / block.d_x - gammaln(X + 1)
        offset = params.mu[:, None] - state.alpha[None, :]
        extra = -b * state.alpha
    per_feature = (comb + b * log_expit(xi)
                   - 0.5 * b * (offset + xi)
                   - b * lam * (offset**2 - xi**2)
                   + X * params.mu[:, None])
    return per_feature.sum(axis=0) + extra


def variational_log_marginal(block_params, variational, blocks) -> float:
    """Sum over blocks/samples of the exact Gaussian marginal log-density
    (normal blocks) and the analytically integrated variational lower bound
    (binomial/multinomial blocks)."""
    d_z = block_params[0].d_z
    N = blocks[0].n_samples
    prec = np.broadcast_to(np.eye(d_z), (N, d_z, d_z)).copy()
    h = np.zeros((d_z, N))
    const = np.zeros(N)
    for block, params, state in zip(blocks, block_params, variational):
        p, hb = _block_quadratic(block, params, state)
        prec += p
        h += hb
        const += _block_constant(block, params, state)
    sign, logdet = np.linalg.slogdet(prec)
    if np.any(sign <= 0):
        raise FloatingPointError("posterior precision not positive definite")
    C = np.linalg.inv(prec)
    quad = 0.5 * np.einsum("jn,njk,kn->n", h, C, h)
    return float((const + quad - 0.5 * logdet).sum())


def gaussian_log_likelihood(params: BlockParams, X: np.ndarray) -> float:
    """Exact marginal log-density of a normal block: N(mu, W W^T + Psi)."""
    X = np.asarray(X, dtype=float)
    d_x, N = X.shape
    cov = params.W @ params.W.T + np.diag(params.psi)
    Xc = X - params.mu[:, None]
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise FloatingPointError("marginal covariance not positive definite")
    sol = np.linalg.solve(cov, Xc)
    quad = np.einsum("in,in->", Xc, sol)
    return float(-0.5 * (N * (d_x * math.log(2 * math.pi) + logdet) + quad))


def fa_objective(model: FaModel, dataset: Dataset) -> float:
    """Tracked objective: exact log-likelihood for normal blocks, the
    variational lower bound for the others."""
    return variational_log_marginal(model.block_params, model.variational, dataset.blocks)


def ppca_init(X: np.ndarray, d_z: int) -> BlockParams:
    """Closed-form warm start from the singular value decomposition.

    The loading scale (squared singular values minus the noise estimate, no
    square root) is kept as stated; the warm start only needs the subspace.
    """
    X = np.asarray(X, dtype=float)
    d_x, N = X.shape
    if N < 2:
        raise ValueError("need at least two samples")
    mu = X.mean(axis=1)
    U, s, _ = np.linalg.svd(X - mu[:, None], full_matrices=False)
    s_sq = np.zeros(max(d_x, d_z))
    s_sq[: s.size] = s**2
    if d_x > d_z:
        sigma_sq = s_sq[d_z:d_x].sum() / (N * (d_x - d_z))
        sigma_sq = max(sigma_sq, 1e-12)
        # leading covariance eigenvalues minus the noise level; the same 1/N
        # scaling as sigma^2 so the warm start is on the data's scale
        scale = s_sq[:d_z] / N - sigma_sq
        if np.any(scale < 0):
            logger.warning("rank-deficient data: negative loading scale in warm start")
        W = U[:, :d_z] * scale[: min(d_z, U.shape[1])] if U.shape[1] >= d_z else None
        if W is None or U.shape[1] < d_z:
            W = np.zeros((d_x, d_z))
            k = U.shape[1]
            W[:, :k] = U[:, :k] * scale[:k]
        psi = np.full(d_x, sigma_sq)
    else:
        W = np.ones((d_x, d_z))
        sigma_sq = max(s_sq[d_x - 1] / N, 1e-12)
        psi = np.full(d_x, sigma_sq)
    return BlockParams(W=W, mu=mu, psi=psi)


def _init_block(block: CovariateBlock, d_z: int) -> tuple[BlockParams, VariationalState | None]:
    params = ppca_init(block.values, d_z)
    if block.kind == "normal":
        return params, None
    params = replace(params, psi=None)
    N = block.n_samples
    state = VariationalState(
        xi=np.ones((block.d_x, N)),
        alpha=np.ones(N) if block.kind == "multinomial" else None,
    )
    if block.kind == "multinomial":
        params = _zero_last_row(params)
    return params, state


def _heywood(block_params, blocks) -> bool:
    for params, block in zip(block_params, blocks):
        if params.psi is None:
            continue
        var = block.values.var(axis=1)
        # the M-step clamps psi at exactly this floor, so equality means the
        # unclamped estimate collapsed
        if np.any(params.psi <= np.maximum(HEYWOOD_REL_THRESHOLD * var, PSI_FLOOR)):
            return True
    return False


def fit_fa(dataset: Dataset, d_z: int, max_iters: int = 100,
           rel_tol: float = 1e-6) -> tuple[FaModel, LatentPosterior]:
    """Alternate the joint E-step with per-block conditional M-steps until the
    tracked objective stabilizes. The posterior is refreshed between the
    conditional update phases so each phase is monotone in the bound."""
    if d_z < 1:
        raise ValueError("d_z must be >= 1")
    blocks = dataset.blocks
    inits = [_init_block(block, d_z) for block in blocks]
    params = [p for p, _ in inits]
    states = [s for _, s in inits]
    has_var = any(s is not None for s in states)
    heywood = False
    prev_obj = None
    for _ in range(max_iters):
        post = diverse_estep(params, states, blocks)
        if has_var:
            # phase 1: variational xi (all non-normal blocks at once)
            for i, block in enumerate(blocks):
                if block.kind == "normal":
                    continue
                alpha = states[i].alpha if block.kind == "multinomial" else None
                states[i] = replace(states[i], xi=update_xi(params[i], post, alpha=alpha))
            post = diverse_estep(params, states, blocks)
            # phase 2: multinomial alpha
            if any(b.kind == "multinomial" for b in blocks):
                for i, block in enumerate(blocks):
                    if block.kind == "multinomial":
                        states[i] = replace(
                            states[i], alpha=update_alpha(params[i], post, states[i].xi))
                post = diverse_estep(params, states, blocks)
        # phase 3: loadings (and noise for normal blocks)
        for i, block in enumerate(blocks):
            if block.kind == "normal":
                floor = HEYWOOD_REL_THRESHOLD * block.values.var(axis=1)
                params[i] = gaussian_mstep(block.values, post,
                                           psi_floor=np.maximum(floor, PSI_FLOOR))
            else:
                W = update_W(block.values, block.b, params[i], post,
                             states[i].xi, alpha=states[i].alpha)
                if block.kind == "multinomial":
                    W[-1, :] = 0.0
                params[i] = replace(params[i], W=W)
        if has_var:
            post = diverse_estep(params, states, blocks)
            # phase 4: means for non-normal blocks (normal means are exact row means)
            for i, block in enumerate(blocks):
                if block.kind == "normal":
                    continue
                mu = update_mu(block.values, block.b, params[i].W, post,
                               states[i].xi, alpha=states[i].alpha)
                if block.kind == "multinomial":
                    mu[-1] = 0.0
                params[i] = replace(params[i], mu=mu)
        heywood = heywood or _heywood(params, blocks)
        obj = variational_log_marginal(params, states, blocks)
        if prev_obj is not None:
            denom = max(abs(prev_obj), 1.0)
            if abs(obj - prev_obj) / denom < rel_tol:
                prev_obj = obj
                break
        prev_obj = obj
    post = diverse_estep(params, states, blocks)
    model = FaModel(d_z=d_z, block_params=tuple(params),
                    variational=tuple(states), heywood_flag=heywood)
    return model, post
