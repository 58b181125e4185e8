"""Joint latent-factor plus exponential-hazards model.

The marginal likelihood is intractable once the survival terms enter, so the
E-step draws from each individual's conditional latent distribution with a
random-walk Metropolis sampler (proposal covariance kappa * C_n from the
factor-only posterior). M-steps reuse the factor-analysis conditional updates
with Monte-Carlo moments, plus one Newton-Raphson step for each hazard.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import factor
from .data import Dataset
from .factor import FaModel, LatentPosterior, VariationalState
from .hazard import HazardParams, fit_ecph

logger = logging.getLogger(__name__)

DEFAULT_KAPPA_LADDER = (6.0, 5.5, 5.0, 4.5, 4.0, 3.5, 3.0, 2.5, 2.0, 1.5, 1.0, 0.5, 0.25, 0.1)


@dataclass(frozen=True)
class MhConfig:
    kappa_ladder: tuple[float, ...] = DEFAULT_KAPPA_LADDER
    burn_in: int = 300
    n_keep: int = 300
    tuning_chains: int = 2
    accept_lo: float = 0.134
    accept_hi: float = 0.334
    min_n_eff: float = 10.0
    max_rhat: float = 1.2
    retune_each_iteration: bool = False

    def __post_init__(self):
        ladder = tuple(float(k) for k in self.kappa_ladder)
        if any(k <= 0 for k in ladder) or not all(a > b for a, b in zip(ladder, ladder[1:])):
            raise ValueError("kappa ladder must be positive and strictly decreasing")
        if not self.accept_lo < self.accept_hi:
            raise ValueError("accept_lo must be below accept_hi")
        object.__setattr__(self, "kappa_ladder", ladder)


@dataclass(frozen=True)
class ChainDiagnostics:
    acceptance_rate: float
    n_eff: float
    rhat: float


@dataclass(frozen=True)
class JointModel:
    fa: FaModel
    w_T: HazardParams
    w_C: HazardParams
    kappa_used: float | None
    fit_mode: str  # "full_mcem" | "fast_decoupled"

    def __post_init__(self):
        if self.fit_mode not in ("full_mcem", "fast_decoupled"):
            raise ValueError(f"unknown fit_mode {self.fit_mode!r}")
        if self.w_T.w.size != self.fa.d_z + 1 or self.w_C.w.size != self.fa.d_z + 1:
            raise ValueError("hazard parameter length must be d_z + 1")


# ---------------------------------------------------------------------------
# conditional target density
# ---------------------------------------------------------------------------

class SampleTargets:
    """Per-sample conditional log-densities log p(t, delta | z) + log p~(x | z) + log p(z),
    up to constants in z. Evaluates batches of z for all samples at once."""

    def __init__(self, block_params, variational, blocks, w_T: HazardParams,
                 w_C: HazardParams, times: np.ndarray, events: np.ndarray):
        d_z = block_params[0].d_z
        N = blocks[0].n_samples
        prec = np.broadcast_to(np.eye(d_z), (N, d_z, d_z)).copy()
        h = np.zeros((d_z, N))
        for block, params, state in zip(blocks, block_params, variational):
            p, hb = factor._block_quadratic(block, params, state)
            prec += p
            h += hb
        self.prec = prec          # includes the prior
        self.h = h                # (d_z, N)
        self.w_T = w_T.w
        self.w_C = w_C.w
        self.t = np.asarray(times, dtype=float)
        self.d = np.asarray(events, dtype=float)
        self.d_z = d_z
        self.N = N

    def logp_all(self, Z: np.ndarray) -> np.ndarray:
        """Z has shape (N, d_z): one latent point per sample."""
        quad = -0.5 * np.einsum("nj,njk,nk->n", Z, self.prec, Z)
        lin = np.einsum("jn,nj->n", self.h, Z)
        eta_T = self.w_T[0] + Z @ self.w_T[1:]
        eta_C = self.w_C[0] + Z @ self.w_C[1:]
        surv = (self.d * eta_T + (1.0 - self.d) * eta_C
                - self.t * (np.exp(eta_T) + np.exp(eta_C)))
        return quad + lin + surv

    def logp_one(self, n: int, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        quad = -0.5 * z @ self.prec[n] @ z
        lin = self.h[:, n] @ z
        eta_T = self.w_T[0] + z @ self.w_T[1:]
        eta_C = self.w_C[0] + z @ self.w_C[1:]
        surv = (self.d[n] * eta_T + (1.0 - self.d[n]) * eta_C
                - self.t[n] * (np.exp(eta_T) + np.exp(eta_C)))
        return float(quad + lin + surv)


def conditional_log_density(model: JointModel, z: np.ndarray, dataset: Dataset,
                            n: int) -> float:
    """Conditional log-density of sample n's latent vector, up to a constant."""
    targets = SampleTargets(model.fa.block_params, model.fa.variational,
                            dataset.blocks, model.w_T, model.w_C,
                            dataset.times(), dataset.events())
    return targets.logp_one(n, z)


# ---------------------------------------------------------------------------
# Metropolis-Hastings sampling and diagnostics
# ---------------------------------------------------------------------------

def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction of a scalar statistic, (m, n) draws."""
    m, n = chains.shape
    half = n // 2
    split = chains[:, : 2 * half].reshape(2 * m, half)
    means = split.mean(axis=1)
    B = half * means.var(ddof=1)
    W = split.var(axis=1, ddof=1).mean()
    if W <= 0:
        return 1.0
    var_plus = (half - 1) / half * W + B / half
    return float(np.sqrt(var_plus / W))


def effective_sample_size(chains: np.ndarray) -> float:
    """Multi-chain effective sample size with autocorrelations truncated at
    the first negative paired sum."""
    m, n = chains.shape
    W = chains.var(axis=1, ddof=1).mean()
    means = chains.mean(axis=1)
    B = n * means.var(ddof=1) if m > 1 else 0.0
    var_plus = (n - 1) / n * W + B / n
    if var_plus <= 0:
        return float(m * n)
    centered = chains - means[:, None]
    rho_sum = 0.0
    prev_pair = None
    t = 1
    while t + 1 < n:
        acov_t = np.mean([(c[:-t] * c[t:]).mean() for c in centered]) if t < n else 0.0
        acov_t1 = np.mean([(c[:-(t + 1)] * c[(t + 1):]).mean() for c in centered])
        rho_t = 1.0 - (W - acov_t) / var_plus
        rho_t1 = 1.0 - (W - acov_t1) / var_plus
        pair = rho_t + rho_t1
        if pair < 0:
            break
        if prev_pair is not None:
            pair = min(pair, prev_pair)  # enforce monotone decrease (Geyer)
        rho_sum += pair
        prev_pair = pair
        t += 2
    n_eff = m * n / (1.0 + 2.0 * rho_sum)
    return float(min(n_eff, m * n))


def _run_chain(logp, z0: np.ndarray, chol: np.ndarray, burn_in: int, n_keep: int,
               rng: np.random.Generator):
    d_z = z0.size
    steps = burn_in + n_keep
    eps = rng.standard_normal((steps, d_z))
    logu = np.log(rng.random(steps))
    z = z0.copy()
    lp = logp(z)
    kept = np.empty((n_keep, d_z))
    accepted = 0
    for s in range(steps):
        prop = z + chol @ eps[s]
        lp_prop = logp(prop)
        if logu[s] < lp_prop - lp:
            z, lp = prop, lp_prop
            accepted += 1
        if s >= burn_in:
            kept[s - burn_in] = z
    return kept, accepted / steps


def mh_sample(targets: SampleTargets, n: int, kappa: float, config: MhConfig,
              seed: int, z0: np.ndarray, C_n: np.ndarray):
    """Random-walk Metropolis chain for sample n with proposal N(z, kappa C_n).

    Returns (n_keep x d_z) kept draws and diagnostics; bit-reproducible from
    the seed. R-hat uses the split-half of the single chain on |z|^2.
    """
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(kappa * C_n)
    kept, rate = _run_chain(lambda z: targets.logp_one(n, z), z0, chol,
                            config.burn_in, config.n_keep, rng)
    stat = np.einsum("sj,sj->s", kept, kept)[None, :]
    diag = ChainDiagnostics(acceptance_rate=rate,
                            n_eff=effective_sample_size(stat),
                            rhat=max(split_rhat(stat), 1.0))
    return kept.T, diag


def _tuning_run(targets: SampleTargets, n: int, kappa: float, config: MhConfig,
                seed: int, z0: np.ndarray, C_n: np.ndarray):
    chol = np.linalg.cholesky(kappa * C_n)
    seeds = np.random.SeedSequence(seed).spawn(config.tuning_chains)
    chains, rates = [], []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        kept, rate = _run_chain(lambda z: targets.logp_one(n, z), z0, chol,
                                config.burn_in, config.n_keep, rng)
        chains.append(np.einsum("sj,sj->s", kept, kept))
        rates.append(rate)
    stat = np.array(chains)
    return ChainDiagnostics(acceptance_rate=float(np.mean(rates)),
                            n_eff=effective_sample_size(stat),
                            rhat=max(split_rhat(stat), 1.0))


def tune_kappa(targets: SampleTargets, config: MhConfig, seed: int,
               z0: np.ndarray, C_n: np.ndarray, n: int = 0) -> float:
    """Walk the kappa ladder (descending) on sample n with two chains; return
    the first scale passing the acceptance / n_eff / R-hat thresholds, else the
    best composite candidate with a warning."""
    results = []
    for i, kappa in enumerate(config.kappa_ladder):
        diag = _tuning_run(targets, n, kappa, config, seed + i, z0, C_n)
        if (config.accept_lo <= diag.acceptance_rate <= config.accept_hi
                and diag.n_eff >= config.min_n_eff
                and diag.rhat <= config.max_rhat):
            return kappa
        dist = max(config.accept_lo - diag.acceptance_rate,
                   diag.acceptance_rate - config.accept_hi, 0.0)
        results.append((dist, -diag.n_eff, kappa))
    results.sort()
    logger.warning("no kappa in the ladder met all thresholds; using best composite %.3g",
                   results[0][2])
    return results[0][2]


# ---------------------------------------------------------------------------
# Monte-Carlo M-step for the hazards
# ---------------------------------------------------------------------------

def _hazard_moments(w: np.ndarray, samples: np.ndarray):
    """samples: (N, S, d_z). Returns per-sample E[z~], E[z~ e], E[z~ z~^T e]."""
    N, S, d_z = samples.shape
    zt = np.concatenate([np.ones((N, S, 1)), samples], axis=2)
    e = np.exp(zt @ w)  # (N, S)
    E1 = zt.mean(axis=1)
    Ee = np.einsum("nsj,ns->nj", zt, e) / S
    Eze = np.einsum("nsj,nsk,ns->njk", zt, zt, e) / S
    return E1, Ee, Eze


def newton_mstep_w(w_s: HazardParams, samples: np.ndarray, times: np.ndarray,
                   events: np.ndarray, step: float = 1.0) -> HazardParams:
    """One Newton-Raphson step on the expected complete-data log-likelihood,
    with moments estimated from the kept draws (one class: pass delta or 1-delta)."""
    w = w_s.w
    t = np.asarray(times, dtype=float)
    d = np.asarray(events, dtype=float)
    E1, Ee, Eze = _hazard_moments(w, samples)
    g = (d[:, None] * E1 - t[:, None] * Ee).sum(axis=0)
    H = np.einsum("n,njk->jk", t, Eze)
    try:
        delta = np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        ridge = 1e-8 * np.trace(H) / H.shape[0]
        logger.warning("singular Newton Hessian; adding ridge %.3g", ridge)
        delta = np.linalg.solve(H + ridge * np.eye(H.shape[0]), g)
    return HazardParams(w + step * delta)


def _init_hazards(times: np.ndarray, events: np.ndarray, d_z: int):
    t_sum = times.sum()
    out = []
    for d in (events, 1.0 - events):
        w = np.zeros(d_z + 1)
        n_ev = d.sum()
        if n_ev == 0:
            logger.warning("degenerate outcome class at initialization")
            w[0] = np.log(1e-8 / t_sum)
        else:
            w[0] = np.log(n_ev / t_sum)
        out.append(HazardParams(w))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# full fits
# ---------------------------------------------------------------------------

def _mc_estep(targets: SampleTargets, post: LatentPosterior, kappa: float,
              config: MhConfig, seed_seq: np.random.SeedSequence) -> np.ndarray:
    """All samples' chains run in lockstep with per-sample generators, so the
    result equals sequential per-sample runs. Returns (N, n_keep, d_z)."""
    N, d_z = targets.N, targets.d_z
    steps = config.burn_in + config.n_keep
    seeds = seed_seq.spawn(N)
    eps = np.empty((N, steps, d_z))
    logu = np.empty((N, steps))
    for n, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        eps[n] = rng.standard_normal((steps, d_z))
        logu[n] = np.log(rng.random(steps))
    chol = np.linalg.cholesky(kappa * post.cov)
    Z = post.mean.T.copy()  # (N, d_z)
    lp = targets.logp_all(Z)
    kept = np.empty((N, config.n_keep, d_z))
    for s in range(steps):
        prop = Z + np.einsum("njk,nk->nj", chol, eps[:, s])
        lp_prop = targets.logp_all(prop)
        accept = logu[:, s] < lp_prop - lp
        Z[accept] = prop[accept]
        lp[accept] = lp_prop[accept]
        if s >= config.burn_in:
            kept[:, s - config.burn_in] = Z
    return kept


def fit_joint(dataset: Dataset, d_z: int, gem_iters: int = 10,
              mh: MhConfig | None = None, seed: int = 0,
              fa_max_iters: int = 100) -> JointModel:
    """Ten-iteration approximate generalized EM: Metropolis E-step, factor
    M-steps from Monte-Carlo moments, one Newton step per hazard."""
    mh = mh or MhConfig()
    times = dataset.times()
    events = dataset.events()
    fa_model, post = factor.fit_fa(dataset, d_z, max_iters=fa_max_iters)
    params = list(fa_model.block_params)
    states = list(fa_model.variational)
    heywood = fa_model.heywood_flag
    w_T, w_C = _init_hazards(times, events, d_z)

    seed_root = np.random.SeedSequence(seed)
    tune_seed = int(seed_root.generate_state(1)[0] % (2**31))
    kappa = None
    blocks = dataset.blocks
    for it in range(gem_iters):
        targets = SampleTargets(params, states, blocks, w_T, w_C, times, events)
        if kappa is None or mh.retune_each_iteration:
            kappa = tune_kappa(targets, mh, tune_seed, post.mean[:, 0].copy(),
                               post.cov[0], n=0)
        samples = _mc_estep(targets, post, kappa, mh, seed_root.spawn(1)[0])

        # Monte-Carlo posterior moments for the factor M-steps
        mean = samples.mean(axis=1).T  # (d_z, N)
        second = np.einsum("nsj,nsk->njk", samples, samples) / samples.shape[1]
        cov = second - np.einsum("jn,kn->njk", mean, mean)
        mc_post = LatentPosterior(mean=mean, cov=cov)

        for i, block in enumerate(blocks):
            if block.kind == "normal":
                floor = factor.HEYWOOD_REL_THRESHOLD * block.values.var(axis=1)
                params[i] = factor.gaussian_mstep(block.values, mc_post,
                                                  psi_floor=np.maximum(floor, factor.PSI_FLOOR))
            elif block.kind == "binomial":
                params[i], states[i] = factor.binomial_mstep(
                    params[i], mc_post, block.values, block.b, refresh=False)
            else:
                params[i], states[i] = factor.multinomial_mstep(
                    params[i], states[i], mc_post, block.values, block.b, refresh=False)
        heywood = heywood or factor._heywood(params, blocks)

        w_T = newton_mstep_w(w_T, samples, times, events)
        w_C = newton_mstep_w(w_C, samples, times, 1.0 - events)
        post = factor.diverse_estep(params, states, blocks)

    fa_out = FaModel(d_z=d_z, block_params=tuple(params),
                     variational=tuple(states), heywood_flag=heywood)
    return JointModel(fa=fa_out, w_T=w_T, w_C=w_C,
                      kappa_used=kappa, fit_mode="full_mcem")


def fit_fast(dataset: Dataset, d_z: int, seed: int = 0,
             fa_max_iters: int = 100) -> JointModel:
    """Decoupled approximation: fit the factor model to convergence, then fit
    the hazards on the posterior means as covariates."""
    fa_model, post = factor.fit_fa(dataset, d_z, max_iters=fa_max_iters)
    w_T, w_C = fit_ecph(post.mean, dataset.survival)
    return JointModel(fa=fa_model, w_T=w_T, w_C=w_C,
                      kappa_used=None, fit_mode="fast_decoupled")


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

def averaged_variational(model: FaModel) -> tuple[VariationalState | None, ...]:
    """Learning-set averages of the variational parameters, broadcastable to
    any number of prediction samples (one shared column per feature)."""
    out = []
    for state in model.variational:
        if state is None:
            out.append(None)
            continue
        xi_bar = state.xi.mean(axis=1)
        alpha_bar = None if state.alpha is None else float(state.alpha.mean())
        out.append((xi_bar, alpha_bar))
    return tuple(out)


def _prediction_posterior(model: JointModel, blocks) -> LatentPosterior:
    states = []
    for block, avg in zip(blocks, averaged_variational(model.fa)):
        if avg is None:
            states.append(None)
            continue
        xi_bar, alpha_bar = avg
        N = block.n_samples
        states.append(VariationalState(
            xi=np.repeat(xi_bar[:, None], N, axis=1),
            alpha=None if alpha_bar is None else np.full(N, alpha_bar)))
    return factor.diverse_estep(model.fa.block_params, states, blocks)


def joint_predict(model: JointModel, blocks) -> np.ndarray:
    """Expected event time per sample: the analytic latent integral of the
    exponential mean under the factor-only posterior with averaged variational
    parameters. Returns a length-N vector."""
    post = _prediction_posterior(model, blocks)
    beta = model.w_T.beta
    quad = 0.5 * np.einsum("j,njk,k->n", beta, post.cov, beta)
    lin = post.mean.T @ beta
    return np.exp(-model.w_T.log_baseline + quad - lin)
