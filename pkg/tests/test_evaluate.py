import itertools

import numpy as np
import pytest

from latentsurv.data import make_split
from latentsurv.evaluate import (
    CvReport,
    ModelCandidate,
    UndefinedCIndexError,
    c_index,
    run_cv,
    select_model,
)
from tests.conftest import make_dataset, normal_block, make_survival
from latentsurv.data import Dataset


def brute_force_c_index(t_true, delta, t_pred, delta_pred=None):
    """Direct enumeration over ordered pairs: count concordant vs discordant
    comparable pairs, skipping pairs where either ordering is indeterminate
    under censoring."""
    t_true = np.asarray(t_true, float)
    delta = np.asarray(delta, float)
    t_pred = np.asarray(t_pred, float)
    if delta_pred is None:
        delta_pred = np.ones_like(t_pred)
    delta_pred = np.asarray(delta_pred, float)

    def orientation(a, da, b, db, i, j):
        # +1 if i is known to precede j, -1 if known to follow, 0 indeterminate
        before = a[i] <= a[j] and da[i] == 1
        after = a[i] >= a[j] and da[j] == 1
        return (1 if before else 0) - (1 if after else 0)

    num = den = 0.0
    N = t_true.size
    for i in range(N):
        for j in range(N):
            if i == j:
                continue
            s_true = orientation(t_true, delta, t_true, delta, i, j)
            s_pred = orientation(t_pred, delta_pred, t_pred, delta_pred, i, j)
            den += s_true * s_true
            num += s_true * s_pred
    if den <= 0:
        raise UndefinedCIndexError("no comparable pairs")
    return 0.5 * (num / den + 1.0)


class TestCIndexTrivial:
    def test_perfect_order(self):
        assert c_index([1, 2, 3], [1, 1, 1], [1, 2, 3]) == 1.0

    def test_reversed_order(self):
        assert c_index([1, 2, 3], [1, 1, 1], [3, 2, 1]) == 0.0

    def test_constant_predictions_half(self):
        assert c_index([1, 2, 3], [1, 1, 1], [5, 5, 5]) == pytest.approx(0.5)

    def test_all_censored_undefined(self):
        with pytest.raises(UndefinedCIndexError):
            c_index([1, 2, 3], [0, 0, 0], [1, 2, 3])

    def test_tied_true_times_cancel(self):
        # a tied pair of event times is ordered both ways, so its contribution
        # cancels; with only tied pairs the statistic is undefined
        with pytest.raises(UndefinedCIndexError):
            c_index([2, 2], [1, 1], [7, 7])
        # with one untied comparable pair present, the tied pair adds nothing
        assert c_index([2, 2, 4], [1, 1, 1], [1, 1, 2]) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            c_index([1, 2], [1, 1], [1, 2, 3])

    def test_too_few(self):
        with pytest.raises(ValueError):
            c_index([1], [1], [1])


class TestCIndexProperties:
    def test_matches_brute_force(self, rng):
        for _ in range(100):
            N = int(rng.integers(3, 9))
            t = rng.choice([0.5, 1.0, 1.5, 2.0], size=N)
            d = (rng.random(N) < 0.7).astype(float)
            p = rng.choice([0.5, 1.0, 1.5], size=N)
            dp = (rng.random(N) < 0.8).astype(float)
            if not d.any():
                d[0] = 1.0
            try:
                got = c_index(t, d, p, dp)
            except UndefinedCIndexError:
                with pytest.raises(UndefinedCIndexError):
                    brute_force_c_index(t, d, p, dp)
                continue
            assert got == pytest.approx(brute_force_c_index(t, d, p, dp), abs=1e-12)

    def test_harrell_reduction_no_ties(self, rng):
        """With distinct times and uncensored predictions the statistic equals
        Harrell's c: concordant usable pairs / usable pairs."""
        for _ in range(50):
            N = 10
            t = rng.permutation(N) + rng.random(N) * 0.1
            d = (rng.random(N) < 0.6).astype(float)
            p = rng.permutation(N).astype(float)
            if d.sum() == 0:
                d[0] = 1.0
            num = den = 0
            for i, j in itertools.permutations(range(N), 2):
                if d[i] == 1 and t[i] < t[j]:
                    den += 1
                    num += 1 if p[i] < p[j] else 0
            assert c_index(t, d, p) == pytest.approx(num / den)

    def test_reversal_symmetry(self, rng):
        t = rng.exponential(1, 12)
        d = (rng.random(12) < 0.7).astype(float)
        d[0] = 1.0
        p = rng.exponential(1, 12)
        assert c_index(t, d, p) + c_index(t, d, -p) == pytest.approx(1.0)

    def test_permutation_invariance(self, rng):
        t = rng.exponential(1, 10)
        d = (rng.random(10) < 0.7).astype(float)
        d[0] = 1.0
        p = rng.exponential(1, 10)
        perm = rng.permutation(10)
        assert c_index(t[perm], d[perm], p[perm]) == pytest.approx(c_index(t, d, p))

    def test_range(self, rng):
        for _ in range(30):
            t = rng.exponential(1, 8)
            d = (rng.random(8) < 0.5).astype(float)
            d[0] = 1.0
            p = rng.exponential(1, 8)
            assert 0.0 <= c_index(t, d, p) <= 1.0


class TestModelCandidate:
    def test_exactly_one_hyperparameter(self):
        with pytest.raises(ValueError):
            ModelCandidate(kind="fa_ecph_c", d_z=2, gamma=1.0)
        with pytest.raises(ValueError):
            ModelCandidate(kind="fa_ecph_c")

    def test_kind_field_consistency(self):
        with pytest.raises(ValueError):
            ModelCandidate(kind="ecph_c_l1", d_z=2)
        with pytest.raises(ValueError):
            ModelCandidate(kind="fa_ecph_c", gamma=1.0)

    def test_candidate_ids(self):
        assert ModelCandidate(kind="fa_ecph_c", d_z=3).candidate_id == "latent_dz3_fast"
        full = ModelCandidate(kind="fa_ecph_c", d_z=3, fit_mode="full_mcem")
        assert full.candidate_id == "latent_dz3_full"
        assert ModelCandidate(kind="ecph_c_l1", gamma=0.5).candidate_id == "l1_gamma0.5"
        fixed = ModelCandidate(kind="ecph_c_fixed", fixed_features=((0, 1), (0, 2)))
        assert fixed.candidate_id == "fixed_2feat"


class TestCvReport:
    def test_moments(self):
        r = CvReport.from_folds("a", [0.6, 0.8, 0.7])
        assert r.mean == pytest.approx(np.mean([0.6, 0.8, 0.7]))
        assert r.std == pytest.approx(np.std([0.6, 0.8, 0.7]))

    def test_empty_folds_nan(self):
        r = CvReport.from_folds("a", [], error_folds=(0, 1))
        assert np.isnan(r.mean)
        assert r.error_folds == (0, 1)


def signal_dataset(rng, N=60, d_z=2):
    """Gaussian block whose first latent coordinate drives the event hazard."""
    W = rng.normal(scale=1.0, size=(10, d_z))
    mu = rng.normal(size=10)
    psi = rng.uniform(0.5, 1.0, 10)
    Z = rng.standard_normal((d_z, N))
    block = normal_block(rng, 10, N, W=W, mu=mu, psi=psi, d_z=d_z)
    X = W @ Z + mu[:, None] + rng.standard_normal((10, N)) * np.sqrt(psi)[:, None]
    block = block.__class__(name=block.name, kind="normal", values=X,
                            feature_names=block.feature_names, b=1)
    eta_T = -0.2 + 1.0 * Z[0]
    t_lat = rng.exponential(np.exp(-eta_T))
    c_lat = rng.exponential(np.exp(0.2), N)
    times = np.minimum(t_lat, c_lat)
    events = t_lat <= c_lat
    return Dataset(blocks=(block,), survival=make_survival(times, events),
                   sample_ids=tuple(f"s{j}" for j in range(N)))


class TestRunCv:
    def test_report_structure(self, rng):
        ds = signal_dataset(rng)
        split = make_split(len(ds.sample_ids), test_fraction=0.2, n_folds=3, seed=1)
        cands = [ModelCandidate(kind="fa_ecph_c", d_z=2),
                 ModelCandidate(kind="ecph_c_l1", gamma=1.0)]
        reports = run_cv(ds, cands, split, seed=0)
        assert [r.candidate_id for r in reports] == [c.candidate_id for c in cands]
        for r in reports:
            assert len(r.fold_cindices) == 3
            assert all(0.0 <= c <= 1.0 for c in r.fold_cindices)
            assert not r.error_folds

    def test_folds_scored_on_holdout_only(self, rng):
        """Each fold's validation set is disjoint from its learning set, so
        the fold scores must be reproducible from manual refits."""
        from latentsurv.evaluate import fit_candidate, predict_candidate
        ds = signal_dataset(rng, N=40)
        split = make_split(40, test_fraction=0.25, n_folds=3, seed=2)
        cand = ModelCandidate(kind="fa_ecph_c", d_z=2)
        reports = run_cv(ds, [cand], split, seed=0)
        for v in range(3):
            learn = ds.subset(split.learning_indices(v))
            valid = ds.subset(split.folds[v])
            fitted = fit_candidate(cand, learn, 0)
            preds = predict_candidate(cand, fitted, valid)
            want = c_index(valid.times(), valid.events(), preds)
            assert reports[0].fold_cindices[v] == pytest.approx(want)

    def test_heywood_exclusion_flagged(self, rng):
        # a noiseless rank-1 block collapses a noise variance to its floor
        N = 30
        Z = rng.standard_normal((1, N))
        W = np.ones((5, 1))
        X = W @ Z
        block = normal_block(rng, 5, N, d_z=1)
        block = block.__class__(name="pure", kind="normal", values=X,
                                feature_names=block.feature_names, b=1)
        times = rng.exponential(1.0, N)
        events = np.ones(N, dtype=bool)
        ds = Dataset(blocks=(block,), survival=make_survival(times, events),
                     sample_ids=tuple(f"s{j}" for j in range(N)))
        split = make_split(N, test_fraction=0.2, n_folds=3, seed=0)
        reports = run_cv(ds, [ModelCandidate(kind="fa_ecph_c", d_z=1)], split)
        assert reports[0].heywood_excluded

    def test_candidate_order_permutation(self, rng):
        ds = signal_dataset(rng, N=40)
        split = make_split(40, test_fraction=0.25, n_folds=3, seed=2)
        cands = [ModelCandidate(kind="fa_ecph_c", d_z=1),
                 ModelCandidate(kind="fa_ecph_c", d_z=2),
                 ModelCandidate(kind="ecph_c_l1", gamma=2.0)]
        r1 = {r.candidate_id: r for r in run_cv(ds, cands, split, seed=0)}
        r2 = {r.candidate_id: r for r in run_cv(ds, cands[::-1], split, seed=0)}
        for cid in r1:
            assert r1[cid].fold_cindices == r2[cid].fold_cindices


def report(cid, mean, std):
    return CvReport(candidate_id=cid, fold_cindices=(mean,), mean=mean, std=std)


def direct_selection(reports):
    """Prose restatement of the rule: start at the largest mean; while some
    not-yet-visited report's closed interval sits inside the leader's, jump to
    the largest-mean such report; answer is the final leader."""
    usable = [r for r in reports if not r.heywood_excluded and r.fold_cindices]
    leader = max(usable, key=lambda r: r.mean)
    visited = {leader.candidate_id}
    while True:
        lo, hi = leader.mean - leader.std, leader.mean + leader.std
        nested = [r for r in usable if r.candidate_id not in visited
                  and lo <= r.mean - r.std and r.mean + r.std <= hi]
        if not nested:
            return leader.candidate_id
        leader = max(nested, key=lambda r: r.mean)
        visited.add(leader.candidate_id)


class TestSelectModel:
    def test_worked_example(self):
        # leader 0.82 +/- 0.04 -> [0.78, 0.86]; 0.81 +/- 0.03 -> [0.78, 0.84]
        # nests inside and becomes the answer; 0.72 +/- 0.08 never nests
        reports = [report("a", 0.82, 0.04), report("b", 0.81, 0.03),
                   report("c", 0.72, 0.08)]
        assert select_model(reports) == "b"

    def test_single_report(self):
        assert select_model([report("only", 0.7, 0.1)]) == "only"

    def test_disjoint_intervals_keep_leader(self):
        reports = [report("a", 0.9, 0.01), report("b", 0.6, 0.01)]
        assert select_model(reports) == "a"

    def test_chain_of_nested_intervals(self):
        reports = [report("a", 0.80, 0.10), report("b", 0.79, 0.05),
                   report("c", 0.78, 0.01)]
        assert select_model(reports) == "c"

    def test_all_excluded_raises(self):
        r = CvReport(candidate_id="x", fold_cindices=(0.8,), mean=0.8, std=0.1,
                     heywood_excluded=True)
        with pytest.raises(ValueError):
            select_model([r])

    def test_excluded_candidates_skipped(self):
        bad = CvReport(candidate_id="bad", fold_cindices=(0.99,), mean=0.99,
                       std=0.0, heywood_excluded=True)
        assert select_model([bad, report("ok", 0.7, 0.05)]) == "ok"

    def test_randomized_against_direct_implementation(self, rng):
        for trial in range(50):
            k = int(rng.integers(1, 7))
            reports = []
            for i in range(k):
                mean = float(np.round(rng.uniform(0.5, 0.95), 3))
                std = float(np.round(rng.uniform(0.0, 0.15), 3))
                reports.append(report(f"c{i}", mean, std))
            # distinct means keep the comparison free of tie-break ambiguity
            if len({r.mean for r in reports}) < k:
                continue
            assert select_model(reports) == direct_selection(reports)
