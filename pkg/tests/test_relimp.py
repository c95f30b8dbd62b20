import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from profilenet.dataset import Dataset, encode_categoricals
from profilenet.errors import DataError, RankDeficient, TooManyGroups
from profilenet.relimp import (PredictorGroup, SubsetR2, dominance_analysis, importance_matrix,
                               lmg_shares, ols_fit)

from oracles import brute_force_lmg, r2_lstsq


def correlated(seed, n=300, g=3, rho=0.4):
    rng = np.random.default_rng(seed)
    C = np.full((g, g), rho) + (1 - rho) * np.eye(g)
    X = rng.standard_normal((n, g)) @ np.linalg.cholesky(C).T
    y = X @ rng.uniform(0.2, 1.5, g) + rng.standard_normal(n)
    data = {f"x{j + 1}": X[:, j] for j in range(g)}
    return y, [PredictorGroup(f"x{j + 1}", [f"x{j + 1}"]) for j in range(g)], data


class TestOLS:
    def test_exact_line(self):
        x = np.arange(10.0)
        fit = ols_fit(2 * x + 3, x)
        assert fit.coefficients[0] == pytest.approx(2.0, abs=1e-12)
        assert fit.intercept == pytest.approx(3.0, abs=1e-12)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_null_r2_small(self):
        small = 0
        for seed in range(40):
            rng = np.random.default_rng(seed)
            small += ols_fit(rng.standard_normal(10000), rng.standard_normal(10000)).r_squared < 1e-3
        assert small >= 38

    def test_duplicated_column(self, rng):
        x = rng.standard_normal(50)
        with pytest.raises(RankDeficient):
            ols_fit(rng.standard_normal(50), np.column_stack([x, x]))

    def test_matches_lstsq(self, rng):
        X = rng.standard_normal((80, 4))
        y = X @ [1, -2, 0.5, 0] + rng.standard_normal(80)
        fit = ols_fit(y, X)
        A = np.column_stack([np.ones(80), X])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        np.testing.assert_allclose(np.r_[fit.intercept, fit.coefficients], coef, atol=1e-10)
        assert fit.r_squared == pytest.approx(r2_lstsq(y, list(X.T)), abs=1e-12)

    def test_badly_scaled_columns_not_rank_deficient(self, rng):
        X = rng.standard_normal((100, 2)) * [1e-4, 1e5]
        fit = ols_fit(X @ [3e4, 2e-5] + rng.standard_normal(100), X)
        assert fit.r_squared > 0.5


class TestLMG:
    def test_single_group(self):
        y, groups, data = correlated(0, g=1)
        rep = lmg_shares(y, groups, data)
        assert rep.shares[0] == pytest.approx(rep.full_r_squared, abs=1e-14)
        assert rep.pct_of_r2[0] == pytest.approx(100.0)

    def test_orthogonal_groups_get_univariate_r2(self):
        # exactly orthogonal, centered columns
        n = 64
        t = np.arange(n)
        cols = [np.cos(2 * np.pi * k * t / n) for k in (1, 2, 3)]
        y = 0.8 * cols[0] + 0.3 * cols[1] - 0.5 * cols[2] + np.sin(2 * np.pi * 5 * t / n)
        data = {f"c{k}": c for k, c in enumerate(cols)}
        groups = [PredictorGroup(k, [k]) for k in data]
        rep = lmg_shares(y, groups, data)
        for j, c in enumerate(cols):
            assert rep.shares[j] == pytest.approx(r2_lstsq(y, [c]), abs=1e-12)
        assert rep.shares.sum() == pytest.approx(rep.full_r_squared, abs=1e-12)

    def test_exchangeable_pair(self):
        diffs = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((2000, 2)) @ np.linalg.cholesky([[1, 0.5], [0.5, 1]]).T
            y = X.sum(axis=1) + rng.standard_normal(2000)
            rep = lmg_shares(y, [PredictorGroup("a", "a"), PredictorGroup("b", "b")],
                             {"a": X[:, 0], "b": X[:, 1]})
            diffs.append(rep.shares[0] - rep.shares[1])
        assert abs(np.mean(diffs)) < 3 * np.std(diffs) / math.sqrt(20) + 1e-3

    @pytest.mark.parametrize("g", [2, 3, 4, 5])
    def test_matches_permutation_enumeration(self, g):
        y, groups, data = correlated(g, g=g)
        rep = lmg_shares(y, groups, data)
        np.testing.assert_allclose(rep.shares, brute_force_lmg(y, groups, data), atol=1e-10)

    def test_multi_column_group_matches_enumeration(self, rng):
        n = 400
        country = rng.choice(np.array(["BE", "CA", "CH", "FR"], dtype=object), n)
        x = rng.standard_normal(n)
        ds = Dataset({"x": x, "country": country, "z": rng.standard_normal(n) + 0.5 * x})
        ds, ind = encode_categoricals(ds, ["country"])
        y = x + (ds["country=FR"] - ds["country=CA"]) + rng.standard_normal(n)
        groups = [PredictorGroup("x", ["x"]), PredictorGroup("country", ind["country"]), PredictorGroup("z", ["z"])]
        data = {c: ds[c] for c in ds.names}
        rep = lmg_shares(y, groups, ds)
        np.testing.assert_allclose(rep.shares, brute_force_lmg(y, groups, data), atol=1e-10)

    @given(seed=st.integers(0, 2**32 - 1), g=st.integers(1, 6))
    def test_shares_sum_to_full_r2(self, seed, g):
        y, groups, data = correlated(seed, n=120, g=g)
        rep = lmg_shares(y, groups, data)
        assert math.fsum(rep.shares) == pytest.approx(rep.full_r_squared, abs=1e-8)

    @given(seed=st.integers(0, 2**32 - 1), a=st.floats(0.01, 100), b=st.floats(-100, 100),
           c=st.floats(0.01, 100))
    def test_affine_invariance(self, seed, a, b, c):
        y, groups, data = correlated(seed, n=100, g=3)
        base = lmg_shares(y, groups, data).shares
        scaled = dict(data, x2=a * data["x2"] + b)
        np.testing.assert_allclose(lmg_shares(c * y - b, groups, scaled).shares, base, atol=1e-10)

    def test_response_by_name(self):
        y, groups, data = correlated(1)
        data = dict(data, resp=y)
        assert lmg_shares("resp", groups, data).response == "resp"

    def test_too_many_groups(self, rng):
        data = {f"v{i}": rng.standard_normal(50) for i in range(21)}
        with pytest.raises(TooManyGroups):
            lmg_shares(rng.standard_normal(50), [PredictorGroup(k, k) for k in data], data)

    def test_overlapping_groups(self, rng):
        data = {"a": rng.standard_normal(20), "b": rng.standard_normal(20)}
        with pytest.raises(DataError):
            SubsetR2(rng.standard_normal(20), [PredictorGroup("g1", ["a", "b"]), PredictorGroup("g2", ["b"])], data)

    def test_rank_deficiency_names_subset(self, rng):
        x = rng.standard_normal(40)
        data = {"a": x, "b": 2 * x, "c": rng.standard_normal(40)}
        with pytest.raises(RankDeficient) as info:
            lmg_shares(rng.standard_normal(40), [PredictorGroup(k, k) for k in data], data)
        assert set(info.value.subset) >= {"a", "b"}

    def test_display_floors_negatives(self):
        y, groups, data = correlated(2)
        rep = lmg_shares(y, groups, data)
        rep.shares[0] = -1e-15
        assert rep.display_shares()[0] == 0.0 and rep.shares[0] < 0


class TestDominance:
    def test_signal_dominates_noise(self):
        rng = np.random.default_rng(3)
        n = 500
        x1 = rng.standard_normal(n)
        x2 = rng.standard_normal(n)
        x2 -= x1 * (x1 @ x2) / (x1 @ x1)
        y = x1 + 0.5 * rng.standard_normal(n)
        rep = dominance_analysis(y, [PredictorGroup("x1", "x1"), PredictorGroup("x2", "x2")],
                                 {"x1": x1, "x2": x2})
        assert rep.complete[0, 1] and not rep.complete[1, 0]
        assert rep.conditional[0, 1] and rep.general[0, 1]

    def test_crossing_increments_no_complete_dominance(self):
        # x2 is the better predictor alone, but x1 becomes the better one once x3
        # (its own noise) is in the model, so neither dominates completely
        rng = np.random.default_rng(4)
        n = 3000
        z, e1, e2 = rng.standard_normal((3, n))
        data = {"x1": z + 1.5 * e1, "x2": z + 0.8 * e2, "x3": e1}
        y = z + 0.5 * rng.standard_normal(n)
        rep = dominance_analysis(y, [PredictorGroup(k, k) for k in data], data)
        assert not rep.complete[0, 1] and not rep.complete[1, 0]
        table = SubsetR2(y, [PredictorGroup(k, k) for k in data], data)
        assert table[0b010] > table[0b001]          # x2 alone beats x1 alone
        assert table[0b101] - table[0b100] > table[0b110] - table[0b100]  # x1 beats x2 given x3

    def test_two_groups_complete_reduces_to_single_comparison(self):
        y, groups, data = correlated(5, g=2)
        rep = dominance_analysis(y, groups, data)
        table = SubsetR2(y, groups, data)
        assert rep.complete[0, 1] == (table[1] > table[2])
        assert rep.complete[0, 1] != rep.complete[1, 0]

    def test_single_group_no_pairs(self):
        y, groups, data = correlated(6, g=1)
        assert dominance_analysis(y, groups, data).pairs() == []

    @given(seed=st.integers(0, 2**32 - 1), g=st.integers(2, 5))
    def test_general_dominance_equals_lmg(self, seed, g):
        y, groups, data = correlated(seed, n=150, g=g)
        rep = dominance_analysis(y, groups, data)
        np.testing.assert_allclose(rep.general_weights, lmg_shares(y, groups, data).shares, atol=1e-14)
        order = np.argsort(-rep.general_weights)
        for a, b in zip(order, order[1:]):
            if rep.general_weights[a] > rep.general_weights[b] + 1e-12:
                assert rep.general[a, b]

    @given(seed=st.integers(0, 2**32 - 1), g=st.integers(2, 5))
    def test_dominance_hierarchy(self, seed, g):
        y, groups, data = correlated(seed, n=150, g=g)
        rep = dominance_analysis(y, groups, data)
        # complete implies conditional implies general
        assert np.all(~rep.complete | rep.conditional)
        assert np.all(~rep.conditional | rep.general)
        assert not np.any(rep.complete & rep.complete.T)


class TestImportanceMatrix:
    def test_one_by_one(self):
        y, groups, data = correlated(7, g=1)
        mat = importance_matrix({"p1": y}, groups, data)
        assert mat.reports[0].pct_of_r2[0] == pytest.approx(100.0)
        assert mat.mean_influence[0] == pytest.approx(100.0)

    def test_columns_sum_to_100(self, rng):
        y, groups, data = correlated(8, g=4)
        mat = importance_matrix({"a": y, "b": y ** 2 + data["x1"]}, groups, data)
        for rep in mat.reports:
            assert rep.pct_of_r2.sum() == pytest.approx(100.0, abs=1e-8)

    def test_duplicated_response(self):
        y, groups, data = correlated(9, g=3)
        mat = importance_matrix({"a": y, "b": y.copy()}, groups, data)
        np.testing.assert_allclose(mat.mean_influence, mat.reports[0].pct_of_r2, atol=1e-12)

    def test_csv_layout(self):
        y, groups, data = correlated(10, g=2)
        text = importance_matrix({"profile_1": y}, groups, data).to_csv()
        header = text.splitlines()[0].split(",")
        assert header[0] == "predictor" and header[-1] == "mean_influence"
        assert header[1].startswith("profile_1 (R2: ")
        assert len(text.splitlines()) == 3
