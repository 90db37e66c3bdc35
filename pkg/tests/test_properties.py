import math

import numpy as np
from hypothesis import assume, given, settings, strategies as st

from dlc import harness
from dlc.bessel import bessel_k_ratio
from dlc.model import Architecture, Scenario
from dlc.perturbation import nn_first_order, rf_first_order
from dlc.theory import build_root_condition, epsilon_lr, epsilon_nn, epsilon_rf

alphas = st.floats(0.01, 3.0).filter(lambda a: abs(a - 1) > 1e-3)
sub_alphas = st.floats(0.01, 0.99)
sigma2s = st.floats(0.05, 20.0)
etas = st.floats(0.0, 2.0)
widths = st.lists(st.floats(0.05, 50.0), min_size=1, max_size=6)


def off_poles(arch, a):
    return all(abs(g - a) > 1e-3 * max(1, a) for g in arch) and abs(a - 1) > 1e-3


class TestTheoryProperties:
    @given(ws=widths, a=alphas, s2=sigma2s, eta=etas)
    def test_rf_permutation_invariant_and_nonnegative(self, ws, a, s2, eta):
        assume(off_poles(ws, a))
        s = Scenario(a, s2, eta)
        r1 = epsilon_rf(Architecture(ws), s)
        r2 = epsilon_rf(Architecture(ws[::-1]), s)
        assert r1.epsilon == r2.epsilon
        assert r1.epsilon >= 0

    @given(a=alphas, s2=sigma2s, eta=etas)
    def test_lr_nonnegative(self, a, s2, eta):
        assert epsilon_lr(Scenario(a, s2, eta)).epsilon >= 0

    @given(ws=widths, a=sub_alphas, s2=sigma2s, eta=etas)
    @settings(deadline=None)
    def test_nn_root_physical(self, ws, a, s2, eta):
        assume(off_poles(ws, a))
        s = Scenario(a, s2, eta)
        res = epsilon_nn(Architecture(ws), s)
        rc = build_root_condition(Architecture(ws), s)
        z = res.z
        assert z > 0 and all(f > 0 for f in rc.factors(z))
        assert res.residual <= 1e-10 * max(1.0, z ** (rc.depth + 1))
        assert res.epsilon >= 0


class TestPerturbationProperties:
    @given(ws=st.lists(st.floats(1.0, 1e3), min_size=1, max_size=6), a=sub_alphas, s2=sigma2s, eta=etas)
    def test_first_order_models_agree(self, ws, a, s2, eta):
        s = Scenario(a, s2, eta)
        assert rf_first_order(Architecture(ws), s) == nn_first_order(Architecture(ws), s)


class TestBesselProperties:
    @given(nu=st.floats(-50, 50), q=st.floats(0.05, 200))
    def test_reflection(self, nu, q):
        assert math.isclose(bessel_k_ratio(nu, q) * bessel_k_ratio(-nu - 1, q), 1.0, rel_tol=1e-11)

    @given(nu=st.floats(-0.5, 100), q=st.floats(0.01, 500))
    def test_ratio_above_one(self, nu, q):
        # K_{nu+1} > K_nu once nu > -1/2
        assert bessel_k_ratio(nu, q) >= 1.0


finite = st.floats(allow_nan=False, allow_infinity=True, width=64)


class TestSerializationProperties:
    @given(x=finite)
    def test_float_round_trip(self, x):
        text = harness.fmt_float(x)
        assert float(text) == x or (math.isnan(float(text)) and math.isnan(x))

    @given(vals=st.lists(st.floats(0.01, 10.0), min_size=1, max_size=4), eps=finite)
    def test_csv_round_trip(self, vals, eps):
        row = {c: None for c in harness.COLUMNS}
        row.update(model="rf", alpha=0.5, sigma2=1.0, eta=0.0, depth=len(vals), gammas=tuple(vals),
                   epsilon_theory=eps, flags=("boundary",))
        _, parsed = harness.parse_csv(harness.render_rows([row]))
        assert parsed[0]["gammas"] == tuple(vals)
        assert parsed[0]["epsilon_theory"] == eps
        assert parsed[0]["flags"] == ("boundary",)

    @given(key=st.tuples(st.sampled_from(["lr", "rf", "nn"]), st.floats(0, 5), st.floats(0.1, 5)))
    def test_seed_range(self, key):
        s = harness.derive_seed(0, *key)
        assert 0 <= s < 2**63 and s == harness.derive_seed(0, *key)
        assert np.random.SeedSequence(s).entropy == s
