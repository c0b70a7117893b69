import pytest

from evaluation.run_verification import VerificationSuite, run_verification


@pytest.fixture
def suite():
    return VerificationSuite()


class VerificationChecksTester:
    def test_tight_bound_case(self, suite):
        passed, detail = suite.check_bound_colinear_tight()
        assert passed, detail
        assert "0.490000" in detail

    def test_opposite_bound_case(self, suite):
        assert suite.check_bound_opposite_slack()[0]

    def test_exact_solution(self, suite):
        assert suite.check_bound_exact_solution()[0]

    def test_gradient_checks(self, suite):
        assert suite.check_primitive_gradients()[0]
        assert suite.check_nested_gradients()[0]
        assert suite.check_mlp_input_gradient()[0]

    def test_oracle_identities(self, suite):
        assert suite.check_discrete_ot_solvers_agree()[0]
        assert suite.check_frechet_equals_twice_w2()[0]
        assert suite.check_pushforward_moments()[0]

    def test_regularizer_identities(self, suite):
        passed, detail = suite.check_regularizer_identities()
        assert passed, detail

    def test_adam_first_step(self, suite):
        assert suite.check_adam_first_step()[0]

    def test_fault_injection_breaks_adam(self):
        passed, detail = VerificationSuite(fault_injection=True).check_adam_first_step()
        assert not passed
        assert "theta -0.4999" in detail

    def test_failing_check_is_reported_not_raised(self, suite, monkeypatch):
        def broken():
            raise RuntimeError("boom")

        monkeypatch.setattr(suite, "checks", lambda: [("broken", broken)])
        table = suite.run_all()
        assert table["status"].tolist() == ["FAIL"]
        assert "boom" in table["detail"][0]


@pytest.mark.slow
class VerificationSuiteTester:
    def test_fresh_checkout_passes(self):
        passed, table = run_verification()
        assert passed, table.to_string()
        assert len(table) == len(VerificationSuite().checks())

    def test_fault_injection_fails(self):
        passed, table = run_verification(fault_injection=True)
        assert not passed
        assert "FAIL" in table.set_index("check").loc["adam_first_step", "status"]
