import math

import numpy as np
import pytest

from jordan_exit.errors import ConfigError, InvalidInputError
from jordan_exit.model import (
    DiffusionSpec,
    InitLaw,
    OuterBox,
    ProblemSpec,
    TrialRecord,
    check,
    drift,
    from_dict,
    nonlinear_part,
    to_dict,
    validate,
)


def spec2(**kw):
    return validate(ProblemSpec(dim=2, lam=1.0, **kw))


class TestDrift:
    def test_linear_examples(self):
        s = spec2()
        assert np.array_equal(drift(s, [1.0, 0.0]), [1.0, 0.0])
        assert np.array_equal(drift(s, [0.0, 1.0]), [1.0, 1.0])

    def test_cubic_on_axis(self):
        assert np.array_equal(drift(spec2(nonlinearity="cubic"), [1.0, 0.0]), [0.0, 0.0])

    def test_linearity(self):
        rng = np.random.default_rng(0)
        s = validate(ProblemSpec(dim=4, lam=0.8))
        x, y = rng.standard_normal((2, 4))
        assert np.allclose(drift(s, x + y), drift(s, x) + drift(s, y), atol=1e-12)
        assert np.allclose(drift(s, 3.5 * x), 3.5 * drift(s, x), atol=1e-12)

    def test_cubic_nonlinear_part_exact(self):
        s = validate(ProblemSpec(dim=3, lam=1.0, nonlinearity="cubic"))
        x = np.array([0.5, -0.25, 0.125])
        assert np.array_equal(nonlinear_part(s, x), -(x @ x) * x)

    def test_quad2(self):
        s = spec2(nonlinearity="quad2")
        assert np.array_equal(drift(s, [0.5, 0.0]), [0.5, 0.25])

    def test_batch(self):
        s = spec2(nonlinearity="cubic")
        X = np.array([[0.1, 0.2], [0.3, -0.1]])
        assert np.allclose(drift(s, X), np.array([drift(s, x) for x in X]))

    def test_non_finite(self):
        with pytest.raises(InvalidInputError):
            drift(spec2(), [math.nan, 0.0])


class TestValidate:
    def test_valid(self):
        s = spec2()
        assert check(s) == []
        assert np.array_equal(s.a0, np.eye(2))

    def test_outer_smaller_than_box(self):
        errs = check(ProblemSpec(dim=2, lam=1.0, box_radius=1.0, outer_domain=OuterBox(0.5)))
        assert any("outer domain smaller than inner box" in m for _, m in errs)

    def test_grid_not_decreasing(self):
        errs = check(ProblemSpec(dim=2, lam=1.0, epsilon_grid=(1e-4, 1e-2)))
        assert any(p == "epsilon_grid" and "grid not decreasing" in m for p, m in errs)

    def test_reports_every_violation(self):
        with pytest.raises(ConfigError) as exc:
            validate(ProblemSpec(dim=2, lam=-1.0, box_radius=0.0, alpha=1.5))
        paths = {p for p, _ in exc.value.errors}
        assert {"lambda", "box_radius", "alpha"} <= paths

    def test_non_psd_diffusion_matrix_is_fine_but_shape_checked(self):
        with pytest.raises(ConfigError):
            validate(ProblemSpec(dim=2, lam=1.0, diffusion=DiffusionSpec("constant", ((1.0, 0.0, 0.0),))))

    def test_quad2_needs_two_dimensions(self):
        with pytest.raises(ConfigError):
            validate(ProblemSpec(dim=1, lam=1.0, nonlinearity="quad2"))


class TestJson:
    def test_round_trip(self):
        s = spec2(
            diffusion=DiffusionSpec("constant", ((1.0, 0.0), (0.5, 2.0))),
            outer_domain=OuterBox(2.0),
            init_law=InitLaw("gaussian", (0.0, 1.0), ((1.0, 0.0), (0.0, 2.0))),
        )
        assert from_dict(to_dict(s)) == s

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError) as exc:
            from_dict({"dim": 2, "lambda": 1.0, "lamda": 1.0, "diffusion": {"kind": "identity", "scale": 2}})
        paths = {p for p, _ in exc.value.errors}
        assert "lamda" in paths

    def test_extra_keys_allowed_when_declared(self):
        s = from_dict({"dim": 1, "lambda": 2.0, "run": {}}, extra_keys={"run"})
        assert s.lam == 2.0

    def test_missing_required(self):
        with pytest.raises(ConfigError):
            from_dict({"dim": 2})


class TestTrialRecord:
    def test_invariants(self):
        r = TrialRecord(0, 1e-6, 12.0, (1.0, 0.05), 1, 1, None, 0.05, 100, 7)
        assert r.invariant_errors(1.0) == []

    def test_violations(self):
        r = TrialRecord(0, 1e-6, 12.0, (0.9, 0.05), 1, -1, None, 0.05, 100, 7)
        errs = r.invariant_errors(1.0)
        assert any("boundary" in e for e in errs)
        assert any("sign" in e for e in errs)
