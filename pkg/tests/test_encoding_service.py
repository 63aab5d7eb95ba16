import numpy as np
import pytest

from core.services.circuit_service import AnsatzKind, derive_rng
from core.services.config_service import preset_config
from core.services.encoding_service import (
    BCShift,
    EncodingConfig,
    EvaluationMode,
    EvaluationSettings,
    ShiftedField,
    ShiftKind,
    build_benchmark_encodings,
    build_encoding,
    estimate,
    evaluate,
    evaluate_grid,
    evaluate_shifted,
    evaluate_shifted_grid,
)
from core.services.problem_service import BurgersProblem, HypoelasticProblem
from core.services.spectral_service import ChebyshevBasis, ObservableForm

SHOTS = EvaluationSettings(mode=EvaluationMode.SHOTS, shots=200)
STACKED = EvaluationSettings(mode=EvaluationMode.STACKED, shots=100, stack=4)


@pytest.fixture
def sigma_function():
    encoding = EncodingConfig(form=ObservableForm.GLOBAL_DIAGONAL, registers=(3,), depth=2, scale=15.0)
    return build_encoding("sigma", encoding, [ChebyshevBasis()], EvaluationSettings())


@pytest.fixture
def burgers_function():
    encoding = EncodingConfig(form=ObservableForm.GLOBAL_DIAGONAL, registers=(1, 2),
                              ansatz=AnsatzKind.HEA_MIXED, depth=2, scale=2.0)
    return build_encoding("u", encoding, BurgersProblem().domains(), EvaluationSettings())


class TestEvaluationSettings:
    def test_shots_total(self):
        assert STACKED.shots_total == 400
        assert SHOTS.shots_total == 200

    def test_sampled_modes_need_rng(self):
        with pytest.raises(ValueError):
            estimate(np.ones((1, 2)), np.array([0.5, 0.5]), SHOTS)

    def test_exact_is_table_product(self, rng):
        table, probs = rng.normal(size=(3, 4)), np.full(4, 0.25)
        np.testing.assert_allclose(estimate(table, probs, EvaluationSettings()), table.mean(axis=1))


class TestEncodedFunction:
    def test_scale_applied(self, sigma_function, rng):
        theta = rng.uniform(-np.pi, np.pi, sigma_function.n_params)
        unit = sigma_function.model_copy(update={"scale": 1.0})
        assert evaluate(sigma_function, theta, 0.4) == pytest.approx(15.0 * evaluate(unit, theta, 0.4))

    def test_zero_scale_rejected(self):
        with pytest.raises(ValueError):
            build_encoding("u", EncodingConfig(form=ObservableForm.ONE_LOCAL_Z, registers=(2,), scale=0.0),
                           [ChebyshevBasis()], EvaluationSettings())

    def test_derivative_matches_finite_difference(self, sigma_function, rng):
        theta = rng.uniform(-np.pi, np.pi, sigma_function.n_params)
        x, h = 0.37, 1e-4

        def f(s):
            return evaluate(sigma_function, theta, s)

        derivative = evaluate(sigma_function, theta, x, orders=(1,))
        fd = (-f(x + 2 * h) + 8 * f(x + h) - 8 * f(x - h) + f(x - 2 * h)) / (12 * h)
        assert derivative == pytest.approx(fd, rel=1e-6, abs=1e-6)

    def test_grid_shape(self, burgers_function, rng):
        theta = rng.uniform(-np.pi, np.pi, burgers_function.n_params)
        points = rng.uniform(0, 0.95, size=(10, 2))
        assert evaluate_grid(burgers_function, theta, points).shape == (10,)

    def test_shot_estimate_is_unbiased(self, sigma_function, rng):
        theta = rng.uniform(-np.pi, np.pi, sigma_function.n_params)
        exact = evaluate(sigma_function, theta, 0.6)
        sampled = sigma_function.with_evaluation(EvaluationSettings(mode=EvaluationMode.SHOTS, shots=100000))
        assert evaluate(sampled, theta, 0.6, rng=rng) == pytest.approx(exact, abs=0.5)


class TestBoundaryShifts:
    @pytest.mark.parametrize("settings", [EvaluationSettings(), SHOTS, STACKED])
    def test_point_shift_exact_in_every_mode(self, sigma_function, settings):
        function = sigma_function.with_evaluation(settings)
        shift = BCShift(kind=ShiftKind.POINT, anchor=(0.0,), target=12.0)
        points = np.array([[0.0], [0.5], [0.0], [1.0]])
        for trial in range(20):
            rng = derive_rng(trial, 0)
            theta = rng.uniform(-np.pi, np.pi, function.n_params)
            values = evaluate_shifted_grid(function, shift, theta, points, rng=rng)
            assert values[0] == 12.0
            assert values[2] == 12.0

    def test_hypoelastic_shifts_hold_for_random_theta(self, rng):
        config = preset_config("hypoelastic")
        config = config.model_copy(update={"encoding": {
            "u": EncodingConfig(form=ObservableForm.ONE_LOCAL_Z, registers=(4,), depth=2, scale=15.0),
            "sigma": config.encoding["sigma"],
        }})
        functions = {f.name: f for f in build_benchmark_encodings(config)}
        shifts = HypoelasticProblem().bc_shifts()
        for _ in range(100):
            for name, target in (("u", 0.0), ("sigma", 12.0)):
                theta = rng.uniform(-np.pi, np.pi, functions[name].n_params)
                value = evaluate_shifted(functions[name], shifts[name], theta, 0.0)
                assert value == pytest.approx(target, abs=1e-12)

    def test_burgers_slice_shift_matches_initial_condition(self, burgers_function, rng):
        problem = BurgersProblem(a=0.5, b=0.25)
        shift = problem.bc_shifts()["u"]
        x = np.linspace(0, 0.95, 7)
        points = np.column_stack([x, np.zeros_like(x)])
        for _ in range(100):
            theta = rng.uniform(-np.pi, np.pi, burgers_function.n_params)
            values = evaluate_shifted_grid(burgers_function, shift, theta, points)
            np.testing.assert_allclose(values, 0.5 * x + 0.25, atol=1e-12)
            slopes = evaluate_shifted_grid(burgers_function, shift, theta, points, orders=(1, 0))
            np.testing.assert_allclose(slopes, 0.5, atol=1e-12)

    def test_point_shift_leaves_derivatives(self, sigma_function, rng):
        theta = rng.uniform(-np.pi, np.pi, sigma_function.n_params)
        shift = BCShift(kind=ShiftKind.POINT, anchor=(0.0,), target=3.0)
        shifted = evaluate_shifted(sigma_function, shift, theta, 0.3, orders=(1,))
        assert shifted == pytest.approx(evaluate(sigma_function, theta, 0.3, orders=(1,)))

    def test_time_derivative_not_shifted(self, burgers_function, rng):
        theta = rng.uniform(-np.pi, np.pi, burgers_function.n_params)
        shift = BurgersProblem().bc_shifts()["u"]
        points = np.array([[0.2, 0.0], [0.2, 0.5]])
        field = ShiftedField(burgers_function, (0, 1), points, shift)
        assert field.shift is None
        np.testing.assert_allclose(field.values(burgers_function.probabilities(theta)),
                                   evaluate_grid(burgers_function, theta, points, orders=(0, 1)))

    def test_slice_shift_needs_initial_condition(self):
        with pytest.raises(ValueError):
            BCShift(kind=ShiftKind.SLICE)


class TestConfiguration:
    def test_csv_fields(self):
        encoding = EncodingConfig.model_validate({
            "form": "k_local_pauli", "registers": "2", "terms": "0.5:ZI, 1:IZ", "locality": "1",
        })
        assert encoding.registers == (2,)
        assert [str(t) for t in encoding.terms] == ["0.5:ZI", "1:IZ"]

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            EncodingConfig.model_validate({"form": "one_local_z", "registers": "3", "depht": "2"})

    def test_preset_encodings(self):
        functions = build_benchmark_encodings(preset_config("hypoelastic"))
        assert [f.name for f in functions] == ["u", "sigma"]
        assert functions[0].circuit.n_qubits == 15
        assert functions[1].circuit.n_qubits == 4

    def test_burgers_stack_from_settings(self):
        (function,) = build_benchmark_encodings(preset_config("burgers-case2"))
        assert function.circuit.n_qubits == 5
        assert function.stack.copies == 10
        assert function.stack.total_qubits == 50

    def test_missing_encoding(self):
        config = preset_config("hypoelastic")
        broken = config.model_copy(update={"encoding": {"u": config.encoding["u"]}})
        with pytest.raises(ValueError):
            build_benchmark_encodings(broken)

    def test_extra_encoding(self):
        config = preset_config("burgers-case1")
        broken = config.model_copy(update={"encoding": {**config.encoding, "v": config.encoding["u"]}})
        with pytest.raises(ValueError):
            build_benchmark_encodings(broken)
