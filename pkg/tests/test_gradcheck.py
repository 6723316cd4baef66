import numpy as np
import pytest

from emresformer import tensor as T
from emresformer.blocks import Scope, emb_forward, emb_init
from emresformer.em import EmConfig
from emresformer.errors import GradCheckError
from emresformer.gradcheck import grad_check, grad_check_param
from emresformer.gradcheck_suite import failures, run_suite
from emresformer.tensor import Tensor


def test_sum_of_squares_passes():
    rep = grad_check(lambda x: T.sum(T.square(x)), np.array([1.0, 2.0]))
    assert rep.passed
    np.testing.assert_allclose(rep.analytic, [2.0, 4.0])


def test_scaled_analytic_gradient_fails():
    def bad_square(x):
        return T.custom("bad_square", x.data ** 2, (x,), lambda g: (1.01 * 2.0 * x.data * g,))

    rep = grad_check(lambda x: T.sum(bad_square(x)), np.array([1.0, 2.0, 3.0]))
    assert not rep.passed
    # error is 0.02|x| / max(1, 2|x|), i.e. 0.01 once |x| >= 0.5
    assert rep.max_rel_error == pytest.approx(0.01, rel=1e-6)


def test_non_finite_evaluation_names_the_element():
    def blowup(x):
        data = np.where(x.data > 1.0, np.inf, x.data)
        return T.custom("blowup", data, (x,), lambda g: (g,))

    with pytest.raises(GradCheckError) as info:
        grad_check(lambda x: T.sum(blowup(x)), np.array([0.5, 1.0 - 1e-6]), step=1e-3)
    assert info.value.index == 1


def test_one_emb_passes(rng):
    em = EmConfig(num_bases=4, iterations=3)
    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in emb_init(rng, 4, 2, 2.66, em).items()}
    p = Scope(params)
    weights = rng.uniform(0.5, 1.5, size=(1, 4, 4, 4))
    f = lambda x: T.sum(T.mul(emb_forward(x, p, 2, em), Tensor(weights)))
    rep = grad_check(f, rng.normal(size=(1, 4, 4, 4)))
    assert rep.passed, str(rep)
    rep = grad_check_param(lambda: f(Tensor(rng.normal(size=(1, 4, 4, 4)) * 0 + 0.3)), params["iofn.bases"])
    assert rep.passed, str(rep)


def test_param_check_restores_the_parameter(rng):
    w = Tensor(rng.normal(size=3), requires_grad=True, name="w")
    before = w.data.copy()
    grad_check_param(lambda: T.sum(T.exp(w)), w)
    assert w.data.tobytes() == before.tobytes() and w.grad is None


@pytest.mark.parametrize("seed", range(3))
def test_primitive_suite_passes_across_seeds(seed):
    results = run_suite(seed=seed, include_model=False)
    assert len(results) > 70
    assert failures(results) == []
