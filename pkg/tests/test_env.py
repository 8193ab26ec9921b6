import numpy as np
import pytest

from pacbandit.env import (
    BanditEnvironment,
    VarianceLedger,
    accumulate_variance,
    best_arm,
    pull,
    step_conditional_variance,
    step_variances,
)


def test_best_arm_and_gaps():
    env = BanditEnvironment([0.2, 0.9, 0.9, 0.1])
    assert best_arm(env) == 1
    assert env.worst_arm == 3
    np.testing.assert_allclose(env.gaps, [0.7, 0.0, 0.0, 0.8])


@pytest.mark.parametrize("means", [[0.5], [0.5, 1.5], [-0.1, 0.5]])
def test_environment_validation(means):
    with pytest.raises(ValueError):
        BanditEnvironment(means)


def test_pull_out_of_range():
    env = BanditEnvironment([0.5, 0.5])
    with pytest.raises(IndexError):
        pull(env, 2, np.random.default_rng(0))


def test_bernoulli_mean():
    env = BanditEnvironment([0.4, 0.6])
    rng = np.random.default_rng(11)
    u = rng.random(10**6)
    r = env.rewards_from_uniforms(np.zeros(10**6, dtype=int), u)
    assert set(np.unique(r)) <= {0.0, 1.0}
    assert abs(r.mean() - 0.4) <= 0.0015


def test_fixed_rewards():
    env = BanditEnvironment([0.3, 0.7], reward_law="fixed")
    assert pull(env, 1, np.random.default_rng(0)) == 0.7


def test_step_variance_examples():
    assert step_conditional_variance(BanditEnvironment([0.9, 0.5]), [0.5, 0.5], 1) == pytest.approx(2.64, rel=1e-12)
    env = BanditEnvironment([1.0, 0.0], reward_law="fixed")
    assert step_conditional_variance(env, [0.5, 0.5], 1) == pytest.approx(1.0, rel=1e-12)
    v = step_variances(BanditEnvironment([0.9, 0.5]), np.array([[0.5, 0.5]]))
    assert v[0, 0] == 0.0


def test_step_variance_needs_support():
    with pytest.raises(ValueError):
        step_conditional_variance(BanditEnvironment([0.9, 0.5]), [1.0, 0.0], 1)


def _iw_differences(env, pi, a, n, rng):
    arms = rng.choice(env.K, size=n, p=pi)
    r = env.rewards_from_uniforms(arms, rng.random(n))
    star = env.best_arm
    return (arms == star) * r / pi[star] - (arms == a) * r / pi[a] - env.gaps[a]


def test_step_variance_monte_carlo():
    env = BanditEnvironment([0.8, 0.5, 0.3])
    pi = np.array([0.5, 0.3, 0.2])
    rng = np.random.default_rng(99)
    n = 10**7
    x = np.concatenate([_iw_differences(env, pi, 2, n // 10, rng) for _ in range(10)])
    exact = step_conditional_variance(env, pi, 2)
    # standard error of the second moment estimate
    se = (x**2).std() / np.sqrt(n)
    assert abs(x.var() - exact) <= 3 * se
    assert abs(x.mean()) <= 3 * x.std() / np.sqrt(n)


def test_importance_weights_unbiased():
    env = BanditEnvironment([0.7, 0.4, 0.2])
    pi = np.array([0.2, 0.5, 0.3])
    rng = np.random.default_rng(4)
    n = 2 * 10**6
    arms = rng.choice(3, size=n, p=pi)
    r = env.rewards_from_uniforms(arms, rng.random(n))
    for a in range(3):
        est = (arms == a) * r / pi[a]
        assert abs(est.mean() - env.arm_means[a]) <= 3 * est.std() / np.sqrt(n)


def test_variance_ledger():
    env = BanditEnvironment([0.9, 0.5])
    led = accumulate_variance(VarianceLedger.fresh(2), env, [0.5, 0.5])
    led = accumulate_variance(led, env, [0.5, 0.5])
    assert led.t == 2
    np.testing.assert_allclose(led.W, [0.0, 5.28])
    with pytest.raises(ValueError):
        accumulate_variance(led, env, [1.0, 0.0])
