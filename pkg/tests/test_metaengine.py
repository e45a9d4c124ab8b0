import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import logistic_grad
from structmeta.autodiff import Tensor, finite_diff_grad, grad, relative_error
from structmeta.errors import ConfigError, DivergenceError, NumericalError
from structmeta.metaengine import (
    MetaConfig,
    TrainState,
    accuracies,
    evaluate,
    initial_split,
    inner_update,
    loss_grad,
    loss_value,
    meta_gradient,
    meta_step,
    meta_test_loss,
    normalize_weights,
    run_independent,
    run_invenio,
    run_shared_maml,
    run_transfer,
    task_similarity,
    taylor_residual,
)
from structmeta.metaengine.train import head_size, init_paramsets
from structmeta.models import ArchSpec, Linear, ParamSet, build, loss, mlp, task_arch
from structmeta.taskgen import Dataset, TaskDatabase, gen_pretrain_corpus, gen_synthetic_tasks, split

LOGISTIC = ArchSpec((Linear(1, 1),), (1,), "binary-bce")


def _ds(xs, ys, name=""):
    return Dataset(np.asarray(xs, float).reshape(len(ys), -1), ys, name=name)


def _random_ds(rng, n=10, dim=3):
    return Dataset(rng.standard_normal((n, dim)), rng.integers(0, 2, n))


# -- inner update -------------------------------------------------------------

def test_zero_gradient_is_fixed_point(rng):
    arch = mlp([3, 4, 1])
    theta = ParamSet(0, np.zeros(arch.n_params))
    data = Dataset(rng.standard_normal((6, 3)), [0, 1] * 3)
    assert np.array_equal(inner_update(arch, theta, data, 0.1).flat, theta.flat)


def test_inner_update_is_one_gradient_step(rng, small_mlp, toy_dataset):
    theta = build(small_mlp, 0)
    out = inner_update(small_mlp, theta, toy_dataset, 0.1)
    np.testing.assert_array_equal(out.flat, theta.flat - 0.1 * loss_grad(small_mlp, theta, toy_dataset))
    assert out is not theta and np.array_equal(theta.flat, build(small_mlp, 0).flat)


def test_default_inner_rate_on_task_arch(rng):
    arch = task_arch(32)
    cfg = MetaConfig()
    assert cfg.alpha == 1e-4 and cfg.delta == 1e-3
    theta = build(arch, 0)
    data = Dataset(rng.random((2, 32, 32, 3)), [0, 1])
    moved = inner_update(arch, theta, data, cfg.alpha)
    g = loss_grad(arch, theta, data)
    assert np.linalg.norm(moved.flat - theta.flat) == pytest.approx(1e-4 * np.linalg.norm(g))


def test_inner_update_rejects_non_finite(small_mlp, toy_dataset):
    theta = build(small_mlp, 0, task_id=5)
    theta.flat[0] = np.nan
    with pytest.raises(NumericalError) as err:
        inner_update(small_mlp, theta, toy_dataset, 0.1)
    assert err.value.task == 5


# -- similarity ---------------------------------------------------------------

def test_self_similarity_is_squared_gradient_norm(small_mlp, toy_dataset):
    theta = build(small_mlp, 2)
    g = loss_grad(small_mlp, theta, toy_dataset)
    assert task_similarity(small_mlp, theta, toy_dataset, toy_dataset) == pytest.approx(g @ g)


def test_orthogonal_excitation_gives_zero_similarity():
    arch = ArchSpec((Linear(2, 1),), (2,), "binary-bce")
    theta = np.zeros(3)
    di = _ds([[1, 0], [-1, 0]], [0, 1])
    dj = _ds([[0, 2], [0, -2]], [0, 1])
    assert task_similarity(arch, theta, di, dj) == 0.0


@pytest.mark.parametrize("w,b", [(0.7, 0.0), (-1.3, 0.0), (0.4, -0.2)])
def test_logistic_similarity_matches_closed_form(w, b):
    di = _ds([0.5, -2.0], [1, 0])
    dj = _ds([1.5, 0.3], [0, 1])
    gi = logistic_grad(w, b, [0.5, -2.0], [1, 0])
    gj = logistic_grad(w, b, [1.5, 0.3], [0, 1])
    want = gi[0] * gj[0] + gi[1] * gj[1]
    assert abs(task_similarity(LOGISTIC, np.array([w, b]), di, dj) - want) <= 1e-10


@given(st.integers(0, 2**31))
def test_self_similarity_non_negative(seed):
    r = np.random.default_rng(seed)
    arch = mlp([3, 4, 1])
    data = _random_ds(r, n=int(r.integers(1, 12)))
    assert task_similarity(arch, build(arch, seed % 997), data, data) >= 0


# -- weights ------------------------------------------------------------------

def test_weight_examples():
    assert normalize_weights([-4.2]).tolist() == [1.0]
    assert normalize_weights([2, 2]).tolist() == [0.5, 0.5]
    assert normalize_weights([3, -1]).tolist() == [1.0, 0.0]
    soft = normalize_weights([3, -1], "softmax")
    np.testing.assert_allclose(soft, np.array([math.exp(3), math.exp(-1)]) / (math.exp(3) + math.exp(-1)))
    assert soft[0] == pytest.approx(0.982, abs=1e-3)
    np.testing.assert_allclose(normalize_weights([3, -1], "signed-l1"), [0.75, -0.25])
    assert normalize_weights([-1, -2]).tolist() == [0.5, 0.5]


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e6, 1e6)))
def test_clamp_l1_is_a_distribution(etas):
    w = normalize_weights(etas)
    assert (w >= 0).all() and abs(w.sum() - 1) <= 1e-12


# -- meta-test loss -----------------------------------------------------------

def test_single_weighted_task_is_plain_loss(small_mlp, toy_dataset):
    theta = build(small_mlp, 1)
    assert meta_test_loss(small_mlp, theta, [toy_dataset], [1.0]).item() == loss_value(small_mlp, theta, toy_dataset)


def test_half_weights_over_identical_tasks(small_mlp, toy_dataset):
    theta = build(small_mlp, 1)
    got = meta_test_loss(small_mlp, theta, [toy_dataset, toy_dataset], [0.5, 0.5]).item()
    assert got == pytest.approx(loss_value(small_mlp, theta, toy_dataset), rel=1e-15)


def test_weighted_sum_of_known_losses():
    # one positive sample at x with w=1, b=0 has loss softplus(-x); invert for x
    tasks = [_ds([-math.log(math.expm1(L))], [1]) for L in (0.2, 0.4, 0.6)]
    got = meta_test_loss(LOGISTIC, np.array([1.0, 0.0]), tasks, [0.5, 0.3, 0.2]).item()
    assert got == pytest.approx(0.34, abs=1e-12)


@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_meta_test_loss_is_homogeneous_in_weights(c, seed):
    r = np.random.default_rng(seed)
    arch = mlp([3, 4, 1])
    tasks = [_random_ds(r) for _ in range(3)]
    w = normalize_weights(r.random(3))
    theta = build(arch, seed)
    base = meta_test_loss(arch, theta, tasks, w).item()
    assert meta_test_loss(arch, theta, tasks, w * c).item() == pytest.approx(c * base, rel=1e-12)


# -- meta-gradient ------------------------------------------------------------

def _composite(arch, train, tests, weights, alpha, beta):
    def f(th):
        t = Tensor(th, requires_grad=True)
        g = grad(loss(arch, t, train), t).data
        return loss(arch, th, train).item() + beta * meta_test_loss(arch, th - alpha * g, tests, weights).item()

    return f


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exact_meta_gradient_matches_finite_differences(seed):
    r = np.random.default_rng(seed)
    arch = mlp([2, 8, 1])  # 33 parameters
    train, tests = _random_ds(r, dim=2), [_random_ds(r, dim=2) for _ in range(3)]
    theta = build(arch, seed).flat
    g, _, _, _, w = meta_gradient(arch, theta, train, tests, 0.5, 0.7)
    fd = finite_diff_grad(_composite(arch, train, tests, w, 0.5, 0.7), theta)
    assert relative_error(g, fd) <= 1e-4


def test_first_order_drops_curvature(rng, small_mlp):
    train, tests = _random_ds(rng), [_random_ds(rng)]
    theta = build(small_mlp, 0).flat
    g, *_ = meta_gradient(small_mlp, theta, train, tests, 0.1, 1.0, grad_order="first_order", weights=[1.0])
    gl = loss_grad(small_mlp, theta, train)
    gt = loss_grad(small_mlp, theta - 0.1 * gl, tests[0])
    np.testing.assert_allclose(g, gl + gt, atol=1e-14)


def test_meta_gradient_reports_similarities(rng, small_mlp):
    train, tests = _random_ds(rng), [_random_ds(rng), _random_ds(rng)]
    theta = build(small_mlp, 0)
    _, L, G, etas, w = meta_gradient(small_mlp, theta.flat, train, tests, 0.1, 1.0)
    assert etas == pytest.approx([task_similarity(small_mlp, theta, train, d) for d in tests], rel=1e-12)
    assert L == pytest.approx(loss_value(small_mlp, theta, train))
    np.testing.assert_allclose(w, normalize_weights(etas))


# -- training loops -----------------------------------------------------------

def _cfg(**kw):
    base = dict(alpha=0.1, beta=1.0, delta=0.1, n_iter=4, meta_test_batch=2, seed=0)
    return MetaConfig(**{**base, **kw})


def test_beta_zero_step_is_plain_gradient_step(planted_db):
    arch = mlp([4, 5, 1])
    cfg = _cfg(beta=0.0)
    state = TrainState(arch, init_paramsets(arch, planted_db.K, 0), initial_split(planted_db.K, cfg))
    i = state.split[0][0]
    res = meta_step(state, planted_db, i, cfg)
    want = state.paramsets[i].flat - 0.1 * loss_grad(arch, state.paramsets[i], planted_db.datasets[i])
    assert np.array_equal(res.params.flat, want)


def test_beta_zero_matches_independent_bit_for_bit(planted_db):
    arch = mlp([4, 5, 1])
    cfg = _cfg(beta=0.0, n_iter=5)
    a = run_invenio(planted_db, cfg, arch)
    b = run_independent(planted_db, cfg, arch)
    assert all(p == q for p, q in zip(a.paramsets, b.paramsets))
    la = [(r["iteration"], r["task"], r["loss"]) for r in a.history]
    lb = [(r["iteration"], r["task"], r["loss"]) for r in b.history]
    assert la == lb


def test_swap_invariant_over_ten_iterations(planted_db):
    state = run_invenio(planted_db, _cfg(n_iter=10), mlp([4, 5, 1]))
    by_iter = {}
    for r in state.history:
        by_iter.setdefault(r["iteration"], set()).add(r["task"])
    K = set(range(planted_db.K))
    for it in range(9):
        a, b = by_iter[it], by_iter[it + 1]
        assert not a & b and a | b == K
        for j, _ in [e for r in state.history if r["iteration"] == it for e in r["etas"]]:
            assert j not in a


def test_two_identical_tasks():
    d = gen_synthetic_tasks(1, 1, 3, 20, seed=0).datasets[0]
    db = TaskDatabase([d, Dataset(d.inputs, d.labels, name="twin")])
    arch = mlp([3, 4, 1])
    cfg = _cfg(meta_test_batch=1, n_iter=2, delta=0.5)
    state = run_invenio(db, cfg, arch)
    assert all(r["weights"] == [1.0] for r in state.history)
    before = init_paramsets(arch, 2, cfg.seed)
    for t in range(2):
        assert loss_value(arch, state.paramsets[t], d) < loss_value(arch, before[t], d)


def test_thread_count_does_not_change_results(planted_db):
    arch = mlp([4, 5, 1])
    a = run_invenio(planted_db, _cfg(), arch, threads=1)
    b = run_invenio(planted_db, _cfg(), arch, threads=4)
    assert a.history == b.history and all(p == q for p, q in zip(a.paramsets, b.paramsets))


def test_divergence_aborts_with_context(planted_db):
    with pytest.raises(DivergenceError) as err:
        run_invenio(planted_db, _cfg(divergence_limit=1e-3), mlp([4, 5, 1]))
    assert err.value.iteration == 0 and err.value.task is not None


def test_batch_larger_than_split_is_a_config_error(planted_db):
    with pytest.raises(ConfigError):
        run_invenio(planted_db, _cfg(meta_test_batch=5), mlp([4, 5, 1]))


def test_eval_records_and_checkpoints(planted_db):
    seen = []
    state = run_invenio(planted_db, _cfg(eval_every=2), mlp([4, 5, 1]), on_checkpoint=lambda s: seen.append(s.iter))
    evals = [r for r in state.history if r["type"] == "eval"]
    assert [r["iteration"] for r in evals] == [1, 3] and seen == [1, 3]
    assert len(evals[0]["accuracy"]) == planted_db.K


def test_shared_with_one_task_is_plain_training():
    d = gen_synthetic_tasks(1, 1, 3, 20, seed=0).datasets[0]
    arch = mlp([3, 4, 1])
    cfg = _cfg(n_iter=3)
    got = run_shared_maml(TaskDatabase([d]), cfg, arch).flat
    theta = build(arch, 0).flat
    for _ in range(3):
        theta = theta - 0.1 * loss_grad(arch, theta, d)
    assert np.array_equal(got, theta)


def test_shared_beta_zero_is_multitask_descent(planted_db):
    arch = mlp([4, 5, 1])
    cfg = _cfg(beta=0.0, n_iter=2)
    got = run_shared_maml(planted_db, cfg, arch).flat
    train, test = initial_split(planted_db.K, cfg)
    theta = build(arch, 0).flat
    for group in (train, test):
        g = sum(loss_grad(arch, theta, planted_db.datasets[i]) for i in group) / len(group)
        theta = theta - 0.1 * g
    np.testing.assert_allclose(got, theta, atol=1e-14)


def test_shared_matches_tied_uniform_invenio_step(planted_db):
    db = TaskDatabase(planted_db.datasets[:2])
    arch = mlp([4, 5, 1])
    cfg = _cfg(meta_test_batch=1, n_iter=1)
    shared = run_shared_maml(db, cfg, arch).flat
    (i,), (j,) = initial_split(2, cfg)
    theta = build(arch, 0).flat
    g, *_ = meta_gradient(arch, theta, db.datasets[i], [db.datasets[j]], 0.1, 1.0, weights=[1.0])
    np.testing.assert_allclose(shared, theta - 0.1 * g, atol=1e-13)


def test_transfer_without_finetuning_is_trunk_plus_fresh_head(planted_db):
    arch = mlp([4, 5, 1])
    corpus = gen_pretrain_corpus(4, n=40, seed=0)
    cfg = _cfg()
    models = run_transfer(planted_db, corpus, cfg, arch, pretrain_steps=3, finetune_steps=0)
    trunk = arch.n_params - head_size(arch)
    for t, p in enumerate(models):
        assert np.array_equal(p.flat[:trunk], models[0].flat[:trunk])
        assert np.array_equal(p.flat[trunk:], build(arch, t).flat[trunk:])
    assert not np.array_equal(models[0].flat[:trunk], build(arch, 0).flat[:trunk])


def test_transfer_separable_task_reaches_full_accuracy():
    x = np.linspace(-3, 3, 40)[:, None] + np.array([[0.0, 0.0]])
    x[:, 1] = np.tile([0.3, -0.3], 20)
    y = (x[:, 0] > 0).astype(int)
    db = split(TaskDatabase([Dataset(x, y, name="sep"), Dataset(x, y, name="sep2")]), 0.25, 0)
    arch = mlp([2, 4, 1])
    models = run_transfer(db, gen_pretrain_corpus(2, n=40, seed=0), _cfg(), arch, 20, 400, 0.5)
    assert accuracies(arch, models, db) == [1.0, 1.0]


# -- evaluation and Taylor residual ------------------------------------------

def test_evaluate_cases(rng):
    arch = LOGISTIC
    x = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    assert evaluate(arch, np.array([1.0, 0.0]), _ds(x, [0, 0, 1, 1])) == 1.0
    # hand count: predictions are [0,0,1,1,0,0,1,1,1,1]; labels below match 7 of 10
    x10 = np.array([-2, -1, 1, 2, -3, -0.5, 0.5, 3, 4, 5.0])
    assert evaluate(arch, np.array([1.0, 0.0]), _ds(x10, [0, 1, 1, 0, 0, 0, 1, 1, 0, 1])) == 0.7
    big = _random_ds(rng, n=4000)
    assert abs(evaluate(mlp([3, 4, 1]), build(mlp([3, 4, 1]), 0), big) - 0.5) < 0.05


def test_taylor_residual_zero_step(small_mlp, toy_dataset, rng):
    assert taylor_residual(small_mlp, build(small_mlp, 0), toy_dataset, _random_ds(rng), 0.0) == 0.0


def test_taylor_residual_equals_second_order_term(small_mlp, rng):
    train, test = _random_ds(rng), _random_ds(rng)
    theta = build(small_mlp, 3).flat
    gl = loss_grad(small_mlp, theta, train)
    t = Tensor(theta, requires_grad=True)
    gg = grad(loss(small_mlp, t, test), t, create_graph=True)
    hv = grad((gg * Tensor(gl)).sum(), t).data
    alpha = 1e-3
    want = 0.5 * alpha**2 * abs(gl @ hv)
    assert taylor_residual(small_mlp, theta, train, test, alpha) == pytest.approx(want, rel=1e-2)


@pytest.mark.parametrize("seed", range(3))
def test_taylor_residual_is_second_order(seed):
    r = np.random.default_rng(seed)
    arch = mlp([3, 6, 1])
    train, test = _random_ds(r, 20), _random_ds(r, 20)
    theta = build(arch, seed)
    ratio = taylor_residual(arch, theta, train, test, 0.02) / taylor_residual(arch, theta, train, test, 0.01)
    assert 2.5 <= ratio <= 6


# -- config -------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        MetaConfig(alpha=0)
    with pytest.raises(ConfigError):
        MetaConfig(weight_mode="l2")
    with pytest.raises(ConfigError):
        MetaConfig.from_dict({"learning_rate": 1})
    cfg = MetaConfig()
    assert MetaConfig.from_dict(cfg.to_dict()) == cfg and cfg.gamma == 0.0
    assert cfg.n_train(2) == 1 and cfg.n_train(12) == 6


@given(st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_initial_split_partitions(K, frac, seed):
    cfg = MetaConfig(split_fraction=frac, seed=seed)
    train, test = initial_split(K, cfg)
    assert sorted(train + test) == list(range(K)) and train and test
