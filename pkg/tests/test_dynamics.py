import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcinit.bp import bp_loss
from pcinit.dynamics import (
    Batch, DivergenceError, TrainConfig, evaluate_classify, evaluate_reconstruct, inference_step,
    run_inference, state_gradients, train_minibatch, weight_gradients, weight_update,
)
from pcinit.inits import InfeasibleInitError, InitStrategy, init_forward
from pcinit.model import NeuronState, PCNetwork, compute_errors, energy, forward, make_state
from pcinit.optim import SGD
from pcinit.smm import SMMLedger

from conftest import central_diff, random_net, random_state, rel_err
from oracles import linear_chain_minimizer


def scalar_chain(n_layers, act="identity"):
    return PCNetwork([1] * (n_layers + 1), [np.eye(1) for _ in range(n_layers)],
                     [np.zeros(1) for _ in range(n_layers)], [act] * n_layers)


# ---- inference -------------------------------------------------------------

def test_hand_inference_step():
    net = scalar_chain(2)
    state = NeuronState([np.array([[0.0]]), np.array([[0.0]]), np.array([[1.0]])])
    grads = state_gradients(net, state, compute_errors(net, state))
    assert grads[1][0, 0] == -1.0
    new = inference_step(net, state, compute_errors(net, state), 0.5)
    assert new.layers[1][0, 0] == 0.5
    assert new.step == 1


def test_zero_errors_leave_state_unchanged():
    net = random_net([3, 4, 4, 2], clamp_output=False)
    x = np.random.default_rng(0).standard_normal((5, 3))
    state = NeuronState(forward(net, x))
    new = inference_step(net, state, compute_errors(net, state), 0.3)
    for a, b in zip(state.layers, new.layers):
        assert np.array_equal(a, b)


@pytest.mark.parametrize("act", ["tanh", "gelu", "elu", "leaky_relu", "identity"])
@pytest.mark.parametrize("clamps", [(True, True), (True, False), (False, True)])
def test_state_gradient_matches_finite_differences(act, clamps):
    net = random_net([4, 6, 5, 3], act, seed=3, clamp_input=clamps[0], clamp_output=clamps[1])
    state = random_state(net, n=3, seed=4)
    grads = state_gradients(net, state, compute_errors(net, state))
    assert sorted(grads) == net.free_layers()
    for l, g in grads.items():
        fd = central_diff(lambda: energy(compute_errors(net, state)), state.layers[l])
        assert rel_err(g, fd) < 1e-5


def test_run_inference_requires_positive_T_and_T1_is_one_step():
    net = random_net([3, 4, 2])
    state = random_state(net)
    with pytest.raises(ValueError):
        run_inference(net, state, 0, 0.1)
    one, _, traj = run_inference(net, state, 1, 0.1)
    ref = inference_step(net, state, compute_errors(net, state), 0.1)
    for a, b in zip(one.layers, ref.layers):
        assert np.array_equal(a, b)
    assert len(traj) == 2


def test_clamped_layers_bit_identical_during_inference():
    net = random_net([3, 5, 5, 2])
    state = random_state(net)
    x, y = state.layers[0].copy(), state.layers[-1].copy()
    out, _, _ = run_inference(net, state, 20, 0.1)
    assert np.array_equal(out.layers[0], x) and np.array_equal(out.layers[-1], y)
    assert out.layers[0] is state.layers[0]


def test_run_inference_charges_two_per_step():
    net = random_net([3, 4, 2])
    ledger = SMMLedger()
    run_inference(net, random_state(net), 7, 0.1, ledger)
    assert ledger.counts["inference"] == 14


def test_divergence_names_the_step():
    net = random_net([3, 8, 8, 2], "identity", scale=3.0)
    with pytest.raises(DivergenceError) as info:
        run_inference(net, random_state(net), 50, 5.0)
    assert info.value.step is not None and str(info.value.step) in str(info.value)


def test_energy_monotone_below_stability_threshold():
    net = random_net([4, 6, 6, 3], "tanh", seed=8)
    state = random_state(net, seed=9)
    # sweep alpha from large to small until the trajectory is monotone
    for alpha in (1.0, 0.5, 0.2, 0.1, 0.05):
        try:
            _, _, traj = run_inference(net, state, 100, alpha)
        except DivergenceError:
            continue
        f = [sum(t) for t in traj]
        if all(b <= a + 1e-12 for a, b in zip(f, f[1:])):
            break
    else:
        pytest.fail("no monotone step size found")
    for smaller in (alpha / 2, alpha / 4):
        _, _, traj = run_inference(net, state, 100, smaller)
        f = [sum(t) for t in traj]
        assert all(b <= a + 1e-12 for a, b in zip(f, f[1:]))


def first_step_changes(net, x, y):
    state = init_forward(net, make_state(net, len(x), x, y))
    new = inference_step(net, state, compute_errors(net, state), 0.1)
    return [l for l in range(1, net.n_layers) if not np.array_equal(state.layers[l], new.layers[l])]


def test_forward_init_first_step_only_moves_last_hidden_layer():
    net = random_net([3, 5, 5, 5, 2], seed=2)
    rng = np.random.default_rng(0)
    assert first_step_changes(net, rng.standard_normal((4, 3)), rng.standard_normal((4, 2))) == [3]


# ---- linear-chain oracle ---------------------------------------------------

@pytest.mark.parametrize("L", [2, 3, 4])
def test_linear_chain_converges_to_least_squares_minimizer(L):
    dims = [3] + [4] * (L - 1) + [2]
    net = random_net(dims, "identity", seed=L)
    rng = np.random.default_rng(L)
    x, y = rng.standard_normal((3, dims[0])), rng.standard_normal((3, dims[-1]))
    state = make_state(net, 3, x, y)
    out, _, _ = run_inference(net, state, 4000, 0.2)
    oracle = linear_chain_minimizer(net, x, y)
    for l in range(1, L):
        assert np.max(np.abs(out.layers[l] - oracle[l - 1])) < 1e-6


# ---- locality ----------------------------------------------------------------

def poisoned(net, state, keep_layers, keep_weights):
    errs = compute_errors(net, state)
    net = net.copy()
    for l in range(net.n_layers):
        if l not in keep_weights:
            net.weights[l] = np.full_like(net.weights[l], np.nan)
    for i in range(len(errs.errors)):
        if i + 1 not in keep_layers:
            errs.errors[i] = np.full_like(errs.errors[i], np.nan)
            errs.preacts[i] = np.full_like(errs.preacts[i], np.nan)
    return net, errs


def test_neuron_update_reads_only_adjacent_quantities():
    net = random_net([3, 4, 5, 4, 2], seed=1)
    state = random_state(net)
    ref = state_gradients(net, state, compute_errors(net, state))
    for l in range(1, net.n_layers):
        pnet, perrs = poisoned(net, state, {l, l + 1}, {l})
        with np.errstate(invalid="ignore"):
            g = state_gradients(pnet, state, perrs)
        assert np.array_equal(g[l], ref[l])


def test_weight_update_reads_only_local_quantities():
    net = random_net([3, 4, 5, 2], seed=1)
    state = random_state(net)
    ref_w, ref_b = weight_gradients(net, state, compute_errors(net, state))
    for l in range(net.n_layers):
        pnet, perrs = poisoned(net, state, {l + 1}, set())
        layers = [h if i == l else np.full_like(h, np.nan) for i, h in enumerate(state.layers)]
        with np.errstate(invalid="ignore"):
            gw, gb = weight_gradients(pnet, NeuronState(layers), perrs)
        assert np.array_equal(gw[l], ref_w[l]) and np.array_equal(gb[l], ref_b[l])


# ---- learning ----------------------------------------------------------------

def test_hand_weight_update():
    net = PCNetwork([1, 1], [np.zeros((1, 1))], [np.zeros(1)], ["identity"])
    state = NeuronState([np.array([[2.0]]), np.array([[1.0]])])
    errs = compute_errors(net, state)
    f0 = energy(errs)
    gw, gb = weight_gradients(net, state, errs)
    assert gw[0][0, 0] == -2.0 and gb[0][0] == -1.0
    weight_update(net, state, errs, SGD(0.1))
    assert net.weights[0][0, 0] == pytest.approx(0.2)
    assert energy(compute_errors(net, state)) < f0


def test_zero_errors_leave_weights_unchanged():
    net = random_net([3, 4, 2], clamp_output=False)
    state = NeuronState(forward(net, np.ones((2, 3))))
    before = [p.copy() for p in net.params()]
    weight_update(net, state, compute_errors(net, state), SGD(0.5))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params()))


@pytest.mark.parametrize("act", ["tanh", "gelu", "leaky_relu"])
def test_weight_gradient_matches_finite_differences(act):
    net = random_net([4, 8, 6, 3], act, seed=5)
    state = random_state(net, seed=6)
    gw, gb = weight_gradients(net, state, compute_errors(net, state))
    for l in range(net.n_layers):
        f = lambda: energy(compute_errors(net, state))  # noqa: E731
        assert rel_err(gw[l], central_diff(f, net.weights[l])) < 1e-5
        assert rel_err(gb[l], central_diff(f, net.biases[l])) < 1e-5


# ---- minibatch -------------------------------------------------------------

def test_zero_everything_batch_is_a_noop():
    net = random_net([3, 4, 2])
    for p in net.params():
        p[...] = 0
    batch = Batch(np.zeros((5, 3)), np.zeros((5, 2)))
    _, state, stats = train_minibatch(net, batch, InitStrategy("zero"), TrainConfig(T_train=3), optimizer=SGD(0.1))
    assert stats.energy_init == 0 and stats.energy_final == 0
    assert all(np.all(p == 0) for p in net.params())
    assert all(sum(t) == 0 for t in stats.trajectory)


def test_forward_init_energy_equals_bp_loss():
    net = random_net([5, 7, 7, 3], seed=3)
    rng = np.random.default_rng(3)
    x, y = rng.standard_normal((6, 5)), rng.standard_normal((6, 3))
    loss = bp_loss(net, x, y)
    _, _, stats = train_minibatch(net, Batch(x, y), InitStrategy("forward"), TrainConfig(T_train=1),
                                  optimizer=SGD(1e-3))
    assert stats.energy_init == pytest.approx(loss, rel=1e-12)


@pytest.mark.parametrize("L", [2, 3, 5])
def test_forward_init_batch_smm_at_most_3L(L):
    net = random_net([3] + [4] * (L - 1) + [2])
    ledger = SMMLedger()
    rng = np.random.default_rng(0)
    train_minibatch(net, Batch(rng.random((4, 3)), rng.random((4, 2))), InitStrategy("forward"),
                    TrainConfig(T_train=L), ledger, optimizer=SGD(0.01))
    assert ledger.train_total == 3 * L


def test_forward_init_rejected_on_decoder():
    dec = random_net([2, 4, 3], clamp_input=False)
    with pytest.raises(InfeasibleInitError):
        train_minibatch(dec, Batch(None, np.zeros((2, 3))), InitStrategy("forward"), TrainConfig())


def test_training_reduces_energy_on_fixed_batch():
    net = random_net([4, 8, 3], seed=0)
    rng = np.random.default_rng(0)
    batch = Batch(rng.random((10, 4)), np.eye(3)[rng.integers(0, 3, 10)])
    cfg = TrainConfig(T_train=5, beta=0.01)
    opt = cfg.weight_optimizer()
    first = [train_minibatch(net, batch, InitStrategy("forward"), cfg, optimizer=opt)[2].energy_init]
    for _ in range(50):
        first.append(train_minibatch(net, batch, InitStrategy("forward"), cfg, optimizer=opt)[2].energy_init)
    assert first[-1] < 0.5 * first[0]


# ---- evaluation ------------------------------------------------------------

def test_classify_constant_class_zero():
    net = random_net([3, 4, 3])
    net.weights[-1][...] = 0
    net.biases[-1][...] = [1.0, 0.0, 0.0]
    x = np.random.default_rng(0).standard_normal((20, 3))
    assert evaluate_classify(net, x, np.zeros(20, dtype=int)) == 1.0


def test_classify_ties_go_to_lowest_index():
    net = random_net([2, 3])
    net.weights[0][...] = 0
    net.biases[0][...] = [0.5, 0.5, 0.5]
    assert evaluate_classify(net, np.zeros((4, 2)), np.zeros(4, dtype=int)) == 1.0


def test_classify_random_labels_near_chance():
    C, n = 10, 4000
    net = random_net([8, 16, C], seed=1)
    rng = np.random.default_rng(2)
    acc = evaluate_classify(net, rng.standard_normal((n, 8)), rng.integers(0, C, n))
    sigma = np.sqrt(0.1 * 0.9 / n)
    assert abs(acc - 1 / C) < 3 * sigma


def test_classify_is_deterministic():
    net = random_net([8, 16, 4], seed=4)
    x = np.random.default_rng(0).standard_normal((50, 8))
    labels = np.arange(50) % 4
    assert evaluate_classify(net, x, labels) == evaluate_classify(net.copy(), x, labels)


def decoder(seed=0):
    return random_net([2, 6, 5], "tanh", seed=seed, clamp_input=False)


def test_reconstruct_zero_steps_gives_bias_image():
    net = decoder()
    y = np.random.default_rng(0).random((3, 5))
    recon, mse = evaluate_reconstruct(net, y, 0, 0.1)
    img = forward(net, np.zeros((1, 2)))[-1]
    assert np.allclose(recon, np.repeat(img, 3, axis=0))
    assert mse == pytest.approx(np.mean((recon - y) ** 2))


def test_reconstruct_self_consistent_target_and_monotone_in_T():
    net = decoder(1)
    h0 = np.random.default_rng(1).standard_normal((4, 2)) * 0.5
    target = forward(net, h0)[-1]
    mses = [evaluate_reconstruct(net, target, T, 0.1)[1] for T in (1, 10, 100, 3000)]
    assert all(b <= a + 1e-15 for a, b in zip(mses, mses[1:]))
    assert mses[-1] < 1e-8


def test_reconstruct_rejects_forward_init():
    with pytest.raises(InfeasibleInitError, match="root"):
        evaluate_reconstruct(decoder(), np.zeros((2, 5)), 3, 0.1, strategy=InitStrategy("forward"))


def test_reconstruct_charges_eval_only():
    ledger = SMMLedger()
    evaluate_reconstruct(decoder(), np.zeros((2, 5)), 4, 0.1, ledger)
    assert ledger.counts["eval"] == 2 * 4 + 2 and ledger.train_total == 0


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), T=st.integers(1, 6))
def test_clamps_hold_for_random_configs(seed, T):
    net = random_net([2, 3, 3, 2], seed=seed)
    state = random_state(net, seed=seed)
    out, _, _ = run_inference(net, state, T, 0.05)
    assert out.layers[0] is state.layers[0] and out.layers[-1] is state.layers[-1]
