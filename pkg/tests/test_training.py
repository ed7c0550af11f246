import numpy as np
import pytest

from fade import autodiff as ad
from fade.data import LabeledSet, planted_cell_quality, split, xor_patterns
from fade.errors import ConfigError
from fade.graphs import Dag
from fade.hyperarch import DiscreteNetwork, HyperArchitecture
from fade.training import (RegSchedule, TrainConfig, alpha_step, batches, reg_factor, train_discrete,
                           train_hyperarch, weight_step)

SINGLE = Dag.from_edges(1, [])
CHAIN2 = Dag.from_edges(2, [(0, 1)])
CHAIN3 = Dag.from_edges(3, [(0, 1), (1, 2)])


def tiny_splits(n=120, seed=0):
    rng = np.random.default_rng(seed)
    return split(xor_patterns(n, 8, rng=rng), (1, 1, 4), rng)


def tiny_h(members, seed=0, **kw):
    return HyperArchitecture(members, deepest_channels=4, in_channels=1, num_classes=2,
                             rng=np.random.default_rng(seed), **kw)


# --- schedules -----------------------------------------------------------------


def test_schedule_endpoints_and_midpoint():
    s = RegSchedule("cell-independent", 1.0, -1.0, 50, depth=3)
    assert [reg_factor(0, i, s) for i in (1, 2, 3)] == [1.0, 1.0, 1.0]
    assert reg_factor(25, 2, s) == 0.0
    assert reg_factor(49, 1, s) == pytest.approx(-0.96)


def test_cell_dependent_zero_crossings_ordered():
    s = RegSchedule("cell-dependent", 1.0, -1.0, 50, depth=4)
    crossings = [s.zero_crossing(i) for i in range(1, 5)]
    assert crossings == pytest.approx([10.0, 20.0, 30.0, 40.0])
    assert all(a < b for a, b in zip(crossings, crossings[1:]))
    assert reg_factor(10, 1, s) == pytest.approx(0.0)
    assert reg_factor(20, 1, s) == -1.0  # ramp complete, held at r_end
    assert reg_factor(0, 4, s) == 1.0


@pytest.mark.parametrize("mode", ["cell-independent", "cell-dependent"])
def test_schedule_non_increasing(mode):
    s = RegSchedule(mode, 2.0, -0.5, 30, depth=3)
    for cell in (1, 2, 3):
        r = [reg_factor(e, cell, s) for e in range(30)]
        assert all(a >= b for a, b in zip(r, r[1:]))


def test_schedule_range_errors():
    s = RegSchedule(total_epochs=5, depth=2)
    for e, c in [(-1, 1), (5, 1), (0, 0), (0, 3)]:
        with pytest.raises(IndexError):
            reg_factor(e, c, s)
    with pytest.raises(ConfigError):
        RegSchedule("sometimes")
    with pytest.raises(ConfigError):
        RegSchedule(r_start=-1.0, r_end=1.0)


# --- alpha step ----------------------------------------------------------------


def _expected_alpha(alpha, r, lr, tau, rng):
    """Hand evaluation of one regulariser-only step on a single row."""
    g = ad.gumbel_sample(alpha.shape, rng)
    soft = np.exp((alpha + g) / tau)
    soft /= soft.sum()
    k = int(np.argmax(soft))
    # d soft_k / d alpha = soft_k (e_k - soft) / tau; max-norm of the one-hot picks entry k
    grad = r * soft[k] * (np.eye(len(alpha))[k] - soft) / tau
    return alpha - lr * grad, k


@pytest.mark.parametrize("r", [1.0, -1.0])
def test_alpha_step_regulariser_only_hand_value(r):
    h = tiny_h([[SINGLE, CHAIN2]], tau=2.0)
    h.alpha[0].data = np.array([0.4, -0.1])
    start = h.alpha[0].data.copy()
    expected, k = _expected_alpha(start, r, 3.0, 2.0, np.random.default_rng(7))
    out = alpha_step(h, None, r, lr=3.0, clip_value=10.0, rng=np.random.default_rng(7))
    assert out["selected"] == [k]
    np.testing.assert_allclose(h.alpha[0].data, expected, rtol=1e-12)
    share_before = np.exp(start[k]) / np.exp(start).sum()
    share_after = h.alpha_softmax()[0, k]
    if r > 0:
        assert share_after < share_before  # flattening
    else:
        assert share_after > share_before  # sharpening


@pytest.mark.parametrize("dense", [True, False])
def test_alpha_step_zero_r_is_plain_loss_descent(dense):
    h = tiny_h([[SINGLE, CHAIN2, CHAIN3]])
    sp = tiny_splits()
    x, y = sp.arch_train.images[:8], sp.arch_train.labels[:8]
    start = h.alpha[0].data.copy()
    # reference gradient with the same gates
    rng_ref = np.random.default_rng(3)
    gates = h.sample_gates(rng_ref)
    ad.cross_entropy(h.forward(x, gates=gates, dense=dense), y).backward()
    grad = np.clip(h.alpha[0].grad, -10, 10)
    h.alpha[0].grad = None
    for p in h.weight_params().values():
        p.grad = None
    alpha_step(h, (x, y), 0.0, lr=0.5, clip_value=10.0, rng=np.random.default_rng(3), dense=dense)
    np.testing.assert_allclose(h.alpha[0].data, start - 0.5 * grad, rtol=1e-12)


def test_dense_gate_gradient_sees_every_member():
    h = tiny_h([[SINGLE, CHAIN2, CHAIN3]])
    x = np.random.default_rng(0).normal(size=(4, 1, 8, 8))
    gates = h.sample_gates(np.random.default_rng(1))
    sparse_out = h.forward(x, gates=gates)
    dense_out = h.forward(x, gates=gates, dense=True)
    np.testing.assert_array_equal(dense_out.data, sparse_out.data)
    grads = []
    for dense in (False, True):
        g = [ad.parameter(t.data.copy()) for t in gates]
        ad.cross_entropy(h.forward(x, gates=g, dense=dense), [0, 1, 1, 0]).backward()
        grads.append(g[0].grad)
    picked = int(np.argmax(gates[0].data))
    assert np.count_nonzero(grads[0]) == 1 and grads[0][picked] == pytest.approx(grads[1][picked])
    assert np.count_nonzero(grads[1]) == 3


def test_alternation_exclusivity():
    h = tiny_h([[SINGLE, CHAIN2]] * 2)
    sp = tiny_splits()
    batch = (sp.weight_train.images[:8], sp.weight_train.labels[:8])
    weights = {k: p.data.copy() for k, p in h.weight_params().items()}
    alpha = h.alpha_raw().copy()
    alpha_step(h, batch, [0.5, 0.5], 1.0, 10.0, np.random.default_rng(0))
    for k, p in h.weight_params().items():
        np.testing.assert_array_equal(p.data, weights[k])
    alpha = h.alpha_raw().copy()
    weight_step(h, batch, TrainConfig().optimizer(), 10.0, np.random.default_rng(1))
    np.testing.assert_array_equal(h.alpha_raw(), alpha)
    assert any(not np.array_equal(p.data, weights[k]) for k, p in h.weight_params().items())


# --- hyper-architecture training -----------------------------------------------


def test_train_hyperarch_snapshots_on_simplex():
    h = tiny_h([[SINGLE, CHAIN2]] * 2)
    cfg = TrainConfig(epochs=5, batch_size=32, alpha_lr=1.0)
    res = train_hyperarch(h, tiny_splits(), cfg, RegSchedule(total_epochs=5, depth=2), np.random.default_rng(0))
    assert len(res.alpha_history) == 5
    for a in res.alpha_history:
        assert a.shape == (2, 2)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-9)
    assert [r["phase"] for r in res.log[:2]] == ["weights", "alpha"]
    np.testing.assert_array_equal(res.final_alpha(), res.alpha_history[-1])
    np.testing.assert_allclose(res.final_alpha(2), (res.alpha_history[-1] + res.alpha_history[-2]) / 2)


def test_single_member_alpha_stays_at_one():
    h = tiny_h([[CHAIN2], [SINGLE]])
    res = train_hyperarch(h, tiny_splits(), TrainConfig(epochs=2, batch_size=32, alpha_lr=5.0),
                          RegSchedule(total_epochs=2, depth=2), np.random.default_rng(0))
    for a in res.alpha_history:
        np.testing.assert_array_equal(a, np.ones((2, 1)))


def test_train_hyperarch_reproducible():
    def run():
        h = tiny_h([[SINGLE, CHAIN2, CHAIN3]], seed=4)
        return train_hyperarch(h, tiny_splits(seed=4), TrainConfig(epochs=2, batch_size=32, alpha_lr=2.0),
                               RegSchedule(total_epochs=2), np.random.default_rng(9)).alpha_history
    for a, b in zip(run(), run()):
        np.testing.assert_array_equal(a, b)


def test_train_hyperarch_rejects_empty_split():
    sp = tiny_splits()
    sp.arch_train = sp.arch_train.subset(np.array([], dtype=int))
    with pytest.raises(ConfigError):
        train_hyperarch(tiny_h([[SINGLE]]), sp, TrainConfig(epochs=1), RegSchedule(total_epochs=1),
                        np.random.default_rng(0))


def test_batches_cover_split_once():
    data = LabeledSet(np.zeros((10, 1, 2, 2)), np.arange(10) % 2)
    data.images[:, 0, 0, 0] = np.arange(10)
    seen = np.concatenate([x[:, 0, 0, 0] for x, _ in batches(data, 3, np.random.default_rng(0))])
    assert sorted(seen) == list(range(10))
    assert len(list(batches(data, 3, np.random.default_rng(0), limit=2))) == 2


# --- discrete training ---------------------------------------------------------


def test_untrained_network_predicts_class_prior():
    rng = np.random.default_rng(0)
    images = rng.normal(size=(60, 1, 8, 8))
    labels = np.zeros(60, dtype=np.int64)
    labels[:6] = 1
    sp = split(LabeledSet(images, labels), (1, 1, 4), rng)
    net = DiscreteNetwork.fresh([CHAIN2], deepest_channels=4, in_channels=1, num_classes=2, rng=rng)
    net.classifier[1].data = np.array([5.0, 0.0])  # untrained bias toward the majority class
    acc = train_discrete(net, sp, 0, TrainConfig(), rng)
    assert acc == pytest.approx(0.9, abs=0.01)


def test_xor_sanity_small_cell():
    accs = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        sp = split(xor_patterns(600, 8, rng=rng), (1, 1, 4), rng)
        net = DiscreteNetwork.fresh([CHAIN2], deepest_channels=4, in_channels=1, num_classes=2, rng=rng)
        acc = train_discrete(net, sp, 30, TrainConfig(batch_size=32), rng)
        assert 0.0 <= acc <= 1.0
        accs.append(acc)
    assert sum(a > 0.9 for a in accs) >= 4, accs


# --- planted task ----------------------------------------------------------------

DESK = TrainConfig(epochs=10, batch_size=32, lr=3e-3, beta1=0.9, beta2=0.999, alpha_lr=5.0)
ORDERED = [Dag.from_key(k) for k in ("1:", "2:01", "3:01-12")]


def test_planted_ordering_recovered_by_discrete_training():
    rng = np.random.default_rng(0)
    sp = split(planted_cell_quality(3000, rng=rng), (1, 1, 4), rng)
    accs = []
    for cell in ORDERED:
        net = DiscreteNetwork.fresh([cell], deepest_channels=8, in_channels=1, num_classes=2,
                                    rng=np.random.default_rng(1))
        accs.append(train_discrete(net, sp, 10, DESK, np.random.default_rng(2)))
    assert accs[0] < accs[1] < accs[2], accs


def test_dominant_member_gains_alpha_mass():
    wins = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        sp = split(planted_cell_quality(3000, rng=rng), (1, 1, 4), rng)
        h = HyperArchitecture([[ORDERED[0], ORDERED[2]]], deepest_channels=8, in_channels=1, num_classes=2, rng=rng)
        res = train_hyperarch(h, sp, DESK, RegSchedule(total_epochs=10, depth=1), rng)
        wins.append(np.mean(res.alpha_history, axis=0)[0, 1] > 0.5)
    assert sum(wins) >= 4, wins
