import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memvir.losses import LossConfig, grad_decompose_baseline, grad_decompose_memvir, loss_forward
from memvir.memory import (
    DimensionMismatch,
    MemVirConfig,
    MemVirState,
    Mode,
    VirtualBatch,
    assemble_extended_batch,
    enqueue_step,
    memvir_training_step,
    schedule_class_count,
    select_virtual,
    selection_indices,
)
from oracles import simulate_alg1, staircase

NS = LossConfig("NormSoftmax")


def _fill(state, cfg, n, D=3, C=2, B=4, start=0):
    for t in range(start, start + n):
        enqueue_step(state, cfg, np.full((D, C), float(t)), np.full((B, D), float(t)), np.arange(B) % C)
    return state


def test_schedule_examples():
    assert schedule_class_count(999, 100, 1000, 5, 100) == 100
    assert schedule_class_count(1101, 100, 1000, 5, 100) == 200
    assert schedule_class_count(10**6, 100, 1000, 5, 100) == 600


@settings(max_examples=300)
@given(st.integers(0, 500), st.integers(1, 50), st.integers(0, 100), st.integers(0, 6), st.integers(0, 12))
def test_schedule_matches_stair_counting(i, C, U, N, M):
    assert schedule_class_count(i, C, U, N, M) == staircase(i, C, U, N, M)
    assert schedule_class_count(i + 1, C, U, N, M) >= schedule_class_count(i, C, U, N, M)
    assert schedule_class_count(i, C, U, N, M) <= (N + 1) * C


def test_fifo_bound():
    cfg = MemVirConfig(n_steps=2, margin=1)
    st_ = _fill(MemVirState(), cfg, 5)
    assert len(st_.weight_queue) == len(st_.embed_queue) == 4
    assert [w[0, 0] for w in st_.weight_queue] == [4.0, 3.0, 2.0, 1.0]


def test_zero_capacity_and_unit_capacity():
    st0 = _fill(MemVirState(), MemVirConfig(n_steps=0, margin=3), 5)
    assert len(st0) == 0
    cfg = MemVirConfig(n_steps=1, margin=0)
    st1 = _fill(MemVirState(), cfg, 3)
    assert len(st1) == 1 and st1.weight_queue[0][0, 0] == 2.0


def test_selection_examples():
    assert selection_indices(4, MemVirConfig(n_steps=2, margin=1)) == [1, 3]
    assert selection_indices(3, MemVirConfig(n_steps=2, margin=3)) == []
    assert selection_indices(2, MemVirConfig(n_steps=3, margin=0)) == [0, 1]
    # no step pacing: nothing until the queue is full, then all N at once
    nsp = MemVirConfig(n_steps=3, margin=1, mode=Mode.NO_STEP_PACING)
    assert selection_indices(5, nsp) == []
    assert selection_indices(6, nsp) == [1, 3, 5]


def test_select_virtual_relabels_by_slot():
    cfg = MemVirConfig(n_steps=2, margin=1)
    state = _fill(MemVirState(), cfg, 4)
    virt = select_virtual(state, cfg, C=2)
    assert virt.k == 2 and virt.indices == [1, 3]
    assert virt.embeddings.shape == (8, 3) and virt.weights.shape == (3, 4)
    np.testing.assert_array_equal(virt.labels, np.concatenate([np.arange(4) % 2 + 2, np.arange(4) % 2 + 4]))
    # slot 1 is queue index 1 (= step 2), slot 2 is index 3 (= step 0)
    assert virt.weights[0, 0] == 2.0 and virt.weights[0, 2] == 0.0
    empty = select_virtual(MemVirState(), cfg, C=2, D=3)
    assert empty.k == 0 and empty.embeddings.shape == (0, 3)


def test_virtual_label_ranges_disjoint():
    cfg = MemVirConfig(n_steps=4, margin=0)
    state = _fill(MemVirState(), cfg, 6, C=3)
    virt = select_virtual(state, cfg, C=3)
    for slot in range(1, virt.k + 1):
        ids = virt.labels[slot * 4 - 4 : slot * 4]
        assert np.all((ids >= slot * 3) & (ids < (slot + 1) * 3))


def test_snapshot_immutability():
    cfg = MemVirConfig(n_steps=1, margin=0)
    W = np.ones((3, 2))
    X = np.ones((4, 3))
    state = enqueue_step(MemVirState(), cfg, W, X, np.zeros(4, dtype=int))
    W[:] = 7.0
    X[:] = 7.0
    assert np.all(state.weight_queue[0] == 1.0) and np.all(state.embed_queue[0][0] == 1.0)
    with pytest.raises(ValueError):
        state.weight_queue[0][0, 0] = 3.0


def test_assemble_shapes():
    X, y, W = np.zeros((4, 5)), np.zeros(4, dtype=int), np.ones((5, 3))
    empty = VirtualBatch(np.zeros((0, 5)), np.zeros((5, 0)), np.zeros(0, dtype=int), 0)
    Xe, We, ye = assemble_extended_batch(X, y, W, empty)
    assert Xe is not None and np.array_equal(Xe, X) and np.array_equal(We, W)
    virt = VirtualBatch(np.ones((8, 5)), np.ones((5, 6)), np.arange(8) % 6 + 3, 2)
    Xe, We, ye = assemble_extended_batch(X, y, W, virt)
    assert Xe.shape == (12, 5) and We.shape == (5, 9) and ye.shape == (12,)
    bad = VirtualBatch(np.ones((4, 4)), np.ones((5, 3)), np.arange(4), 1)
    with pytest.raises(DimensionMismatch):
        assemble_extended_batch(X, y, W, bad)


def test_duplicated_snapshot_raises_loss():
    rng = np.random.default_rng(0)
    X, W = rng.standard_normal((6, 4)), rng.standard_normal((4, 3))
    y = np.array([0, 1, 2, 0, 1, 2])
    base = loss_forward(NS, X, y, W).value
    cfg = MemVirConfig(n_steps=1, margin=0)
    state = enqueue_step(MemVirState(), cfg, W, X, y)
    virt = select_virtual(state, cfg, 3)
    Xe, We, ye = assemble_extended_batch(X, y, W, virt)
    ext = loss_forward(NS, Xe, ye, We).value
    assert ext > base


def test_baseline_mode_is_bitwise_plain_loss():
    rng = np.random.default_rng(1)
    state = MemVirState()
    cfg = MemVirConfig(n_steps=2, margin=0, mode=Mode.BASELINE)
    for _ in range(6):
        X, W, y = rng.standard_normal((6, 4)), rng.standard_normal((4, 3)), rng.integers(0, 3, 6)
        a = memvir_training_step(state, cfg, X, y, W, NS).loss
        b = loss_forward(NS, X, y, W)
        assert a.value == b.value
        assert np.array_equal(a.d_embeddings, b.d_embeddings) and np.array_equal(a.d_weights, b.d_weights)
    assert len(state) == 0 and state.step == 6


def test_warmup_steps_leave_queues_empty():
    rng = np.random.default_rng(2)
    state = MemVirState()
    cfg = MemVirConfig(n_steps=1, margin=0, warmup_step=3)
    for i in range(5):
        X, W, y = rng.standard_normal((6, 4)), rng.standard_normal((4, 3)), rng.integers(0, 3, 6)
        res = memvir_training_step(state, cfg, X, y, W, NS)
        if i < 3:
            assert len(state) == 0 and res.k == 0
            assert res.loss.value == loss_forward(NS, X, y, W).value
    assert len(state) == 1


def test_identical_batches_keep_tau0_above_baseline():
    rng = np.random.default_rng(3)
    X, W = rng.standard_normal((6, 4)), rng.standard_normal((4, 3))
    y = np.array([0, 1, 2, 0, 1, 2])
    cfg = MemVirConfig(n_steps=1, margin=0)
    state = MemVirState()
    memvir_training_step(state, cfg, X, y, W, NS)
    virt = select_virtual(state, cfg, 3)
    _, We, _ = assemble_extended_batch(X, y, W, virt)
    assert np.array_equal(We[:, 3:], W)  # exact duplicates of the actual classes
    for i in range(6):
        base = grad_decompose_baseline(X[i], y[i], W).tau0
        mem = grad_decompose_memvir(X[i], y[i], We, 1, 3).tau0
        assert mem > base  # denominator grows; tau0 stays away from zero
        assert 0 < mem < 1


def test_mode_no_warmup_equals_full_with_zero_warmup():
    a = MemVirConfig(n_steps=2, margin=1, warmup_step=50, mode=Mode.NO_WARMUP)
    b = MemVirConfig(n_steps=2, margin=1, warmup_step=0, mode=Mode.FULL)
    sa, _ = simulate_alg1(30, 50, 2, 1, "NoWarmup")
    sb, _ = simulate_alg1(30, 0, 2, 1, "Full")
    assert sa == sb
    assert all(a.is_active(i) == b.is_active(i) for i in range(30))


def test_state_checkpoint_roundtrip(tmp_path):
    cfg = MemVirConfig(n_steps=2, margin=1)
    state = _fill(MemVirState(step=17), cfg, 5)
    state.save(tmp_path / "q.npz")
    back = MemVirState.load(tmp_path / "q.npz")
    assert back.step == 17 and len(back) == len(state)
    for a, b in zip(state.weight_queue, back.weight_queue):
        assert np.array_equal(a, b)
    for (xa, ya), (xb, yb) in zip(state.embed_queue, back.embed_queue):
        assert np.array_equal(xa, xb) and np.array_equal(ya, yb)


def test_config_validation():
    with pytest.raises(ValueError):
        MemVirConfig(n_steps=-1)
    with pytest.raises(ValueError):
        MemVirConfig(mode="Sometimes")
    assert MemVirConfig(n_steps=5, margin=100).capacity == 505
