import numpy as np
import pytest
from hypothesis import given, strategies as st

import mpmath

from emphasis_gnn import autodiff as ad
from emphasis_gnn.autodiff import Tape, Tensor, grad_check
from emphasis_gnn.errors import ContractError, ShapeError
from emphasis_gnn.model import (
    ALL_VARIANTS,
    VARIANTS,
    GRUParams,
    ModelConfig,
    branch_of,
    classify,
    encode_sequence,
    forward,
    gcn_gated_layer,
    graph_attention_layer,
    gru_cell,
    gru_sequence,
    init_params,
    nll_loss,
)

from oracles import loop_attention_layer, loop_gcn_layer, loop_gru
from toys import toy_model

TINY = ModelConfig(d1=6, d2=3, hidden=4, d_s=5, head_hidden=4)


def random_gru(rng, d, h, scale=0.5):
    shapes = [(d, h)] * 3 + [(h, h)] * 3 + [(h,)] * 3
    return GRUParams(*(Tensor(rng.normal(scale=scale, size=s)) for s in shapes))


def as_dicts(p):
    W = {"z": p.W_z.data, "r": p.W_r.data, "h": p.W_h.data}
    U = {"z": p.U_z.data, "r": p.U_r.data, "h": p.U_h.data}
    b = {"z": p.b_z.data, "r": p.b_r.data, "h": p.b_h.data}
    return W, U, b


# ---------------------------------------------------------------------------
# sequence encoder


def test_gru_cell_zero_weights():
    p = GRUParams(*(Tensor(np.zeros(s)) for s in [(3, 2)] * 3 + [(2, 2)] * 3 + [(2,)] * 3))
    h_prev = Tensor([[0.4, -1.2]])
    out = gru_cell(Tensor([[1.0, 2.0, 3.0]]), h_prev, p)
    np.testing.assert_allclose(out.data, 0.5 * h_prev.data, rtol=1e-15)


def test_gru_cell_from_zero_state(rng):
    p = random_gru(rng, 3, 2)
    x = rng.normal(size=(1, 3))
    out = gru_cell(Tensor(x), Tensor(np.zeros((1, 2))), p)
    z = 1 / (1 + np.exp(-(x @ p.W_z.data + p.b_z.data)))
    np.testing.assert_allclose(out.data, z * np.tanh(x @ p.W_h.data + p.b_h.data), rtol=1e-14)
    with pytest.raises(ShapeError):
        gru_cell(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 2))), p)


@pytest.mark.parametrize("reverse", [False, True])
def test_gru_sequence_matches_loop_oracle(rng, reverse):
    lengths = [3, 1, 5, 2]
    p = random_gru(rng, 4, 3)
    X = rng.normal(size=(sum(lengths), 4))
    out = gru_sequence(Tensor(X), lengths, p, reverse=reverse).data
    start = 0
    for n in lengths:
        seg = X[start:start + n]
        ref = loop_gru(seg[::-1] if reverse else seg, *as_dicts(p))
        np.testing.assert_allclose(out[start:start + n], ref[::-1] if reverse else ref, rtol=1e-12, atol=1e-14)
        start += n


def test_gru_sequence_matches_composite_cells(rng):
    # the fused op against a chain of primitive tape operations, values and gradients
    p = random_gru(rng, 3, 2)
    for t in p:
        t.requires_grad = True
    X = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    R = rng.normal(size=(4, 2))
    with Tape() as tape:
        fused = ad.sum_all(gru_sequence(X, [4], p) * Tensor(R))
    tape.backward(fused)
    g_fused = [t.grad.copy() for t in (X,) + tuple(p)]
    for t in (X,) + tuple(p):
        t.grad = None
    with Tape() as tape:
        h = Tensor(np.zeros((1, 2)))
        rows = []
        for i in range(4):
            h = gru_cell(ad.gather_rows(X, [i]), h, p)
            rows.append(h)
        composite = ad.sum_all(ad.concat_rows(rows) * Tensor(R))
    tape.backward(composite)
    assert fused.item() == pytest.approx(composite.item(), rel=1e-13)
    for a, b in zip(g_fused, [t.grad for t in (X,) + tuple(p)]):
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-13)


@pytest.mark.parametrize("reverse", [False, True])
def test_gru_sequence_gradients(rng, reverse):
    p = random_gru(rng, 3, 2)
    X = Tensor(rng.normal(size=(6, 3)))
    R = Tensor(rng.normal(size=(6, 2)))
    err = grad_check(lambda x, *ps: ad.sum_all(gru_sequence(x, [2, 4], GRUParams(*ps), reverse) * R),
                     [X] + list(p))
    assert err < 1e-7


def test_gru_sequence_contracts(rng):
    p = random_gru(rng, 3, 2)
    with pytest.raises(ShapeError):
        gru_sequence(Tensor(np.zeros((5, 3))), [2, 2], p)
    with pytest.raises(ContractError):
        gru_sequence(Tensor(np.zeros((2, 3))), [2, 0], p)


def test_encoder_single_word_deterministic(rng):
    params = init_params(TINY, 3, 2, rng)
    words, tags = Tensor(rng.normal(size=(1, 6))), Tensor(rng.normal(size=(1, 3)))
    a = encode_sequence(words, tags, [1], params, TINY).data
    b = encode_sequence(words, tags, [1], params, TINY).data
    assert a.shape == (1, 8) and np.isfinite(a).all()
    assert a.tobytes() == b.tobytes()


def test_encoder_palindrome_symmetry(rng):
    # shared forward/backward weights, layer-2 weights blind to the half order
    params = init_params(TINY, 3, 2, rng)
    for layer in range(2):
        for f in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h"):
            w = params[f"gru.{layer}.fwd.{f}"].data
            if layer == 1 and f.startswith("W"):
                w[4:] = w[:4]
            params[f"gru.{layer}.bwd.{f}"].data = w.copy()
    X = rng.normal(size=(5, 9))
    X[3], X[4] = X[1], X[0]
    h = encode_sequence(Tensor(X[:, :6]), Tensor(X[:, 6:]), [5], params, TINY).data
    swapped = np.concatenate([h[:, 4:], h[:, :4]], axis=1)[::-1]
    np.testing.assert_allclose(h, swapped, rtol=1e-12, atol=1e-14)


# ---------------------------------------------------------------------------
# word-similarity branch


def test_gcn_gate_closed_is_residual(rng):
    H, A = rng.normal(size=(4, 3)), rng.uniform(size=(4, 4))
    W, Wg = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    out = gcn_gated_layer(Tensor(H), A, Tensor(W), Tensor(Wg), 0.2, gate=Tensor(np.zeros((4, 3))))
    M = H @ W
    np.testing.assert_allclose(out.data, np.where(M > 0, M, 0.2 * M), rtol=1e-15)


def test_gcn_single_node(rng):
    H, W, Wg = rng.normal(size=(1, 3)), rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    out = gcn_gated_layer(Tensor(H), np.ones((1, 1)), Tensor(W), Tensor(Wg)).data
    M, C = H @ W, 1 / (1 + np.exp(-(H @ Wg)))
    pre = M + M * C
    np.testing.assert_allclose(out, np.where(pre > 0, pre, 0.2 * pre), rtol=1e-14)


def test_gcn_matches_loop_oracle(rng):
    H = rng.normal(size=(4, 5))
    from emphasis_gnn.wsg import build_wsg
    A_hat = build_wsg(rng.normal(size=(4, 7))).A_hat
    W, Wg = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
    out = gcn_gated_layer(Tensor(H), A_hat, Tensor(W), Tensor(Wg), 0.2).data
    np.testing.assert_allclose(out, loop_gcn_layer(H, A_hat, W, Wg, 0.2), rtol=1e-12, atol=1e-14)


def test_gcn_gradients(rng):
    A_hat = Tensor(rng.uniform(size=(4, 4)))
    pts = [Tensor(rng.normal(size=s)) for s in [(4, 3), (3, 3), (3, 3)]]
    R = Tensor(rng.normal(size=(4, 3)))
    assert grad_check(lambda H, W, Wg: ad.sum_all(gcn_gated_layer(H, A_hat, W, Wg) * R), pts) < 1e-7


# ---------------------------------------------------------------------------
# structure branch


def tree_mask(parents):
    n = len(parents) + 1
    mask = np.eye(n, dtype=bool)
    for child, parent in enumerate(parents, start=1):
        mask[child, parent] = mask[parent, child] = True
    return mask


def test_attention_self_loop_only(rng):
    V = rng.normal(size=(3, 4))
    Wk, Wq, Wv = (rng.normal(size=(4, 4)) for _ in range(3))
    mask = np.eye(3, dtype=bool)
    out = graph_attention_layer(Tensor(V), mask, Tensor(Wk), Tensor(Wq), Tensor(Wv)).data
    np.testing.assert_allclose(out, V @ Wv, rtol=1e-14)


def test_attention_identical_pair(rng):
    v = rng.normal(size=4)
    V = np.stack([v, v])
    Wk, Wq, Wv = (Tensor(rng.normal(size=(4, 4))) for _ in range(3))
    K, Q = V @ Wk.data, V @ Wq.data
    attn = ad.masked_softmax_rows(Tensor(Q @ K.T), np.ones((2, 2), dtype=bool)).data
    np.testing.assert_allclose(attn, np.full((2, 2), 0.5), rtol=1e-15)
    out = graph_attention_layer(Tensor(V), np.ones((2, 2)), Wk, Wq, Wv).data
    np.testing.assert_allclose(out, np.stack([v @ Wv.data] * 2), rtol=1e-14)


def test_attention_matches_loop_oracle(rng):
    mask = tree_mask([0, 0, 1, 1, 3])
    V = rng.normal(size=(6, 5))
    Wk, Wq, Wv = (rng.normal(scale=0.5, size=(5, 5)) for _ in range(3))
    out = graph_attention_layer(Tensor(V), mask, Tensor(Wk), Tensor(Wq), Tensor(Wv)).data
    np.testing.assert_allclose(out, loop_attention_layer(V, mask, Wk, Wq, Wv), rtol=1e-12, atol=1e-14)
    attn = ad.masked_softmax_rows(Tensor((V @ Wq) @ (V @ Wk).T), mask).data
    np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-12)


def test_attention_rejects_isolated_node(rng):
    V, W = Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(3, 3)))
    with pytest.raises(ContractError):
        graph_attention_layer(V, np.array([[1, 0], [0, 0]]), W, W, W)
    with pytest.raises(ShapeError):
        graph_attention_layer(V, np.eye(3), W, W, W)


@given(st.integers(0, 5), st.integers(0, 5))
def test_attention_never_leaks(i, j):
    rng = np.random.default_rng(i * 7 + j)
    mask = tree_mask([0, 0, 1, 1, 3])
    if mask[i, j]:
        return
    V = rng.normal(size=(6, 5))
    Wk, Wq, Wv = (Tensor(rng.normal(size=(5, 5))) for _ in range(3))
    before = graph_attention_layer(Tensor(V), mask, Wk, Wq, Wv).data[i]
    V[j] = rng.normal(scale=10.0, size=5)
    after = graph_attention_layer(Tensor(V), mask, Wk, Wq, Wv).data[i]
    assert before.tobytes() == after.tobytes()


def test_attention_gradients(rng):
    mask = tree_mask([0, 1, 1])
    pts = [Tensor(rng.normal(scale=0.6, size=s)) for s in [(4, 3), (3, 3), (3, 3), (3, 3)]]
    R = Tensor(rng.normal(size=(4, 3)))
    err = grad_check(lambda V, k, q, v: ad.sum_all(graph_attention_layer(V, mask, k, q, v) * R), pts)
    assert err < 1e-7


# ---------------------------------------------------------------------------
# head and loss


def head_params(rng, d_in, hidden=4):
    return {"head.W1": Tensor(rng.normal(size=(d_in, hidden))), "head.b1": Tensor(rng.normal(size=hidden)),
            "head.W2": Tensor(rng.normal(size=(hidden, 3))), "head.b2": Tensor(rng.normal(size=3))}


def test_classify_zero_logits(rng):
    params = head_params(rng, 5)
    params["head.W2"].data[:] = 0.0
    params["head.b2"].data[:] = 0.0
    p = classify(Tensor(rng.normal(size=(3, 5))), params).data
    np.testing.assert_allclose(p, np.full((3, 3), 1 / 3), rtol=1e-15)


def test_classify_shift_invariance(rng):
    params = head_params(rng, 5)
    x = Tensor(rng.normal(size=(4, 5)))
    p = classify(x, params).data
    params["head.b2"].data += 37.25
    q = classify(x, params).data
    np.testing.assert_allclose(q, p, atol=1e-12)
    np.testing.assert_array_equal(q.argmax(axis=1), p.argmax(axis=1))


def test_classify_gradients(rng):
    params = head_params(rng, 5)
    x = Tensor(rng.normal(size=(3, 5)))
    names = list(params)
    R = Tensor(rng.normal(size=(3, 3)))

    def f(x, *ps):
        return ad.sum_all(classify(x, dict(zip(names, ps))) * R)

    assert grad_check(f, [x] + [params[k] for k in names]) < 1e-7


def test_nll_examples(rng):
    y = np.array([0, 2, 1])
    assert nll_loss(Tensor(np.eye(3)[y]), y).item() == 0.0
    assert nll_loss(Tensor(np.full((5, 3), 1 / 3)), np.zeros(5, dtype=int)).item() == pytest.approx(
        5 * np.log(3), rel=1e-15)
    p = rng.dirichlet(np.ones(3), size=6)
    y = rng.integers(0, 3, size=6)
    with mpmath.workdps(40):
        ref = -sum(mpmath.log(mpmath.mpf(float(p[i, y[i]]))) for i in range(6))
    assert nll_loss(Tensor(p), y).item() == pytest.approx(float(ref), rel=1e-14)


def test_nll_counts_equal_sum_of_samples(rng):
    p = Tensor(rng.dirichlet(np.ones(3), size=4))
    labels = rng.integers(0, 3, size=(9, 4))
    counts = np.zeros((4, 3))
    for row in labels:
        counts[np.arange(4), row] += 1
    total = sum(nll_loss(p, row).item() for row in labels)
    assert nll_loss(p, counts).item() == pytest.approx(total, rel=1e-13)


def test_nll_clamp_and_errors():
    p = Tensor(np.array([[0.0, 0.5, 0.5]]))
    loss, clamped = nll_loss(p, np.array([0]), return_clamped=True)
    assert clamped == 1 and loss.item() == pytest.approx(-np.log(1e-12))
    with pytest.raises(ShapeError):
        nll_loss(p, np.array([0, 1]))
    with pytest.raises(ContractError):
        nll_loss(p, np.array([3]))


# ---------------------------------------------------------------------------
# full model


def test_branch_of():
    assert branch_of("gru.0.fwd.W_z") == "encoder"
    assert branch_of("gcn.1.Wg") == "wsg"
    assert branch_of("attn.0.Wk") == "ssg" and branch_of("ssg_embed") == "ssg"
    assert branch_of("head.W1") == "head" and branch_of("word_embed") == "shared"


@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_outputs(variant):
    model, examples, _ = toy_model(ModelConfig(**{**TINY.__dict__, "variant": variant}))
    out = forward(model.params, model.config, examples)
    emph = out.emphasis()
    assert out.p.shape == (10, 3)
    np.testing.assert_allclose(out.p.data.sum(axis=1), 1.0, atol=1e-12)
    assert ((emph >= 0) & (emph <= 1)).all()
    assert [len(s) for s in out.split(emph)] == [4, 6]
    again = forward(model.params, model.config, examples)
    assert out.p.data.tobytes() == again.p.data.tobytes()
    assert (out.w_L is None) == (variant in ("no_wsg", "no_both"))
    assert (out.v_L is None) == (variant in ("no_ssg", "no_both"))


def test_batching_does_not_mix_sentences():
    model, examples, _ = toy_model(TINY)
    both = forward(model.params, model.config, examples).p.data
    alone = np.concatenate([forward(model.params, model.config, [ex]).p.data for ex in examples])
    np.testing.assert_allclose(both, alone, rtol=1e-12, atol=1e-15)


def excluded(variant, name):
    branch = branch_of(name)
    if variant == "no_wsg":
        return branch == "wsg"
    if variant == "no_ssg":
        return branch == "ssg"
    if variant == "no_both":
        return branch in ("wsg", "ssg")
    if variant == "ssg_only":
        return branch in ("wsg", "encoder")
    return False


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_ablation_containment(variant):
    model, examples, _ = toy_model(ModelConfig(**{**TINY.__dict__, "variant": variant}))
    base = forward(model.params, model.config, examples).p.data.tobytes()
    rng = np.random.default_rng(3)
    touched = 0
    for name, p in model.params.items():
        if excluded(variant, name):
            p.data = p.data + rng.normal(size=p.shape)
            touched += 1
    assert touched > 0 or variant == "full"
    assert forward(model.params, model.config, examples).p.data.tobytes() == base


def model_loss(model, examples, mode="eval"):
    def f(*_):
        rng = np.random.default_rng(9)
        out = forward(model.params, model.config, examples, mode=mode, rng=rng)
        return nll_loss(out.p, np.concatenate([ex.counts for ex in examples]))
    return f


@pytest.mark.parametrize("mode", ["eval", "train"])
def test_full_model_gradient(mode):
    model, examples, _ = toy_model(TINY, seed=4, sentences=1)
    assert examples[0].n == 4
    err = grad_check(model_loss(model, examples, mode), list(model.params.values()))
    assert err < 1e-4
