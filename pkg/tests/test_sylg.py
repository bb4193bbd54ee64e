import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seglatent import oracle
from seglatent import tensor as T
from seglatent.data import LabelVocab, build_relation_matrix, generate_synthetic
from seglatent.sylg import (
    embed_relations,
    enhanced_weights,
    relation_table,
    root_loss,
    root_scores,
    sylg_forward,
    tree_marginals,
)


def random_instance(rng, n):
    edge = rng.uniform(0, 1, size=(n, n))
    edge[edge == 0] = 1e-3
    np.fill_diagonal(edge, 0.0)
    return edge, rng.uniform(0, 1, size=n) + 1e-3


# ---------------------------------------------------------------- relations


def test_embed_all_zero_relations():
    table = relation_table(T.ParamStore(0), 4, 3)
    out = embed_relations(np.zeros((3, 3), dtype=int), table)
    assert out.shape == (3, 3, 3)
    np.testing.assert_array_equal(out.value, 0.0)


def test_embed_single_nsubj_edge():
    table = relation_table(T.ParamStore(0), 3, 5)
    rel = np.zeros((4, 4), dtype=int)
    rel[1, 3] = rel[3, 1] = 2
    out = embed_relations(rel, table).value
    nonzero = {(i, j) for i in range(4) for j in range(4) if np.any(out[i, j])}
    assert nonzero == {(1, 3), (3, 1)}


def test_embed_row_zero_gets_no_gradient():
    store = T.ParamStore(0)
    table = relation_table(store, 3, 2)
    rel = np.array([[0, 1], [1, 0]])
    T.backward(T.sum(embed_relations(rel, table)))
    np.testing.assert_array_equal(table.grad[0], 0.0)
    assert np.all(table.grad[1] == 2.0)


def test_embed_rejects_out_of_range_id():
    with pytest.raises(IndexError):
        embed_relations(np.array([[0, 5], [5, 0]]), relation_table(T.ParamStore(0), 3, 2))


# ---------------------------------------------------------- enhanced weights


def test_enhanced_weights_uniform_for_zero_inputs():
    store = T.ParamStore(0)
    a_bar, _, _ = enhanced_weights(np.zeros((4, 6)), np.zeros((4, 4, 3)), store, n_heads=2)
    store["sylg.rel_proj.b"].value[:] = 0.0
    a_bar, _, _ = enhanced_weights(np.zeros((4, 6)), np.zeros((4, 4, 3)), store, n_heads=2)
    np.testing.assert_allclose(a_bar.value, 0.25, atol=1e-15)


def test_enhanced_weights_relation_concentrates_mass():
    store = T.ParamStore(0)
    store.add("sylg.rel_proj.w", np.ones((1, 1)))
    store.add("sylg.rel_proj.b", np.zeros(1))
    m_r = np.zeros((3, 3, 1))
    m_r[1, 2, 0] = 20.0
    a_bar, _, _ = enhanced_weights(np.zeros((3, 4)), m_r, store, n_heads=1)
    row = a_bar.value[0, 1]
    # softmax of (1/3 + [0, 0, 20]) by hand
    expected = np.exp([1 / 3, 1 / 3, 1 / 3 + 20])
    np.testing.assert_allclose(row, expected / expected.sum(), atol=1e-14)
    assert row[2] > 0.999


def test_enhanced_weights_single_head_matches_direct_formula():
    rng = np.random.default_rng(4)
    store = T.ParamStore(4)
    hc = rng.normal(size=(5, 6))
    m_r = rng.normal(size=(5, 5, 3))
    a_bar, _, _ = enhanced_weights(hc, m_r, store, n_heads=1)
    wq = store["sylg.attn.wq"].value[0]
    wk = store["sylg.attn.wk"].value[0]
    s = (hc @ wq) @ (hc @ wk).T / math.sqrt(6)
    a_a = np.exp(s - s.max(axis=1, keepdims=True))
    a_a /= a_a.sum(axis=1, keepdims=True)
    a_r = np.einsum("ijr,r->ij", m_r, store["sylg.rel_proj.w"].value[:, 0]) + store["sylg.rel_proj.b"].value[0]
    z = np.exp(a_a + a_r)
    np.testing.assert_allclose(a_bar.value[0], z / z.sum(axis=1, keepdims=True), atol=1e-14)


# --------------------------------------------------------------- root scores


def test_root_scores_ones_for_zero_weights():
    phi = root_scores(np.random.default_rng(0).normal(size=(4, 3)), T.Node(np.zeros((3, 1))), T.Node(np.zeros(1)))
    np.testing.assert_array_equal(phi.value, 1.0)


def test_root_scores_clamp():
    hc = np.array([[30.0], [40.0], [-50.0]])
    phi = root_scores(hc, T.Node([[1.0]]), T.Node([0.0]))
    assert phi.value[0] == math.exp(30) and phi.value[1] == math.exp(30)
    assert phi.value[2] == math.exp(-30)


def test_root_scores_gradient():
    rng = np.random.default_rng(1)
    store = T.ParamStore(1)
    hc = rng.normal(size=(4, 3))
    w = store.get("w", (3, 1))
    b = store.get("b", (1,))
    assert T.grad_check(lambda: T.sum(root_scores(hc, w, b)), store).passed


# ----------------------------------------------------------- tree marginals


def test_tree_single_node():
    result = tree_marginals(np.zeros((1, 1)), np.array([2.5]))
    np.testing.assert_allclose(result.root_probs.value, [1.0], atol=1e-15)
    np.testing.assert_array_equal(result.edge_marginals.value, [[0.0]])


def test_tree_two_nodes_symmetric():
    result = tree_marginals(np.full((2, 2), 0.5), np.ones(2))
    np.testing.assert_allclose(result.root_probs.value, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(result.edge_marginals.value, [[0, 0.5], [0.5, 0]], atol=1e-15)


def test_tree_three_nodes_matches_enumeration():
    weights = np.array([[0, 0.2, 0.8], [0.5, 0, 0.5], [0.9, 0.1, 0]])
    phi = np.array([1.0, 2.0, 3.0])
    result = tree_marginals(weights, phi)
    z, edges, roots = oracle.enumerate_arborescences(weights, phi)
    np.testing.assert_allclose(result.edge_marginals.value, edges, atol=1e-10, rtol=0)
    np.testing.assert_allclose(result.root_probs.value, roots, atol=1e-10, rtol=0)
    # nine arborescences on three nodes, summed by hand from the listing
    total = sum(
        phi[t.root] * np.prod([weights[t.parent[j], j] for j in range(3) if j != t.root])
        for t in oracle.iter_arborescences(3)
    )
    assert abs(total - z) < 1e-12


def test_tree_matches_enumeration_on_100_instances():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        edge, root = random_instance(rng, n)
        result = tree_marginals(edge, root)
        _, e_ref, r_ref = oracle.enumerate_arborescences(edge, root)
        worst = max(
            worst,
            np.abs(result.edge_marginals.value - e_ref).max(),
            np.abs(result.root_probs.value - r_ref).max(),
        )
    assert worst <= 1e-8, worst


def test_literal_variant_disagrees_with_enumeration():
    weights = np.array([[0, 0.2, 0.8], [0.5, 0, 0.5], [0.9, 0.1, 0]])
    phi = np.array([1.0, 2.0, 3.0])
    literal = tree_marginals(weights, phi, variant="literal")
    _, edges, _ = oracle.enumerate_arborescences(weights, phi)
    assert np.abs(literal.edge_marginals.value - edges).max() > 0.05


def test_tree_ignores_diagonal():
    rng = np.random.default_rng(5)
    edge, root = random_instance(rng, 4)
    noisy = edge + np.diag(rng.uniform(1, 5, size=4))
    np.testing.assert_allclose(
        tree_marginals(noisy, root).edge_marginals.value, tree_marginals(edge, root).edge_marginals.value, atol=1e-14
    )


def test_tree_rejects_negative_weights():
    with pytest.raises(ValueError):
        tree_marginals(-np.ones((3, 3)), np.ones(3))
    with pytest.raises(ValueError):
        tree_marginals(np.ones((3, 3)), np.zeros(3))


def test_tree_singular_laplacian_uses_ridge(caplog):
    # no edges into node 2 from anywhere but a zero-weight column: singular
    edge = np.array([[0, 1.0, 0.0], [1.0, 0, 0.0], [0.0, 0.0, 0]])
    result = tree_marginals(edge, np.array([1.0, 1.0, 1e-300]))
    assert "ridge" in caplog.text
    assert np.all(np.isfinite(result.edge_marginals.value))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 8), seed=st.integers(0, 100_000))
def test_tree_distribution_laws(n, seed):
    rng = np.random.default_rng(seed)
    edge, root = random_instance(rng, n)
    result = tree_marginals(edge, root)
    p_r = result.root_probs.value
    a = result.edge_marginals.value
    assert abs(p_r.sum() - 1.0) <= 1e-8
    np.testing.assert_allclose(p_r + a.sum(axis=0), 1.0, atol=1e-8)
    assert a.min() >= -1e-8 and a.max() <= 1 + 1e-8


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 6), seed=st.integers(0, 100_000), c=st.floats(1e-3, 1e3))
def test_tree_scale_invariance(n, seed, c):
    rng = np.random.default_rng(seed)
    edge, root = random_instance(rng, n)
    base = tree_marginals(edge, root)
    scaled = tree_marginals(c * edge, c * root)
    np.testing.assert_allclose(scaled.edge_marginals.value, base.edge_marginals.value, atol=1e-8)
    np.testing.assert_allclose(scaled.root_probs.value, base.root_probs.value, atol=1e-8)


@pytest.mark.parametrize("n", [1, 2, 4, 5])
def test_tree_gradients_through_inverse(n):
    rng = np.random.default_rng(n)
    store = T.ParamStore(n)
    logits = store.add("logits", rng.normal(size=(n, n)))
    root_logits = store.add("root", rng.normal(size=n))
    probe_e = rng.normal(size=(n, n))
    probe_r = rng.normal(size=n)

    def loss():
        result = tree_marginals(T.exp(logits), T.exp(root_logits))
        return T.add(T.sum(T.mul(result.edge_marginals, probe_e)), T.sum(T.mul(result.root_probs, probe_r)))

    report = T.grad_check(loss, store)
    assert report.passed, report.errors


# ------------------------------------------------------------------ root loss


def test_root_loss_perfect_root():
    assert root_loss(np.array([1 - 1e-12]), [1.0]).value < 1e-11


def test_root_loss_two_nodes():
    value = root_loss(np.array([0.5, 0.5]), [1.0, 0.0]).value
    assert abs(value - 2 * math.log(2)) < 1e-12
    assert abs(value - oracle.micro_losses("root_bce_n2")) < 1e-12


def test_root_loss_gradient_sign():
    store = T.ParamStore(0)
    p = store.add("p", [0.3, 0.3, 0.4])
    T.backward(root_loss(p, [1.0, 0.0, 0.0]))
    assert p.grad[0] < 0 and p.grad[1] > 0 and p.grad[2] > 0


# ----------------------------------------------------------- branch forward


def _sylg_inputs(n=4):
    record = generate_synthetic(0, 1, min_clauses=1, max_clauses=1)[0]
    vocab = LabelVocab.from_records([record])
    return record, vocab


def test_sylg_end_to_end_gradient():
    record, vocab = _sylg_inputs()
    n = record.n
    rng = np.random.default_rng(0)
    store = T.ParamStore(0, init_range=0.5)
    hc = store.add("hc", rng.normal(size=(n, 8)))
    rel = build_relation_matrix(record, vocab)
    probe = rng.normal(size=(n, 8))

    def loss():
        h, l_r, _ = sylg_forward(hc, rel, record.aspect_indicator(), store, len(vocab), gcn_layers=3, n_heads=2, d_r=4)
        return T.add(T.sum(T.mul(h, probe)), l_r)

    loss()
    report = T.grad_check(loss, store)
    assert report.passed, report.errors


def test_sylg_identity_adjacency():
    record, vocab = _sylg_inputs()
    n = record.n
    hc = np.random.default_rng(1).normal(size=(n, 6))
    store = T.ParamStore(0)
    for k in range(3):
        store.add(f"sylg.gcn{k}.w", np.eye(6))
        store.add(f"sylg.gcn{k}.b", np.zeros(6))
    h, _, _ = sylg_forward(
        hc, build_relation_matrix(record, vocab), record.aspect_indicator(), store, len(vocab), adjacency_override=np.eye(n)
    )
    np.testing.assert_allclose(h.value, np.maximum(hc, 0.0), atol=0)


def test_root_loss_training_moves_root_onto_aspect():
    records = generate_synthetic(1, 1, min_clauses=3)
    record = records[0]
    vocab = LabelVocab.from_records(records)
    rel = build_relation_matrix(record, vocab)
    rng = np.random.default_rng(0)
    hc = rng.normal(size=(record.n, 8))
    store = T.ParamStore(0)
    t = record.aspect_indicator()

    def loss():
        _, l_r, diag = sylg_forward(hc, rel, t, store, len(vocab), gcn_layers=1, n_heads=2, d_r=4)
        return l_r, diag

    loss()
    for _ in range(200):
        store.zero_grad()
        l_r, _ = loss()
        T.backward(l_r)
        for _, node in store.items():
            if node.grad is not None:
                node.value -= 0.05 * node.grad
    _, diag = loss()
    winner = int(np.argmax(diag["tree"].root_probs.value))
    assert record.aspect_from <= winner <= record.aspect_to
