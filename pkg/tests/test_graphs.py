import numpy as np
import pytest

from mecole.clustering import Assignment
from mecole.errors import ConfigError, DataError
from mecole.graphs import AttributeBag, Graph, GraphBundle, SBMConfig, \
    build_knn_similarity_graph, generate_sbm, load_edge_list, load_features, \
    tfidf_class_features


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


# load_edge_list -------------------------------------------------------

def test_load_edge_list_basic(tmp_path):
    g = load_edge_list(write(tmp_path, "e.txt", "0 1\n1 2\n"))
    assert g.n == 3
    assert {(u, v) for u, v, _ in g.edges} == {(0, 1), (1, 2)}
    assert g.degrees.tolist() == [1, 2, 1]


def test_load_edge_list_dedup_and_self_loop(tmp_path):
    g = load_edge_list(write(tmp_path, "e.txt", "0 1\n1 0\n2 2\n"))
    assert g.n == 3
    assert {(u, v) for u, v, _ in g.edges} == {(0, 1)}


def test_load_edge_list_comments_and_tabs(tmp_path):
    g = load_edge_list(write(tmp_path, "e.txt", "# header\n0\t1\n"))
    assert g.num_edges == 1


def test_load_edge_list_malformed_line(tmp_path):
    with pytest.raises(DataError, match=":2:"):
        load_edge_list(write(tmp_path, "e.txt", "0 1\n0 x\n"))


def test_load_edge_list_empty(tmp_path):
    with pytest.raises(DataError, match="empty"):
        load_edge_list(write(tmp_path, "e.txt", "# nothing\n1 1\n"))


def test_load_edge_list_n_hint(tmp_path):
    g = load_edge_list(write(tmp_path, "e.txt", "0 1\n"), n_hint=5)
    assert g.n == 5


# load_features ---------------------------------------------------------

def test_load_features_basic(tmp_path):
    X = load_features(write(tmp_path, "f.csv", "1,2\n3,4\n5,6\n"), 3)
    assert X.shape == (3, 2)
    assert X[2].tolist() == [5.0, 6.0]


def test_load_features_row_mismatch(tmp_path):
    with pytest.raises(DataError, match="row count mismatch"):
        load_features(write(tmp_path, "f.csv", "1 2\n3 4\n"), 3)


def test_load_features_non_numeric(tmp_path):
    with pytest.raises(DataError, match="non-numeric"):
        load_features(write(tmp_path, "f.csv", "1 2\n3 oops\n"), 2)


# Graph invariants -------------------------------------------------------

def test_graph_rejects_self_loops():
    with pytest.raises(DataError):
        Graph.from_pairs(2, [(0, 0)])


def test_adjacency_symmetry_exhaustive(rng):
    pairs = {(int(min(u, v)), int(max(u, v)))
             for u, v in rng.integers(0, 200, size=(500, 2)) if u != v}
    g = Graph.from_pairs(200, pairs)
    dense = g.adjacency.toarray()
    assert np.array_equal(dense, dense.T)
    assert g.degrees.sum() == 2 * g.num_edges


def test_bundle_node_space_mismatch():
    g1 = Graph.from_pairs(3, [(0, 1)])
    g2 = Graph.from_pairs(4, [(0, 1)])
    with pytest.raises(DataError):
        GraphBundle(primary=g1, auxiliary={"G_V": g2})


# k-NN similarity graph ----------------------------------------------------

def test_knn_k_zero_empty(rng):
    g = build_knn_similarity_graph(rng.normal(size=(5, 3)), 0, 0.0)
    assert g.num_edges == 0


def test_knn_threshold_one_excludes_all(rng):
    X = rng.normal(size=(6, 4))
    g = build_knn_similarity_graph(X, 2, 1.0)
    assert g.num_edges == 0


def test_knn_hand_computed_cosines():
    X = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    g = build_knn_similarity_graph(X, 1, 0.5)
    expected_w = float(X[0] @ X[1] / (np.linalg.norm(X[0]) *
                                      np.linalg.norm(X[1])))
    assert {(u, v) for u, v, _ in g.edges} == {(0, 1)}
    assert g.edges[0][2] == pytest.approx(expected_w)


def test_knn_degree_sum_and_threshold(rng):
    X = rng.normal(size=(40, 6))
    k, eta = 3, 0.1
    g = build_knn_similarity_graph(X, k, eta)
    assert g.degrees.sum() == 2 * g.num_edges
    Xn = X / np.linalg.norm(X, axis=1, keepdims=True)
    for u, v, w in g.edges:
        assert w >= eta
        assert w == pytest.approx(float(Xn[u] @ Xn[v]))
    # union-symmetrized k-NN: each edge came from at least one endpoint's
    # top-k list, so no node can exceed k candidates it originated
    sims = Xn @ Xn.T
    np.fill_diagonal(sims, -np.inf)
    for u, v, w in g.edges:
        rank_u = (sims[u] > sims[u, v]).sum()
        rank_v = (sims[v] > sims[v, u]).sum()
        assert min(rank_u, rank_v) < k


def test_knn_zero_norm_row_excluded():
    X = np.array([[1.0, 0.0], [1.0, 0.1], [0.0, 0.0]])
    g = build_knn_similarity_graph(X, 2, -1.0)
    touched = {u for e in g.edges for u in e[:2]}
    assert 2 not in touched


# tf-idf class features ------------------------------------------------------

def make_assignment(hard, K, relevant=None):
    n = len(hard)
    R = np.full((n, K), 1e-6)
    for i, k in enumerate(hard):
        R[i, k] = 1.0
    R /= R.sum(axis=1, keepdims=True)
    if relevant is None:
        relevant = np.ones(n, dtype=bool)
    return Assignment(R=R, relevant=relevant)


def test_tfidf_single_class_all_zero():
    vocab = np.eye(2)
    bags = AttributeBag(bags=((0,), (1,)), vocabulary=vocab)
    # K=1 is not representable (K >= 2); emulate by two classes where one
    # is empty: tokens present only in the populated class get idf log 2
    a = make_assignment([0, 0], 2)
    out = tfidf_class_features(bags, a)
    assert out.shape == (2, 2)
    # every token appears in exactly one of two docs -> idf = log 2 > 0
    assert np.allclose(out[0], [1.0, 0.0], atol=1e-5)


def test_tfidf_empty_bag_zero_row():
    vocab = np.eye(2)
    bags = AttributeBag(bags=((0,), ()), vocabulary=vocab)
    a = make_assignment([0, 1], 2)
    out = tfidf_class_features(bags, a)
    assert np.array_equal(out[1], np.zeros(2))


def test_tfidf_hand_computed_two_classes():
    # class-1 doc = {a, a}, class-2 doc = {b}; x_a=(1,0), x_b=(0,1)
    vocab = np.eye(2)
    bags = AttributeBag(bags=((0, 0), (1,), (0,)), vocabulary=vocab)
    a = make_assignment([0, 1, 0], 2)
    out = tfidf_class_features(bags, a)
    # token a: tf=1 in doc1, df=1 -> idf=log2; node 2 bag {a} hard class 1
    # row = r_0 * (S_{0,a} x_a) / S_{0,a} = x_a (up to soft-assignment eps)
    assert out[2] == pytest.approx([1.0, 0.0], abs=1e-5)


def test_tfidf_token_order_invariance(rng):
    vocab = rng.normal(size=(5, 3))
    bags1 = AttributeBag(bags=((0, 1, 2), (3, 4), (2, 0)), vocabulary=vocab)
    bags2 = AttributeBag(bags=((2, 1, 0), (4, 3), (0, 2)), vocabulary=vocab)
    a = make_assignment([0, 1, 0], 2)
    assert np.allclose(tfidf_class_features(bags1, a),
                       tfidf_class_features(bags2, a))


def test_attribute_bag_unknown_token():
    with pytest.raises(DataError):
        AttributeBag(bags=((0, 7),), vocabulary=np.eye(2))


# SBM generator ----------------------------------------------------------

def test_sbm_disjoint_cliques():
    cfg = SBMConfig(blocks=2, block_sizes=(2, 2), p_in=1.0, p_out=0.0, seed=1)
    g, X, labels = generate_sbm(cfg)
    assert {(u, v) for u, v, _ in g.edges} == {(0, 1), (2, 3)}
    assert labels.tolist() == [0, 0, 1, 1]


def test_sbm_deterministic():
    cfg = SBMConfig(blocks=3, block_sizes=(10, 10, 10), p_in=0.5, p_out=0.1,
                    seed=42)
    g1, X1, l1 = generate_sbm(cfg)
    g2, X2, l2 = generate_sbm(cfg)
    assert g1.edges == g2.edges
    assert np.array_equal(X1, X2)
    assert np.array_equal(l1, l2)


def test_sbm_expected_degrees_within_3_sigma():
    cfg = SBMConfig(blocks=4, block_sizes=(100,) * 4, p_in=0.10, p_out=0.01,
                    seed=7)
    g, _, labels = generate_sbm(cfg)
    A = g.adjacency.toarray()
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    intra = A[same].sum() / (2 * g.n)  # intra half-degree per node * 2
    inter = A[~same].sum() / g.n
    # binomial expectations: intra 99 * 0.10, inter 300 * 0.01
    exp_intra, exp_inter = 99 * 0.10, 300 * 0.01
    sd_intra = np.sqrt(99 * 0.10 * 0.90 / g.n)
    sd_inter = np.sqrt(300 * 0.01 * 0.99 / g.n)
    assert abs(A[same].sum() / g.n - exp_intra) < 3 * sd_intra * np.sqrt(2)
    assert abs(inter - exp_inter) < 3 * sd_inter * np.sqrt(2)


def test_sbm_invalid_probs():
    with pytest.raises(ConfigError):
        SBMConfig(blocks=2, block_sizes=(2, 2), p_in=0.1, p_out=0.5)


def test_sbm_degree_sum():
    cfg = SBMConfig(blocks=2, block_sizes=(20, 20), p_in=0.3, p_out=0.05,
                    seed=3)
    g, _, _ = generate_sbm(cfg)
    assert g.degrees.sum() == 2 * g.num_edges
