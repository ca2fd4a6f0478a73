import numpy as np
import pytest

from anglerig import rigidity as RG
from anglerig.geometry import JointState, random_rotation, exp_so
from anglerig.gradcheck import central_diff, rel_err
from anglerig.simulation import random_framework


def jacobian(f, p, h=1e-5):
    flat = p.reshape(-1)
    cols = []
    for c in range(flat.size):
        def g(t, c=c):
            q = flat.copy()
            q[c] += t
            return f(q.reshape(p.shape))
        cols.append(central_diff(g, h))
    return np.stack(cols, axis=1)


def fw_of(p, edges, R=None):
    p = np.asarray(p, dtype=float)
    return RG.Framework(RG.DirectedGraph(len(p), tuple(edges)), JointState(p, R))


def complete_fw(rng, n, d, rotations=True):
    p = rng.uniform(size=(n, d))
    R = np.array([random_rotation(rng, d) for _ in range(n)]) if rotations else None
    return RG.Framework(RG.DirectedGraph.complete(n), JointState(p, R))


# -- angle sets and functions ------------------------------------------------

def test_angle_set_examples():
    assert RG.angle_set(RG.DirectedGraph(3, ((0, 1), (0, 2)))).tolist() == [[0, 1, 2]]
    assert len(RG.angle_set(RG.DirectedGraph(2, ((0, 1),)))) == 0
    assert len(RG.angle_set(RG.DirectedGraph.complete(4))) == 12


def test_graph_rejects_self_loops_and_bad_vertices():
    with pytest.raises(ValueError):
        RG.DirectedGraph(3, ((0, 0),))
    with pytest.raises(ValueError):
        RG.DirectedGraph(3, ((0, 5),))


def test_bearing_function_examples(rng):
    fw = complete_fw(rng, 4, 3, rotations=False)
    fw_id = fw_of(fw.positions, fw.graph.edges, np.stack([np.eye(3)] * 4))
    e = fw.graph.edge_array
    x = fw.positions[e[:, 1]] - fw.positions[e[:, 0]]
    assert np.allclose(RG.bearing_function(fw_id), x / np.linalg.norm(x, axis=1)[:, None])
    # common rotation of positions and orientations leaves body bearings unchanged
    fw = complete_fw(rng, 4, 3)
    Q = random_rotation(rng, 3)
    moved = fw_of(fw.positions @ Q.T, fw.graph.edges, np.einsum("ab,nbc->nac", Q, fw.rotations))
    assert np.allclose(RG.bearing_function(moved), RG.bearing_function(fw), atol=1e-12)
    # single edge, camera turned from e1 to e2
    R1 = exp_so([0, 0, np.pi / 2])
    one = fw_of([[0, 0, 0], [1, 0, 0]], [(0, 1)], np.stack([R1, np.eye(3)]))
    assert np.allclose(RG.bearing_function(one)[0], R1.T @ [1, 0, 0])


def test_bearing_function_requires_rotations():
    with pytest.raises(ValueError):
        RG.bearing_function(fw_of([[0, 0], [1, 0]], [(0, 1)]))


def test_angle_function_examples(rng):
    p = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    assert abs(RG.angle_function(p, [[0, 1, 2]])[0]) < 1e-15
    q = np.array([[0, 0], [1, 0], [3, 0]], dtype=float)
    assert abs(RG.angle_function(q, [[0, 1, 2]])[0] - 1) < 1e-15
    fw = complete_fw(rng, 5, 3, rotations=False)
    T = fw.angles()
    Q, r = random_rotation(rng, 3), rng.normal(size=3)
    a0 = RG.angle_function(fw.positions, T)
    a1 = RG.angle_function(fw.positions @ Q.T + r, T)
    assert np.max(np.abs(a0 - a1)) < 1e-12


# -- rigidity matrices -------------------------------------------------------

@pytest.mark.parametrize("d", [2, 3])
def test_angle_matrix_finite_differences(rng, d):
    for _ in range(10):
        fw = complete_fw(rng, 5, d, rotations=False)
        T = fw.angles()
        A = RG.angle_rigidity_matrix(fw.positions, T)
        num = jacobian(lambda q: RG.angle_function(q, T), fw.positions)
        assert rel_err(A, num) < 1e-6


@pytest.mark.parametrize("d", [2, 3])
def test_bearing_matrix_finite_differences(rng, d):
    dr = d * (d - 1) // 2
    for _ in range(10):
        fw = complete_fw(rng, 4, d)
        B = RG.bearing_rigidity_matrix(fw)
        n = fw.n
        cols = []
        for c in range(B.shape[1]):
            def f(t, c=c):
                p, R = fw.positions.copy(), fw.rotations.copy()
                if c < d * n:
                    p.reshape(-1)[c] += t
                else:
                    i, l = divmod(c - d * n, dr)
                    w = np.zeros(dr)
                    w[l] = t
                    R[i] = exp_so(w) @ R[i]
                return RG.bearing_function(fw_of(p, fw.graph.edges, R)).reshape(-1)
            cols.append(central_diff(f, 1e-5))
        assert rel_err(B, np.stack(cols, axis=1)) < 1e-6


def test_matrix_hand_examples():
    one = fw_of([[0, 0, 0], [1, 0, 0]], [(0, 1)], np.stack([np.eye(3)] * 2))
    v = np.zeros(12)
    v[3:6] = [0, 1, 0]
    assert np.allclose(RG.bearing_rigidity_matrix(one) @ v, [0, 1, 0])
    p = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float)
    A = RG.angle_rigidity_matrix(p, [[0, 1, 2]])
    v = np.zeros(9)
    v[3:6] = [0, 1, 0]
    assert np.isclose(A @ v, 1.0).all()


@pytest.mark.parametrize("d", [2, 3])
def test_trivial_bases_are_in_the_null_spaces(rng, d):
    for _ in range(20):
        fw = complete_fw(rng, 5, d)
        Ta = RG.trivial_basis_angle(fw.positions)
        Tb = RG.trivial_basis_bearing(fw.positions)
        assert Ta.shape == (d * 5, {2: 4, 3: 7}[d])
        assert Tb.shape == ((d + d * (d - 1) // 2) * 5, {2: 4, 3: 7}[d])
        assert np.linalg.norm(RG.angle_rigidity_matrix(fw.positions, fw.angles()) @ Ta) < 1e-9
        assert np.linalg.norm(RG.bearing_rigidity_matrix(fw) @ Tb) < 1e-9


def test_trivial_basis_columns():
    p = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, -1.0]])
    Ta = RG.trivial_basis_angle(p)
    assert np.allclose(Ta[:, 0], [1, 0, 1, 0, 1, 0])
    assert np.allclose(Ta[:, -1], p.reshape(-1))
    Tb = RG.trivial_basis_bearing(p)
    assert np.allclose(Tb[6:, [0, 1, 3]], 0)


# -- rank tests ----------------------------------------------------------------

def test_rank_examples(rng):
    fw = complete_fw(rng, 4, 2)
    assert RG.is_inf_angle_rigid(fw.positions, fw.angles())[0]
    assert RG.is_inf_bearing_rigid(fw)[0]
    col = np.array([[0, 0], [1, 0], [2.5, 0]], dtype=float)
    assert not RG.is_inf_angle_rigid(col, RG.angle_set(RG.DirectedGraph.complete(3)))[0]
    # a fourth point off the line restores rigidity; the SVD oracle agrees
    col4 = np.vstack([col, [0.3, 1.7]])
    T = RG.angle_set(RG.DirectedGraph.complete(4))
    s = np.linalg.svd(RG.angle_rigidity_matrix(col4, T), compute_uv=False)
    assert RG.is_inf_angle_rigid(col4, T) == (True, 4) and s[3] > 0.1
    ok, rank = RG.is_inf_angle_rigid(np.array([[0, 0], [1, 0], [0, 1.0]]), [[0, 1, 2]])
    assert not ok and rank == 1


def test_svd_rank_oracle_agreement(rng):
    for _ in range(50):
        fw = random_framework(None, 5, 3, (1, 4), rng=rng)
        A = RG.angle_rigidity_matrix(fw.positions, fw.angles())
        s = np.linalg.svd(A, compute_uv=False) if A.size else np.zeros(0)
        oracle = int(np.sum(s > s[0] * max(A.shape) * 1e-10)) if s.size else 0
        assert RG.is_inf_angle_rigid(fw.positions, fw.angles())[1] == oracle


def test_fig1a_type_bearing_rigid_not_angle_rigid():
    # vertex 0 sees 1 and 2 along the same line: bearings collinear
    p = np.array([[0.0, 0.0], [1.0, 0.0], [2.5, 0.0], [0.3, 1.7]])
    edges = [(0, 1), (0, 2), (1, 0), (1, 3), (2, 0), (2, 3), (3, 0), (3, 1)]
    R = np.array([random_rotation(np.random.default_rng(0), 2) for _ in range(4)])
    fw = fw_of(p, edges, R)
    assert not RG.is_inf_angle_rigid(p, fw.angles())[0]
    assert RG.is_inf_bearing_rigid(fw)[0]


def test_isolated_observer_is_not_bearing_rigid(rng):
    p = rng.uniform(size=(4, 2))
    edges = [(i, j) for i in range(3) for j in range(4) if i != j]
    fw = fw_of(p, edges, np.array([random_rotation(rng, 2) for _ in range(4)]))
    assert not RG.is_inf_bearing_rigid(fw)[0]


# -- rigidity eigenvalue --------------------------------------------------------

@pytest.mark.parametrize("d", [2, 3])
def test_eigenvalue_matches_singular_values(rng, d):
    assert RG.eigen_index(d) == {2: 5, 3: 8}[d]
    for _ in range(20):
        fw = complete_fw(rng, 5, d, rotations=False)
        T = fw.angles()
        lam = RG.rigidity_eigenvalue(fw.positions, T)
        A = RG.angle_rigidity_matrix(fw.positions, T)
        s = np.sort(np.linalg.svd(A, compute_uv=False))
        s = np.concatenate([np.zeros(A.shape[1] - s.size), s])
        assert lam > 0
        assert np.isclose(lam, s[RG.eigen_index(d) - 1] ** 2, rtol=1e-8)


def test_eigenvalue_zero_and_scaling(rng):
    assert RG.rigidity_eigenvalue(np.array([[0, 0], [1, 0], [0, 1.0], [1, 1.0]]), [[0, 1, 2]]) < 1e-12
    fw = complete_fw(rng, 5, 3, rotations=False)
    lam = RG.rigidity_eigenvalue(fw.positions, fw.angles())
    for c in (0.5, 2.0, 10.0):
        assert np.isclose(RG.rigidity_eigenvalue(c * fw.positions, fw.angles()), lam / c ** 2, rtol=1e-9)


def test_eigen_verdict_agrees_with_rank_on_random_frameworks(rng):
    for d in (2, 3):
        for _ in range(200):
            fw = random_framework(None, int(rng.integers(4, 7)), d, (1, 3), rng=rng)
            T = fw.angles()
            if fw.n * d <= RG.eigen_index(d) - 1:
                continue
            _, positive = RG.rigidity_eigenvalue_verdict(fw.positions, T)
            assert positive == RG.is_inf_angle_rigid(fw.positions, T)[0]


# -- degeneracy and the equivalence --------------------------------------------

def test_degeneracy_examples(rng):
    p = np.array([[0, 0], [1, 0], [2, 0], [0, 1.0]])
    assert RG.is_degenerate(p, RG.DirectedGraph(4, ((0, 1), (0, 2))))[0]
    q = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [-1, 0.5, 0], [0, 0, 1.0]])
    flag, dims = RG.is_degenerate(q, RG.DirectedGraph(6, ((0, 1), (0, 2), (0, 3), (0, 4))))
    assert flag and dims[0] == 2
    g = RG.DirectedGraph.complete(5)
    assert not any(RG.is_degenerate(rng.uniform(size=(5, 3)), g)[0] for _ in range(1000))


def test_theorem1_on_random_frameworks(rng):
    for d in (2, 3):
        for _ in range(300):
            n = int(rng.integers(3, 7))
            fw = random_framework(None, n, d, (1, n - 1), rng=rng)
            assert RG.check_theorem1(fw).consistent


def test_theorem1_small_span_vertex_is_not_bearing_rigid(rng):
    p = rng.uniform(size=(5, 3))
    edges = [(i, j) for i in range(1, 5) for j in range(5) if i != j] + [(0, 1)]
    fw = fw_of(p, edges, np.array([random_rotation(rng, 3) for _ in range(5)]))
    v = RG.check_theorem1(fw)
    assert not v.ibr and not v.min_span_ok and v.consistent


def test_theorem1_forward_direction(rng):
    fw = complete_fw(rng, 5, 3)
    v = RG.check_theorem1(fw)
    assert v.iar and v.min_span_ok and v.ibr


def test_theorem1_rejects_degenerate():
    p = np.array([[0, 0], [1, 0], [2, 0], [0, 1.0]])
    fw = fw_of(p, [(0, 1), (0, 2), (1, 0), (2, 0)], np.stack([np.eye(2)] * 4))
    with pytest.raises(RG.DegenerateFrameworkError):
        RG.check_theorem1(fw)


def test_analyze_report(rng):
    rep = RG.analyze(complete_fw(rng, 4, 3)).to_dict()
    assert rep["is_iar"] and rep["is_ibr"] and rep["eigen_index"] == 8
    assert rep["per_vertex_bearing_span_dim"] == [3, 3, 3, 3]


# -- Lemma 1 --------------------------------------------------------------------

def test_lemma1_examples():
    e1, e2 = np.eye(3)[0], np.eye(3)[1]
    assert np.allclose(RG.lemma1_solve(e1, e2, np.zeros(3), np.zeros(3)), 0)
    assert np.isclose(RG.lemma1_condition(e1, e2, e2, e1), 2.0)
    assert RG.lemma1_solve(e1, e2, e2, e1) is None
    with pytest.raises(RG.Lemma1PreconditionError):
        RG.lemma1_solve(e1, e1, np.zeros(3), np.zeros(3))
    with pytest.raises(RG.Lemma1PreconditionError):
        RG.lemma1_solve(e1, e2, e1, np.zeros(3))


def test_lemma1_constructive(rng):
    from anglerig.geometry import skew
    for _ in range(200):
        z1, z2 = (v / np.linalg.norm(v) for v in rng.normal(size=(2, 3)))
        x = rng.normal(size=3)
        y1, y2 = skew(z1) @ x, skew(z2) @ x
        assert abs(RG.lemma1_condition(z1, z2, y1, y2)) < 1e-12
        sol = RG.lemma1_solve(z1, z2, y1, y2)
        assert np.linalg.norm(skew(z1) @ sol - y1) < 1e-9
        assert np.linalg.norm(skew(z2) @ sol - y2) < 1e-9
