import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyperspod.errors import LengthMismatch, SingularCorrelation
from hyperspod.evaluation import roc_auc
from hyperspod.hsicube import HyperCube
from hyperspod.htd import (
    DualWindow,
    PriorSpectra,
    asd,
    cem,
    cem_filter,
    detect_all,
    local_statistics,
    osp,
    osp_projector,
    read_priors_csv,
    regularize,
    smf,
    tcimf,
    write_priors_csv,
)


def _ring(x, r, c, win):
    """Background ring pixels of (r, c), clipped at the border (oracle)."""
    h, w, _ = x.shape
    ho, hi = win.w_out // 2, win.w_in // 2
    out = []
    for i in range(max(r - ho, 0), min(r + ho + 1, h)):
        for j in range(max(c - ho, 0), min(c + ho + 1, w)):
            if abs(i - r) > hi or abs(j - c) > hi:
                out.append(x[i, j])
    return np.array(out)


def _cube(seed=0, h=12, w=11, n=5):
    rng = np.random.default_rng(seed)
    base = rng.uniform(200, 800, n)
    return HyperCube(base * (1 + 0.1 * rng.standard_normal((h, w, n))))


def test_local_statistics_match_brute_force():
    cube = _cube()
    x = cube.data.astype(np.float64)
    win = DualWindow(3, 7)
    cnt, mean, cov, corr = local_statistics(cube, win)
    for r, c in [(0, 0), (5, 5), (11, 10), (2, 9), (6, 0)]:
        ring = _ring(x, r, c, win)
        assert cnt[r, c] == len(ring)
        assert np.allclose(mean[r, c], ring.mean(0), rtol=1e-10)
        assert np.allclose(cov[r, c], np.cov(ring.T, bias=True), rtol=1e-7, atol=1e-6)
        assert np.allclose(corr[r, c], ring.T @ ring / len(ring), rtol=1e-9)


def test_window_validation():
    for bad in [(2, 5), (3, 4), (5, 5), (5, 3), (0, 3)]:
        with pytest.raises(ValueError):
            DualWindow(*bad)


def test_cem_unit_gain_on_random_pairs():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 20))
        A = rng.standard_normal((n + 5, n))
        R = A.T @ A + 1e-3 * np.eye(n)
        d = rng.standard_normal(n)
        worst = max(worst, abs(cem_filter(R, d) @ d - 1.0))
    assert worst <= 1e-8


def test_osp_projector_idempotent_and_annihilating():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n, k = int(rng.integers(3, 15)), int(rng.integers(1, 3))
        U = rng.standard_normal((n, k))
        P = osp_projector(U)
        assert np.abs(P @ P - P).max() <= 1e-8
        assert np.abs(P @ U).max() <= 1e-8


def _oracle_cem(x, win, d, r, c):
    ring = _ring(x, r, c, win)
    R = ring.T @ ring / len(ring)
    R = R + 1e-6 * np.trace(R) / R.shape[0] * np.eye(R.shape[0])
    return cem_filter(R, d) @ x[r, c]


def test_cem_map_matches_per_pixel_oracle():
    cube = _cube(3)
    x = cube.data.astype(np.float64)
    d = x[4, 4] * 1.1
    win = DualWindow(1, 5)
    smap = cem(cube, d, win)
    for r, c in [(0, 0), (4, 4), (11, 10), (7, 3)]:
        assert smap.scores[r, c] == pytest.approx(_oracle_cem(x, win, d, r, c), rel=1e-4)


def test_smf_and_asd_oracles():
    cube = _cube(4)
    x = cube.data.astype(np.float64)
    d = x[1, 1] + 50.0
    win = DualWindow(3, 7)
    s_map, a_map = smf(cube, d, win).scores, asd(cube, d, win).scores
    for r, c in [(0, 0), (6, 5), (11, 10)]:
        ring = _ring(x, r, c, win)
        m = ring.mean(0)
        K = np.cov(ring.T, bias=True)
        K = K + 1e-6 * np.trace(K) / len(K) * np.eye(len(K))
        Ki = np.linalg.inv(K)
        dt, xt = d - m, x[r, c] - m
        assert s_map[r, c] == pytest.approx(dt @ Ki @ xt / (dt @ Ki @ dt), rel=1e-4, abs=1e-6)
        assert a_map[r, c] == pytest.approx((dt @ Ki @ xt) ** 2 / ((dt @ Ki @ dt) * (xt @ Ki @ xt)), rel=1e-4, abs=1e-6)
    assert np.all((a_map >= 0) & (a_map <= 1 + 1e-6))


def test_tcimf_constraints_per_pixel():
    cube = _cube(5)
    x = cube.data.astype(np.float64)
    d = x[2, 2] + 30.0
    u = x[8, 8] - 40.0
    win = DualWindow(1, 5)
    smap = tcimf(cube, d, win, others=u[None])
    for r, c in [(0, 0), (5, 6), (11, 10)]:
        ring = _ring(x, r, c, win)
        R = ring.T @ ring / len(ring)
        R = R + 1e-6 * np.trace(R) / len(R) * np.eye(len(R))
        A = np.stack([d, u], axis=1)
        Ri = np.linalg.inv(R)
        w = Ri @ A @ np.linalg.inv(A.T @ Ri @ A) @ np.array([1.0, 0.0])
        assert w @ d == pytest.approx(1.0, abs=1e-8)
        assert abs(w @ u) < 1e-6 * np.abs(w).sum() * np.abs(u).max()
        assert smap.scores[r, c] == pytest.approx(w @ x[r, c], rel=1e-4, abs=1e-6)


def test_osp_global_and_local():
    cube = _cube(6)
    x = cube.data.astype(np.float64)
    d = x[0, 0]
    u = x[3, 3]
    smap = osp(cube, d, others=u[None])
    P = osp_projector(u[:, None])
    assert smap.scores[5, 5] == pytest.approx(d @ P @ x[5, 5], rel=1e-5)
    with pytest.raises(ValueError):
        osp(cube, d, bg_rank=1)
    local = osp(cube, d, DualWindow(1, 5), bg_rank=2)
    assert np.all(np.isfinite(local.scores))


@pytest.mark.parametrize("method", ["cem", "smf", "osp", "asd", "tcimf"])
def test_worker_count_does_not_change_output(method):
    cube = _cube(7, h=20, w=9)
    priors = [PriorSpectra(0, cube.data[3, 3] * 1.05), PriorSpectra(1, cube.data[[10, 15], [2, 7]].astype(float))]
    a = detect_all(cube, priors, method, DualWindow(1, 5), workers=1)
    b = detect_all(cube, priors, method, DualWindow(1, 5), workers=4)
    assert all(x.scores.tobytes() == y.scores.tobytes() for x, y in zip(a, b))
    assert [m.class_id for m in a] == [0, 1]


def test_regularization_ladder():
    rng = np.random.default_rng(0)
    v = rng.standard_normal(4)
    rank_one = np.outer(v, v)
    out = regularize(rank_one[None])[0]
    np.linalg.cholesky(out)
    lam = np.diag(out - rank_one)
    base = 1e-6 * np.trace(rank_one) / 4
    assert np.allclose(lam, lam[0], rtol=1e-6)
    assert any(np.isclose(lam[0], base * 10**k, rtol=1e-6) for k in range(4))
    with pytest.raises(SingularCorrelation):
        regularize(np.zeros((1, 3, 3)))


def test_band_mismatch():
    with pytest.raises(LengthMismatch):
        cem(_cube(), np.ones(4), DualWindow(1, 3))


def test_easy_scene_cem_auc():
    from hyperspod.scenesynth import synth_background

    rng = np.random.default_rng(11)
    bg = synth_background(32, 32, 12, 2, rng).data.astype(np.float64)
    target = np.linspace(2500, 900, 12)
    bg[15:17, 20:22] = target
    truth = np.zeros((32, 32), bool)
    truth[15:17, 20:22] = True
    smap = cem(HyperCube(bg), target, DualWindow(5, 15))
    assert roc_auc(smap, truth) >= 0.99


@given(st.lists(st.tuples(st.integers(0, 4), st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3)), min_size=1,
                max_size=8))
def test_priors_csv_roundtrip(tmp_path_factory, rows):
    grouped = {}
    for cid, v in rows:
        grouped.setdefault(cid, []).append(v)
    priors = [PriorSpectra(cid, np.array(v)) for cid, v in sorted(grouped.items())]
    path = tmp_path_factory.mktemp("p") / "priors.csv"
    write_priors_csv(priors, path)
    back = read_priors_csv(path)
    assert [p.class_id for p in back] == [p.class_id for p in priors]
    assert all(np.array_equal(a.spectra, b.spectra) for a, b in zip(back, priors))
