import numpy as np
import pytest

from oracles import logistic_gd_oracle
from slidebench import CoteachConfig, PixelBatch, coteach_step, pixel_features, train, train_single
from slidebench.coteach import (
    FEATURE_DIM,
    FEATURE_NAMES,
    LearnerState,
    batch_loss,
    clean_accuracy,
    drop_rate,
    gradient_check,
    make_noise_benchmark,
    parse_config,
    pixel_losses,
    predict,
    pseudo_label,
    write_history,
)
from slidebench.ensemble import binarize
from slidebench.errors import ConfigError, DivergenceError, GeometryError, ValidationError


def _batch(rng, h=8, w=8, name="b"):
    img = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    labels = rng.random((h, w)) < 0.5
    return PixelBatch(name, pixel_features(img), labels)


def test_pixel_features_shape_and_bias(rng):
    img = rng.integers(0, 256, (6, 7, 3), dtype=np.uint8)
    feats = pixel_features(img)
    assert feats.shape == (6, 7, FEATURE_DIM)
    assert len(FEATURE_NAMES) == FEATURE_DIM
    assert np.all(feats[..., 0] == 1.0)
    assert np.all(feats[..., 1:4] <= 1.0)


def test_pixel_features_flat_image_has_zero_local_std():
    img = np.full((5, 5, 3), 120, dtype=np.uint8)
    feats = pixel_features(img)
    assert np.all(feats[..., 5] < 1e-6)
    assert np.allclose(feats[..., 4], 120 / 255)


def test_pixel_features_rejects_gray():
    with pytest.raises(GeometryError):
        pixel_features(np.zeros((4, 4), dtype=np.uint8))


def test_gradient_check_small(rng):
    batch = _batch(rng)
    w = rng.normal(0, 0.5, FEATURE_DIM)
    assert gradient_check(w, batch) < 1e-6


def test_hand_gradient_step():
    # single pixel, single feature: p = sigma(0) = 0.5, y = 1
    # gradient = (0.5 - 1) * 1 = -0.5; step with eta 1 moves w to 0.5
    feats = np.ones((1, 1, 1))
    batch = PixelBatch("one", feats, np.ones((1, 1), dtype=bool))
    cfg = CoteachConfig(eta=1.0, tau=0.0)
    wf, wg = coteach_step(np.zeros(1), np.zeros(1), batch, 0, cfg, use_drop=False, use_agreement=False)
    assert wf[0] == 0.5
    assert wg[0] == 0.5


def test_drop_rate_ramp():
    cfg = CoteachConfig(tau=0.3, ramp_epochs=10)
    assert drop_rate(cfg, 0) == 0.0
    assert drop_rate(cfg, 5) == pytest.approx(0.15)
    assert drop_rate(cfg, 10) == pytest.approx(0.3)
    assert drop_rate(cfg, 20) == pytest.approx(0.3)
    with pytest.raises(ValidationError):
        drop_rate(cfg, -1)


def test_predict_strictly_inside_unit_interval(rng):
    batch = _batch(rng)
    state = LearnerState(rng.normal(0, 100, FEATURE_DIM))
    p = predict(state, batch).values
    assert np.all(p > 0.0)
    assert np.all(p < 1.0)


def test_pseudo_label_matches_binarize(rng):
    batch = _batch(rng)
    state = LearnerState(rng.normal(0, 1, FEATURE_DIM))
    assert np.array_equal(
        pseudo_label(state, batch).data, binarize(predict(state, batch), 0.5).data
    )


def test_pixel_losses_cross_entropy_identities():
    X = np.array([[0.0], [0.0]])
    y = np.array([0.0, 1.0])
    losses = pixel_losses(np.zeros(1), X, y)
    assert np.allclose(losses, np.log(2.0))


def test_symmetry_bit_exact_over_steps(rng):
    batches = [_batch(rng, name=f"b{i}") for i in range(4)]
    cfg = CoteachConfig(eta=0.5, tau=0.2, ramp_epochs=5)
    w0 = rng.normal(0, 0.01, FEATURE_DIM)
    wf, wg = w0.copy(), w0.copy()
    for step in range(100):
        wf, wg = coteach_step(wf, wg, batches[step % 4], step // 10, cfg)
        assert np.array_equal(wf, wg)


def test_learners_swap_symmetry(rng):
    # swapping f and g swaps the outputs exactly
    batch = _batch(rng)
    cfg = CoteachConfig(eta=0.5, tau=0.2)
    wa = rng.normal(0, 0.1, FEATURE_DIM)
    wb = rng.normal(0, 0.1, FEATURE_DIM)
    f1, g1 = coteach_step(wa.copy(), wb.copy(), batch, 3, cfg)
    g2, f2 = coteach_step(wb.copy(), wa.copy(), batch, 3, cfg)
    assert np.array_equal(f1, f2)
    assert np.array_equal(g1, g2)


def test_no_drop_no_agreement_equals_plain_logistic(rng):
    batch = _batch(rng, 12, 12)
    X, y = batch.flat()
    w0 = rng.normal(0, 0.01, FEATURE_DIM)
    wf, wg = w0.copy(), w0.copy()
    cfg = CoteachConfig(eta=0.7, tau=0.0)
    for _ in range(100):
        wf, wg = coteach_step(wf, wg, batch, 0, cfg, use_drop=False, use_agreement=False)
    want = logistic_gd_oracle(X, y, w0, 0.7, 100)
    assert np.max(np.abs(wf - want)) <= 1e-12
    assert np.max(np.abs(wg - want)) <= 1e-12


def test_drop_keeps_smallest_peer_losses(rng):
    # with tau just under 1 and full ramp, only the few smallest-loss pixels remain
    batch = _batch(rng, 4, 4)
    X, y = batch.flat()
    wf = rng.normal(0, 0.5, FEATURE_DIM)
    wg = rng.normal(0, 0.5, FEATURE_DIM)
    cfg = CoteachConfig(eta=1e-9, tau=0.75, ramp_epochs=1)
    wf2, _ = coteach_step(wf.copy(), wg.copy(), batch, 1, cfg, use_agreement=False)
    # reconstruct: f's update should use the 4 smallest peer (g) losses
    losses_g = pixel_losses(wg, X, y)
    kept = np.argsort(losses_g, kind="stable")[: 16 - 12]
    grad = X[kept].T @ (1 / (1 + np.exp(-(X[kept] @ wf))) - y[kept]) / len(kept)
    assert np.allclose(wf2, wf - 1e-9 * grad, atol=1e-18)


def test_train_returns_history_rows(rng):
    batches = [_batch(rng, name=f"b{i}") for i in range(3)]
    cfg = CoteachConfig(eta=0.5, t_max=7, n_max=2, tau=0.2, ramp_epochs=3, seed=5)
    sf, sg, history = train(batches, cfg)
    assert len(history) == 7
    assert [h["epoch"] for h in history] == list(range(1, 8))
    assert history[-1]["drop_rate"] == pytest.approx(0.2)
    assert 0.0 < history[-1]["selected_fraction"] <= 1.0
    assert len(sf.loss_history) == 7


def test_train_deterministic(rng):
    batches = [_batch(rng, name=f"b{i}") for i in range(2)]
    cfg = CoteachConfig(eta=0.5, t_max=5, seed=9)
    a = train(batches, cfg)
    b = train(batches, cfg)
    assert np.array_equal(a[0].w, b[0].w)
    assert a[2] == b[2]


def test_train_single_shares_init_with_f(rng):
    batches = [_batch(rng)]
    cfg = CoteachConfig(eta=0.0001, t_max=1, tau=0.0, seed=3)
    sf, _, _ = train(batches, cfg, use_drop=False, use_agreement=False)
    single, history = train_single(batches, cfg)
    # same init, same schedule, no selection: identical single step
    assert np.array_equal(sf.w, single.w)
    assert len(history) == 1


def test_write_history_format(tmp_path):
    history = [
        {"epoch": 1, "loss_f": 0.5, "loss_g": 0.25, "drop_rate": 0.1, "selected_fraction": 1.0}
    ]
    path = tmp_path / "h.csv"
    write_history(history, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss_f,loss_g,drop_rate,selected_fraction"
    assert lines[1] == "1,0.50000000,0.25000000,0.10000000,1.00000000"


def test_parse_config_round_trip(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("eta = 2.5\nt_max=40  # epochs\n\n# comment line\ntau=0.25\nseed=7\n")
    cfg = parse_config(path)
    assert cfg.eta == 2.5
    assert cfg.t_max == 40
    assert cfg.tau == 0.25
    assert cfg.seed == 7
    assert cfg.n_max == 1


@pytest.mark.parametrize("body", ["bogus=1\n", "eta\n", "eta=fast\n", "tau=1.5\n"])
def test_parse_config_rejects_bad_input(tmp_path, body):
    path = tmp_path / "bad.cfg"
    path.write_text(body)
    with pytest.raises((ConfigError, ValidationError)):
        parse_config(path)


def test_config_validation():
    with pytest.raises(ValidationError):
        CoteachConfig(eta=0.0).validate()
    with pytest.raises(ValidationError):
        CoteachConfig(tau=1.0).validate()
    with pytest.raises(ValidationError):
        CoteachConfig(t_max=0).validate()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_detected(rng):
    batch = _batch(rng)
    huge = LearnerState(np.full(FEATURE_DIM, np.inf))
    with pytest.raises(DivergenceError):
        huge.validate()
    with pytest.raises(DivergenceError):
        coteach_step(
            np.full(FEATURE_DIM, np.inf),
            np.full(FEATURE_DIM, np.inf),
            batch,
            0,
            CoteachConfig(),
            use_drop=False,
            use_agreement=False,
        )


def test_noise_benchmark_structure(rng):
    train_set, test_set, clean = make_noise_benchmark(0, n_train=2, n_test=1, tile=16)
    assert len(train_set) == 2
    assert len(test_set) == 1
    assert clean[0].shape == (16, 16)
    # test labels are the clean truth
    assert np.array_equal(test_set[0].labels, clean[0])
    # train labels carry roughly 30% flips, so they differ from any disk
    assert train_set[0].labels.mean() != pytest.approx(clean[0].mean(), abs=0.01)


def test_noise_benchmark_deterministic():
    a = make_noise_benchmark(4, n_train=1, n_test=1, tile=16)
    b = make_noise_benchmark(4, n_train=1, n_test=1, tile=16)
    assert np.array_equal(a[0][0].features, b[0][0].features)
    assert np.array_equal(a[0][0].labels, b[0][0].labels)


def test_clean_accuracy_range(rng):
    _, test_set, clean = make_noise_benchmark(1, n_train=1, n_test=2, tile=16)
    state = LearnerState(rng.normal(0, 0.01, FEATURE_DIM))
    acc = clean_accuracy(state, test_set, clean)
    assert 0.0 <= acc <= 1.0


def test_coteach_beats_single_on_one_seed():
    # one seed of the full benchmark as a smoke test; the acceptance suite
    # runs all ten
    from slidebench import noise_benchmark

    result = noise_benchmark(0)
    assert result["coteach_accuracy"] >= result["single_accuracy"]
    assert result["final_drop_rate"] == pytest.approx(0.3)


def test_batch_validation(rng):
    feats = np.zeros((4, 4, FEATURE_DIM))
    with pytest.raises(GeometryError):
        PixelBatch("b", feats, np.zeros((4, 5), dtype=bool)).validate()
    with pytest.raises(GeometryError):
        PixelBatch("b", feats, np.zeros((4, 4), dtype=np.uint8)).validate()


def test_batch_loss_decreases_under_training(rng):
    batch = _batch(rng, 16, 16)
    cfg = CoteachConfig(eta=1.0, t_max=20, tau=0.0, seed=0)
    sf, _, history = train([batch], cfg, use_drop=False, use_agreement=False)
    assert history[-1]["loss_f"] < history[0]["loss_f"]
    assert batch_loss(sf.w, batch) == pytest.approx(history[-1]["loss_f"])
