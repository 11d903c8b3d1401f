import numpy as np
import pytest
from dataclasses import replace

from momentum_tde import container
from momentum_tde.data import TRAIN, Dataset, DatasetProfile, synthesize
from momentum_tde.ema import EmaTracker, FrozenTrackerError
from momentum_tde.inference import PLAIN, TDE, InferenceConfig, cde_class_weights, predict
from momentum_tde.numeric import softmax_xent
from momentum_tde.trainer import (Stage2Config, TrainConfig, TrainingDiverged, checkpoint_from_bytes,
                                  checkpoint_to_bytes, init_model, load_checkpoint, loss_step,
                                  metrics_csv, save_checkpoint, train)
from oracles import central_diff, rel_err

FAST = TrainConfig(hidden=(16,), feature_dim=8, epochs=4, batch_size=16, lr=0.05)
LT = DatasetProfile(num_classes=6, n_max=120, imbalance_ratio=20, dim=8,
                    n_val_per_class=10, n_test_per_class=20)


@pytest.fixture(scope="module")
def lt_data():
    return synthesize(LT, 0)


@pytest.fixture(scope="module")
def lt_model(lt_data):
    return train(lt_data, replace(FAST, epochs=10))


def separable_toy():
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(2, 0.3, (40, 2)), rng.normal(-2, 0.3, (40, 2))])
    y = np.repeat([0, 1], 40)
    return Dataset(X, y, np.full(80, TRAIN), 2)


def test_linear_head_fits_separable_toy():
    ds = separable_toy()
    ck = train(ds, TrainConfig(head="linear", K=1, hidden=(8,), feature_dim=4, epochs=20,
                               batch_size=8, lr=0.1))
    pred = predict(ds.features, ck.model, ck.ema, InferenceConfig(PLAIN)).predicted
    assert np.mean(pred == ds.labels) == 1.0


def test_same_seed_bit_identical_checkpoint(lt_data):
    a = checkpoint_to_bytes(train(lt_data, FAST))
    b = checkpoint_to_bytes(train(lt_data, FAST))
    assert a == b
    assert a != checkpoint_to_bytes(train(lt_data, replace(FAST, seed=1)))


def test_checkpoint_roundtrip_predictions(lt_data, lt_model, tmp_path):
    save_checkpoint(lt_model, tmp_path / "m.ltck")
    back = load_checkpoint(tmp_path / "m.ltck")
    X = lt_data.part("test")[0]
    for cfg in (InferenceConfig(PLAIN), InferenceConfig(TDE, 2.0)):
        a = predict(X, lt_model.model, lt_model.ema, cfg)
        b = predict(X, back.model, back.ema, cfg)
        assert a.logits.tobytes() == b.logits.tobytes()
    assert back.config == lt_model.config
    assert len(back.metrics) == len(lt_model.metrics)
    with pytest.raises(container.FormatError):
        checkpoint_from_bytes((tmp_path / "m.ltck").read_bytes()[:-1])


def test_ema_frozen_after_training(lt_model):
    assert lt_model.ema.frozen
    with pytest.raises(FrozenTrackerError):
        lt_model.ema.update(np.zeros(8))


def test_ema_points_toward_head(lt_data, lt_model):
    d = lt_model.ema.direction()
    X, y = lt_data.part("test")
    f = lt_model.model.features(X)
    cos = lambda v: v @ d / np.linalg.norm(v)
    assert cos(f[y == 0].mean(axis=0)) > cos(f[y == LT.num_classes - 1].mean(axis=0))


def test_metrics_log(lt_model):
    rows = lt_model.metrics
    assert [r["epoch"] for r in rows] == list(range(10))
    assert all(0 <= r["val_overall"] <= 1 for r in rows)
    text = metrics_csv(rows)
    assert text.splitlines()[0].startswith("stage,epoch,lr,train_loss")


def test_loss_step_single_sample_is_xent():
    model = init_model(FAST, 8, 3)
    x = np.random.default_rng(0).standard_normal(8)
    loss, _ = loss_step(x, 2, model)
    ref, _ = softmax_xent(model.logits(x), 2)
    assert loss == pytest.approx(ref, rel=1e-14)


def test_loss_step_weights():
    model = init_model(FAST, 8, 3)
    rng = np.random.default_rng(1)
    X, y = rng.standard_normal((6, 8)), np.array([0, 1, 2, 0, 1, 2])
    plain, g0 = loss_step(X, y, model)
    assert plain == pytest.approx(np.mean(softmax_xent(model.logits(X), y)[0]), rel=1e-14)
    balanced, g1 = loss_step(X, y, model, weights=cde_class_weights([5, 5, 5]))
    assert balanced == pytest.approx(plain, rel=1e-14)
    for k in g0:
        np.testing.assert_allclose(g0[k], g1[k], rtol=1e-13, atol=1e-15)
    weighted, _ = loss_step(X, y, model, weights=np.array([1.0, 0.0, 0.0]))
    assert weighted == pytest.approx(np.mean(softmax_xent(model.logits(X[y == 0]), y[y == 0])[0]))


def test_loss_step_updates_ema_with_batch_mean():
    model = init_model(FAST, 8, 3)
    X = np.random.default_rng(2).standard_normal((5, 8))
    ema = EmaTracker(8, 0.9)
    loss_step(X, np.zeros(5, dtype=int), model, ema)
    np.testing.assert_allclose(ema.mean, model.features(X).mean(axis=0), rtol=1e-14)
    assert ema.count == 1


@pytest.mark.parametrize("head", ["deconfound", "linear", "capsule"])
def test_loss_step_gradients_finite_difference(head):
    # identity feature layer: ReLU kinks would make central differences unreliable
    cfg = replace(FAST, head=head, K=2 if head == "deconfound" else 1, hidden=(5,),
                  feature_dim=4, feature_activation="identity")
    model = init_model(cfg, 3, 3)
    rng = np.random.default_rng(3)
    X, y = 3 * rng.standard_normal((4, 3)), np.array([0, 1, 2, 1])
    w = np.array([0.5, 2.0, 1.0])
    _, grads = loss_step(X, y, model, weights=w)
    for name, arr in model.param_dict().items():
        def f(v, arr=arr):
            saved = arr.copy()
            arr[...] = v
            out = loss_step(X, y, model, weights=w)[0]
            arr[...] = saved
            return out
        assert rel_err(grads[name], central_diff(f, arr.copy())) < 1e-4, name


def test_divergence_reports_context():
    ds = separable_toy()
    ds.features[3, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="stage 1, epoch 0, iteration"):
        train(ds, TrainConfig(hidden=(4,), feature_dim=4, epochs=2, batch_size=8))


def test_stage2_config_validation():
    with pytest.raises(ValueError):
        Stage2Config(sampler="instance")
    with pytest.raises(ValueError):
        TrainConfig(pipeline="two_stage")
    with pytest.raises(ValueError):
        TrainConfig(stage2=Stage2Config())
    with pytest.raises(ValueError):
        TrainConfig(feature_dim=10, K=4)


def test_config_dict_roundtrip():
    cfg = TrainConfig(pipeline="two_stage", stage2=Stage2Config("lws", epochs=3), hidden=(4, 4))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 0.1})


@pytest.mark.parametrize("mode", ["crt", "lws", "tau_norm"])
def test_stage2_freezes_backbone(lt_data, mode):
    base = replace(FAST, head="linear", K=1)
    stage1 = train(lt_data, base)
    two = train(lt_data, replace(base, pipeline="two_stage", stage2=Stage2Config(mode, epochs=3)))
    for a, b in zip(stage1.model.backbone.weights + stage1.model.backbone.biases,
                    two.model.backbone.weights + two.model.backbone.biases):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(stage1.ema.mean, two.ema.mean)
    if mode == "lws":
        np.testing.assert_array_equal(two.model.head.W, stage1.model.head.W)
        assert not np.allclose(two.model.head.g, 1.0)
    if mode == "tau_norm":
        assert two.model.head.variant == "tau_norm"
    assert max(r["stage"] for r in two.metrics) == 2


def test_deconfound_matches_cosine_on_balanced_data():
    prof = DatasetProfile(num_classes=6, n_max=60, imbalance_ratio=1, dim=8, noise=0.25,
                          n_val_per_class=5, n_test_per_class=100)
    cfg = TrainConfig(hidden=(32,), feature_dim=16, epochs=40, batch_size=16, lr=0.05)
    gaps = []
    for seed in range(5):
        ds = synthesize(prof, seed)
        X, y = ds.part("test")
        accs = []
        for head, K in (("deconfound", 2), ("cosine", 1)):
            ck = train(ds, replace(cfg, head=head, K=K, seed=seed))
            accs.append(np.mean(predict(X, ck.model, ck.ema, InferenceConfig(PLAIN)).predicted == y))
        gaps.append(accs[0] - accs[1])
    # 600 test samples per seed at ~90% accuracy: the binomial sd of a paired
    # five-seed mean difference is about 0.007, so 0.03 is over 4 sd
    assert abs(np.mean(gaps)) < 0.03


def test_cos_dispersion_larger_when_imbalanced():
    def dispersion(rho):
        prof = DatasetProfile(n_max=100, imbalance_ratio=rho, n_val_per_class=5,
                              n_test_per_class=50)
        vals = []
        for seed in range(3):
            ds = synthesize(prof, seed)
            ck = train(ds, TrainConfig(seed=seed))
            X, y = ds.part("test")
            f = ck.model.features(X)
            c = f @ ck.ema.direction() / np.linalg.norm(f, axis=1)
            means = [c[y == k].mean() for k in range(prof.num_classes)]
            vals.append(max(means) - min(means))
        return np.mean(vals)
    assert dispersion(100) > dispersion(1)
