"""Measured directional claims on the shared rho=100 benchmark (beyond the acceptance list)."""
import numpy as np

from momentum_tde.data import FEW, MANY
from momentum_tde.recipes import run_recipe


def test_head_direction_favours_head_classes(bench):
    # mean feature of the many-shot classes vs that of the few-shot classes
    for s in bench.seeds:
        ck, ds = bench.checkpoint("deconfound", s), bench.data(s)
        d = ck.ema.direction()
        X, y = ds.part("test")
        f = ck.model.features(X)
        tags = np.asarray(ds.frequency_tags(), dtype=object)[y]
        head, tail = f[tags == MANY].mean(axis=0), f[tags == FEW].mean(axis=0)
        assert head @ d / np.linalg.norm(head) > tail @ d / np.linalg.norm(tail)


def test_largest_class_has_highest_mean_cos(bench):
    res = run_recipe("fig3-sweep", bench)
    assert res.summary["argmax_cos_dhat_class"] == 0


def test_two_stage_beats_one_stage_on_few_shot(bench):
    few = lambda m: np.mean([bench.plain_report(m, s).few for s in bench.seeds])
    assert few("crt") > few("baseline")


def test_weight_norm_decreases_toward_tail(bench):
    rows = run_recipe("bias-emergence", bench).details["rows"]
    w = [r["weight_norm"] for r in rows]
    assert w[0] > w[-1]
