import numpy as np
import pytest
from dataclasses import replace

from hbar.attacks import AttackConfig
from hbar.data import Dataset, Splits, synth_gaussian
from hbar.evaluation import (ABLATION_ROWS, ExperimentReport, SeedResult, ablation_configs,
                             config_hash, config_snapshot, output_sensitivity, output_variance,
                             robustness_table, run_ablation, run_experiment, run_sensitivity,
                             validate_theorem1, validate_theorem2)
from hbar.model import accuracy, init
from hbar.objectives import HbarConfig
from hbar.trainer import TrainConfig, train

from conftest import blobs

TOY_ATTACKS = {"fgsm": AttackConfig.fgsm(0.2, clamp=(-np.inf, np.inf)),
               "pgd": AttackConfig(radius=0.2, step_size=0.05, steps=5, clamp=(-np.inf, np.inf))}


@pytest.fixture(scope="module")
def toy_splits():
    ds = blobs(240, d=3, k=3, seed=0)
    idx = np.arange(len(ds))
    return Splits(ds.take(idx[:160]), ds.take(idx[160:], "test"), ds.take(idx[160:224], "probe"))


BASE = TrainConfig(epochs=2, batch_size=32, learning_rate=1e-2, hbar=HbarConfig(1.0, 5.0))


class TestReport:
    def test_mean_std(self):
        runs = [SeedResult(s, acc, {}, 0.0, 0.0) for s, acc in zip(range(3), (0.5, 0.7, 0.6))]
        rep = ExperimentReport("x", {}, runs)
        assert rep.mean("natural_acc") == pytest.approx(0.6)
        assert rep.std("natural_acc") == pytest.approx(0.1)
        assert min(rep.values("natural_acc")) <= rep.mean("natural_acc") <= max(rep.values("natural_acc"))

    def test_no_std_for_one_seed(self):
        rep = ExperimentReport("x", {}, [SeedResult(0, 0.5, {}, 0.0, 0.0)])
        assert rep.std("natural_acc") is None

    def test_snapshot_embeds_seed(self, toy_splits):
        rep = run_experiment("r", [3, 4, 3], BASE, toy_splits, {}, [5])
        assert rep.config["seeds"] == [5] and rep.seeds == [5]
        assert rep.config["train"]["hbar"]["lambda_x"] == 1.0


class TestRobustnessTable:
    def test_rows(self, toy_splits):
        net = init([3, 4, 3], 0)
        attacks = dict(TOY_ATTACKS, zero=AttackConfig(radius=0.0, clamp=(-np.inf, np.inf)))
        rows = robustness_table(net, toy_splits.test, attacks)
        assert [r["attack_name"] for r in rows] == ["natural", "fgsm", "pgd", "zero"]
        assert rows[-1]["robust_acc"] == rows[0]["robust_acc"]
        assert rows[0]["robust_acc"] == accuracy(net, toy_splits.test.x, toy_splits.test.labels)


class TestAblation:
    def test_row_structure(self):
        rows = ablation_configs(BASE)
        assert [r for r, _, _ in rows] == ["i", "ii", "iii", "iv", "v"]
        got = {r: (c.hbar.use_ce, c.hbar.lambda_x, c.hbar.lambda_y) for r, _, c in rows}
        assert got == {"i": (True, 0, 0), "ii": (False, 1.0, 5.0), "iii": (True, 1.0, 0),
                       "iv": (True, 0, 5.0), "v": (True, 1.0, 5.0)}
        assert len(ABLATION_ROWS) == 5

    def test_rows_differ_only_in_objective(self):
        for _, _, cfg in ablation_configs(BASE):
            snap = config_snapshot([3, 4, 3], cfg)
            snap["train"].pop("hbar")
            ref = config_snapshot([3, 4, 3], BASE)
            ref["train"].pop("hbar")
            assert config_hash(snap) == config_hash(ref)

    def test_run(self, toy_splits):
        reps = run_ablation([3, 4, 3], BASE, toy_splits, TOY_ATTACKS, [0, 1])
        assert [r.name for r in reps] == ["i", "ii", "iii", "iv", "v"]
        assert all(r.seeds == [0, 1] for r in reps)
        assert all(set(run.robust) == {"fgsm", "pgd"} for r in reps for run in r.runs)


class TestSensitivity:
    def test_zero_point_is_ce_row(self, toy_splits):
        ce = run_experiment("i", [3, 4, 3], replace(BASE, hbar=HbarConfig()), toy_splits, TOY_ATTACKS, [0])
        (pt,) = run_sensitivity([(0.0, 0.0)], [3, 4, 3], BASE, toy_splits, TOY_ATTACKS, [0])
        assert pt.runs[0].natural_acc == ce.runs[0].natural_acc
        assert pt.runs[0].robust == ce.runs[0].robust
        assert pt.runs[0].hsic_xz_M == ce.runs[0].hsic_xz_M

    def test_four_points(self, toy_splits):
        grid = [(0.0, 0.0), (1.0, 0.0), (0.0, 5.0), (1.0, 50.0)]
        reps = run_sensitivity(grid, [3, 4, 3], replace(BASE, epochs=1), toy_splits, {}, [0])
        assert len(reps) == 4 and len({r.config_hash for r in reps}) == 4

    def test_workers_do_not_change_results(self, toy_splits):
        a = run_experiment("r", [3, 4, 3], BASE, toy_splits, TOY_ATTACKS, [0, 1, 2], workers=1)
        b = run_experiment("r", [3, 4, 3], BASE, toy_splits, TOY_ATTACKS, [0, 1, 2], workers=3)
        assert [(r.natural_acc, r.robust, r.hsic_xz_M) for r in a.runs] == \
               [(r.natural_acc, r.robust, r.hsic_xz_M) for r in b.runs]


def _zero_net(dims):
    net = init(dims, 0)
    for p in net.params:
        p.data[...] = 0
    return net


class TestTheorem1:
    def test_needs_three(self, toy_splits):
        with pytest.raises(ValueError):
            validate_theorem1([init([3, 3], 0)] * 2, toy_splits.probe)

    def test_duplicate_models_tie(self, toy_splits):
        a, b = init([3, 4, 3], 1), init([3, 4, 3], 2)
        rep = validate_theorem1([a, a, b], toy_splits.probe)
        assert rep["hsic_xz_M"][0] == rep["hsic_xz_M"][1]
        assert rep["output_variance"][0] == rep["output_variance"][1]

    def test_constant_model_at_bottom(self, toy_splits):
        models = [_zero_net([3, 4, 3]), init([3, 4, 3], 1), init([3, 4, 3], 2)]
        rep = validate_theorem1(models, toy_splits.probe)
        assert rep["output_variance"][0] == 0.0
        assert rep["hsic_xz_M"][0] == min(rep["hsic_xz_M"])
        assert rep["output_variance"][0] == min(rep["output_variance"])

    def test_scaled_outputs_pass(self, toy_splits):
        # scaling the last layer raises both output variance and HSIC with X
        models = []
        for c in (0.1, 1.0, 10.0):
            net = init([3, 4, 3], 3)
            net.layers[-1].weight.data *= c
            models.append(net)
        rep = validate_theorem1(models, toy_splits.probe)
        assert rep["verdict"] == "PASS" and rep["spearman"] == pytest.approx(1.0)
        assert output_variance(models[0], toy_splits.probe) < output_variance(models[2], toy_splits.probe)


class TestTheorem2:
    def test_requires_gaussian(self, toy_splits):
        with pytest.raises(ValueError):
            validate_theorem2([init([3, 3], 0)] * 3, toy_splits.probe, [0.1])

    def test_zero_radius(self):
        ds = synth_gaussian(50, 4, seed=0)
        assert output_sensitivity(init([4, 6, 2], 0), ds, 0.0) == 0.0

    def test_zero_net_insensitive(self):
        ds = synth_gaussian(50, 4, seed=0)
        assert all(output_sensitivity(_zero_net([4, 6, 2]), ds, r) == 0.0 for r in (0.05, 0.1, 0.2))

    def test_monotone_and_ranked(self):
        ds = synth_gaussian(200, 4, seed=1)
        models = []
        for c in (0.2, 1.0, 5.0):
            net = init([4, 8, 2], 0)
            net.layers[-1].weight.data *= c
            models.append(net)
        rep = validate_theorem2(models, ds, [0.05, 0.1, 0.2], r_fixed=0.1)
        assert rep["radii"] == [0.0, 0.05, 0.1, 0.2]
        assert rep["zero_at_zero"] and rep["monotone"]
        assert rep["verdict"] == "PASS"



def test_fgsm_weaker_than_pgd():
    # single-step attack should not beat the multi-step one on most models
    weaker = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        centers = rng.uniform(0.2, 0.8, (4, 30))
        labels = np.arange(400) % 4
        ds = Dataset(np.clip(centers[labels] + rng.normal(0, 0.15, (400, 30)), 0, 1), labels, k=4)
        net, _ = train(init([30, 32, 4], seed), ds, TrainConfig(epochs=5, batch_size=32, learning_rate=1e-2))
        rows = robustness_table(net, ds, {"fgsm": AttackConfig.fgsm(0.15),
                                          "pgd40": AttackConfig(radius=0.15, step_size=0.01, steps=40)})
        weaker += rows[1]["robust_acc"] >= rows[2]["robust_acc"]
    assert weaker >= 9
