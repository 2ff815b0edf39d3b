import numpy as np
import pytest
from scipy import stats

from flowprune.datasets import GaussianMixture
from flowprune.entropy import (
    CedReport,
    EntropyEstimate,
    ProbeSpec,
    block_loss_deltas,
    compute_ced,
    estimate_entropy,
    rank_blocks,
    select_prunable,
    write_ced_csv,
)
from flowprune.errors import DegenerateDistributionError, PreconditionError
from flowprune.interpolant import TimeSchedule
from flowprune.model import BackboneConfig, SubnetMask, VelocityModel
from flowprune.training import train

SCHED = TimeSchedule()

UNIT_GAUSSIAN_H = 0.5 * np.log(2 * np.pi) + 0.5  # ~1.4189


def welford_std(values):
    """Independent one-pass (Welford) population standard deviation."""
    mean = 0.0
    m2 = 0.0
    n = 0
    for v in values:
        n += 1
        delta = v - mean
        mean += delta / n
        m2 += delta * (v - mean)
    return np.sqrt(m2 / n)


class TestEstimateEntropy:
    def test_unit_gaussian_closed_form(self):
        rng = np.random.default_rng(0)
        est = estimate_entropy(rng.standard_normal((1_000_000, 1)))
        assert abs(est.h - UNIT_GAUSSIAN_H) < 0.01

    def test_scaling_shifts_entropy_by_log_c(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((5000, 3))
        base = estimate_entropy(x)
        for c in (0.1, 2.0, 17.5):
            scaled = estimate_entropy(c * x)
            assert scaled.h - base.h == pytest.approx(np.log(c), abs=1e-6)

    def test_matches_one_pass_variance_oracle(self):
        rng = np.random.default_rng(2)
        mix = GaussianMixture(n_classes=2)
        x, _ = mix.sample(4000, rng)
        est = estimate_entropy(x)
        sigma_oracle = welford_std(x.ravel())
        h_oracle = np.log(sigma_oracle) + 0.5 * np.log(2 * np.pi) + 0.5
        assert est.h == pytest.approx(h_oracle, abs=1e-10)

    def test_invariant_h_from_sigma(self):
        est = estimate_entropy(np.random.default_rng(3).normal(2.0, 0.5, (100, 2)))
        assert est.h == pytest.approx(np.log(est.sigma) + 0.5 * np.log(2 * np.pi) + 0.5)
        assert est.sigma > 0

    def test_constant_outputs_degenerate(self):
        with pytest.raises(DegenerateDistributionError, match="degenerate distribution"):
            estimate_entropy(np.ones((10, 2)))

    def test_needs_two_samples(self):
        with pytest.raises(PreconditionError):
            estimate_entropy(np.ones((1, 5)))


def make_model(n_blocks=4, seed=11, hidden=16):
    cfg = BackboneConfig(data_dim=2, hidden_dim=hidden, n_blocks=n_blocks,
                         n_heads=2, n_classes=3, seed=seed, n_tokens=2)
    return VelocityModel(cfg)


def zero_block_outputs(model, i):
    for name in (f"block{i}.attn.wo", f"block{i}.attn.bo",
                 f"block{i}.mlp.w2", f"block{i}.mlp.b2"):
        model.set_param(name, np.zeros(model.params[name].shape))


def small_probe(seed=0, n=256):
    return ProbeSpec(dataset=GaussianMixture(n_classes=3), n_samples=n,
                     n_timesteps=8, seed=seed)


class TestComputeCed:
    def test_zero_residual_block_has_zero_ced(self):
        model = make_model()
        zero_block_outputs(model, 2)
        report = compute_ced(model, small_probe(), SCHED)
        assert report.signed_ced[2] == 0.0
        assert report.abs_ced[2] == 0.0

    def test_deterministic_given_probe(self):
        model = make_model(seed=4)
        r1 = compute_ced(model, small_probe(seed=9), SCHED)
        r2 = compute_ced(model, small_probe(seed=9), SCHED)
        assert r1.signed_ced == r2.signed_ced
        assert r1.ranking == r2.ranking
        assert r1.base_entropy == r2.base_entropy

    def test_zero_anchor_leaves_other_blocks_unchanged(self):
        # adding an exact no-op block must not disturb the other deviations
        base_model = make_model(n_blocks=4, seed=6)
        grown = make_model(n_blocks=5, seed=6)
        # rebuild grown from base: blocks 0..2 copied, block 3 zeroed, block 4 = old block 3
        for name, t in base_model.params.items():
            if name.startswith("block3."):
                grown.set_param(name.replace("block3.", "block4."), t.data)
            else:
                grown.set_param(name, t.data)
        zero_block_outputs(grown, 3)
        probe = small_probe(seed=13)
        base_report = compute_ced(base_model, probe, SCHED)
        grown_report = compute_ced(grown, probe, SCHED)
        assert grown_report.abs_ced[3] < 1e-12
        others = grown_report.signed_ced[:3] + grown_report.signed_ced[4:]
        for got, want in zip(others, base_report.signed_ced):
            assert abs(got - want) < 1e-9

    def test_ranking_ties_break_to_lower_index(self):
        assert rank_blocks([0.5, 0.1, 0.1, 0.3]) == [1, 2, 3, 0]

    def test_ranking_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(8)
        abs_ced = rng.uniform(0.01, 2.0, size=6)
        base = rank_blocks(abs_ced)
        for f in (np.sqrt, np.log1p, lambda v: v**3, lambda v: 10 * v + 1):
            assert rank_blocks(f(abs_ced)) == base

    def test_sign_partition(self):
        model = make_model(seed=14)
        report = compute_ced(model, small_probe(seed=3), SCHED)
        for s, a in zip(report.signed_ced, report.abs_ced):
            assert a == abs(s)
            assert (s > 0) or (s < 0) or (s == 0)

    @pytest.mark.slow
    def test_trained_model_ced_correlates_with_loss_delta(self):
        # trained 6-block model: |deviation| ranking should track the
        # brute-force single-block-drop loss increase
        cfg = BackboneConfig(data_dim=2, hidden_dim=32, n_blocks=6, n_heads=4,
                             n_classes=4, seed=21, n_tokens=2)
        model = VelocityModel(cfg)
        ds = GaussianMixture(n_classes=4)
        train(model, model.full_mask(), ds, steps=900, lr=0.03,
              rng=np.random.default_rng(100), batch_size=64)
        probe = ProbeSpec(dataset=ds, n_samples=2048, n_timesteps=8, seed=5)
        report = compute_ced(model, probe, SCHED)
        deltas = block_loss_deltas(model, ds, SCHED, seed=77, n=1024)
        rho = stats.spearmanr(report.abs_ced, deltas).statistic
        assert rho >= 0.6, f"spearman {rho:.3f}"


class TestSelectPrunable:
    def report(self, abs_ced):
        signed = list(abs_ced)
        return CedReport(signed_ced=signed, abs_ced=list(abs_ced),
                         ranking=rank_blocks(abs_ced),
                         base_entropy=EntropyEstimate(1.0, 1.0, 100))

    def test_zero_drop_is_full_mask(self):
        assert select_prunable(self.report([0.5, 0.1, 0.3]), 0) == SubnetMask.full(3)

    def test_all_but_one_keeps_highest(self):
        mask = select_prunable(self.report([0.5, 0.1, 0.3]), 2)
        assert mask.active == (True, False, False)

    def test_example_ordering(self):
        mask = select_prunable(self.report([0.5, 0.1, 0.3]), 2)
        assert mask.dropped_indices() == [1, 2]

    def test_dropping_everything_rejected(self):
        with pytest.raises(PreconditionError):
            select_prunable(self.report([0.5, 0.1, 0.3]), 3)


class TestCsv:
    def test_round_trip_bytes_stable(self, tmp_path):
        model = make_model(seed=2)
        report = compute_ced(model, small_probe(seed=1), SCHED)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        write_ced_csv(report, p1)
        write_ced_csv(report, p2)
        assert p1.read_bytes() == p2.read_bytes()
        header = p1.read_text().splitlines()[0]
        assert header == "block_index,signed_ced,abs_ced,rank"
