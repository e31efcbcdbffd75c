"""Loss-function tests against independent brute-force oracles.

Every oracle here is written with plain Python loops / float64 numpy so it
shares no code with the implementation under test.
"""

import math

import numpy as np
import pytest
import torch

from ptseg.losses import (
    LossState,
    activation_center,
    anatomy_aware_loss,
    ce_loss,
    compound_loss,
    dice_loss,
    update_lambda,
)

EPS = 1e-8


def center_oracle(volume: np.ndarray, epsilon: float = EPS) -> np.ndarray:
    """Per-axis epsilon-regularized weighted-mean centroid, by explicit loops."""
    vol = np.asarray(volume, dtype=np.float64)
    weights = vol + epsilon
    total = 0.0
    sums = [0.0, 0.0, 0.0]
    for d in range(vol.shape[0]):
        for h in range(vol.shape[1]):
            for w in range(vol.shape[2]):
                wt = weights[d, h, w]
                total += wt
                sums[0] += d * wt
                sums[1] += h * wt
                sums[2] += w * wt
    return np.array([s / total for s in sums])


def ama_oracle(pred, target, spacing, beta=1.5, epsilon=EPS) -> float:
    cp = center_oracle(pred, epsilon)
    cg = center_oracle(target, epsilon)
    return float(sum(abs(cg[a] - cp[a]) ** beta * spacing[a] for a in range(3)))


def make_blob(shape, center, radius) -> torch.Tensor:
    """Binary ellipsoid mask used as a stand-in segmentation target."""
    grid = np.indices(shape).astype(np.float64)
    acc = sum(((grid[a] - center[a]) / radius) ** 2 for a in range(3))
    return torch.from_numpy((acc <= 1.0).astype(np.float64))


class TestActivationCenter:
    def test_matches_bruteforce_oracle_on_random_maps(self):
        rng = np.random.default_rng(7)
        for i in range(200):
            shape = tuple(rng.integers(2, 9, size=3))
            if i % 2 == 0:
                vol = (rng.random(shape) < 0.2).astype(np.float64)
            else:
                vol = rng.random(shape)
            got = activation_center(torch.from_numpy(vol), EPS).numpy()
            want = center_oracle(vol)
            assert np.max(np.abs(got - want)) < 1e-10

    def test_all_zero_map_returns_exact_grid_midpoint(self):
        for shape in [(8, 8, 8), (4, 6, 6), (3, 5, 7)]:
            got = activation_center(torch.zeros(shape, dtype=torch.float64), EPS)
            want = torch.tensor([(n - 1) / 2 for n in shape], dtype=torch.float64)
            assert torch.equal(got, want)

    def test_single_voxel_centers_on_that_voxel(self):
        vol = torch.zeros(8, 8, 8, dtype=torch.float64)
        vol[2, 3, 4] = 1.0
        got = activation_center(vol, EPS)
        assert torch.allclose(got, torch.tensor([2.0, 3.0, 4.0], dtype=torch.float64), atol=1e-4)

    def test_two_equal_voxels_center_at_their_midpoint(self):
        vol = torch.zeros(8, 8, 8, dtype=torch.float64)
        vol[0, 0, 0] = 1.0
        vol[4, 0, 0] = 1.0
        got = activation_center(vol, EPS)
        assert abs(got[0].item() - 2.0) < 1e-5

    def test_intensity_scale_invariance(self):
        rng = np.random.default_rng(11)
        vol = rng.random((6, 6, 6))
        vol[vol < 0.7] = 0.0  # ensure a sparse map with total mass >= 1
        vol[2, 2, 2] = 1.0
        base = activation_center(torch.from_numpy(vol), EPS)
        for c in (0.1, 0.5, 2.0, 10.0):
            scaled = activation_center(torch.from_numpy(c * vol), EPS)
            assert torch.allclose(scaled, base, atol=1e-6)

    def test_translation_moves_center_by_the_offset(self):
        rng = np.random.default_rng(13)
        vol = np.zeros((10, 12, 12))
        vol[2:5, 2:6, 3:7] = rng.random((3, 4, 4)) + 0.5
        shifted = np.roll(vol, shift=(3, 4, 2), axis=(0, 1, 2))
        c0 = activation_center(torch.from_numpy(vol), EPS)
        c1 = activation_center(torch.from_numpy(shifted), EPS)
        want = c0 + torch.tensor([3.0, 4.0, 2.0], dtype=torch.float64)
        assert torch.allclose(c1, want, atol=1e-4)

    def test_batched_equals_per_sample(self):
        rng = np.random.default_rng(17)
        batch = torch.from_numpy(rng.random((4, 5, 6, 7)))
        got = activation_center(batch, EPS)
        for b in range(4):
            single = activation_center(batch[b], EPS)
            assert torch.allclose(got[b], single, atol=0.0, rtol=0.0)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            activation_center(torch.zeros(4, 4), EPS)

    def test_gradient_flows(self):
        vol = torch.rand(4, 6, 6, dtype=torch.float64, requires_grad=True)
        activation_center(vol, EPS).sum().backward()
        assert vol.grad is not None and torch.isfinite(vol.grad).all()


class TestAnatomyAwareLoss:
    SPACING = (4.0, 0.4, 0.4)

    def test_zero_when_prediction_equals_target(self):
        blob = make_blob((8, 16, 16), (4, 8, 8), 2.5)
        loss = anatomy_aware_loss(blob, blob, self.SPACING)
        assert loss.item() == 0.0

    def test_near_zero_when_prediction_is_scaled_target(self):
        blob = make_blob((8, 16, 16), (4, 8, 8), 2.5)
        # scaling changes the relative epsilon pull, so centers coincide only
        # to ~1e-6 voxels; the powered gap then stays below 1e-8
        for c in (0.25, 0.5, 2.0):
            loss = anatomy_aware_loss(c * blob, blob, self.SPACING)
            assert loss.item() < 1e-8

    def test_translated_blob_matches_powered_gap_times_spacing(self):
        shape = (9, 17, 17)
        target = make_blob(shape, (4, 8, 8), 2.0)
        pred = torch.roll(target, shifts=4, dims=1)  # +4 voxels along the middle axis
        loss = anatomy_aware_loss(pred, target, self.SPACING, beta=1.5, epsilon=EPS)
        hand = 4.0**1.5 * 0.4  # = 3.2
        assert abs(loss.item() - hand) < 1e-3
        want = ama_oracle(pred.numpy(), target.numpy(), self.SPACING)
        assert abs(loss.item() - want) < 1e-9

    def test_loss_strictly_increases_with_separation(self):
        shape = (8, 32, 32)
        target = make_blob(shape, (4, 10, 16), 2.0)
        losses = []
        for sep in (2, 4, 8):
            pred = torch.roll(target, shifts=sep, dims=1)
            losses.append(anatomy_aware_loss(pred, target, self.SPACING).item())
        assert losses[0] < losses[1] < losses[2]

    def test_doubling_one_spacing_doubles_that_axis_term(self):
        shape = (12, 16, 16)
        target = make_blob(shape, (4, 8, 8), 2.0)
        pred = torch.roll(target, shifts=3, dims=0)  # gap only along the first axis
        base = anatomy_aware_loss(pred, target, (4.0, 0.4, 0.4)).item()
        doubled = anatomy_aware_loss(pred, target, (8.0, 0.4, 0.4)).item()
        # the tiny in-plane epsilon terms are identical, so the ratio is the
        # first-axis ratio up to ~1e-12 absolute
        assert math.isclose(doubled, 2.0 * base, rel_tol=1e-9)

    def test_loss_increases_with_beta_for_gaps_above_one(self):
        shape = (10, 16, 16)
        target = make_blob(shape, (3, 8, 8), 2.0)
        pred = torch.roll(torch.roll(target, shifts=3, dims=0), shifts=4, dims=1)
        values = [
            anatomy_aware_loss(pred, target, self.SPACING, beta=b).item() for b in (1.0, 1.5, 2.0)
        ]
        assert values[0] < values[1] < values[2]

    def test_empty_target_penalizes_off_center_mass_more(self):
        shape = (8, 16, 16)
        empty = torch.zeros(shape, dtype=torch.float64)
        corner = torch.zeros(shape, dtype=torch.float64)
        corner[0, 0, 0] = 1.0
        middle = torch.zeros(shape, dtype=torch.float64)
        middle[3, 7, 7] = 1.0  # nearest voxel to the (3.5, 7.5, 7.5) midpoint
        loss_corner = anatomy_aware_loss(corner, empty, self.SPACING).item()
        loss_middle = anatomy_aware_loss(middle, empty, self.SPACING).item()
        assert loss_corner > loss_middle

    def test_batched_input_averages_per_sample_losses(self):
        rng = np.random.default_rng(23)
        pred = torch.from_numpy(rng.random((3, 5, 8, 8)))
        target = torch.from_numpy((rng.random((3, 5, 8, 8)) < 0.1).astype(np.float64))
        batched = anatomy_aware_loss(pred, target, self.SPACING).item()
        singles = [
            anatomy_aware_loss(pred[b], target[b], self.SPACING).item() for b in range(3)
        ]
        assert math.isclose(batched, sum(singles) / 3, rel_tol=1e-12)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            anatomy_aware_loss(torch.zeros(4, 4, 4), torch.zeros(4, 4, 5), self.SPACING)


class TestDiceLoss:
    def test_matches_direct_formula_oracle(self):
        rng = np.random.default_rng(29)
        for _ in range(50):
            pred = rng.random((8, 8, 8))
            target = (rng.random((8, 8, 8)) < 0.3).astype(np.float64)
            inter = 0.0
            sp = 0.0
            sg = 0.0
            for d in range(8):
                for h in range(8):
                    for w in range(8):
                        inter += pred[d, h, w] * target[d, h, w]
                        sp += pred[d, h, w]
                        sg += target[d, h, w]
            want = 1.0 - (2.0 * inter + 1e-5) / (sp + sg + 1e-5)
            got = dice_loss(torch.from_numpy(pred), torch.from_numpy(target)).item()
            assert abs(got - want) < 1e-7

    def test_identical_masks_give_near_zero(self):
        mask = (torch.rand(8, 8, 8) < 0.3).double()
        assert dice_loss(mask, mask).item() < 1e-5

    def test_disjoint_masks_give_near_one(self):
        mask = (torch.rand(8, 8, 8) < 0.5).double()
        assert dice_loss(1.0 - mask, mask).item() > 1.0 - 1e-4

    def test_batched_averages_per_sample(self):
        rng = np.random.default_rng(31)
        pred = torch.from_numpy(rng.random((2, 6, 6, 6)))
        target = torch.from_numpy((rng.random((2, 6, 6, 6)) < 0.3).astype(np.float64))
        batched = dice_loss(pred, target).item()
        singles = [dice_loss(pred[b], target[b]).item() for b in range(2)]
        assert math.isclose(batched, sum(singles) / 2, rel_tol=1e-12)

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            dice_loss(torch.zeros(4, 4, 4), torch.zeros(5, 4, 4))


class TestCrossEntropy:
    def test_matches_log_softmax_oracle(self):
        rng = np.random.default_rng(37)
        logits = torch.from_numpy(rng.normal(size=(2, 2, 3, 4, 4)))
        target = torch.from_numpy(rng.integers(0, 2, size=(2, 3, 4, 4)))
        total = 0.0
        count = 0
        for b in range(2):
            for d in range(3):
                for h in range(4):
                    for w in range(4):
                        z = logits[b, :, d, h, w].numpy()
                        log_norm = math.log(sum(math.exp(v) for v in z))
                        total += log_norm - z[int(target[b, d, h, w])]
                        count += 1
        want = total / count
        got = ce_loss(logits, target).item()
        assert abs(got - want) < 1e-7


class TestCompoundLoss:
    SPACING = (4.0, 0.4, 0.4)

    def _case(self, seed=41):
        rng = np.random.default_rng(seed)
        logits = torch.from_numpy(rng.normal(size=(2, 2, 4, 8, 8)))
        target = torch.from_numpy(rng.integers(0, 2, size=(2, 4, 8, 8)))
        return logits, target

    def test_dice_ama_total_recomposes_from_parts(self):
        logits, target = self._case()
        state = LossState(lam=2.5)
        total, parts = compound_loss(logits, target, self.SPACING, state, "dice+ama")
        assert abs(total.item() - (parts["dist"] + 2.5 * parts["dice"])) < 1e-7
        probs = torch.softmax(logits, dim=1)[:, 1]
        assert abs(parts["dice"] - dice_loss(probs, target.double()).item()) < 1e-12
        assert abs(parts["dist"] - anatomy_aware_loss(probs, target.double(), self.SPACING).item()) < 1e-12
        assert parts["ce"] == 0.0

    def test_lambda_zero_leaves_distance_term_alone(self):
        logits, target = self._case(43)
        total, parts = compound_loss(logits, target, self.SPACING, LossState(lam=0.0), "dice+ama")
        assert abs(total.item() - parts["dist"]) < 1e-12

    def test_dice_ce_variant_sums_both_parts(self):
        logits, target = self._case(47)
        total, parts = compound_loss(logits, target, self.SPACING, LossState(), "dice+ce")
        assert abs(total.item() - (parts["dice"] + parts["ce"])) < 1e-7
        assert parts["dist"] == 0.0

    def test_single_term_variants(self):
        logits, target = self._case(53)
        total, parts = compound_loss(logits, target, self.SPACING, LossState(), "dice")
        assert abs(total.item() - parts["dice"]) < 1e-12
        assert parts["ce"] == 0.0 and parts["dist"] == 0.0
        total, parts = compound_loss(logits, target, self.SPACING, LossState(), "ce")
        assert abs(total.item() - parts["ce"]) < 1e-12
        assert abs(total.item() - ce_loss(logits, target).item()) < 1e-12

    def test_unknown_variant_raises(self):
        logits, target = self._case(59)
        with pytest.raises(ValueError):
            compound_loss(logits, target, self.SPACING, LossState(), "focal")

    def test_total_is_differentiable(self):
        logits, target = self._case(61)
        logits.requires_grad_(True)
        total, _ = compound_loss(logits, target, self.SPACING, LossState(), "dice+ama")
        total.backward()
        assert torch.isfinite(logits.grad).all()


class TestLambdaSchedule:
    def test_equal_means_give_unit_weight(self):
        state = LossState()
        state.accumulate(0.5, 0.5)
        new = update_lambda(state)
        assert new.lam == 1.0

    def test_ratio_of_means(self):
        state = LossState()
        state.accumulate(1.5, 0.25)
        state.accumulate(2.5, 0.75)
        new = update_lambda(state)
        assert math.isclose(new.lam, 2.0 / 0.5, rel_tol=1e-12)

    def test_floor_caps_division(self):
        state = LossState()
        state.accumulate(3.0, 0.0)
        new = update_lambda(state)
        assert math.isclose(new.lam, 3.0 / 1e-8, rel_tol=1e-12)

    def test_update_resets_accumulators(self):
        state = LossState()
        state.accumulate(1.0, 0.5)
        new = update_lambda(state)
        assert new.n_batches == 0 and new.dist_sum == 0.0 and new.dice_sum == 0.0

    def test_no_batches_keeps_weight(self):
        state = LossState(lam=7.0)
        new = update_lambda(state)
        assert new.lam == 7.0

    def test_running_means(self):
        state = LossState()
        state.accumulate(1.0, 0.2)
        state.accumulate(3.0, 0.6)
        assert math.isclose(state.dist_mean, 2.0, rel_tol=1e-12)
        assert math.isclose(state.dice_mean, 0.4, rel_tol=1e-12)
