"""Architecture contracts, strip identity, and loss semantics."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from partkit.errors import DomainError, SchemaError, ShapeError, SpecError
from partkit.models import (
    BackboneSpec,
    MpmConfig,
    build_backbone,
    build_mpm,
    bypass_parameter_count,
    focal_loss,
    forward_infer,
    label_smoothed_ce,
    load_checkpoint,
    mode_pool_labels,
    mpm_loss,
    parameter_count,
    save_checkpoint,
    seg_focal_from_logits,
    strip_auxiliary,
    train_segmenter,
)
from partkit.models.segmenter import PixelSegmenter, predict_probs
from partkit.parts import CompositeMask, downsample_mask

torch.manual_seed(0)


def small_spec(**kwargs) -> BackboneSpec:
    defaults = dict(
        num_blocks=4,
        channels=(8, 12, 16, 16),
        downsample=(2, 2, 2, 2),
        num_classes=5,
        arch="conv",
    )
    defaults.update(kwargs)
    return BackboneSpec(**defaults)


def small_cfg(**kwargs) -> MpmConfig:
    defaults = dict(seg_classes=7, lam=1.0, focal_gamma=2.0, head_width=8)
    defaults.update(kwargs)
    return MpmConfig(**defaults)


class TestSpecValidation:
    def test_too_few_blocks_rejected(self):
        with pytest.raises(SpecError):
            BackboneSpec(num_blocks=2, channels=(8, 8), downsample=(2, 2), num_classes=3)

    def test_mismatched_lists_rejected(self):
        with pytest.raises(SpecError):
            small_spec(channels=(8, 12, 16))

    def test_non_power_of_two_downsample_rejected(self):
        with pytest.raises(SpecError):
            small_spec(downsample=(3, 2, 2, 2))

    def test_bad_lambda_rejected(self):
        with pytest.raises(SpecError):
            small_cfg(lam=-0.5)

    def test_unknown_arch_rejected(self):
        with pytest.raises(SpecError):
            small_spec(arch="transformer")


class TestArchitecture:
    def test_head_resolutions(self):
        model = build_mpm(small_spec(), small_cfg())
        x = torch.randn(2, 3, 32, 32)
        class_logits, seg_logits = model.forward_train(x)
        assert class_logits.shape == (2, 5)
        assert [tuple(s.shape) for s in seg_logits] == [
            (2, 7, 8, 8),
            (2, 7, 4, 4),
            (2, 7, 2, 2),
        ]

    def test_sixtyfour_input_matches_paper_scale_pattern(self):
        spec = small_spec(downsample=(4, 2, 2, 2))
        model = build_mpm(spec, small_cfg())
        _, seg_logits = model.forward_train(torch.randn(1, 3, 64, 64))
        assert [s.shape[-1] for s in seg_logits] == [8, 4, 2]

    def test_topdown_off_heads_independent(self):
        model = build_mpm(small_spec(), small_cfg(topdown=False))
        assert len(model.lateral) == 0
        x = torch.randn(1, 3, 32, 32)
        _, before = model.forward_train(x)
        with torch.no_grad():
            for p in model.proj[2].parameters():
                p.add_(1.0)
        _, after = model.forward_train(x)
        assert torch.equal(before[0], after[0])
        assert torch.equal(before[1], after[1])
        assert not torch.equal(before[2], after[2])

    def test_topdown_on_deep_perturbation_reaches_shallow_head(self):
        model = build_mpm(small_spec(), small_cfg(topdown=True))
        x = torch.randn(1, 3, 32, 32)
        _, before = model.forward_train(x)
        with torch.no_grad():
            for p in model.proj[2].parameters():
                p.add_(1.0)
        _, after = model.forward_train(x)
        assert not torch.equal(before[0], after[0])

    def test_bypass_lighter_than_backbone(self):
        model = build_mpm(small_spec(), small_cfg())
        assert bypass_parameter_count(model) < parameter_count(model.backbone)
        assert bypass_parameter_count(model) > 0

    def test_zero_classifier_head_gives_equal_logits(self):
        model = build_mpm(small_spec(), small_cfg())
        with torch.no_grad():
            model.backbone.head.weight.zero_()
            model.backbone.head.bias.zero_()
        logits, _ = model.forward_train(torch.randn(3, 3, 32, 32))
        assert torch.equal(logits, torch.zeros_like(logits))

    def test_bad_input_shape_raises(self):
        model = build_mpm(small_spec(), small_cfg())
        with pytest.raises(ShapeError):
            model.forward_train(torch.randn(1, 3, 30, 30))
        with pytest.raises(ShapeError):
            model.forward_train(torch.randn(1, 1, 32, 32))

    def test_attention_backbone_forward(self):
        spec = small_spec(arch="attention", channels=(8, 12, 16, 16))
        model = build_mpm(spec, small_cfg())
        class_logits, seg_logits = model.forward_train(torch.randn(2, 3, 32, 32))
        assert class_logits.shape == (2, 5)
        assert len(seg_logits) == 3


class TestStripIdentity:
    def test_parameter_identity_per_name(self):
        model = build_mpm(small_spec(), small_cfg())
        stripped = strip_auxiliary(model)
        vanilla = build_backbone(small_spec())
        stripped_names = {k: tuple(v.shape) for k, v in stripped.state_dict().items()}
        vanilla_names = {k: tuple(v.shape) for k, v in vanilla.state_dict().items()}
        assert stripped_names == vanilla_names
        assert parameter_count(stripped) == parameter_count(vanilla)

    def test_infer_equals_train_class_logits_bitwise(self):
        model = build_mpm(small_spec(), small_cfg())
        model.eval()
        x = torch.randn(2, 3, 32, 32)
        with torch.no_grad():
            train_logits, _ = model.forward_train(x)
            stripped_logits = forward_infer(strip_auxiliary(model), x)
            direct_logits = forward_infer(model, x)
        assert torch.equal(train_logits, stripped_logits)
        assert torch.equal(train_logits, direct_logits)

    def test_bypass_perturbation_leaves_inference_unchanged(self):
        model = build_mpm(small_spec(), small_cfg())
        x = torch.randn(2, 3, 32, 32)
        with torch.no_grad():
            before = forward_infer(model, x)
            for module in (model.proj, model.lateral, model.logits):
                for p in module.parameters():
                    p.add_(torch.randn_like(p))
            after = forward_infer(model, x)
        assert torch.equal(before, after)


class TestFocalLoss:
    def test_gamma_zero_is_cross_entropy(self):
        p = torch.tensor([0.9, 0.5, 0.2], dtype=torch.float64)
        assert focal_loss(p, 0.0).item() == pytest.approx(
            (-torch.log(p)).mean().item()
        )

    def test_closed_form_half(self):
        p = torch.tensor([0.5], dtype=torch.float64)
        assert focal_loss(p, 2.0).item() == pytest.approx(0.25 * math.log(2.0))

    def test_perfect_prediction_is_zero(self):
        assert focal_loss(torch.tensor([1.0]), 2.0).item() == 0.0

    def test_domain_error(self):
        with pytest.raises(DomainError):
            focal_loss(torch.tensor([0.0, 0.5]), 2.0)
        with pytest.raises(DomainError):
            focal_loss(torch.tensor([1.2]), 2.0)

    @given(
        st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=1, max_size=8),
        st.floats(min_value=0.0, max_value=4.0),
    )
    def test_nonnegative_and_below_ce(self, probs, gamma):
        p = torch.tensor(probs, dtype=torch.float64)
        value = focal_loss(p, gamma).item()
        assert value >= 0.0
        assert value <= (-torch.log(p)).mean().item() + 1e-12


class TestModePooling:
    @given(
        st.integers(min_value=1, max_value=3).map(lambda k: 2**k),
        st.integers(min_value=0, max_value=2**31 - 1),
    )
    @settings(max_examples=30)
    def test_matches_numpy_downsample(self, factor, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 5, size=(8, 8))
        torch_out = mode_pool_labels(
            torch.from_numpy(labels[None]).long(), factor, num_classes=5
        )[0].numpy()
        numpy_out = downsample_mask(
            CompositeMask(labels=labels, num_parts=5), factor
        ).labels
        assert np.array_equal(torch_out, numpy_out)

    def test_indivisible_raises(self):
        with pytest.raises(ShapeError):
            mode_pool_labels(torch.zeros(1, 6, 6, dtype=torch.long), 4, 3)


class TestMpmLoss:
    def _batch(self, cfg, h=16):
        torch.manual_seed(1)
        class_logits = torch.randn(2, 5, dtype=torch.float64)
        targets = torch.tensor([0, 3])
        seg = [
            torch.randn(2, cfg.seg_classes, h // f, h // f, dtype=torch.float64)
            for f in (2, 4, 8)
        ]
        labels = torch.randint(0, cfg.seg_classes, (2, h, h))
        return class_logits, targets, seg, labels

    def test_lambda_zero_total_is_classification(self):
        cfg = small_cfg(lam=0.0)
        class_logits, targets, seg, labels = self._batch(cfg)
        total, l_cls, l_seg = mpm_loss(class_logits, targets, seg, labels, cfg)
        assert total.item() == pytest.approx(l_cls.item())
        assert l_seg.item() > 0

    def test_total_decomposition(self):
        cfg = small_cfg(lam=2.5)
        class_logits, targets, seg, labels = self._batch(cfg)
        total, l_cls, l_seg = mpm_loss(class_logits, targets, seg, labels, cfg)
        assert total.item() == pytest.approx(l_cls.item() + 2.5 * l_seg.item())

    def test_identical_scales_equal_single_scale(self):
        cfg = small_cfg()
        torch.manual_seed(2)
        logits = torch.randn(2, cfg.seg_classes, 8, 8, dtype=torch.float64)
        labels = torch.randint(0, cfg.seg_classes, (2, 8, 8))
        class_logits = torch.randn(2, 5, dtype=torch.float64)
        targets = torch.tensor([1, 2])
        _, _, l_seg = mpm_loss(
            class_logits, targets, [logits, logits, logits], labels, cfg
        )
        single = seg_focal_from_logits(
            logits, labels, cfg.focal_gamma, cfg.seg_classes - 1
        )
        assert l_seg.item() == pytest.approx(single.item())

    def test_classification_term_is_smoothed_ce(self):
        cfg = small_cfg()
        class_logits, targets, seg, labels = self._batch(cfg)
        _, l_cls, _ = mpm_loss(class_logits, targets, seg, labels, cfg)
        assert l_cls.item() == pytest.approx(
            label_smoothed_ce(class_logits, targets, 0.1).item()
        )

    def test_seg_loss_nonnegative_and_zero_at_certainty(self):
        cfg = small_cfg(seg_classes=3)
        labels = torch.zeros(1, 4, 4, dtype=torch.long)
        confident = torch.full((1, 3, 4, 4), -60.0, dtype=torch.float64)
        confident[:, 0] = 60.0
        value = seg_focal_from_logits(confident, labels[:, :4, :4], 2.0, 2)
        assert value.item() == pytest.approx(0.0, abs=1e-12)

    def test_own_argmax_target_reduces_focal_term(self):
        cfg = small_cfg()
        torch.manual_seed(3)
        logits = torch.randn(2, cfg.seg_classes, 4, 4, dtype=torch.float64)
        labels = torch.randint(0, cfg.seg_classes, (2, 4, 4))
        base = seg_focal_from_logits(logits, labels, 2.0, cfg.seg_classes - 1)
        easy = seg_focal_from_logits(
            logits, logits.argmax(dim=1), 2.0, cfg.seg_classes - 1
        )
        assert easy.item() < base.item()

    def test_bypass_gradient_scales_with_lambda(self):
        spec = small_spec()
        torch.manual_seed(4)
        x = torch.randn(2, 3, 32, 32)
        targets = torch.tensor([0, 1])
        labels = torch.randint(0, 7, (2, 32, 32))

        def bypass_grads(lam):
            torch.manual_seed(5)
            model = build_mpm(spec, small_cfg(lam=lam))
            class_logits, seg_logits = model.forward_train(x)
            total, _, _ = mpm_loss(
                class_logits, targets, seg_logits, labels, model.cfg
            )
            params = [p for m in (model.proj, model.lateral, model.logits)
                      for p in m.parameters()]
            return torch.autograd.grad(total, params, allow_unused=False)

        grads_l0 = bypass_grads(0.0)
        assert all(torch.all(g == 0) for g in grads_l0)
        grads_l1 = bypass_grads(1.0)
        grads_l3 = bypass_grads(3.0)
        for g1, g3 in zip(grads_l1, grads_l3):
            assert torch.allclose(3.0 * g1, g3, atol=1e-5)


class TestCheckpoint:
    def test_mpm_round_trip(self, tmp_path):
        model = build_mpm(small_spec(), small_cfg())
        save_checkpoint(tmp_path / "m.pt", model, extra={"note": 1})
        loaded, payload = load_checkpoint(tmp_path / "m.pt")
        assert payload["extra"] == {"note": 1}
        x = torch.randn(1, 3, 32, 32)
        model.eval()
        with torch.no_grad():
            a, _ = model.forward_train(x)
            b, _ = loaded.forward_train(x)
        assert torch.equal(a, b)

    def test_vanilla_round_trip(self, tmp_path):
        model = build_backbone(small_spec())
        save_checkpoint(tmp_path / "v.pt", model)
        loaded, payload = load_checkpoint(tmp_path / "v.pt")
        assert payload["kind"] == "vanilla"
        x = torch.randn(1, 3, 32, 32)
        with torch.no_grad():
            assert torch.equal(model(x), loaded(x))

    def test_ema_weights_selectable(self, tmp_path):
        model = build_backbone(small_spec())
        ema = {k: torch.zeros_like(v) for k, v in model.state_dict().items()}
        save_checkpoint(tmp_path / "e.pt", model, ema_state=ema)
        loaded, _ = load_checkpoint(tmp_path / "e.pt", use_ema=True)
        assert all(torch.all(v == 0) for v in loaded.state_dict().values())

    def test_missing_ema_raises(self, tmp_path):
        model = build_backbone(small_spec())
        save_checkpoint(tmp_path / "n.pt", model)
        with pytest.raises(SchemaError):
            load_checkpoint(tmp_path / "n.pt", use_ema=True)

    def test_bad_version_raises(self, tmp_path):
        model = build_backbone(small_spec())
        path = save_checkpoint(tmp_path / "b.pt", model)
        payload = torch.load(path, weights_only=False)
        payload["version"] = 99
        torch.save(payload, path)
        with pytest.raises(SchemaError):
            load_checkpoint(path)


class TestSegmenter:
    def test_output_shape_and_probs(self):
        torch.manual_seed(0)
        model = PixelSegmenter(num_classes=4)
        probs = predict_probs(model, torch.randn(2, 3, 16, 16))
        assert probs.shape == (2, 4, 16, 16)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    def test_training_reduces_loss_and_is_deterministic(self):
        torch.manual_seed(9)
        images = torch.rand(8, 3, 16, 16)
        labels = (images[:, 0] > 0.5).long()
        model_a = train_segmenter(images, labels, num_classes=2, epochs=8, seed=3)
        model_b = train_segmenter(images, labels, num_classes=2, epochs=8, seed=3)
        for pa, pb in zip(model_a.parameters(), model_b.parameters()):
            assert torch.equal(pa, pb)
        with torch.no_grad():
            loss = torch.nn.functional.cross_entropy(model_a(images), labels)
            fresh = PixelSegmenter(2)
            fresh_loss = torch.nn.functional.cross_entropy(fresh(images), labels)
        assert loss.item() < fresh_loss.item()
