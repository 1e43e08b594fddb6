"""Part-crop fusion few-shot framework: crops, fusion identities, episodes."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from partkit.errors import DimensionError, EmptyRecord, ShapeError, SpecError
from partkit.fewshot import (
    ConvEncoder,
    EpisodeSpec,
    FusionModel,
    crop_largest_parts,
    part_crop_batch,
    run_episodes,
    train_episodic,
)
from partkit.parts import AnnotationRecord, PartInstanceMask


def _record(areas_by_part, size=16, image_id="img"):
    """One rectangular instance per (part_id, area) pair, stacked in rows."""
    instances = []
    row = 0
    for part_id, area in areas_by_part:
        width = area
        mask = np.zeros((size, size), dtype=bool)
        mask[row, :width] = True
        instances.append(PartInstanceMask(mask=mask, part_id=part_id))
        row += 1
    return AnnotationRecord(image_id=image_id, object_id=0, instances=tuple(instances))


def _flat_image(size=16, channels=3, value=0.5):
    return np.full((channels, size, size), value, dtype=np.float32)


class TestCropLargestParts:
    def test_area_descending_order(self):
        image = np.zeros((3, 16, 16), dtype=np.float32)
        # paint each part's row with a distinct value so crops are identifiable
        record = _record([(0, 10), (1, 12), (2, 4)])
        for row, value in enumerate((0.1, 0.2, 0.3)):
            image[:, row, :] = value
        crops = crop_largest_parts(image, record, 3)
        # expected order by area: part 1 (12), part 0 (10), part 2 (4)
        assert np.allclose(np.unique(crops[0]), 0.2)
        assert np.allclose(np.unique(crops[1]), 0.1)
        assert np.allclose(np.unique(crops[2]), 0.3)

    def test_tie_broken_by_part_id(self):
        image = np.zeros((3, 16, 16), dtype=np.float32)
        image[:, 0, :] = 0.4
        image[:, 1, :] = 0.8
        record = _record([(7, 6), (3, 6)])
        crops = crop_largest_parts(image, record, 2)
        assert np.allclose(np.unique(crops[0]), 0.8)  # part 3 first
        assert np.allclose(np.unique(crops[1]), 0.4)

    def test_full_image_part_is_identity(self):
        image = np.random.default_rng(0).random((3, 12, 12)).astype(np.float32)
        mask = np.ones((12, 12), dtype=bool)
        record = AnnotationRecord(
            image_id="x", object_id=0,
            instances=(PartInstanceMask(mask=mask, part_id=0),),
        )
        crops = crop_largest_parts(image, record, 1)
        assert np.array_equal(crops[0], image)

    def test_crop_resized_to_image_size(self):
        image = _flat_image()
        record = _record([(0, 5)])
        crops = crop_largest_parts(image, record, 1)
        assert crops[0].shape == image.shape
        assert np.allclose(crops[0], 0.5)  # flat region stays flat under resize

    def test_fallback_rectangles_deterministic(self):
        image = np.random.default_rng(1).random((3, 16, 16)).astype(np.float32)
        record = _record([(0, 8), (1, 4)])
        first = crop_largest_parts(image, record, 3, seed=9)
        second = crop_largest_parts(image, record, 3, seed=9)
        assert np.array_equal(first[2], second[2])
        other = crop_largest_parts(image, record, 3, seed=10)
        assert not np.array_equal(first[2], other[2])

    def test_fallback_count(self):
        image = _flat_image()
        record = _record([(0, 8)])
        crops = crop_largest_parts(image, record, 4, seed=2)
        assert len(crops) == 4

    def test_empty_record(self):
        image = _flat_image()
        record = AnnotationRecord(image_id="x", object_id=0, instances=())
        with pytest.raises(EmptyRecord):
            crop_largest_parts(image, record, 2, allow_fallback=False)
        crops = crop_largest_parts(image, record, 2, seed=0)
        assert len(crops) == 2

    def test_instance_permutation_invariant(self):
        image = np.random.default_rng(2).random((3, 16, 16)).astype(np.float32)
        record = _record([(0, 10), (1, 12), (2, 4), (3, 12)])
        reversed_record = AnnotationRecord(
            image_id=record.image_id, object_id=0,
            instances=tuple(reversed(record.instances)),
        )
        forward = crop_largest_parts(image, record, 4)
        backward = crop_largest_parts(image, reversed_record, 4)
        for a, b in zip(forward, backward):
            assert np.array_equal(a, b)

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            crop_largest_parts(np.zeros((16, 16)), _record([(0, 4)]), 1)
        with pytest.raises(DimensionError):
            crop_largest_parts(_flat_image(size=8), _record([(0, 4)], size=16), 1)
        with pytest.raises(SpecError):
            crop_largest_parts(_flat_image(), _record([(0, 4)]), 0)


class TestFusionModel:
    def _model(self, num_branches=2, feature_dim=8):
        torch.manual_seed(0)
        return FusionModel(
            ConvEncoder(feature_dim=feature_dim, widths=(4,)),
            feature_dim=feature_dim, num_branches=num_branches, branch_widths=(4,),
        )

    def test_zero_alpha_recovers_encoder_bitwise(self):
        model = self._model()
        images = torch.rand(3, 3, 8, 8)
        crops = torch.rand(3, 2, 3, 8, 8)
        with torch.no_grad():
            fused = model.fused_features(images, crops)
            base = model.encoder(images)
        assert torch.equal(fused, base)

    def test_unit_alpha_recovers_branch(self):
        model = self._model(num_branches=1)
        with torch.no_grad():
            model.alpha.fill_(1.0)
        images = torch.rand(2, 3, 8, 8)
        crops = torch.rand(2, 1, 3, 8, 8)
        with torch.no_grad():
            fused = model.fused_features(images, crops)
            branch = model.branches[0](crops[:, 0])
        assert torch.equal(fused, branch)

    def test_fusion_weights_normalized(self):
        model = self._model(num_branches=3)
        with torch.no_grad():
            model.alpha.copy_(torch.tensor([0.2, 0.3, -0.1]))
        weights = model.fusion_weights()
        assert len(weights) == 4
        assert sum(weights) == pytest.approx(1.0)
        assert weights[1:] == pytest.approx([0.2, 0.3, -0.1])

    def test_shape_errors(self):
        model = self._model()
        images = torch.rand(2, 3, 8, 8)
        with pytest.raises(ShapeError):
            model.fused_features(images, torch.rand(2, 3, 3, 8, 8))  # wrong l
        with pytest.raises(ShapeError):
            model.fused_features(images, torch.rand(1, 2, 3, 8, 8))  # batch mismatch
        with pytest.raises(ShapeError):
            model.fused_features(images, torch.rand(2, 2, 3, 8))  # not 5-d

    def test_head_maps_to_classes(self):
        torch.manual_seed(0)
        model = FusionModel(
            ConvEncoder(feature_dim=8, widths=(4,)), feature_dim=8,
            num_branches=2, num_classes=5, branch_widths=(4,),
        )
        out = model(torch.rand(2, 3, 8, 8), torch.rand(2, 2, 3, 8, 8))
        assert out.shape == (2, 5)

    def test_validation(self):
        with pytest.raises(SpecError):
            FusionModel(ConvEncoder(feature_dim=8), feature_dim=8, num_branches=0)
        with pytest.raises(SpecError):
            ConvEncoder(feature_dim=0)
        with pytest.raises(ShapeError):
            ConvEncoder(feature_dim=4, widths=(4, 8))(torch.rand(1, 3, 2, 2))


class TestEpisodeSpec:
    def test_validation(self):
        with pytest.raises(SpecError):
            EpisodeSpec(n_way=1)
        with pytest.raises(SpecError):
            EpisodeSpec(k_shot=0)
        with pytest.raises(SpecError):
            EpisodeSpec(query_per_class=0)
        with pytest.raises(SpecError):
            EpisodeSpec(episodes=0)

    def test_presets(self):
        one_shot = EpisodeSpec.from_name("5w1s", episodes=100)
        five_shot = EpisodeSpec.from_name("5w5s")
        assert (one_shot.n_way, one_shot.k_shot, one_shot.episodes) == (5, 1, 100)
        assert (five_shot.n_way, five_shot.k_shot) == (5, 5)
        with pytest.raises(SpecError):
            EpisodeSpec.from_name("3w2s")


def _toy_dataset(classes=5, per_class=6, size=8, seed=0, identical=False,
                 signal=True):
    """Images with a class-coded stripe plus noise; optional exact duplicates."""
    rng = np.random.default_rng(seed)
    images, labels, records = [], [], []
    for cls in range(classes):
        stamp = rng.random((3, size, size)).astype(np.float32)
        for sample in range(per_class):
            if identical:
                img = stamp.copy()
            else:
                img = rng.random((3, size, size)).astype(np.float32) * 0.3
                if signal:
                    img[:, cls, :] += 0.7  # stripe row encodes the class
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(cls)
            mask = np.zeros((size, size), dtype=bool)
            mask[cls, :] = True
            records.append(AnnotationRecord(
                image_id=f"{cls}-{sample}", object_id=cls,
                instances=(PartInstanceMask(mask=mask, part_id=cls),),
            ))
    return np.stack(images), np.array(labels), records


class TestRunEpisodes:
    def test_duplicate_support_query_gives_perfect_accuracy(self):
        images, labels, _ = _toy_dataset(classes=5, per_class=4, identical=True)
        torch.manual_seed(3)
        encoder = ConvEncoder(feature_dim=16, widths=(4,))
        spec = EpisodeSpec(n_way=5, k_shot=2, query_per_class=2, episodes=10)
        result = run_episodes(encoder, images, labels, spec)
        assert result.mean_accuracy == 1.0
        assert result.ci95 == 0.0

    def test_untrained_encoder_near_chance_on_noise(self):
        rng = np.random.default_rng(7)
        images = rng.random((5 * 40, 3, 8, 8)).astype(np.float32)
        labels = np.repeat(np.arange(5), 40)
        torch.manual_seed(1)
        encoder = ConvEncoder(feature_dim=16, widths=(4,))
        spec = EpisodeSpec(n_way=5, k_shot=1, query_per_class=5, episodes=300)
        result = run_episodes(encoder, images, labels, spec)
        assert abs(result.mean_accuracy - 0.2) < 0.05

    def test_seed_determinism(self):
        images, labels, _ = _toy_dataset()
        torch.manual_seed(2)
        encoder = ConvEncoder(feature_dim=16, widths=(4,))
        spec = EpisodeSpec(n_way=5, k_shot=1, query_per_class=2, episodes=15, seed=4)
        first = run_episodes(encoder, images, labels, spec)
        second = run_episodes(encoder, images, labels, spec)
        assert first == second
        moved = run_episodes(
            encoder, images, labels,
            EpisodeSpec(n_way=5, k_shot=1, query_per_class=2, episodes=15, seed=5),
        )
        assert moved.episode_accuracies != first.episode_accuracies

    def test_baseline_recovery_alpha_zero(self):
        images, labels, records = _toy_dataset()
        torch.manual_seed(6)
        fusion = FusionModel(
            ConvEncoder(feature_dim=16, widths=(4,)), feature_dim=16,
            num_branches=3, branch_widths=(4,),
        )
        baseline = ConvEncoder(feature_dim=16, widths=(4,))
        baseline.load_state_dict(fusion.encoder.state_dict())
        spec = EpisodeSpec(n_way=5, k_shot=1, query_per_class=2, episodes=20)
        fused = run_episodes(fusion, images, labels, spec, records=records)
        plain = run_episodes(baseline, images, labels, spec)
        assert fused.episode_accuracies == plain.episode_accuracies

    def test_spec_errors(self):
        images, labels, records = _toy_dataset(classes=3, per_class=3)
        torch.manual_seed(0)
        encoder = ConvEncoder(feature_dim=8, widths=(4,))
        with pytest.raises(SpecError):
            run_episodes(encoder, images, labels,
                         EpisodeSpec(n_way=5, k_shot=1, query_per_class=2))
        with pytest.raises(SpecError):
            # 3 samples per class cannot cover k_shot=2 plus 2 queries
            run_episodes(encoder, images, labels,
                         EpisodeSpec(n_way=3, k_shot=2, query_per_class=2))
        fusion = FusionModel(ConvEncoder(feature_dim=8, widths=(4,)),
                             feature_dim=8, branch_widths=(4,))
        with pytest.raises(SpecError):
            run_episodes(fusion, images, labels,
                         EpisodeSpec(n_way=3, k_shot=1, query_per_class=2))

    def test_result_to_dict(self):
        images, labels, _ = _toy_dataset()
        torch.manual_seed(0)
        encoder = ConvEncoder(feature_dim=8, widths=(4,))
        spec = EpisodeSpec(n_way=5, k_shot=1, query_per_class=2, episodes=3)
        payload = run_episodes(encoder, images, labels, spec).to_dict()
        assert payload["episodes"] == 3
        assert len(payload["episode_accuracies"]) == 3
        assert 0.0 <= payload["mean_accuracy"] <= 1.0


class TestPartCropBatch:
    def test_shape_and_determinism(self):
        images, _, records = _toy_dataset(classes=2, per_class=2)
        batch = part_crop_batch(images, records, 3, seed=1)
        again = part_crop_batch(images, records, 3, seed=1)
        assert batch.shape == (4, 3, 3, 8, 8)
        assert torch.equal(batch, again)

    def test_count_mismatch(self):
        images, _, records = _toy_dataset(classes=2, per_class=2)
        with pytest.raises(SpecError):
            part_crop_batch(images, records[:-1], 3)


class TestTrainEpisodic:
    def test_learns_separable_data(self):
        images, labels, _ = _toy_dataset(classes=5, per_class=8, seed=3)
        torch.manual_seed(8)
        encoder = ConvEncoder(feature_dim=16, widths=(8,))
        eval_spec = EpisodeSpec(n_way=5, k_shot=1, query_per_class=3, episodes=30)
        before = run_episodes(encoder, images, labels, eval_spec)
        train_spec = EpisodeSpec(n_way=5, k_shot=1, query_per_class=3, episodes=60)
        _, history = train_episodic(encoder, images, labels, train_spec, lr=5e-3)
        after = run_episodes(encoder, images, labels, eval_spec)
        assert len(history) == 60
        assert after.mean_accuracy > before.mean_accuracy
        assert after.mean_accuracy > 0.9

    def test_training_determinism(self):
        images, labels, records = _toy_dataset(classes=5, per_class=4, seed=2)
        spec = EpisodeSpec(n_way=5, k_shot=1, query_per_class=2, episodes=8)

        def trained():
            torch.manual_seed(4)
            model = FusionModel(
                ConvEncoder(feature_dim=8, widths=(4,)), feature_dim=8,
                num_branches=2, branch_widths=(4,),
            )
            _, history = train_episodic(model, images, labels, spec,
                                        records=records, lr=1e-3)
            return model, history

        model_a, history_a = trained()
        model_b, history_b = trained()
        assert history_a == history_b
        for key, value in model_a.state_dict().items():
            assert torch.equal(value, model_b.state_dict()[key]), key

    def test_alpha_receives_updates(self):
        images, labels, records = _toy_dataset(classes=5, per_class=4, seed=1)
        torch.manual_seed(9)
        model = FusionModel(
            ConvEncoder(feature_dim=8, widths=(4,)), feature_dim=8,
            num_branches=2, branch_widths=(4,),
        )
        spec = EpisodeSpec(n_way=5, k_shot=1, query_per_class=2, episodes=5)
        train_episodic(model, images, labels, spec, records=records, lr=1e-2)
        assert model.alpha.abs().sum() > 0
