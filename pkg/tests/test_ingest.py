import os

import numpy as np
import pytest
from PIL import Image

from histoadv import (
    DatasetManifest,
    dataset_stats,
    load_image,
    sample_per_class,
    scan_dataset,
    validate_image,
)
from histoadv.ingest import KATHER_LABEL_PHRASES, label_phrase

from conftest import build_synthetic_dataset


class TestScanDataset:
    def test_three_class_fixture(self, tmp_path):
        root = build_synthetic_dataset(tmp_path / "d", per_class=2)
        manifest = scan_dataset(root)
        assert len(manifest.records) == 6
        assert manifest.counts == {"debris": 2, "epithelium": 2, "stroma": 2}
        assert manifest.label_set.to_list() == ["debris", "epithelium", "stroma"]

    def test_records_sorted_by_id(self, synthetic_dataset):
        manifest = scan_dataset(synthetic_dataset)
        ids = [r.id for r in manifest.records]
        assert ids == sorted(ids)
        assert len(ids) == len(set(ids))

    def test_stray_text_file_skipped_with_warning(self, tmp_path, caplog):
        root = build_synthetic_dataset(tmp_path / "d", per_class=2)
        (root / "debris" / "notes.txt").write_text("not an image")
        with caplog.at_level("WARNING"):
            manifest = scan_dataset(root)
        assert manifest.counts["debris"] == 2
        assert any("notes.txt" in r.message for r in caplog.records)

    def test_empty_class_folder_warns_but_keeps_label(self, tmp_path, caplog):
        root = build_synthetic_dataset(tmp_path / "d", per_class=1)
        (root / "empty_class").mkdir()
        with caplog.at_level("WARNING"):
            manifest = scan_dataset(root)
        assert "empty_class" in manifest.label_set
        assert manifest.counts["empty_class"] == 0

    def test_missing_root_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            scan_dataset(tmp_path / "nope")

    def test_root_without_class_folders_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            scan_dataset(tmp_path)

    def test_scan_determinism(self, synthetic_dataset):
        a = scan_dataset(synthetic_dataset)
        b = scan_dataset(synthetic_dataset)
        assert a.to_json() == b.to_json()

    def test_manifest_round_trip(self, synthetic_dataset, tmp_path):
        manifest = scan_dataset(synthetic_dataset)
        path = tmp_path / "manifest.json"
        manifest.save(path)
        reloaded = DatasetManifest.load(path)
        assert reloaded.to_json() == manifest.to_json()


class TestLoadImage:
    def test_identity_path_round_trips_within_quantization(self, tmp_path, rng):
        src = rng.uniform(0, 1, size=(16, 16, 3))
        arr8 = np.clip(np.round(src * 255), 0, 255).astype(np.uint8)
        p = tmp_path / "img.png"
        Image.fromarray(arr8, mode="RGB").save(p)
        tensor = load_image(p, target_size=(16, 16))
        assert tensor.shape == (3, 16, 16)
        assert np.max(np.abs(tensor - arr8.transpose(2, 0, 1) / 255.0)) < 1e-12
        assert np.max(np.abs(tensor - src.transpose(2, 0, 1))) <= 1 / 255 + 1e-9

    def test_all_white_loads_as_ones(self, tmp_path):
        p = tmp_path / "white.png"
        Image.fromarray(np.full((12, 12, 3), 255, dtype=np.uint8), mode="RGB").save(p)
        tensor = load_image(p, target_size=None)
        assert np.all(tensor == 1.0)

    def test_bilinear_downsize_preserves_constants(self, tmp_path):
        p = tmp_path / "const.png"
        Image.fromarray(np.full((448, 448, 3), 77, dtype=np.uint8), mode="RGB").save(p)
        tensor = load_image(p, target_size=(224, 224))
        assert tensor.shape == (3, 224, 224)
        assert np.allclose(tensor, 77 / 255.0, atol=1e-9)

    def test_grayscale_converted_to_rgb(self, tmp_path):
        p = tmp_path / "gray.png"
        Image.fromarray(np.full((16, 16), 100, dtype=np.uint8), mode="L").save(p)
        tensor = load_image(p, target_size=None)
        assert tensor.shape == (3, 16, 16)
        assert np.allclose(tensor[0], tensor[1])

    def test_16bit_source_normalized_by_65535(self, tmp_path):
        arr = np.full((16, 16), 65535 // 2, dtype=np.uint16)
        p = tmp_path / "deep.tif"
        Image.fromarray(arr).save(p)
        tensor = load_image(p, target_size=None)
        assert tensor.shape == (3, 16, 16)
        assert np.allclose(tensor, (65535 // 2) / 65535, atol=1e-9)

    def test_undecodable_file_rejected(self, tmp_path):
        p = tmp_path / "broken.png"
        p.write_bytes(b"definitely not a png")
        with pytest.raises(ValueError):
            load_image(p)

    def test_loaded_images_validate(self, synthetic_dataset):
        manifest = scan_dataset(synthetic_dataset)
        for record in manifest.records[:4]:
            assert validate_image(load_image(record.path, (32, 32))) is None

    def test_tiff_round_trip(self, tmp_path, rng):
        arr8 = rng.integers(0, 256, size=(20, 20, 3), dtype=np.uint8)
        p = tmp_path / "img.tif"
        Image.fromarray(arr8, mode="RGB").save(p)
        tensor = load_image(p, target_size=None)
        assert np.max(np.abs(tensor - arr8.transpose(2, 0, 1) / 255.0)) < 1e-12


class TestSamplePerClass:
    def test_n_at_least_class_size_returns_whole_class(self, tmp_path):
        root = build_synthetic_dataset(tmp_path / "d", per_class=3)
        manifest = scan_dataset(root)
        sample = sample_per_class(manifest, 99, seed=0)
        assert len(sample) == len(manifest.records)

    def test_same_seed_identical_sample(self, tmp_path):
        root = build_synthetic_dataset(tmp_path / "d", per_class=6)
        manifest = scan_dataset(root)
        a = sample_per_class(manifest, 3, seed=5)
        b = sample_per_class(manifest, 3, seed=5)
        assert [r.id for r in a] == [r.id for r in b]

    def test_different_seed_usually_differs(self, tmp_path):
        root = build_synthetic_dataset(tmp_path / "d", per_class=8)
        manifest = scan_dataset(root)
        a = [r.id for r in sample_per_class(manifest, 3, seed=1)]
        b = [r.id for r in sample_per_class(manifest, 3, seed=2)]
        assert a != b

    def test_exact_count_over_classes(self, tmp_path):
        root = build_synthetic_dataset(
            tmp_path / "d",
            labels=tuple(f"t{i}" for i in range(9)),
            per_class=7,
            size=(12, 12),
        )
        manifest = scan_dataset(root)
        sample = sample_per_class(manifest, 5, seed=4)
        assert len(sample) == 45

    def test_no_duplicates_and_labels_respected(self, tmp_path):
        root = build_synthetic_dataset(tmp_path / "d", per_class=5)
        manifest = scan_dataset(root)
        sample = sample_per_class(manifest, 4, seed=9)
        ids = [r.id for r in sample]
        assert len(ids) == len(set(ids))
        for r in sample:
            assert r.id.startswith(r.true_label + "/")

    def test_output_sorted_by_id(self, tmp_path):
        root = build_synthetic_dataset(tmp_path / "d", per_class=5)
        manifest = scan_dataset(root)
        ids = [r.id for r in sample_per_class(manifest, 2, seed=3)]
        assert ids == sorted(ids)

    def test_nonpositive_n_rejected(self, synthetic_dataset):
        with pytest.raises(ValueError):
            sample_per_class(scan_dataset(synthetic_dataset), 0, seed=1)


class TestDatasetStats:
    def test_equal_counts_equal_fractions(self, tmp_path):
        root = build_synthetic_dataset(tmp_path / "d", per_class=2)
        stats = dataset_stats(scan_dataset(root))
        assert [s[1] for s in stats] == [2, 2, 2]
        assert all(abs(s[2] - 1 / 3) < 1e-9 for s in stats)
        assert abs(sum(s[2] for s in stats) - 1.0) < 1e-9

    def test_single_class(self, tmp_path):
        root = build_synthetic_dataset(tmp_path / "d", labels=("only",), per_class=3)
        stats = dataset_stats(scan_dataset(root))
        assert stats == [("only", 3, 1.0)]


def test_kather_phrases_cover_nine_codes():
    assert len(KATHER_LABEL_PHRASES) == 9
    assert label_phrase("TUM") == "colorectal adenocarcinoma epithelium"
    assert label_phrase("unknown_code") == "unknown_code"


@pytest.mark.skipif(
    not os.environ.get("HISTOADV_KATHER_ROOT"),
    reason="needs HISTOADV_KATHER_ROOT pointing at the Kather validation download",
)
def test_full_kather_validation_set_scans_to_published_size():
    manifest = scan_dataset(os.environ["HISTOADV_KATHER_ROOT"])
    assert len(manifest.label_set) == 9
    assert len(manifest.records) == 7180
    stats = dataset_stats(manifest)
    assert sum(count for _, count, _ in stats) == 7180
