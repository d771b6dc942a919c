import json

import numpy as np
import pytest

from suturesim.errors import InvalidArgumentError
from suturesim.oct_core import (
    ClassifierThresholds,
    Material,
    classify,
    extract_template,
    smooth,
)
from suturesim.oct_synth import (
    LateralScene,
    MaterialProfile,
    air_profile,
    derive_seed,
    gen_ascan,
    gen_corpus,
    gen_lateral_scan,
    load_corpus,
    manifest_digest,
    nitinol_profile,
    profile_for,
    read_ascan_csv,
    read_lateral_scan,
    tissue_profile,
    write_ascan_csv,
    write_lateral_scan,
)

THR = ClassifierThresholds()


class TestGenAscan:
    def test_air_bounded_by_noise_floor(self):
        profile = MaterialProfile(material=Material.AIR, noise_floor=0.05,
                                  speckle_contrast=0.0)
        scan = gen_ascan(profile, rng_seed=1)
        assert float(np.max(scan.samples)) <= 0.05
        assert float(np.max(scan.samples)) < THR.tau_air

    def test_zero_noise_tissue_self_match(self):
        profile = MaterialProfile(material=Material.TISSUE, noise_floor=0.0,
                                  speckle_contrast=0.0)
        scan = gen_ascan(profile, rng_seed=2)
        template = extract_template(scan, THR)
        assert classify(scan, template, THR) is Material.TISSUE

    def test_same_seed_bit_identical(self):
        profile = tissue_profile(0.4)
        a = gen_ascan(profile, rng_seed=3)
        b = gen_ascan(profile, rng_seed=3)
        assert np.array_equal(a.samples, b.samples)

    def test_different_seeds_differ(self):
        profile = tissue_profile(0.4)
        a = gen_ascan(profile, rng_seed=3)
        b = gen_ascan(profile, rng_seed=4)
        assert not np.array_equal(a.samples, b.samples)

    def test_nitinol_peak_location(self):
        profile = nitinol_profile(0.0, surface_depth_mm=1.0)
        scan = gen_ascan(profile, rng_seed=5)
        peak_idx = int(np.argmax(scan.samples))
        assert abs(peak_idx * scan.depth_per_sample_mm - 1.0) < 0.05
        assert float(np.max(scan.samples)) == pytest.approx(0.95, abs=1e-12)


class TestLateralScan:
    def test_counts_and_labels(self):
        scene = LateralScene(((2.0, tissue_profile(0.1)), (8.0, air_profile(0.1))))
        scans = gen_lateral_scan(scene, 0.1, rng_seed=7)
        assert len(scans) == 100
        assert scans[0].fiber_position_mm == 0.0
        assert scans[19].fiber_position_mm == pytest.approx(1.9)
        # first 20 positions lie in the tissue segment
        for scan in scans[:20]:
            assert float(np.max(scan.samples)) > 0.3
        assert float(np.max(scans[25].samples)) < 0.3

    def test_truncates_at_scene_length(self):
        scene = LateralScene(((1.0, air_profile(0.0)),))
        scans = gen_lateral_scan(scene, 0.3, rng_seed=8)
        assert len(scans) == 3  # 0.0, 0.3, 0.6 (0.9 < 1.0 -> 3? floor(1/0.3)=3)

    def test_profile_lookup_beyond_scene_rejected(self):
        scene = LateralScene(((1.0, air_profile(0.0)),))
        with pytest.raises(InvalidArgumentError):
            scene.profile_at(1.5)

    def test_directory_roundtrip(self, tmp_path):
        scene = LateralScene(((0.5, tissue_profile(0.1)), (0.5, air_profile(0.1))))
        scans = gen_lateral_scan(scene, 0.25, rng_seed=19)
        manifest = write_lateral_scan(tmp_path, scans)
        assert len(manifest["fiber_position_mm"]) == len(scans)
        back = read_lateral_scan(tmp_path)
        assert [s.fiber_position_mm for s in back] == [s.fiber_position_mm
                                                       for s in scans]
        assert np.array_equal(back[0].samples, scans[0].samples)


class TestCorpus:
    def test_49_scan_manifest(self, tmp_path):
        manifest = gen_corpus(
            {"tissue": 17, "air": 16, "nitinol": 16}, [0.3], rng_seed=9,
            out_dir=tmp_path,
        )
        assert len(manifest["entries"]) == 49
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest_digest(on_disk) == manifest_digest(manifest)

    def test_zero_count_rejected(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            gen_corpus({"tissue": 0}, [0.1], rng_seed=9, out_dir=tmp_path)

    def test_determinism_across_runs(self, tmp_path):
        m1 = gen_corpus({"tissue": 3, "air": 2}, [0.0, 0.5], rng_seed=10,
                        out_dir=tmp_path / "a")
        m2 = gen_corpus({"tissue": 3, "air": 2}, [0.0, 0.5], rng_seed=10,
                        out_dir=tmp_path / "b")
        assert manifest_digest(m1) == manifest_digest(m2)
        for entry in m1["entries"]:
            a = (tmp_path / "a" / entry["file"]).read_bytes()
            b = (tmp_path / "b" / entry["file"]).read_bytes()
            assert a == b

    def test_csv_roundtrip(self, tmp_path):
        scan = gen_ascan(tissue_profile(0.2), rng_seed=11)
        path = tmp_path / "scan.csv"
        write_ascan_csv(path, scan)
        back = read_ascan_csv(path, scan.depth_per_sample_mm)
        assert np.array_equal(back.samples, scan.samples)

    def test_label_soundness_at_zero_noise(self, tmp_path):
        manifest = gen_corpus(
            {"tissue": 5, "air": 5, "nitinol": 5}, [0.0], rng_seed=12,
            out_dir=tmp_path,
        )
        template_scan = gen_ascan(tissue_profile(0.0), derive_seed(12, 999))
        template = extract_template(template_scan, THR)
        correct = 0
        for ascan, label, _ in load_corpus(tmp_path):
            if classify(ascan, template, THR) is label:
                correct += 1
        assert correct == 15


class TestNoiseMonotonicity:
    def test_accuracy_non_increasing_with_noise(self):
        template = extract_template(
            gen_ascan(tissue_profile(0.1), derive_seed(13, 0)), THR
        )
        levels = [0.0, 0.4, 0.8]
        accuracies = []
        for level_idx, level in enumerate(levels):
            hits = 0
            total = 0
            for material in Material:
                profile = profile_for(material, level)
                for k in range(60):
                    scan = gen_ascan(profile, derive_seed(14, level_idx, total, k))
                    if classify(scan, template, THR) is material:
                        hits += 1
                    total += 1
            accuracies.append(hits / total)
        assert accuracies[0] > 0.99
        for lo, hi in zip(accuracies[1:], accuracies[:-1]):
            assert lo <= hi + 0.02
