import json

import numpy as np
import pytest

from nbvsim.geometry import load_mesh, normalize_mesh, point_in_mesh
from nbvsim.houses import (
    edge_face_counts,
    generate_house,
    generate_scene_files,
    is_watertight,
    write_obj,
)


class TestGenerateHouse:
    def test_watertight_across_seeds(self):
        for seed in range(25):
            mesh = generate_house(seed)
            counts = edge_face_counts(mesh)
            assert all(n == 2 for n in counts.values()), f"seed {seed}"

    def test_same_seed_identical(self):
        a = generate_house(4)
        b = generate_house(4)
        np.testing.assert_array_equal(a.vertices, b.vertices)
        np.testing.assert_array_equal(a.triangles, b.triangles)

    def test_distinct_across_seeds(self):
        a = generate_house(0)
        b = generate_house(1)
        assert (a.vertices.shape != b.vertices.shape
                or not np.allclose(a.vertices, b.vertices))

    def test_normalized_fits_action_box(self):
        for seed in range(10):
            mesh = normalize_mesh(generate_house(seed), (10.0, 10.0, 6.0))
            lo, hi = mesh.bounds()
            assert (lo >= [-10.0, -10.0, -1e-9]).all()
            assert (hi <= [10.0, 10.0, 10.0]).all()

    def test_parity_containment_works(self):
        mesh = normalize_mesh(generate_house(2), (10.0, 10.0, 6.0))
        assert point_in_mesh(mesh, [0.0, 0.0, 0.6])
        assert not point_in_mesh(mesh, [9.5, 9.5, 5.0])


class TestSceneFiles:
    def test_generates_count_and_manifest(self, tmp_path):
        manifest = generate_scene_files(4, seed=0, out_dir=tmp_path)
        data = json.loads(manifest.read_text())
        assert len(data["scenes"]) == 4
        hashes = set()
        for entry in data["scenes"]:
            mesh = load_mesh(tmp_path / entry["mesh"])
            assert is_watertight(mesh)
            hashes.add(mesh.vertices.tobytes())
        assert len(hashes) == 4  # all distinct

    def test_same_seed_reproduces_files(self, tmp_path):
        m1 = generate_scene_files(2, seed=7, out_dir=tmp_path / "a")
        m2 = generate_scene_files(2, seed=7, out_dir=tmp_path / "b")
        for name in ("house_000.obj", "house_001.obj"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_obj_roundtrip_preserves_geometry(self, tmp_path):
        mesh = generate_house(3)
        write_obj(mesh, tmp_path / "h.obj")
        back = load_mesh(tmp_path / "h.obj")
        assert len(back.triangles) == len(mesh.triangles)
        np.testing.assert_allclose(back.vertices, mesh.vertices, atol=1e-8)
        assert is_watertight(back)

    def test_bad_count_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            generate_scene_files(0, seed=0, out_dir=tmp_path)