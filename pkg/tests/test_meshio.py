import numpy as np
import pytest

from meshflow.errors import ConfigError
from meshflow.mesh import make_icosphere
from meshflow.meshio import load_mesh, read_obj, read_ply, save_mesh, write_obj, write_ply


@pytest.fixture(scope="module")
def bumpy(rng=None):
    mesh = make_icosphere(2, radius=0.6)
    gen = np.random.default_rng(5)
    return mesh.with_vertices(mesh.vertices + gen.normal(0, 0.01, mesh.vertices.shape))


class TestObj:
    def test_round_trip_exact(self, tmp_path, bumpy):
        path = tmp_path / "m.obj"
        write_obj(bumpy, path)
        back = read_obj(path)
        assert np.array_equal(back.vertices, bumpy.vertices)
        assert np.array_equal(back.faces, bumpy.faces)

    def test_vertex_order_preserved(self, tmp_path, bumpy):
        path = tmp_path / "m.obj"
        write_obj(bumpy, path)
        back = read_obj(path)
        # correspondence-based losses need index-wise identity, not set equality
        assert np.all(np.linalg.norm(back.vertices - bumpy.vertices, axis=1) == 0)


class TestPly:
    def test_round_trip_exact(self, tmp_path, bumpy):
        path = tmp_path / "m.ply"
        write_ply(bumpy, path)
        back = read_ply(path)
        assert np.array_equal(back.vertices, bumpy.vertices)
        assert np.array_equal(back.faces, bumpy.faces)


class TestDispatch:
    def test_save_load_by_extension(self, tmp_path, bumpy):
        for name in ("m.obj", "m.ply"):
            path = tmp_path / name
            save_mesh(bumpy, path)
            back = load_mesh(path)
            assert np.array_equal(back.vertices, bumpy.vertices)

    def test_unknown_extension_rejected(self, tmp_path, bumpy):
        with pytest.raises(ConfigError):
            save_mesh(bumpy, tmp_path / "m.stl")
        with pytest.raises(ConfigError):
            load_mesh(tmp_path / "m.stl")

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_mesh(tmp_path / "absent.obj")
