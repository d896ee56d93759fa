import matplotlib.pyplot as plt
import numpy as np
import pytest

from modules.errors import IndexOutOfGridError, MatrixFormatError
from modules.matrix_io import (infer_format, list_artifacts, load_dense_csv, load_matrix, load_samples_binary,
                               load_triplet_csv, normalize_image, read_pgm, render_heatmap, save_dense_csv,
                               save_samples_binary, save_triplet_csv, write_pgm, write_report, write_rows_csv,
                               write_table_csv)
from modules.smg_model import ObservationSet


class TestCsv:
    def test_dense_parse(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("1,2\n3,4\n")
        np.testing.assert_array_equal(load_dense_csv(path), [[1.0, 2.0], [3.0, 4.0]])

    def test_dense_round_trip_is_exact(self, tmp_path):
        M = np.random.default_rng(0).standard_normal((3, 4))
        path = save_dense_csv(M, tmp_path / "m.csv")
        np.testing.assert_array_equal(load_dense_csv(path), M)

    def test_dense_rejects_garbage_and_nan(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("1,x\n")
        with pytest.raises(MatrixFormatError):
            load_dense_csv(bad)
        nan = tmp_path / "nan.csv"
        nan.write_text("1,nan\n")
        with pytest.raises(MatrixFormatError):
            load_dense_csv(nan)

    def test_triplet_parse_with_shape_header(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("# shape=3,4\n0,0,1.5\n2,3,-2\n")
        obs = load_triplet_csv(path)
        assert (obs.m1, obs.m2, obs.n) == (3, 4, 2)
        assert obs.contains((2, 3))

    def test_triplet_duplicate(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("# shape=2,2\n0,1,1\n0,1,2\n")
        with pytest.raises(MatrixFormatError):
            load_triplet_csv(path)

    def test_triplet_out_of_range(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("# shape=2,2\n2,0,1\n")
        with pytest.raises(IndexOutOfGridError):
            load_triplet_csv(path)

    def test_triplet_wrong_arity(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("0,1\n")
        with pytest.raises(MatrixFormatError):
            load_triplet_csv(path)

    def test_triplet_save_then_infer(self, tmp_path):
        obs = ObservationSet.from_entries(3, 2, [((0, 1), 0.1), ((2, 0), -4.0)])
        path = save_triplet_csv(obs, tmp_path / "obs.csv")
        assert infer_format(path) == "triplet-csv"
        loaded = load_matrix(path)
        assert list(loaded.entries) == list(obs.entries)

    def test_infer_format(self, tmp_path):
        dense = tmp_path / "d.csv"
        dense.write_text("1,2\n")
        assert infer_format(dense) == "dense-csv"
        assert infer_format(tmp_path / "img.PGM") == "pgm"
        with pytest.raises(MatrixFormatError):
            infer_format(tmp_path / "m.npy")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_matrix(tmp_path / "absent.csv")


class TestTables:
    def test_rows_csv(self, tmp_path):
        rows = [{"rep": 0, "coverage": 0.5}, {"rep": 1, "coverage": 0.1}]
        path = write_rows_csv(rows, tmp_path / "rows.csv")
        assert path.read_text().splitlines() == ["rep,coverage", "0,0.5", "1,0.10000000000000001"]

    def test_rows_csv_key_mismatch(self, tmp_path):
        with pytest.raises(MatrixFormatError):
            write_rows_csv([{"a": 1}, {"b": 2}], tmp_path / "rows.csv")
        with pytest.raises(MatrixFormatError):
            write_rows_csv([], tmp_path / "rows.csv")

    def test_table_csv_header(self, tmp_path):
        path = write_table_csv(["iter", "sigma2"], np.array([[1.0, 2.0], [2.0, 3.0]]), tmp_path / "trace.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,sigma2"
        assert lines[1] == "1,2"

    def test_report_keeps_key_order(self, tmp_path):
        path = write_report({"b": 1, "a": None}, tmp_path / "report.json")
        text = path.read_text()
        assert text.index('"b"') < text.index('"a"')
        assert "null" in text

    def test_list_artifacts_sorted(self, tmp_path):
        (tmp_path / "b.csv").write_text("1\n")
        (tmp_path / "a.csv").write_text("1\n")
        (tmp_path / "sub").mkdir()
        assert [p.name for p in list_artifacts(tmp_path)] == ["a.csv", "b.csv"]


class TestImages:
    def test_pgm_round_trip_is_bit_identical(self, tmp_path):
        pixels = np.random.default_rng(1).integers(0, 256, size=(5, 7), dtype=np.uint8)
        path = write_pgm(pixels, tmp_path / "img.pgm")
        np.testing.assert_array_equal(read_pgm(path), pixels)
        assert read_pgm(write_pgm(read_pgm(path), tmp_path / "copy.pgm")).tobytes() == pixels.tobytes()

    def test_pgm_header_comments(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([7, 200]))
        np.testing.assert_array_equal(read_pgm(path), [[7, 200]])

    def test_pgm_rejects_ascii_and_truncation(self, tmp_path):
        ascii_pgm = tmp_path / "a.pgm"
        ascii_pgm.write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(MatrixFormatError):
            read_pgm(ascii_pgm)
        short = tmp_path / "s.pgm"
        short.write_bytes(b"P5\n2 2\n255\n" + bytes([1, 2]))
        with pytest.raises(MatrixFormatError):
            read_pgm(short)

    def test_write_pgm_needs_uint8(self, tmp_path):
        with pytest.raises(MatrixFormatError):
            write_pgm(np.zeros((2, 2)), tmp_path / "f.pgm")

    def test_normalize_and_invert(self):
        raw = np.arange(12, dtype=np.uint8).reshape(3, 4)
        image = normalize_image(raw)
        assert image.matrix.mean() == pytest.approx(0.0, abs=1e-12)
        assert image.matrix.std() == pytest.approx(1.0)
        np.testing.assert_allclose(image.invert(image.matrix), raw)

    def test_pgm_loads_normalized(self, tmp_path):
        path = write_pgm(np.full((2, 2), 9, dtype=np.uint8), tmp_path / "flat.pgm")
        image = load_matrix(path)
        np.testing.assert_array_equal(image.matrix, 0.0)
        assert image.mean == 9.0


class TestHeatmap:
    def test_dimensions_follow_matrix(self, tmp_path):
        path = render_heatmap(np.arange(6.0).reshape(2, 3), tmp_path / "h.png")
        img = plt.imread(path)
        assert img.shape[:2] == (2, 3)

    def test_constant_matrix_is_uniform(self, tmp_path):
        img = plt.imread(render_heatmap(np.full((3, 3), 4.2), tmp_path / "c.png"))
        assert np.all(img == img[0, 0])

    def test_grayscale_is_monotone(self, tmp_path):
        M = np.linspace(-1.0, 3.0, 8).reshape(1, 8)
        img = plt.imread(render_heatmap(M, tmp_path / "g.png"))
        red = img[0, :, 0]
        assert np.all(np.diff(red) > 0)
        assert red[0] == 0.0 and red[-1] == 1.0

    def test_scale_sidecar(self, tmp_path):
        render_heatmap(np.array([[-2.0, 5.0]]), tmp_path / "s.png", palette="diverging")
        text = (tmp_path / "s.png.scale.txt").read_text().splitlines()
        assert text == ["palette=diverging", "min=-2", "max=5"]

    def test_unknown_palette(self, tmp_path):
        with pytest.raises(MatrixFormatError):
            render_heatmap(np.eye(2), tmp_path / "x.png", palette="viridis")


class TestSamplesBinary:
    def test_header_and_layout(self, tmp_path):
        x = np.random.default_rng(2).standard_normal((4, 2, 3))
        path = save_samples_binary(x, tmp_path / "samples.bin")
        data = path.read_bytes()
        assert len(data) == 16 + 4 * 6 * 8
        assert np.frombuffer(data[:16], dtype="<u8").tolist() == [2, 3]
        np.testing.assert_array_equal(np.frombuffer(data[16:64], dtype="<f8"), x[0].ravel())
        np.testing.assert_array_equal(load_samples_binary(path), x)

    def test_ragged_body(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(np.array([2, 2], dtype="<u8").tobytes() + b"\x00" * 12)
        with pytest.raises(MatrixFormatError):
            load_samples_binary(path)
