import struct

import numpy as np
import pytest

from hsml import io as hio
from hsml.fem import FieldSeries
from hsml.mesh import structured_box_mesh

TET_MSH = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 0 1 0
4 0 0 1
$EndNodes
$Elements
6
1 15 2 0 1 1
2 2 2 1 1 1 3 2
3 2 2 1 1 1 2 4
4 2 2 1 1 1 4 3
5 2 2 1 1 2 3 4
6 4 2 2 2 1 2 3 4
$EndElements
"""


def test_parse_minimal_msh():
    with pytest.warns(UserWarning, match="skipped 1"):
        m = hio.parse_msh(TET_MSH)
    assert m.n_nodes == 4
    assert m.tets.shape == (1, 4)
    assert len(m.boundary_faces) == 4
    assert m.tets.min() == 0 and m.tets.max() == 3
    assert m.boundary_tags == ("1",) * 4


def test_msh_without_volume_elements():
    text = TET_MSH.replace("6 4 2 2 2 1 2 3 4\n", "").replace("$Elements\n6", "$Elements\n5")
    with pytest.raises(hio.FormatError, match="no volume elements"):
        with pytest.warns(UserWarning):
            hio.parse_msh(text)


def test_msh_rejects_other_versions_and_dangling_nodes():
    with pytest.raises(hio.FormatError, match="version"):
        hio.parse_msh(TET_MSH.replace("2.2 0 8", "4.1 0 8"))
    with pytest.raises(hio.FormatError, match="unknown node 9"):
        hio.parse_msh(TET_MSH.replace("6 4 2 2 2 1 2 3 4", "6 4 2 2 2 1 2 3 9"))


def test_msh_round_trip_box():
    m = structured_box_mesh(divisions=(2, 2, 2))
    assert len(m.tets) == 48
    back = hio.parse_msh(hio.write_msh(m))
    assert np.array_equal(back.tets, m.tets)
    assert np.array_equal(back.boundary_faces, m.boundary_faces)
    assert back.boundary_tags == m.boundary_tags
    assert np.array_equal(back.nodes, m.nodes)


def test_binary_header_and_magic(tmp_path):
    p = tmp_path / "a.bin"
    hio.write_array(p, np.arange(5.0))
    blob = p.read_bytes()
    assert blob[:8] == b"HSML0001"
    assert struct.unpack("<Q", blob[8:16])[0] == 5
    assert np.array_equal(hio.read_array(p), np.arange(5.0))
    p.write_bytes(b"HSML0002" + blob[8:])
    with pytest.raises(hio.FormatError, match="magic"):
        hio.read_array(p)


def _series(T, C, N, seed=0):
    rng = np.random.default_rng(seed)
    return FieldSeries(np.linspace(0, 1, T), rng.normal(size=(T, C, N)))


def test_xdmf_scalar_zero_field_size(tmp_path):
    m = structured_box_mesh()
    assert m.n_nodes == 8
    s = FieldSeries([0.0], np.zeros((1, 1, 8)))
    _, binf = hio.write_xdmf(s, m, tmp_path / "z")
    geometry = 8 * 3 * 8
    assert binf.stat().st_size - 16 - geometry == 64


def test_xdmf_field_bytes_and_bitwise_reread(tmp_path):
    m = structured_box_mesh(divisions=(2, 2, 2))
    s = _series(3, 2, m.n_nodes)
    xdmf, binf = hio.write_xdmf(s, m, tmp_path / "f")
    assert binf.stat().st_size - 16 - 8 * 3 * m.n_nodes == 3 * 2 * m.n_nodes * 8
    nodes, tets, times, values, names = hio.read_xdmf(xdmf)
    assert names == ["u_1", "u_2"]
    assert np.array_equal(tets, m.tets)
    assert nodes.tobytes() == m.nodes.astype("<f8").tobytes()
    assert values.tobytes() == s.values.tobytes()
    assert np.array_equal(times, s.times)


def test_xdmf_deterministic_bytes(tmp_path):
    m = structured_box_mesh(divisions=(2, 1, 1))
    s = _series(2, 1, m.n_nodes)
    a = hio.write_xdmf(s, m, tmp_path / "a" / "f")
    b = hio.write_xdmf(s, m, tmp_path / "b" / "f")
    assert a[0].read_bytes() == b[0].read_bytes()
    assert a[1].read_bytes() == b[1].read_bytes()


def test_xdmf_count_mismatch(tmp_path):
    m = structured_box_mesh()
    with pytest.raises(hio.FormatError):
        hio.write_xdmf(FieldSeries([0.0], np.zeros((1, 1, 7))), m, tmp_path / "x")


def test_xdmf_out_of_range_reference(tmp_path):
    m = structured_box_mesh()
    xdmf, _ = hio.write_xdmf(FieldSeries([0.0], np.zeros((1, 1, 8))), m, tmp_path / "x")
    text = xdmf.read_text().replace('Seek="208"', 'Seek="100000"')
    xdmf.write_text(text)
    with pytest.raises(hio.FormatError, match="exceeds"):
        hio.read_xdmf(xdmf)


def test_report_relative_errors_match_table():
    rel = hio.relative_errors((0.1006, 0.2024, 0.5032), (0.1, 0.2, 0.5))
    # the tabulated errors come from unrounded estimates; a half unit in the
    # fourth decimal of each estimate bounds the discrepancy
    expected = (5.8391e-3, 1.2022e-2, 6.3606e-3)
    for r, e, ref in zip(rel, expected, (0.1, 0.2, 0.5)):
        assert abs(r - e) <= 0.5e-4 / ref


def test_report_pinn_only_and_csv_round_trip(tmp_path):
    est = {"names": ["lam", "alpha", "beta"], "estimates": [0.1006, 0.2024, 0.5032], "expected": [0.1, 0.2, 0.5]}
    files = hio.write_report(None, est, tmp_path / "r.txt")
    text = files[0].read_text()
    assert "Parameter estimates" in text and "ROM" not in text
    assert "6.0000e-03" in text
    errs = {"k": [1, 2], "mean_abs": [0.5, 1 / 3], "max_abs": [0.7, 0.1], "mean_rel": [1e-3, 1e-5], "max_rel": [2e-3, np.pi * 1e-6]}
    files = hio.write_report(errs, est, tmp_path / "s.txt")
    header, rows = hio.read_csv(files[1])
    assert header == ["k", "mean_abs", "max_abs", "mean_rel", "max_rel"]
    assert rows[1][1] == 1 / 3 and rows[1][4] == np.pi * 1e-6


def test_kv_round_trip(tmp_path):
    hio.write_kv(tmp_path / "m", {"a": 1, "b": 0.1, "c": [1, 2]})
    assert hio.read_kv(tmp_path / "m") == {"a": "1", "b": "0.1", "c": "1,2"}


def test_ensure_dir(tmp_path):
    d = tmp_path / "o"
    hio.ensure_dir(d)
    (d / "x").write_text("1")
    with pytest.raises(FileExistsError):
        hio.ensure_dir(d)
    hio.ensure_dir(d, force=True)
