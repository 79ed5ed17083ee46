import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvtomo import (ConfigError, FileFormatError, RayOperator, SourceImage, SpatialGrid)
from curvtomo.config import DEFAULTS, load_config, parse_config
from curvtomo.fileio import (SinogramRecord, fnv1a64, read_image, read_sinogram, read_table_csv,
                             write_image, write_image_csv, write_sinogram, write_sinogram_csv,
                             write_table_csv)

from conftest import make_geom


# -- checksum ------------------------------------------------------------------------------------

@pytest.mark.parametrize("data,expected", [
    (b"", 0xCBF29CE484222325),
    (b"a", 0xAF63DC4C8601EC8C),
    (b"foobar", 0x85944171F73967E8),
])
def test_fnv1a64_reference_vectors(data, expected):
    assert fnv1a64(data) == expected


# -- images ------------------------------------------------------------------------------------

@pytest.fixture
def image():
    grid = SpatialGrid(7, 5, (-1.0, 1.5, -0.5, 0.75))
    vals = np.random.default_rng(0).normal(size=grid.shape)
    return SourceImage(vals, grid)


def test_image_roundtrip_bit_exact(tmp_path, image):
    p = tmp_path / "f.ctg"
    write_image(p, image)
    back = read_image(p)
    assert back.grid.same_as(image.grid)
    assert np.array_equal(back.values, image.values)
    blob = p.read_bytes()
    assert blob[:4] == b"CTG1"
    assert struct.unpack_from("<II", blob, 4) == (7, 5)
    assert len(blob) == 4 + 8 + 32 + 8 * 35 + 8


def test_image_corruption_detected(tmp_path, image):
    p = tmp_path / "f.ctg"
    write_image(p, image)
    blob = bytearray(p.read_bytes())
    blob[60] ^= 0x01
    p.write_bytes(bytes(blob))
    with pytest.raises(FileFormatError, match="checksum"):
        read_image(p)


def test_image_truncation_and_magic(tmp_path, image):
    p = tmp_path / "f.ctg"
    write_image(p, image)
    blob = p.read_bytes()
    p.write_bytes(blob[:-9])
    with pytest.raises(FileFormatError, match="bytes"):
        read_image(p)
    p.write_bytes(blob[:10])
    with pytest.raises(FileFormatError, match="truncated"):
        read_image(p)
    p.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FileFormatError, match="magic"):
        read_image(p)


# -- sinograms -----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sino():
    g = make_geom(b=0.2)
    grid = SpatialGrid.covering(g.domain, 12)
    op = RayOperator(g, grid, n_bdry=16, n_angle=8)
    f = SourceImage.from_function(lambda P: np.exp(-np.sum(P * P, -1)), grid, grid.mask(g.domain))
    return op, op.forward(f)


def test_sinogram_roundtrip(tmp_path, sino):
    op, y = sino
    p = tmp_path / "y.cts"
    write_sinogram(p, y)
    rec = read_sinogram(p)
    back = rec.on_nodes(op.nodes)
    assert np.array_equal(back.values, y.values)
    assert np.array_equal(rec.angle, op.nodes.alpha)


def test_sinogram_node_mismatch(tmp_path, sino):
    op, y = sino
    rec = SinogramRecord.from_sinogram(y)
    rec.weight = rec.weight * 1.01
    with pytest.raises(FileFormatError, match="weight"):
        rec.on_nodes(op.nodes)
    short = SinogramRecord(rec.arc[:-1], rec.angle[:-1], rec.weight[:-1], rec.value[:-1])
    with pytest.raises(FileFormatError, match="nodes"):
        short.on_nodes(op.nodes)


def test_sinogram_checksum(tmp_path, sino):
    _, y = sino
    p = tmp_path / "y.cts"
    write_sinogram(p, y)
    blob = bytearray(p.read_bytes())
    blob[20] ^= 0x80
    p.write_bytes(bytes(blob))
    with pytest.raises(FileFormatError, match="checksum"):
        read_sinogram(p)


# -- CSV -----------------------------------------------------------------------------------

def test_csv_roundtrip_exact(tmp_path, image, sino):
    p = tmp_path / "f.csv"
    write_image_csv(p, image)
    header, cols = read_table_csv(p)
    assert header == ["row", "col", "x", "y", "value"]
    assert np.array_equal(cols["value"], image.values.ravel())
    assert b"\r" not in p.read_bytes()
    q = tmp_path / "y.csv"
    write_sinogram_csv(q, sino[1])
    header, cols = read_table_csv(q)
    assert header == ["arc", "angle", "weight", "value"]
    assert np.array_equal(cols["value"], sino[1].values)


def test_csv_errors_name_line(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b\n1,2\n3\n")
    with pytest.raises(FileFormatError, match=r"t\.csv:3:"):
        read_table_csv(p)
    p.write_text("a,b\n1,2\n3,x\n")
    with pytest.raises(FileFormatError, match=r"t\.csv:3:"):
        read_table_csv(p)
    with pytest.raises(ValueError):
        write_table_csv(p, ["a"], [[1, 2], [3, 4]])


# -- config ---------------------------------------------------------------------------------------

def test_defaults_parse():
    cfg = parse_config("")
    assert cfg["tau"] == 0.5 and cfg["grid.nx"] == 64
    assert cfg.geometry().shell.tau == 0.5


def test_config_errors_have_line_numbers():
    with pytest.raises(ConfigError, match=r"c\.cfg:2: unknown key"):
        parse_config("tau = 0.5\nfoo.bar = 1\n", source="c.cfg")
    with pytest.raises(ConfigError, match=r"c\.cfg:3: duplicate key 'tau' \(first set on line 1\)"):
        parse_config("tau = 0.5\n\ntau = 0.6\n", source="c.cfg")
    with pytest.raises(ConfigError, match=r"c\.cfg:1: bad value"):
        parse_config("grid.nx = many\n", source="c.cfg")
    with pytest.raises(ConfigError, match=r"c\.cfg:1: expected"):
        parse_config("just words\n", source="c.cfg")
    with pytest.raises(ConfigError, match=r"c\.cfg:1:.*one of"):
        parse_config("solver.method = sgd\n", source="c.cfg")


def test_config_invariants():
    with pytest.raises(ConfigError, match="strictly inside"):
        parse_config("domain.radius = 1.0\n")
    with pytest.raises(ConfigError, match="even"):
        parse_config("grid.ntheta = 7\n")
    # energy below the potential maximum leaves no shell
    with pytest.raises(ConfigError):
        parse_config("force.potential.kind = gaussian\nforce.potential.amplitude = 2\n"
                     "tau = 1\n", source="c.cfg")


def test_grid_field_from_file(tmp_path):
    grid = SpatialGrid(33, 33, (-1.2, 1.2, -1.2, 1.2))
    P = grid.points
    write_image(tmp_path / "phi.ctg", SourceImage(0.1 * np.sum(P * P, -1), grid))
    (tmp_path / "c.cfg").write_text("force.potential.kind = grid\nforce.potential.file = phi.ctg\n"
                                    "tau = 0.5\n")
    cfg = load_config(tmp_path / "c.cfg")
    x = np.array([[0.3, -0.2]])
    assert cfg.force().potential.value(x)[0] == pytest.approx(0.1 * 0.13, rel=1e-3)
    (tmp_path / "d.cfg").write_text("force.potential.kind = grid\nforce.potential.file = no.ctg\n")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "d.cfg")


_floats = st.floats(0.05, 0.6, allow_nan=False)


@settings(max_examples=30, deadline=None)
@given(r=_floats, b=st.floats(-0.5, 0.5), tol=st.floats(1e-12, 1e-2), nx=st.integers(4, 200),
       seed=st.integers(0, 2**31), k=st.lists(st.floats(-3, 3), min_size=5, max_size=5))
def test_config_dump_parse_idempotent(r, b, tol, nx, seed, k):
    text = (f"domain.radius = {r!r}\nforce.magnetic.kind = constant\nforce.magnetic.b = {b!r}\n"
            f"solver.tol = {tol!r}\ngrid.nx = {nx}\nseed = {seed}\n"
            f"kernel.kappa1 = {','.join(repr(x) for x in k)}\n")
    cfg = parse_config(text)
    again = parse_config(cfg.dumps())
    assert again == cfg
    assert again.dumps() == cfg.dumps()


def test_replace_revalidates():
    cfg = parse_config("")
    assert cfg.replace(grid__nx=16)["grid.nx"] == 16
    with pytest.raises(ConfigError):
        cfg.replace(domain__radius=2.0)
    with pytest.raises(ConfigError):
        cfg.replace(nope=1)
    assert set(DEFAULTS) == set(cfg.values)
