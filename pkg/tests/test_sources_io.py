import json

import numpy as np
import pytest

from aplab.errors import DataError, ParameterError
from aplab.grid import build_ball_grid
from aplab.io import dump_json, read_field_csv, to_jsonable, write_field_csv, write_table_csv
from aplab.sources import ConstantTerm, PowerTerm, parse_source


def test_parse_number_and_terms():
    assert parse_source(2.5, 2).terms == (ConstantTerm(2.5),)
    src = parse_source([{"kind": "power", "exponent": -0.5, "amplitude": 2.0},
                        {"kind": "constant", "value": 1.0}], 2)
    assert src.terms[0] == PowerTerm((0.0, 0.0), -0.5, 2.0)
    assert src.singular and src.is_radial
    assert src.radial(0.25) == pytest.approx(2.0 * 0.25**-0.5 + 1.0)
    x = np.array([[0.0, 0.25], [0.6, 0.8]])
    assert np.allclose(src(x), [5.0, 3.0])
    assert parse_source(src.to_list(), 2) == src


def test_off_center_power_is_not_radial():
    src = parse_source({"kind": "power", "center": [0.5, 0.0], "exponent": 1.0}, 2)
    assert not src.is_radial and not src.singular


@pytest.mark.parametrize("desc,msg", [
    ([], "nonempty"),
    ("three", "nonempty"),
    ([3], r"source\[0\]: expected an object"),
    ([{"kind": "wave"}], r"source\[0\]\.kind"),
    ([{"kind": "constant"}], "missing key 'value'"),
    ([{"kind": "constant", "value": "x"}], r"\.value: expected a finite number"),
    ([{"kind": "constant", "value": 1, "extra": 2}], "unknown keys"),
    ([{"kind": "power", "exponent": 1, "center": [0]}], r"\.center: expected 2"),
    ([{"kind": "power", "exponent": float("nan")}], "finite number"),
])
def test_parse_errors_name_the_field(desc, msg):
    with pytest.raises(ParameterError, match=msg):
        parse_source(desc, 2)


def test_singular_point_on_a_cell_center_is_rejected():
    dom = build_ball_grid(2, 16)
    c = dom.coords[8, 8].tolist()
    src = parse_source({"kind": "power", "center": c, "exponent": -1.0}, 2)
    with pytest.raises(DataError, match="not finite"):
        src.sample(dom, "source")
    ok = parse_source({"kind": "power", "exponent": -1.0}, 2).sample(dom, "source")
    assert np.all(np.isfinite(ok.values))


def test_center_dimension_mismatch_on_sample():
    dom = build_ball_grid(3, 8)
    src = parse_source({"kind": "power", "exponent": 1.0}, 2)
    with pytest.raises(ParameterError, match="3 coordinates"):
        src.sample(dom, "boundary")


def test_field_csv_roundtrip(tmp_path):
    dom = build_ball_grid(2, 32)
    rng = np.random.default_rng(0)
    u = dom.sample(lambda x: np.exp(x[..., 0]) * rng.uniform(size=x.shape[:-1]), name="u_star")
    path = tmp_path / "u.csv"
    write_field_csv(u, path)
    back = read_field_csv(path)
    assert back.name == "u_star"
    inside = dom.interior_mask
    assert np.array_equal(back.values[inside], u.values[inside])
    assert np.all(back.values[~inside] == 0)


def test_field_csv_rejects_missing_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("x1,x2,value\n0,0,1\n")
    with pytest.raises(DataError):
        read_field_csv(p)


def test_json_is_deterministic_and_nan_safe(tmp_path):
    obj = {"b": np.float64(0.1), "a": [np.int64(3), float("nan"), float("inf")], "c": np.arange(3)}
    dump_json(obj, tmp_path / "x.json")
    dump_json(dict(reversed(list(obj.items()))), tmp_path / "y.json")
    assert (tmp_path / "x.json").read_bytes() == (tmp_path / "y.json").read_bytes()
    data = json.loads((tmp_path / "x.json").read_text())
    assert data == {"a": [3, "nan", "inf"], "b": 0.1, "c": [0, 1, 2]}
    assert to_jsonable(np.bool_(True)) is True


def test_table_csv_uses_exact_floats(tmp_path):
    p = tmp_path / "t.csv"
    write_table_csv(p, ["r", "v"], [(0.1, 1 / 3), (0.2, np.float64(2 / 3))])
    lines = p.read_text().splitlines()
    assert lines[0] == "r,v"
    assert float(lines[1].split(",")[1]) == 1 / 3
