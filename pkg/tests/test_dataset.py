import json

import pytest

from tpugen.arith import Unit, parse_unit
from tpugen.config import TpuConfig
from tpugen.dataset import (SCHEMA_VERSION, DatasetError, DatasetRecord, GridError, GridSpec, Rejected, build_dataset,
                            build_record, default_grid, enumerate_grid, load_grid, read_dataset, write_dataset,
                            write_rejected)
from tpugen.ppa import mock_ppa

SMALL = {"sizes": [4], "dws": [8], "wws": ["7..8"], "mults": ["exact", {"kind": "drum", "k": [3, 4]}],
         "adders": ["loa:m=5"]}


def test_default_grid_size():
    g = default_grid()
    assert len(g) == 7 * 3 * 30 * 9 * 5 == 28350
    assert "asm" not in {u.kind for u in g.mults}


def test_grid_from_dict_expands_axes():
    g = GridSpec.from_dict(SMALL)
    assert g.wws == (7, 8)
    assert [str(u) for u in g.mults] == ["exact", "drum:k=3", "drum:k=4"]
    assert len(g) == 6
    assert GridSpec.from_dict(g.to_dict()) == g


def test_grid_files(tmp_path):
    toml = tmp_path / "g.toml"
    toml.write_text('[grid]\nsizes = [4, 8]\nmults = ["bam", "roba"]\n')
    g = load_grid(toml)
    assert g.sizes == (4, 8) and len(g) == 4
    js = tmp_path / "g.json"
    js.write_text(json.dumps(SMALL))
    assert load_grid(js) == GridSpec.from_dict(SMALL)
    bad = tmp_path / "bad.toml"
    bad.write_text("sizes = [")
    with pytest.raises(GridError):
        load_grid(bad)


@pytest.mark.parametrize("d", [
    {"sizes": [12]}, {"dws": [10]}, {"wws": [40]}, {"sizes": []}, {"colour": ["red"]},
    {"mults": [{"k": 3}]}, {"sizes": ["x"]},
])
def test_grid_rejects(d):
    with pytest.raises((GridError, ValueError)):
        GridSpec.from_dict(d)


def test_illegal_units_fail_up_front():
    g = GridSpec.from_dict({"wws": [8], "mults": ["drum:k=12"]})
    with pytest.raises(GridError):
        list(enumerate_grid(g))


def test_enumeration_order_and_start():
    g = GridSpec.from_dict(SMALL)
    cfgs = list(enumerate_grid(g))
    assert [(c.ww, str(c.mult)) for c in cfgs] == [(7, "exact"), (7, "drum:k=3"), (7, "drum:k=4"),
                                                    (8, "exact"), (8, "drum:k=3"), (8, "drum:k=4")]
    assert list(enumerate_grid(g, start=4)) == cfgs[4:]
    assert list(enumerate_grid(g, start=6)) == []
    with pytest.raises(GridError):
        list(enumerate_grid(g, start=7))
    big = default_grid()
    last = next(enumerate_grid(big, start=len(big) - 1))
    assert (last.S, last.dw, last.ww) == (256, 32, 32)


@pytest.fixture(scope="module")
def records():
    cfgs = list(enumerate_grid(GridSpec.from_dict(SMALL)))
    recs, rejected = build_dataset(cfgs, timestamp=False)
    assert rejected == []
    return recs


def test_record_content(records):
    rec = records[1]
    assert rec.id == rec.compute_id() and len(rec.id) == 24
    assert rec.ppa == mock_ppa(rec.config)
    assert rec.code["top"] == "tpu_top" and rec.code["modules"]
    assert set(rec.error) == {"mult", "adder"}
    assert rec.error["mult"]["mode"] == "exhaustive"
    assert rec.description["high_level"].startswith("tpugen prompt")
    assert rec.provenance["timestamp"] is None and rec.provenance["adapter"] == "mock"


def test_ids_are_deterministic(records):
    again = build_record(records[0].config, timestamp=True)
    assert again.id == records[0].id
    assert again.provenance["timestamp"] is not None
    assert len({r.id for r in records}) == len(records)


def test_write_read_round_trip(records, tmp_path):
    path = write_dataset(records, tmp_path / "d" / "ds.jsonl", tops_dir=tmp_path / "tops")
    back = read_dataset(path)
    assert [r.to_dict() for r in back] == [r.to_dict() for r in records]
    assert sorted(p.stem for p in (tmp_path / "tops").iterdir()) == sorted(r.id for r in records)
    first = json.loads(path.read_text().splitlines()[0])
    assert first["schema"] == SCHEMA_VERSION


def test_read_rejects_tampering(records, tmp_path):
    d = records[0].to_dict()
    d["ppa"]["power_mw"] += 1
    p = tmp_path / "bad.jsonl"
    p.write_text(json.dumps(d) + "\n")
    with pytest.raises(DatasetError, match=":1:"):
        read_dataset(p)
    d = records[0].to_dict()
    d["schema"] = 99
    p.write_text("\n" + json.dumps(d) + "\n")
    with pytest.raises(DatasetError, match=":2:"):
        read_dataset(p)
    p.write_text("{not json\n")
    with pytest.raises(DatasetError):
        read_dataset(p)
    with pytest.raises(DatasetError):
        DatasetRecord.from_dict({"schema": 0})


def test_rejected_lines(tmp_path):
    r = Rejected(TpuConfig(4, 8, 8), [{"code": "BadHeader", "detail": "", "names": []}])
    p = write_rejected([r], tmp_path / "rej.jsonl")
    assert json.loads(p.read_text())["reasons"][0]["code"] == "BadHeader"


def test_wide_records_sample_errors():
    rec = build_record(TpuConfig(4, 16, 8, Unit("mult", "bam"), parse_unit("exact", "adder")), timestamp=False)
    assert rec.error["mult"]["mode"].startswith("sampled")
