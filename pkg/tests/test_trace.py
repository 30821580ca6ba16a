import numpy as np
import pytest

from lsstr.adversary import IidBoundedNoise, StagedNoise, ZeroNoise
from lsstr.dynamics import PlantConfig
from lsstr.simulation import Simulation, simulate
from lsstr.trace import (
    HEADER, TraceChunk, TraceSchemaError, energy_ratio, load_csv, phase_tags,
    read_csv, write_csv,
)

FIELDS = ("t", "y", "u", "w", "theta_hat", "theta_err", "r", "sum_y2", "sum_w2",
          "ratio", "phase", "stage")


def assert_same(a, b):
    for f in FIELDS:
        assert np.array_equal(getattr(a, f), getattr(b, f)), f


def test_header_is_exact(tmp_path):
    tr, _ = simulate(PlantConfig(2, 0, 1, 1), StagedNoise(), 10)
    p = tmp_path / "t.csv"
    write_csv(tr, p)
    assert p.read_text().splitlines()[0] == "t,y,u,w,theta_hat,theta_err,r,sum_y2,sum_w2,ratio,phase,stage"
    assert HEADER == p.read_text().splitlines()[0]


@pytest.mark.parametrize("policy", [ZeroNoise(), IidBoundedNoise(5), StagedNoise()])
def test_round_trip_is_bit_exact(tmp_path, policy):
    tr, _ = simulate(PlantConfig(2, 0.3, 1, 1), policy, 3000)
    p = tmp_path / "t.csv"
    assert write_csv(tr, p) == 3001
    back = TraceChunk.concat(read_csv(p, chunksize=700))
    assert_same(tr, back)


def test_ratio_sentinel_is_written_as_inf(tmp_path):
    tr, _ = simulate(PlantConfig(2, 0.3, 1, 1), ZeroNoise(), 5)
    p = tmp_path / "t.csv"
    write_csv(tr, p)
    rows = p.read_text().splitlines()[1:]
    assert all(r.split(",")[9] == "inf" for r in rows)
    assert rows[0].split(",")[10] == "init" and rows[1].split(",")[10] == "zero"
    assert np.all(np.isinf(load_csv(p).ratio))


def test_streaming_write_from_chunks(tmp_path):
    plant = PlantConfig(2, 0, 1, 1)
    p, q = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(Simulation(plant, StagedNoise(), 5000, chunk_size=64).chunks(), p)
    write_csv(simulate(plant, StagedNoise(), 5000)[0], q)
    assert p.read_bytes() == q.read_bytes()


def test_bad_header_rejected(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("t,y\n0,1\n")
    with pytest.raises(TraceSchemaError):
        list(read_csv(p))


def test_unknown_phase_rejected(tmp_path):
    tr, _ = simulate(PlantConfig(2, 0, 1, 1), ZeroNoise(), 3)
    p = tmp_path / "t.csv"
    write_csv(tr, p)
    p.write_text(p.read_text().replace(",zero,", ",loud,"))
    with pytest.raises(TraceSchemaError):
        list(read_csv(p))


def test_records_and_tags():
    tr, _ = simulate(PlantConfig(2, 0, 1, 1), StagedNoise(), 20)
    recs = list(tr.records())
    assert recs[0].phase_tag == "init" and recs[1].phase_tag == "bootstrap"
    assert list(phase_tags(tr)) == [r.phase_tag for r in recs]
    assert recs[5].r == tr.r[5]


def test_energy_ratio_sentinel():
    out = energy_ratio([1.0, 2.0, 3.0], [0.0, 1.0, 0.5])
    assert np.isinf(out[0]) and out[1] == 2.0 and out[2] == 6.0
