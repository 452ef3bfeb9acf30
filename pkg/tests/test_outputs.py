import json

import numpy as np
import pytest

from imprecise_rto.bounds import RefCompliance
from imprecise_rto.errors import InvalidInputError
from imprecise_rto.optimizer import HISTORY_COLUMNS, HistoryRecord
from imprecise_rto.outputs import (distribution_envelopes, read_density_csv, read_history,
                                   read_pgm, write_bounds_report, write_density_csv,
                                   write_density_outputs, write_history, write_manifest,
                                   write_pgm)
from imprecise_rto.random_field import PBox

CHECKERBOARD_PGM = "P2\n# seed 0\n2 2\n255\n255 0\n0 255\n"


def test_all_solid_pgm(tmp_path):
    path = write_pgm(np.ones(12), 4, 3, tmp_path / "solid.pgm")
    pix, nx, ny = read_pgm(path)
    assert (nx, ny) == (4, 3) and np.all(pix == 0)
    assert path.read_text().startswith("P2\n")


def test_checkerboard_golden(tmp_path):
    path = write_pgm(np.array([1.0, 0.0, 0.0, 1.0]), 2, 2, tmp_path / "cb.pgm", ["seed 0"])
    assert path.read_text() == CHECKERBOARD_PGM


def test_pgm_lines_stay_short(tmp_path):
    rho = np.random.default_rng(0).random(100 * 3)
    path = write_pgm(rho, 100, 3, tmp_path / "wide.pgm")
    assert max(len(line) for line in path.read_text().splitlines()) <= 70
    pix, _, _ = read_pgm(path)
    expected = np.rint(255 * (1 - rho.reshape(3, 100)[::-1])).astype(int)
    assert np.array_equal(pix, expected)


def test_density_csv_round_trip(tmp_path):
    rho = np.random.default_rng(1).random(35)
    path = write_density_csv(rho, 7, 5, tmp_path / "rho.csv")
    assert np.array_equal(read_density_csv(path), rho)
    with pytest.raises(InvalidInputError):
        write_density_csv(rho, 6, 5, tmp_path / "bad.csv")


def test_density_outputs_carry_provenance(tmp_path):
    pgm, csv = write_density_outputs(np.full(4, 0.5), 2, 2, tmp_path / "density", "abc", 7)
    text = pgm.read_text()
    assert "# config_sha256 abc" in text and "# seed 7" in text
    assert csv.suffix == ".csv"


def test_history_header_only_and_round_trip(tmp_path):
    empty = write_history([], tmp_path / "h0.csv")
    assert empty.read_text() == ",".join(HISTORY_COLUMNS) + "\n"
    assert read_history(empty) == []
    recs = [HistoryRecord(k, 1.0 / k, 2.0 / k, 0.1, 0.2, 0.3, 0.4, 0.3, 0.5 / k)
            for k in range(1, 4)]
    rows = read_history(write_history(recs, tmp_path / "h.csv"))
    assert [r["iter"] for r in rows] == [1, 2, 3]
    assert rows[2]["J_hi"] == 2.0 / 3


def test_bounds_report(tmp_path):
    from imprecise_rto.bounds import ca_bounds
    ref = RefCompliance(np.diag([2.0, 1.0]), -1.0, 1.0)
    b = ca_bounds(ref, PBox(-1.5, -0.5, 0.5, 1.5), 1.0)
    text = write_bounds_report(b, tmp_path / "b.txt", {"seed": 3}).read_text()
    assert f"obj_hi = {b.obj_hi!r}" in text
    assert "[run]\nseed = 3" in text


def test_envelopes_dominate():
    ref = RefCompliance(np.diag([3.0, 1.0, 0.5]), -1.0, 1.5)
    env = distribution_envelopes(ref, PBox(-1.356, -0.644, 1.289, 1.803), 1.0, 5000, 0)
    # paired draws and a diagonal C: every sample grows, so the upper CDF lies below
    assert np.all(env.samples_upper >= env.samples_lower)
    assert np.all(env.cdf_upper <= env.cdf_lower + 1e-12)
    assert env.cdf_lower[-1] == pytest.approx(1.0)
    assert np.all(env.pdf_lower >= 0)


def test_zero_width_box_gives_identical_envelopes():
    ref = RefCompliance(np.diag([2.0, 1.0]), -1.0, 1.0)
    env = distribution_envelopes(ref, PBox.point(-1.0, 1.0), 1.0, 1000, 4)
    assert np.array_equal(env.cdf_lower, env.cdf_upper)
    assert np.array_equal(env.pdf_lower, env.pdf_upper)


def test_manifest_is_deterministic(tmp_path):
    a = tmp_path / "a.txt"
    a.write_text("x")
    m1 = write_manifest(tmp_path, "hash", 1, [a]).read_text()
    m2 = write_manifest(tmp_path, "hash", 1, [a]).read_text()
    assert m1 == m2
    doc = json.loads(m1)
    assert set(doc["files"]) == {"a.txt"} and doc["seed"] == 1
