import json

import numpy as np
import pytest

from videopower import data, mo_solver
from videopower.data import (
    ChannelSpec,
    DatasetAbort,
    DatasetError,
    SplitData,
    audit_split,
    build_dataset,
    csv_header,
    load_dataset,
    read_split,
    sample_channel,
    sample_seed,
)
from videopower.model import QualityProfile, SystemParams

EXP3 = ChannelSpec.parse("exponential", 3)


def test_spec_parsing():
    assert str(ChannelSpec.parse("rayleigh", 2)) == "exponential"
    assert ChannelSpec.parse("constant:2.5", 2).value == 2.5
    assert str(ChannelSpec.parse("constant:2.5", 2)) == "constant:2.5"
    with pytest.raises(ValueError):
        ChannelSpec.parse("lognormal", 2)


def test_channel_sampling():
    a = sample_channel(EXP3, 11)
    b = sample_channel(EXP3, 11)
    np.testing.assert_array_equal(a.gains, b.gains)
    assert not np.array_equal(a.gains, sample_channel(EXP3, 12).gains)
    np.testing.assert_array_equal(sample_channel(ChannelSpec.parse("constant:1", 3), 0).gains, 1.0)


def test_channel_mean():
    draws = np.stack([sample_channel(EXP3, s).gains for s in range(100_000)])
    np.testing.assert_allclose(draws.mean(axis=0), 1.0, rtol=0.02)


def test_seeds_disjoint():
    seen = {sample_seed(m, s, j) for m in range(3) for s in range(3) for j in range(50)}
    assert len(seen) == 3 * 3 * 50


def test_header():
    assert csv_header(2) == ["g_1_1", "g_1_2", "g_2_1", "g_2_2", "p_1", "p_2", "q_opt", "seed"]


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    params, profile = SystemParams(3), QualityProfile.default(3)
    ds = build_dataset(params, profile, EXP3, (6, 3, 3), master_seed=4, epsilon=0.25, out_dir=out)
    return out, ds, params, profile


def test_build_writes_and_round_trips(small):
    out, ds, params, profile = small
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "test.csv", "train.csv", "val.csv"]
    back = load_dataset(out, audit=True)
    assert back.manifest == json.loads((out / "manifest.json").read_text())
    for name in data.SPLITS:
        for field in ("gammas", "powers", "q_opt", "seeds"):
            np.testing.assert_array_equal(getattr(back[name], field), getattr(ds[name], field))
    assert audit_split(back["train"], params, profile) == []
    np.testing.assert_allclose(back["train"].powers.sum(axis=1), params.Pmax, rtol=1e-6)


def test_labels_match_solver(small):
    out, ds, params, profile = small
    tr = ds["train"]
    for j in range(len(tr)):
        sol = mo_solver.solve(params, profile, sample_channel(EXP3, int(tr.seeds[j])), epsilon=0.25)
        np.testing.assert_array_equal(sol.P_opt, tr.powers[j])


def test_rebuild_is_byte_identical(small, tmp_path):
    out, ds, params, profile = small
    build_dataset(params, profile, EXP3, (6, 3, 3), master_seed=4, epsilon=0.25, out_dir=tmp_path)
    for name in ("manifest.json", "train.csv", "val.csv", "test.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_parallel_matches_serial(small, tmp_path):
    out, ds, params, profile = small
    build_dataset(params, profile, EXP3, (6, 3, 3), master_seed=4, epsilon=0.25, out_dir=tmp_path, workers=2)
    for name in ("manifest.json", "train.csv", "val.csv", "test.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_one_solve_per_sample(monkeypatch):
    calls = []
    real = mo_solver.solve

    def counting(*a, **kw):
        calls.append(1)
        return real(*a, **kw)

    monkeypatch.setattr(mo_solver, "solve", counting)
    build_dataset(SystemParams(2), QualityProfile.default(2), ChannelSpec.parse("exponential", 2), (2, 1, 1), 7, 0.25)
    assert len(calls) == 4


def test_single_user_constant_channel():
    params = SystemParams(1)
    ds = build_dataset(params, QualityProfile.default(1), ChannelSpec.parse("constant:1", 1), (1, 0, 0), 0, 0.1)
    assert len(ds["train"]) == 1 and len(ds["val"]) == 0
    assert ds["train"].powers[0, 0] == pytest.approx(params.Pmax, rel=1e-9)


def test_abort_on_infeasible_floor(tmp_path):
    prof = QualityProfile.default(2)
    prof = QualityProfile.from_videos(prof.names, q_min=200.0)
    with pytest.raises(DatasetAbort, match="skip rate"):
        build_dataset(SystemParams(2), prof, ChannelSpec.parse("exponential", 2), (3, 1, 1), 0, out_dir=tmp_path / "x")
    assert not (tmp_path / "x").exists()


def test_bad_counts():
    with pytest.raises(ValueError):
        build_dataset(SystemParams(2), QualityProfile.default(2), ChannelSpec.parse("exponential", 2), (1, 1))


def corrupt(src, dst, row, col, value):
    lines = src.read_text().splitlines()
    fields = lines[row].split(",")
    fields[col] = value
    lines[row] = ",".join(fields)
    dst.write_text("\n".join(lines) + "\n")


def test_negative_power_names_row(small, tmp_path):
    out, ds, params, _ = small
    corrupt(out / "train.csv", tmp_path / "t.csv", 3, 9, "-0.5")
    with pytest.raises(DatasetError, match="row 3: negative power"):
        read_split(tmp_path / "t.csv", params)


@pytest.mark.parametrize(
    "col,value,match",
    [(0, "nan", "non-finite"), (0, "-1", "gains"), (4, "0", "gains"), (10, "7", "budget"), (5, "abc", "row 2")],
)
def test_invalid_rows(small, tmp_path, col, value, match):
    out, ds, params, _ = small
    corrupt(out / "train.csv", tmp_path / "t.csv", 2, col, value)
    with pytest.raises(DatasetError, match=match):
        read_split(tmp_path / "t.csv", params)


def test_short_row_and_header(small, tmp_path):
    out, ds, params, _ = small
    lines = (out / "train.csv").read_text().splitlines()
    (tmp_path / "short.csv").write_text("\n".join(lines[:2] + [lines[2].rsplit(",", 1)[0]]) + "\n")
    with pytest.raises(DatasetError, match="row 2: expected"):
        read_split(tmp_path / "short.csv", params)
    (tmp_path / "hdr.csv").write_text(",".join(csv_header(2)) + "\n")
    with pytest.raises(DatasetError, match="header"):
        read_split(tmp_path / "hdr.csv", params)
    (tmp_path / "none.csv").write_text("")
    with pytest.raises(DatasetError, match="missing header"):
        read_split(tmp_path / "none.csv", params)


def test_empty_split_is_valid(tmp_path):
    params = SystemParams(3)
    (tmp_path / "e.csv").write_text(",".join(csv_header(3)) + "\n")
    split = read_split(tmp_path / "e.csv", params)
    assert len(split) == 0 and split.gammas.shape == (0, 9)


def test_audit_catches_tampered_quality(small, tmp_path):
    out, ds, params, profile = small
    for name in ("manifest.json", "val.csv", "test.csv"):
        (tmp_path / name).write_bytes((out / name).read_bytes())
    corrupt(out / "train.csv", tmp_path / "train.csv", 1, 12, "30.0")
    load_dataset(tmp_path)
    with pytest.raises(DatasetError, match="row 1: q_opt"):
        load_dataset(tmp_path, audit=True)


def test_schema_mismatch(small, tmp_path):
    out, *_ = small
    m = json.loads((out / "manifest.json").read_text())
    m["schema_version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DatasetError, match="schema"):
        load_dataset(tmp_path)
    with pytest.raises(DatasetError, match="manifest"):
        load_dataset(tmp_path / "nowhere")


def test_split_samples_round_trip():
    s = SplitData.from_samples([], 2)
    assert len(s) == 0 and s.samples() == []
