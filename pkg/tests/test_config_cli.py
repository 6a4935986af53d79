import csv
import io
import json

import numpy as np
import pytest

from schottky_zeta.cli import main
from schottky_zeta.config import CACHE_ENV, ConfigError, config_from_dict, load_config, load_group_file
from schottky_zeta.moebius import SchottkyGroup, example_group
from schottky_zeta.pipeline import OrbitCache, csv_text, exit_code, export, run_pipeline

FAST = {
    "qs": [1, 3],
    "M": 10,
    "n_max": 6,
    "rectangles": [[0.0, 0.224, 0.5, 2.0]],
    "r_grid": [0.5],
    "zeta_grid": [0.4, 1.0, -1.0, 1.0],
    "zeta_grid_shape": [2, 3],
    "girth_depth": 3,
    "stages": ["validate", "dimension", "girth", "zeta", "resonances", "counts"],
}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


def group_dict():
    return example_group().to_dict()


# ------------------------------------------------------------------ config


def test_defaults_roundtrip(tmp_path):
    cfg = load_config(write(tmp_path / "c.json", {}))
    assert cfg.qs == [1, 3] and cfg.M == 12
    assert cfg.hash() == config_from_dict({}).hash()
    assert cfg.hash() != config_from_dict({"M": 14}).hash()


@pytest.mark.parametrize(
    "data, path",
    [
        ({"qs": [3, 4]}, "qs[1]"),
        ({"M": 2}, "M"),
        ({"M": "12"}, "M"),
        ({"bogus": 1}, "bogus"),
        ({"rectangles": [[0, 1, 2]]}, "rectangles[0]"),
        ({"rectangles": [[1, 0, -1, 1]]}, "rectangles[0]"),
        ({"stages": ["zeta", "plot"]}, "stages[1]"),
        ({"h": -1.0}, "h"),
        ({"support": [2.0, 1.0]}, "support"),
    ],
)
def test_config_errors_name_field(data, path):
    with pytest.raises(ConfigError) as e:
        config_from_dict(data)
    assert str(e.value).startswith(path)


def test_composite_q_message():
    with pytest.raises(ConfigError, match="q = 4: q must be prime"):
        config_from_dict({"qs": [4]})


def test_group_file_missing_disc(tmp_path):
    d = group_dict()
    d["discs"] = d["discs"][:3]
    with pytest.raises(ConfigError, match=r"group\.discs\[3\]: missing disc"):
        load_group_file(write(tmp_path / "g.json", d))


def test_group_file_missing_radius(tmp_path):
    d = group_dict()
    del d["discs"][1]["radius"]
    with pytest.raises(ConfigError, match=r"group\.discs\[1\]\.radius: missing"):
        load_group_file(write(tmp_path / "g.json", d))


def test_group_file_bad_determinant(tmp_path):
    d = group_dict()
    d["generators"][0] = [[2, 0], [0, 1]]
    with pytest.raises(ConfigError, match=r"generators\[0\]: determinant"):
        load_group_file(write(tmp_path / "g.json", d))


def test_group_roundtrip(tmp_path):
    g = load_group_file(write(tmp_path / "g.json", group_dict()))
    assert g.digest() == example_group().digest()
    assert SchottkyGroup.from_dict(g.to_dict()).digest() == g.digest()


def test_config_with_relative_group(tmp_path):
    write(tmp_path / "g.json", group_dict())
    cfg = load_config(write(tmp_path / "c.json", {"group": "g.json"}))
    assert cfg.load_group().digest() == example_group().digest()


def test_cache_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv(CACHE_ENV, str(tmp_path / "env"))
    assert config_from_dict({"cache_dir": "x"}).cache_path() == tmp_path / "env"


# ------------------------------------------------------------------- cache


def test_orbit_cache_roundtrip_and_tamper(tmp_path, g):
    cache = OrbitCache(tmp_path)
    t1 = cache.table(g, 5, [3, 1])
    t2 = cache.table(g, 5, [3])
    assert (cache.misses, cache.hits) == (1, 1)
    for n in range(1, 6):
        assert np.array_equal(t1.lengths[n], t2.lengths[n])
        assert np.array_equal(t1.residues[3][n], t2.residues[3][n])
    # corrupt one array: the entry is rejected and rebuilt
    path = next(tmp_path.glob("*.npz"))
    with np.load(path) as z:
        arrs = {k: z[k] for k in z.files}
    arrs["lengths_2"] = arrs["lengths_2"] + 1.0
    np.savez(path, **arrs)
    t3 = cache.table(g, 5, [3])
    assert cache.rejected == 1
    assert np.array_equal(t3.lengths[2], t1.lengths[2])


def test_csv_text_exact_floats():
    txt = csv_text(["a", "b"], [[0.1, 1 / 3], [None, 2]])
    rows = list(csv.reader(io.StringIO(txt)))
    assert rows[0] == ["a", "b"]
    assert float(rows[1][1]) == 1 / 3
    assert rows[2] == ["", "2"]


# ---------------------------------------------------------------- pipeline


@pytest.fixture(scope="module")
def fast_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    cfg = config_from_dict(dict(FAST, cache_dir=str(root / "cache")), base_dir=str(root))
    env1 = run_pipeline(cfg)
    env2 = run_pipeline(cfg)
    return root, cfg, env1, env2


def test_pipeline_deterministic(fast_run):
    _root, _cfg, env1, env2 = fast_run
    assert env1.ok, env1.error
    assert env1.payload_hash() == env2.payload_hash()
    assert env2.timings["orbit_cache"]["hits"] >= 1
    assert exit_code(env1) == 0


def test_pipeline_payloads(fast_run):
    _root, _cfg, env, _ = fast_run
    assert env.payloads["dimension"]["delta"] == pytest.approx(0.1743316094567584, abs=1e-9)
    assert env.payloads["validate"]["ok"]
    assert set(env.payloads) == set(FAST["stages"])


def test_pipeline_export(fast_run, tmp_path):
    _root, _cfg, env, _ = fast_run
    paths = export(env, tmp_path)
    names = {p.name for p in paths}
    assert "envelope.json" in names
    d = json.loads((tmp_path / "envelope.json").read_text())
    assert d["payload_hash"] == env.payload_hash()
    for p in paths:
        if p.suffix == ".csv":
            header = p.read_text().splitlines()[0].split(",")
            assert all(h and " " not in h for h in header)


def test_pipeline_bad_group_exit_code(tmp_path):
    d = group_dict()
    d["discs"][1] = dict(d["discs"][0])  # overlapping discs
    write(tmp_path / "g.json", d)
    path = write(tmp_path / "c.json", {"group": "g.json"})
    with pytest.raises(ConfigError):
        load_config(path)
    assert main(["pipeline", str(path)]) == 2


# --------------------------------------------------------------------- CLI


def test_cli_validate(capsys):
    assert main(["validate"]) == 0
    assert json.loads(capsys.readouterr().out)["ok"]


def test_cli_dimension(capsys, tmp_path):
    assert main(["dimension", "--cache-dir", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["delta"] == pytest.approx(0.1743316094567584, abs=1e-12)


def test_cli_composite_q(capsys):
    assert main(["girth", "--q", "4"]) == 2
    assert "q must be prime" in capsys.readouterr().err


def test_cli_zeta_point(capsys, tmp_path):
    assert main(["zeta", "--s", "0.8,1.5", "--q", "3", "--cache-dir", str(tmp_path)]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["route2_rel_err"] < 1e-6


def test_cli_zeta_grid(tmp_path):
    out = tmp_path / "grid.csv"
    assert main(["zeta", "--grid", "0.3,0.6,-1,1", "--nx", "2", "--ny", "3", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["re", "im", "log_abs_det", "arg_det"]
    assert len(rows) == 7


def test_cli_girth_and_hs(capsys):
    assert main(["girth", "--q", "5", "--depth", "4"]) == 0
    assert json.loads(capsys.readouterr().out)["certificates_ok"]
    assert main(["hs", "--s", "0.5,2", "--n", "2", "--h", "0.0625", "--q", "3"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert d["log_abs_det2"] <= d["bound"] + 1e-9


def test_cli_resonances(capsys):
    assert main(["resonances", "--rect", "0.1,0.2,-1,1", "--q", "1"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    pts = [complex(float(r[0]), float(r[1])) for r in rows[1:]]
    assert len(pts) == 3  # delta and 0.1331 +- 0.8082i
    assert min(abs(p - 0.1743316094567584) for p in pts) < 1e-9
