import json

import pytest
import yaml

from nltransfer import __version__
from nltransfer.cli import ConfigError, config_hash, main, parse_config
from nltransfer.potential import builtin_model

SMALL = {
    "potential": {"family": "gauss-gauss", "v0": 1.0, "alpha": 1.0, "beta": "auto", "sigma": 4},
    "grid": {"k": 1.0, "n": 12},
    "scatter": {"theta0": [0.1, 2.9], "eps": 1e-2},
    "transfer": {"refine": False, "widen": True},
    "verify": {"states": 2, "tuples": 10, "samples": 8},
}


def write(tmp_path, cfg, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return str(p)


def run(tmp_path, cmd, cfg, *extra, out="out"):
    path = write(tmp_path, cfg)
    outdir = tmp_path / out
    code = main([cmd, "--config", path, "--out", str(outdir), *extra])
    return code, outdir


def with_(base, **blocks):
    cfg = json.loads(json.dumps(base))
    for key, val in blocks.items():
        cfg.setdefault(key, {}).update(val)
    return cfg


# -- configuration ---------------------------------------------------------------------


def test_missing_sigma_names_field(tmp_path, capsys):
    cfg = with_(SMALL)
    del cfg["potential"]["sigma"]
    code, _ = run(tmp_path, "transfer", cfg)
    assert code == 2
    assert "potential.sigma" in capsys.readouterr().err


def test_unknown_keys_and_bad_values(tmp_path, capsys):
    cfg = with_(SMALL, grid={"n": 1, "spacing": 2}, evolution={"tol": 0})
    code, _ = run(tmp_path, "verify", cfg)
    err = capsys.readouterr().err
    assert code == 2
    for field in ("grid.n", "grid.spacing", "evolution.tol"):
        assert field in err


def test_slow_decay_rejected_for_transfer(tmp_path, capsys):
    code, _ = run(tmp_path, "scatter", with_(SMALL, potential={"sigma": 3.0}))
    assert code == 2 and "potential.sigma" in capsys.readouterr().err


def test_invalid_yaml_and_missing_file(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("potential: [unclosed")
    assert main(["verify", "--config", str(bad)]) == 2
    assert main(["verify", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_parse_config_defaults():
    cfg = parse_config({"potential": {"family": "one-sided", "alpha": 1, "beta": 0.5, "sigma": 4}})
    assert cfg.grid.n == 32 and cfg.evolution.scheme == "rk4"
    with pytest.raises(ConfigError):
        parse_config([1, 2])


def test_config_hash_depends_on_seed_and_content():
    a = parse_config(SMALL)
    b = parse_config(with_(SMALL, grid={"n": 14}))
    assert config_hash(a, 0) == config_hash(parse_config(SMALL), 0)
    assert config_hash(a, 0) != config_hash(a, 1)
    assert config_hash(a, 0) != config_hash(b, 0)


def test_output_directory_precedence(tmp_path, monkeypatch):
    cfg = with_(SMALL, verify={"certificates": []}, output={"directory": str(tmp_path / "from_config")})
    path = write(tmp_path, cfg)
    assert main(["verify", "--config", path]) == 0
    assert (tmp_path / "from_config" / "verify.json").exists()
    monkeypatch.setenv("NLTRANSFER_OUT", str(tmp_path / "from_env"))
    assert main(["verify", "--config", path]) == 0
    assert (tmp_path / "from_env" / "verify.json").exists()
    assert main(["verify", "--config", path, "--out", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "verify.json").exists()


# -- commands ------------------------------------------------------------------------------


def test_transfer_free(tmp_path):
    code, out = run(tmp_path, "transfer", with_(SMALL, potential={"v0": 0.0}))
    report = json.loads((out / "transfer.json").read_text())
    assert code == 0
    assert report["block_norms"]["T"] <= 1e-12
    assert report["meta"]["version"] == __version__


def test_transfer_report(tmp_path):
    code, out = run(tmp_path, "transfer", with_(SMALL, transfer={"refine": True}))
    report = json.loads((out / "transfer.json").read_text())
    assert code == 0 and report["pass"]
    assert report["refinement"]["kernel_sup_gap"] <= 1e-4
    assert report["widening"]["diff_to_2X"] <= 10 * report["tail_estimate"]
    assert (out / "transfer_blocks.csv").read_text().startswith("# tool=nltransfer")


def test_scatter_free_is_zero(tmp_path):
    code, out = run(tmp_path, "scatter", with_(SMALL, potential={"v0": 0.0}))
    assert code == 0
    for name in ("cross_section_000.csv", "cross_section_001.csv"):
        rows = [r for r in (out / name).read_text().splitlines() if not r.startswith("#")][1:]
        assert len(rows) == 24
        assert all(float(v) == 0.0 for r in rows for v in r.split(",")[1:])


def test_scatter_reports_snap(tmp_path):
    code, out = run(tmp_path, "scatter", SMALL)
    report = json.loads((out / "scatter.json").read_text())
    assert code == 0
    first = report["results"][0]
    assert first["snap_distance"] == pytest.approx(abs(first["theta0_snapped"] - 0.1), abs=1e-15)
    assert report["meta"]["config_hash"] == config_hash(parse_config(SMALL), 0)


def test_scatter_bad_angle_fails(tmp_path):
    code, out = run(tmp_path, "scatter", with_(SMALL, scatter={"theta0": [1.5707963267948966]}))
    report = json.loads((out / "scatter.json").read_text())
    assert code == 1 and "error" in report["results"][0]


def test_verify_default_suite_powerlaw(tmp_path, capsys):
    cfg = with_(SMALL, potential={"family": "powerlaw-gauss", "decay": 4})
    code, out = run(tmp_path, "verify", cfg)
    report = json.loads((out / "verify.json").read_text())
    assert code == 0 and report["pass"]
    assert len(report["certificates"]) == 8
    assert capsys.readouterr().out.count("PASS") == 8


def test_verify_understated_beta_fails(tmp_path):
    beta = builtin_model("powerlaw-gauss", 1.0).beta
    cfg = with_(
        SMALL,
        potential={"family": "powerlaw-gauss", "decay": 4, "beta": beta / 10},
        grid={"k": 2.0},
        verify={"certificates": ["norm-envelope"]},
    )
    code, out = run(tmp_path, "verify", cfg)
    report = json.loads((out / "verify.json").read_text())
    assert code == 1 and not report["pass"]
    assert report["certificates"][0]["margin"] < 0


def test_verify_empty_list(tmp_path):
    code, out = run(tmp_path, "verify", with_(SMALL, verify={"certificates": []}))
    report = json.loads((out / "verify.json").read_text())
    assert code == 0 and report["certificates"] == [] and report["pass"]


def test_formats_selection(tmp_path):
    code, out = run(tmp_path, "verify", with_(SMALL, verify={"certificates": ["nilpotency"]}, output={"formats": ["csv"]}))
    assert code == 0
    assert (out / "verify.csv").exists() and not (out / "verify.json").exists()


@pytest.mark.parametrize("cmd", ["transfer", "scatter", "verify"])
def test_thread_count_does_not_change_output(tmp_path, cmd):
    _, one = run(tmp_path, cmd, SMALL, "--threads", "1", "--seed", "5", out="t1")
    _, eight = run(tmp_path, cmd, SMALL, "--threads", "8", "--seed", "5", out="t8")
    names = sorted(p.name for p in one.iterdir())
    assert names == sorted(p.name for p in eight.iterdir())
    for name in names:
        assert (one / name).read_bytes() == (eight / name).read_bytes()


def test_seed_changes_sampled_inputs(tmp_path):
    cfg = with_(SMALL, verify={"certificates": ["product-norm"]})
    _, a = run(tmp_path, "verify", cfg, "--seed", "1", out="a")
    _, b = run(tmp_path, "verify", cfg, "--seed", "2", out="b")
    ja, jb = (json.loads((d / "verify.json").read_text()) for d in (a, b))
    assert ja["certificates"][0]["inputs"] != jb["certificates"][0]["inputs"]
