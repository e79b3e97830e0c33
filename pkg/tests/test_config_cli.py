import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nldp.cli import main
from nldp.config import load_config, parse_config
from nldp.errors import ConfigError
from nldp.fields import Polynomial

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
BASE = {
    "dim": 2,
    "elliptic": {"kind": "identity"},
    "domain": {"kind": "ball", "center": [0, 0], "radius": 1},
    "phi": {"kind": "coordinate", "index": 1},
}


def _with(**kw):
    d = json.loads(json.dumps(BASE))
    d.update(kw)
    return d


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    loaded = load_config(path)
    assert loaded.digest == hashlib.sha256(path.read_bytes()).hexdigest()
    assert loaded.spec.dim == loaded.raw["dim"]


@pytest.mark.parametrize("bad", [
    _with(colour="red"),
    _with(sim={"dt": 1e-3}),
    _with(phi={"kind": "coordinate", "index": 1, "extra": 1}),
    _with(jumps={"kappa": {"kind": "constant", "value": 1}, "nu": {"atoms": [], "weights": []}}),
    _with(domain={"kind": "ball", "center": [0, 0], "radius": 1, "open": True}),
    _with(verify={"alpah": 1.0}),
    _with(oracle={"h": 0.1, "mesh": 2}),
])
def test_unknown_keys_rejected(bad):
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(bad)


@pytest.mark.parametrize("bad", [
    _with(dim=0),
    _with(domain={"kind": "ball", "center": [0, 0, 0], "radius": 1}),
    _with(phi={"kind": "coordinate", "index": 3}),
    _with(phi={"kind": "spline"}),
    _with(elliptic={"kind": "constant_matrix", "matrix": [[1, 0]]}),
    _with(sim={"hazard_rule": "simpson"}),
    _with(sim={"max_steps": 1.5}),
    _with(sim={"dt_base": -1}),
    _with(jumps={"kappa": {"kind": "constant", "value": 1}, "nu": {"atoms": [[1.0]]}}),
    {"dim": 2, "elliptic": {"kind": "identity"}, "domain": {"kind": "ball", "center": [0, 0], "radius": 1}},
])
def test_malformed_configs_rejected(bad):
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_invalid_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{dim: 2")
    with pytest.raises(ConfigError):
        load_config(p)


def test_expr_fields_and_default_bound():
    cfg = parse_config(_with(phi={"kind": "expr", "terms": [[2.0, [2, 0]], [-1.0, [0, 1]]]},
                             drift={"kind": "constant", "vector": [1, 0]}))
    phi = cfg.spec.boundary.phi
    assert isinstance(phi, Polynomial)
    np.testing.assert_allclose(phi(np.array([[1.0, 2.0], [0.5, 0.0]])), [0.0, 0.5])
    # x1 on the validation halo of the unit disk reaches 2 in absolute value
    assert parse_config(BASE).spec.boundary.sup_bound == pytest.approx(2.0)
    assert parse_config(_with(phi_bound=5)).spec.boundary.sup_bound == 5.0


def test_solve_constant_phi(tmp_path):
    cfg = _write(tmp_path, _with(phi={"kind": "constant", "value": 0.7}))
    out = tmp_path / "u.csv"
    assert main(["solve", "--config", str(cfg), "--out", str(out), "--paths", "200",
                 "--points", "0,0;0.3,0.2"]) == 0
    rows = _rows(out)
    assert rows[0] == ["point_id", "x1", "x2", "mean", "stderr", "ci_lo", "ci_hi", "mean_exit_time", "mean_jumps",
                       "nonexit_count"]
    assert [r[3] for r in rows[1:]] == ["0.69999999999999996"] * 2
    assert [r[4] for r in rows[1:]] == ["0"] * 2
    man = json.loads((tmp_path / "u.csv.manifest.json").read_text())
    assert man["config_digest"] == "sha256:" + hashlib.sha256(cfg.read_bytes()).hexdigest()
    assert man["master_seed"] == 0 and man["n_paths"] == 200 and man["passed"]


def test_exit_code_validation(tmp_path, capsys):
    cfg = _write(tmp_path, BASE)
    out = tmp_path / "u.csv"
    assert main(["solve", "--config", str(cfg), "--out", str(out), "--points", "2,0"]) == 2
    assert not out.exists()
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] and "outside" in err["message"]
    bad = _write(tmp_path, _with(colour=1), "bad.json")
    assert main(["solve", "--config", str(bad), "--out", str(out)]) == 2


def test_exit_code_simulation(tmp_path):
    cfg = _write(tmp_path, _with(sim={"max_steps": 5}))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "u.csv"), "--paths", "50"]) == 3


def test_exit_code_failed_check(tmp_path):
    data = json.loads((CONFIGS / "kill_constant.json").read_text())
    data["verify"]["threshold"] = 1e-12
    cfg = _write(tmp_path, data)
    out = tmp_path / "v.csv"
    assert main(["verify", "--config", str(cfg), "--out", str(out), "--which", "prop23", "--paths", "500",
                 "--points", "0,0"]) == 4
    assert _rows(out)[1][-1] == "0"


def test_worker_count_does_not_change_output(tmp_path):
    outs = []
    for w in (1, 2, 8):
        out = tmp_path / f"s{w}.csv"
        assert main(["solve", "--config", str(CONFIGS / "sinh_jump.json"), "--out", str(out), "--paths", "2000",
                     "--dt", "1e-3", "--workers", str(w), "--seed", "7"]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]


@pytest.mark.parametrize("which,config", [
    ("prop23", "kill_constant"),
    ("resolvent_identity", "resolvent_box"),
    ("exit_scaling", "exit_scaling"),
    ("kato_decay", "kill_constant"),
    ("alpha_decay", "kill_constant"),
    ("conservative", "conservative"),
])
def test_verify_choices_run(tmp_path, which, config):
    out = tmp_path / "v.csv"
    code = main(["verify", "--config", str(CONFIGS / f"{config}.json"), "--out", str(out), "--which", which,
                 "--paths", "2000", "--dt", "2e-3", "--points", "0,0"])
    assert code in (0, 4)  # small runs: the statistics are exercised by the acceptance suite
    man = json.loads((tmp_path / "v.csv.manifest.json").read_text())
    assert man["which"] == which and set(man["checks"]) and len(_rows(out)) >= 2


def test_oracle_and_compare(tmp_path):
    out = tmp_path / "o.csv"
    assert main(["oracle", "--config", str(CONFIGS / "sinh_jump.json"), "--out", str(out), "--h", "0.01"]) == 0
    rows = _rows(out)
    assert rows[0] == ["x1", "value", "interior"]
    man = json.loads((tmp_path / "o.csv.manifest.json").read_text())
    assert man["checks"]["discrete_maximum_principle"]
    cmp_out = tmp_path / "c.csv"
    assert main(["compare", "--config", str(CONFIGS / "sinh_jump.json"), "--out", str(cmp_out), "--paths", "4000",
                 "--dt", "1e-3", "--h", "0.01"]) == 0
    assert len(_rows(cmp_out)) == 4


def test_resolvent_oracle_requires_box(tmp_path):
    assert main(["oracle", "--config", str(CONFIGS / "resolvent_box.json"), "--out", str(tmp_path / "o.csv"),
                 "--alpha", "1"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "nldp", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("solve", "verify", "oracle", "compare"):
        assert cmd in res.stdout
