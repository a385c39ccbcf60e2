import json
import math

import jsonschema
import pytest

import iterlog
from iterlog._cli import main
from iterlog._config import KINDS, config_hash, json_schema, parse_config
from tests.conftest import CONFIGS, SCHEMAS

TWO_VERTICES = {
    "schema": "iterlog/lattice/1",
    "payload": {
        "graph": {
            "vertices": [{"id": "a", "mass": 1}, {"id": "b", "mass": 2}],
            "arrows": [["a", "b"]],
        }
    },
}

MIDDLE_ODE = {
    "schema": "iterlog/csf-ode/1",
    "payload": {
        "graph": {"masses": [1, 1, 1, 1, 1]},
        "y0": [0.1, 0.1, 0.1, 0.1, 0.1],
        "t_end": 1e6,
        "samples": 40,
    },
}


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def read_summary(out, name="summary.json"):
    return json.loads((out / name).read_text(encoding="utf-8"))


def test_malformed_json_is_a_config_error(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{", encoding="utf-8")
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_is_a_config_error(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.json")]) == 2
    assert "cannot read" in capsys.readouterr().err


def test_run_middle_chamber(tmp_path, capsys):
    config = CONFIGS / "middle_chamber.json"
    out = tmp_path / "out"
    assert main(["run", str(config), "--out", str(out)]) == 0
    assert "chamber: MIDDLE" in capsys.readouterr().out

    summary = read_summary(out)
    assert summary["chamber"] == "MIDDLE"
    assert summary["drifting"] == []
    assert summary["rates"] == pytest.approx([-0.5, 0.0, 0.0, -0.5, 0.0])

    sha256 = config_hash(json.loads(config.read_text(encoding="utf-8")))
    assert summary["config_sha256"] == sha256
    first = (out / "v.csv").read_text(encoding="utf-8").splitlines()[0]
    assert first == f"# config_sha256={sha256}"

    manifest = read_summary(out, "manifest.json")
    assert manifest["kind"] == "walls"
    assert manifest["files"] == ["summary.json", "v.csv"]
    assert manifest["versions"]["iterlog"] == iterlog.__version__


def test_runs_are_reproducible(tmp_path):
    config = str(CONFIGS / "middle_chamber.json")
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["run", config, "--out", str(first)]) == 0
    assert main(["run", config, "--out", str(second)]) == 0
    names = sorted(p.name for p in first.iterdir() if p.name != "manifest.json")
    assert names == sorted(p.name for p in second.iterdir() if p.name != "manifest.json")
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_seed_override_is_recorded(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(CONFIGS / "middle_chamber.json"), "--out", str(out), "--seed", "7"]) == 0
    assert read_summary(out)["seed"] == 7


def test_reproduce_chamber_diagrams(tmp_path, capsys):
    out = tmp_path / "figure"
    assert main(["reproduce", "chamber-diagrams", "--out", str(out)]) == 0
    heights = json.loads(capsys.readouterr().out)
    assert heights["MIDDLE"] == ["1/2", "-1", "0", "1", "-1/2"]
    assert heights["LEFT"] == ["2/9", "-7/9", "2/9", "11/9", "-7/9"]
    assert set(heights) == {"LEFT", "MIDDLE", "RIGHT"}

    svg = (out / "chamber-diagrams.svg").read_text(encoding="utf-8")
    assert svg.lstrip().startswith("<?xml")
    summary = read_summary(out, "chamber-diagrams.json")
    assert summary["panels"]["LEFT"]["d1"] == pytest.approx(-1.0)


def test_lattice_analyze(tmp_path):
    path = write_config(tmp_path, TWO_VERTICES)
    out = tmp_path / "out"
    assert main(["lattice", "analyze", str(path), "--out", str(out), "--iterated"]) == 0
    summary = read_summary(out)
    assert summary["weights"] == {"a": "2/3", "b": "-1/3"}
    assert summary["tight_arrows"] == [["a", "b"]]
    assert summary["elements"] == 3
    assert summary["semistable"] is True
    assert summary["polystable"] is False
    assert summary["weight_filtration"]["labels"] == ["-1/3", "2/3"]
    assert "iterated" in summary


def test_lattice_walls_need_a_cycle(tmp_path, capsys):
    path = write_config(tmp_path, TWO_VERTICES)
    assert main(["lattice", "analyze", str(path), "--walls", "--out", str(tmp_path / "out")]) == 2
    assert "$.payload.walls" in capsys.readouterr().err


def test_flow_king(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["flow", "king", str(CONFIGS / "king_a2.json"), "--out", str(out)]) == 0
    summary = read_summary(out)
    assert summary["verdict"]["classification"] == "POLYSTABLE"
    assert summary["mode"] == "king"
    assert "verdict:" in capsys.readouterr().out


def test_flow_run_writes_a_trajectory(tmp_path):
    config = json.loads((CONFIGS / "king_a2.json").read_text(encoding="utf-8"))
    config["payload"].update({"mode": "run", "t_end": 5, "samples": 10})
    path = write_config(tmp_path, config)
    out = tmp_path / "out"
    assert main(["run", str(path), "--out", str(out)]) == 0
    rows = (out / "trajectory.csv").read_text(encoding="utf-8").splitlines()
    assert rows[1] == "t,residual,log_eig_0,log_eig_1"
    assert len(rows) == 2 + 11
    assert read_summary(out)["final_residual"] < 1e-3


def test_csf_ode(tmp_path):
    path = write_config(tmp_path, MIDDLE_ODE)
    out = tmp_path / "out"
    assert main(["csf", "ode", str(path), "--out", str(out)]) == 0
    summary = read_summary(out)
    assert summary["rates"] == pytest.approx([-0.5, 0.0, 0.0, -0.5, 0.0])
    assert summary["fixed_point"]["tight"] == [1, 2, 4]
    v = summary["fixed_point"]["v"]
    assert v[0] is None and v[3] is None
    assert v[4] == pytest.approx(math.log(0.5))
    header = (out / "v.csv").read_text(encoding="utf-8").splitlines()[1]
    assert header == "t,s,v1,v2,v3,v4,v5,y1,y2,y3,y4,y5"


@pytest.mark.parametrize(
    ["argv", "config"],
    [
        (["lattice", "analyze"], "king_a2.json"),
        (["flow", "king"], "middle_chamber.json"),
        (["csf", "pde"], "middle_chamber.json"),
    ],
)
def test_verb_must_match_config_kind(tmp_path, capsys, argv, config):
    assert main([*argv, str(CONFIGS / config), "--out", str(tmp_path / "out")]) == 2
    assert "$.schema" in capsys.readouterr().err


def test_domain_errors_exit_with_one(tmp_path, capsys):
    config = json.loads(json.dumps(MIDDLE_ODE))
    config["payload"]["graph"] = {"masses": [1, 1], "signs": [1, 1]}
    config["payload"]["y0"] = [0.1, 0.1]
    path = write_config(tmp_path, config)
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == 1
    assert "DomainError" in capsys.readouterr().err


@pytest.mark.parametrize(
    ["change", "path", "match"],
    [
        ({"foo": 1}, "$.payload.foo", "unknown field"),
        ({"window": [25, 15]}, "$.payload.window", "0 < s_start < s_end"),
        ({"grid": [[1, 1, 1]]}, "$.payload", "grid point 0 must list every mass"),
        ({"y0": [0.1, 0.1, 0.1, 0.1, 0.1, "x"]}, "$.payload.y0[5]", "valid number"),
        ({"y0": [0.1, 0.1, 0.1, 0.1]}, "$.payload", "one positive height per puncture"),
        ({"window": [15, True]}, "$.payload.window[1]", "valid number"),
        ({"graph": {"masses": [1, 1, 1]}}, "$.payload.graph", "signs are required"),
    ],
)
def test_config_errors_name_the_field(change, path, match):
    data = json.loads((CONFIGS / "middle_chamber.json").read_text(encoding="utf-8"))
    data["payload"].update(change)
    with pytest.raises(iterlog.ConfigError, match=match) as e:
        parse_config(data)
    assert e.value.path == path


@pytest.mark.parametrize(
    ["schema", "match"],
    [
        ("iterlog/walls/2", "unsupported schema version"),
        ("iterlog/banana/1", "unknown schema"),
        ("other/walls/1", "unknown schema"),
    ],
)
def test_schema_is_checked(schema, match):
    data = json.loads((CONFIGS / "middle_chamber.json").read_text(encoding="utf-8"))
    data["schema"] = schema
    with pytest.raises(iterlog.ConfigError, match=match):
        parse_config(data)


def test_config_hash_ignores_key_order():
    a = {"x": 1, "y": [1, 2]}
    b = {"y": [1, 2], "x": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({"x": 1, "y": [2, 1]})


@pytest.mark.slow
@pytest.mark.parametrize("jobs", [1, 2])
def test_walls_mass_grid(tmp_path, jobs):
    data = json.loads((CONFIGS / "middle_chamber.json").read_text(encoding="utf-8"))
    data["payload"]["grid"] = [[1, 1, 1, 1, 1], [1, 4, 1, 1, 1]]
    path = write_config(tmp_path, data)
    out = tmp_path / "out"
    assert main(["csf", "walls", str(path), "--out", str(out), "--jobs", str(jobs)]) == 0
    first = read_summary(out, "walls-000.json")
    second = read_summary(out, "walls-001.json")
    assert first["chamber"] == "MIDDLE"
    assert second["chamber"] == "WALL1"
    assert second["drifting"]
    assert [point["masses"] for point in read_summary(out)["grid"]] == [
        [1.0, 1.0, 1.0, 1.0, 1.0],
        [1.0, 4.0, 1.0, 1.0, 1.0],
    ]


@pytest.mark.parametrize(
    ["quiver", "path", "match"],
    [
        ({"dims": [1, 2], "arrows": [{"source": 0, "target": 1, "matrix": 1}]}, "$.payload.quiver", "expected a 2x1 matrix"),
        ({"dims": [1, 1], "arrows": [{"source": 0, "target": 2, "matrix": 1}]}, "$.payload.quiver", "out of range"),
        ({"dims": [1, 1], "masses": [1]}, "$.payload.quiver", "one positive mass per vertex"),
        ({"dims": [1, 1], "masses": [1, -1]}, "$.payload.quiver.masses[1]", "greater than 0"),
        ({"dims": []}, "$.payload.quiver.dims", "at least 1 item"),
    ],
)
def test_quiver_errors_name_the_field(quiver, path, match):
    data = {"schema": "iterlog/flow/1", "payload": {"quiver": quiver}}
    with pytest.raises(iterlog.ConfigError, match=match) as e:
        parse_config(data)
    assert e.value.path == path


def test_complex_and_matrix_entries():
    data = {
        "schema": "iterlog/flow/1",
        "payload": {
            "quiver": {
                "dims": [2, 1],
                "arrows": [{"source": 0, "target": 1, "matrix": [[1, [0, 2]]]}],
                "rho": [0.25, [[-0.5]]],
            }
        },
    }
    quiver = parse_config(data).payload.quiver
    assert quiver.arrows[0].rows() == ((1 + 0j, 2j),)
    assert quiver.rho_matrices() == (((0.25, 0j), (0j, 0.25)), ((-0.5 + 0j,),))
    assert quiver.vertex_masses() == (1.0, 1.0)


@pytest.mark.parametrize("config", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.name)
def test_shipped_configs_validate_against_their_schema(config):
    data = json.loads(config.read_text(encoding="utf-8"))
    kind = parse_config(data).kind
    schema = json.loads((SCHEMAS / f"{kind}.json").read_text(encoding="utf-8"))
    jsonschema.validate(instance=data, schema=schema)
    jsonschema.validate(instance=data, schema=json_schema(kind))


def _outline(schema):
    defs = {
        name: (sorted(d["properties"]), sorted(d.get("required", [])))
        for name, d in schema.get("$defs", {}).items()
    }
    return sorted(schema["properties"]), sorted(schema["required"]), defs


@pytest.mark.parametrize("kind", KINDS)
def test_shipped_schemas_match_the_models(kind):
    shipped = json.loads((SCHEMAS / f"{kind}.json").read_text(encoding="utf-8"))
    generated = json_schema(kind)
    assert shipped["title"] == generated["title"]
    assert _outline(shipped) == _outline(generated)
    assert shipped["properties"]["schema"]["const"] == f"iterlog/{kind}/1"


def test_schema_rejects_unknown_fields():
    data = json.loads((CONFIGS / "middle_chamber.json").read_text(encoding="utf-8"))
    data["payload"]["foo"] = 1
    schema = json.loads((SCHEMAS / "walls.json").read_text(encoding="utf-8"))
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(instance=data, schema=schema)


def test_schemas_verb_writes_every_kind(tmp_path, capsys):
    out = tmp_path / "schemas"
    assert main(["schemas", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == sorted(f"{kind}.json" for kind in KINDS)
    walls = json.loads((out / "walls.json").read_text(encoding="utf-8"))
    assert walls == json_schema("walls")
    assert "wrote" in capsys.readouterr().out
