import json

import pytest

from dld_forge.cli import main
from dld_forge.flow import save_field
from dld_forge.surrogate import Dense, NetParams, save_net


@pytest.fixture(scope="module")
def field_file(tmp_path_factory, field_f05_n5):
    return save_field(field_f05_n5, tmp_path_factory.mktemp("fld") / "field.bin")


@pytest.fixture(scope="module")
def linear_net_file(tmp_path_factory):
    layer = Dense(3, 1, "linear")
    layer.W[:, 0] = [0.025, 0.0, 0.002 * 24.99]
    layer.b[0] = 0.1125
    return save_net(NetParams("fcnn", [[layer]]), tmp_path_factory.mktemp("net") / "lin.net")


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand_and_flag(tmp_path):
    assert main(["frobnicate"]) == 1
    assert main(["dc", "--bogus", "1", "--out", str(tmp_path)]) == 1


def test_missing_option_and_range_errors(tmp_path, capsys):
    assert main(["dc", "--f", "0.5", "--out", str(tmp_path)]) == 1
    assert "--n" in capsys.readouterr().err
    assert main(["dc", "--f", "0.9", "--n", "5", "--re", "1", "--out", str(tmp_path)]) == 1
    assert main(["design", "--d1", "5", "--d2", "5", "--net", "x", "--out", str(tmp_path)]) == 1


def test_help_exits_zero(capsys):
    assert main(["design", "--help"]) == 0
    assert "--phi" in capsys.readouterr().out


def test_dc_from_saved_field(tmp_path, capsys, field_file):
    assert main(["dc", "--field", str(field_file), "--out", str(tmp_path)]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("d_c ") and "evaluations" in line
    body = json.loads((tmp_path / "dc.json").read_text())
    assert body["d_c"] is not None and f"{body['d_c']:.4g}" in line
    resolved = json.loads((tmp_path / "resolved-config.json").read_text())
    assert resolved["command"] == "dc" and resolved["tol"] == 1e-3


def test_flag_beats_config_beats_default(tmp_path, field_file):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tol": 0.01, "periods": 3, "field": str(field_file)}))
    out = tmp_path / "o"
    assert main(["dc", "--config", str(cfg), "--periods", "2", "--out", str(out)]) == 0
    r = json.loads((out / "resolved-config.json").read_text())
    assert r["tol"] == 0.01 and r["periods"] == 2 and r["wall_res"] == 256


def test_bad_config_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    assert main(["dc", "--config", str(bad), "--out", str(tmp_path)]) == 1


def test_computation_error_exit_code(tmp_path, field_file):
    # a particle wider than the gap cannot be seeded
    assert main(["trace", "--field", str(field_file), "--d", "0.6", "--out", str(tmp_path)]) == 2


def test_seeded_outputs_are_byte_identical(tmp_path, field_file, linear_net_file):
    def run(argv, names):
        out = tmp_path / "same"
        assert main(argv + ["--out", str(out)]) == 0
        return {n: (out / n).read_bytes() for n in names}

    trace_args = ["trace", "--field", str(field_file), "--d", "0.4", "--periods", "1"]
    names = ["trajectory.csv", "recurrence.csv", "resolved-config.json"]
    assert run(trace_args, names) == run(trace_args, names)
    design_args = ["design", "--d1", "5", "--d2", "8", "--phi", "1", "--net", str(linear_net_file),
                   "--pop", "24", "--generations", "4", "--seed", "7"]
    names = ["result.json", "pareto.csv", "resolved-config.json"]
    assert run(design_args, names) == run(design_args, names)


def test_design_directive_and_report(tmp_path, capsys, field_file, linear_net_file):
    out = tmp_path / "d"
    argv = ["design", "--d1", "5", "--d2", "8", "--phi", "0", "--cf", "min", "--net", str(linear_net_file),
            "--pop", "24", "--generations", "4", "--out", str(out)]
    assert main(argv) == 0
    assert capsys.readouterr().out.startswith("f 0.25  N ")
    body = json.loads((out / "result.json").read_text())
    assert body["result"]["f"] == 0.25 and body["request"]["constraints"] == {"f": "min"}
    assert 5 < body["result"]["D_c"] < 8
    assert (out / "pareto.csv").read_text().startswith("f,N,Re,G,D_c,BW,stability")
