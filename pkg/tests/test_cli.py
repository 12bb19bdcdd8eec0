import os

import pytest

from nlcalc.cli import (
    Config,
    ConfigError,
    EXPERIMENTS,
    emit_csv,
    emit_svg,
    main,
    parse_config,
)
from nlcalc.experiments import ExperimentReport


MINIMAL = """
experiment = nt-check
domain = ball
dimension = 2
radius = 1.0
family = localizing
field = identity
"""


def test_parse_minimal_config():
    cfg = parse_config(MINIMAL)
    assert cfg.experiment == "nt-check"
    assert cfg.domain == "ball" and cfg.dimension == 2
    dom = cfg.make_domain()
    assert dom.dim == 2


def test_parse_rejects_out_of_range_s():
    with pytest.raises(ConfigError) as exc:
        parse_config("s_grid = 0.5 1.5\n")
    (ln, msg), = exc.value.diagnostics
    assert ln == 1 and "(0, 1)" in msg


def test_parse_rejects_unknown_shape_with_registry():
    with pytest.raises(ConfigError) as exc:
        parse_config("domain = torus\n")
    (ln, msg), = exc.value.diagnostics
    assert "torus" in msg and "lshape" in msg  # names the registry


def test_parse_reports_line_numbers_for_unknown_keys():
    text = "experiment = nt-check\nwibble = 3\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    (ln, msg), = exc.value.diagnostics
    assert ln == 2 and "wibble" in msg


def test_parse_custom_kernel_pieces():
    text = """
family = custom
dimension = 1
[alpha]
piece = 0 1 1.0 0.0
[mu]
piece = 0 inf 0.5 -2.5
"""
    cfg = parse_config(text)
    assert cfg.alpha_pieces == [(0.0, 1.0, 1.0, 0.0)]
    assert cfg.mu_pieces[0][1] == float("inf")
    fam = cfg.make_family()
    assert fam.kind == "custom"


def _tiny_report():
    return ExperimentReport("demo", "eps", [0.4, 0.2, 0.1, 0.05],
                            [1.0, 2.0, 3.0, 4.0], [1.0, 1.0, 1.0, 1.0],
                            [0.1, 0.1, 0.1, 0.1], [5, 5, 5, 5], seed=7)


def test_emit_csv_shape_and_determinism(tmp_path):
    rep = _tiny_report()
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    emit_csv(rep, str(p1))
    emit_csv(rep, str(p2))
    lines = p1.read_text().splitlines()
    assert len(lines) == 5  # header + 4 rows
    assert lines[0].startswith("param,value,reference,abs_err,rel_err,err_est,n_evals,seed")
    assert p1.read_bytes() == p2.read_bytes()


def test_emit_csv_refuses_empty(tmp_path):
    rep = ExperimentReport("demo", "eps", [], [], [], [], [], seed=0)
    target = tmp_path / "empty.csv"
    with pytest.raises(ValueError):
        emit_csv(rep, str(target))
    assert not target.exists()


def test_emit_svg_deterministic_with_labels(tmp_path):
    rep = _tiny_report()
    p1 = tmp_path / "a.svg"
    p2 = tmp_path / "b.svg"
    emit_svg(rep, str(p1))
    emit_svg(rep, str(p2))
    body = p1.read_text()
    assert "log10 eps" in body and "log10 abs_err" in body
    assert p1.read_bytes() == p2.read_bytes()


def test_main_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("domain = torus\n")
    assert main(["nt-check", "--config", str(bad)]) == 2
    assert main(["nt-check", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_main_help_lists_registries(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for name in EXPERIMENTS:
        assert name in out


def test_main_runs_kernel_check(tmp_path, capsys):
    cfg = tmp_path / "k.cfg"
    cfg.write_text("experiment = check-kernel\nfamily = localizing\n"
                   "dimension = 2\neps_grid = 0.5 0.1\n")
    code = main(["check-kernel", "--config", str(cfg), "--out", str(tmp_path)])
    assert code == 0
    assert (tmp_path / "kernel.csv").exists()
    out = capsys.readouterr().out
    assert "[pass]" in out


def test_main_runs_approx_identity(tmp_path):
    code = main(["approx-identity", "--out", str(tmp_path), "--format", "csv+svg"])
    assert code == 0
    assert (tmp_path / "approx-identity.csv").exists()
    assert (tmp_path / "approx-identity.svg").exists()
