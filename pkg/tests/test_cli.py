import json

import pytest
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker
from sqlalchemy.pool import StaticPool

import app.db.session as db_session
from app.cli import EXIT_CONDITION, EXIT_ERROR, EXIT_OK, create_cli_parser, load_config, main
from app.db.session import Base
from app.models import Run


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_verify_prints_suite_lines(capsys):
    assert main(["verify", "--n", "2", "--samples", "50"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "conjugation: 768/768 ok" in out
    assert "field:" in out

def test_distill_trivial_matrix(capsys):
    assert main(["distill", "--matrix", "1,0,0,0", "--auto-params"]) == EXIT_OK
    body = _json(capsys)
    params = body["result"]["selection"]["params"]
    assert (params["k"], params["r"]) == (0, 1)
    assert body["config"]["matrix"] == [1.0, 0.0, 0.0, 0.0]

def test_distill_with_labeled_simulation(capsys):
    assert main(["distill", "--matrix", "1,0,0,0", "--distill-bits", "1000", "--seed", "3"]) == EXIT_OK
    simulation = _json(capsys)["result"]["simulation"]
    assert simulation["round_lengths"] == [1000]
    assert simulation["length"] == 1000
    assert simulation["disagreement_rate"] == 0

def test_simulate_identity_passes(capsys, tmp_path):
    log = tmp_path / "rounds.csv"
    code = main(["simulate", "--rounds", "6000", "--seed", "1", "--csv", str(log)])
    assert code == EXIT_OK
    stats = _json(capsys)["result"]
    assert stats["verdict"] is True
    assert len(log.read_text().splitlines()) == 6001

def test_simulate_full_dephase_fails_the_condition(capsys):
    assert main(["simulate", "--rounds", "6000", "--channel", "full_dephase"]) == EXIT_CONDITION
    assert _json(capsys)["result"]["verdict"] is False

def test_bad_channel_is_a_usage_error(capsys):
    assert main(["simulate", "--rounds", "100", "--channel", "bogus:1"]) == EXIT_ERROR
    assert "channel" in capsys.readouterr().err

def test_analyze_writes_json(capsys, tmp_path):
    out = tmp_path / "report.json"
    assert main(["analyze", "--channel", "z_flip:0.3", "--json", str(out)]) == EXIT_OK
    printed = _json(capsys)
    assert json.loads(out.read_text()) == printed
    assert printed["result"]["e_b"] == pytest.approx(0.15)

def test_analyze_non_unitary_channel(capsys):
    assert main(["analyze", "--channel", "partial_intercept:0.4"]) == EXIT_OK
    result = _json(capsys)["result"]
    assert result["unitary"] is False
    assert result["e_b"] == pytest.approx(0.2)
    assert result["pm_condition"] is True

def test_analyze_non_unitary_channel_at_the_boundary(capsys):
    assert main(["analyze", "--channel", "partial_intercept:1"]) == EXIT_CONDITION
    assert _json(capsys)["result"]["pm_condition"] is False

def test_distill_uses_explicit_params_by_default(capsys):
    main(["distill", "--matrix", "0.9,0.05,0.03,0.02", "--k", "2"])
    body = _json(capsys)
    params = body["result"]["selection"]["params"]
    assert (params["k"], params["r"]) == (2, 1)
    assert body["config"]["r"] == 1

def test_auto_params_only_on_request():
    parser = create_cli_parser()
    assert load_config(parser.parse_args(["distill", "--matrix", "1,0,0,0"])).auto_params is False
    assert load_config(parser.parse_args(["distill", "--matrix", "1,0,0,0", "--auto-params"])).auto_params is True

def test_toml_config_and_flag_precedence(tmp_path):
    cfg_file = tmp_path / "run.toml"
    cfg_file.write_text('n = 3\nrounds = 500\nchannel = "z_flip:0.1"\nsample-fraction = 0.2\n')
    parser = create_cli_parser()
    cfg = load_config(parser.parse_args(["simulate", "--config", str(cfg_file), "--rounds", "800"]))
    assert cfg.n == 3
    assert cfg.rounds == 800
    assert cfg.channel == "z_flip:0.1"
    assert cfg.sample_fraction == 0.2
    assert cfg.keep_outside is True

def test_unknown_toml_key_is_rejected(tmp_path, capsys):
    cfg_file = tmp_path / "run.toml"
    cfg_file.write_text("roundz = 10\n")
    assert main(["simulate", "--config", str(cfg_file)]) == EXIT_ERROR
    assert "roundz" in capsys.readouterr().err

def test_threshold_writes_frontier(capsys, tmp_path):
    frontier = tmp_path / "frontier.csv"
    assert main(["threshold", "--n", "2", "--grid", "1000", "--csv", str(frontier)]) == EXIT_OK
    result = _json(capsys)["result"]
    assert result["iff"]["passed"] is True
    assert frontier.read_text().splitlines()[0] == "e_b,min_f,feasible"

def test_netrun_local(capsys, tmp_path):
    report = tmp_path / "roles.json"
    code = main(["netrun", "--role", "local", "--rounds", "6000", "--seed", "1", "--k", "1", "--r", "3",
                 "--report", str(report)])
    assert code == EXIT_OK
    reports = json.loads(report.read_text())
    assert reports["alice"]["final_key"] == reports["bob"]["final_key"] != ""

def test_netrun_local_condition_failure(capsys):
    code = main(["netrun", "--role", "local", "--eve", "--channel", "full_dephase", "--rounds", "6000"])
    assert code == EXIT_CONDITION
    result = _json(capsys)["result"]
    assert result["alice"]["reason"] == "condition-2-failed"
    assert result["eve"]["status"] == "ok"

def test_netrun_needs_a_role(capsys):
    assert main(["netrun"]) == EXIT_ERROR

def test_record_stores_the_run(capsys, monkeypatch):
    engine = create_engine("sqlite://", connect_args={"check_same_thread": False}, poolclass=StaticPool)
    SessionLocal = sessionmaker(bind=engine)
    monkeypatch.setattr(db_session, "SessionLocal", SessionLocal)
    monkeypatch.setattr(db_session, "init_db", lambda bind=None: Base.metadata.create_all(bind=engine))

    assert main(["analyze", "--channel", "identity", "--record"]) == EXIT_OK
    db = SessionLocal()
    try:
        runs = db.query(Run).all()
        assert len(runs) == 1
        assert runs[0].command == "analyze"
        assert runs[0].verdict == "True"
        assert runs[0].result["e_c"] == 1.0
    finally:
        db.close()
