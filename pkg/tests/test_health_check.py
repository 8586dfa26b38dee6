from scripts import health_check


def test_all_checks_pass(capsys):
    assert health_check.run_checks() == 0
    out = capsys.readouterr().out
    assert "[OK  ] Duality" in out
    assert "[OK  ] Rho oracle" in out
    assert "SQLite Ledger: disabled" in out


def test_ledger_check_when_enabled(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("SIM_DB_PATH", str(tmp_path / "ledger.db"))
    assert health_check.run_checks() == 0
    assert "[OK  ] SQLite Ledger: Schema OK" in capsys.readouterr().out


def test_bad_config_fails(monkeypatch, capsys):
    monkeypatch.setenv("SIM_THREADS", "0")
    assert health_check.run_checks() == 1
    assert "[FAIL] Configuration" in capsys.readouterr().out
