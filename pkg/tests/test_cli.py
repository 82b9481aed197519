import os

import pytest

from ads3d import cli, eegio


def run(argv, capsys=None):
    code = cli.main(argv)
    return code


def test_print_config_resolves_precedence(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed = 3\ntrials_per_class = 9   # comment\n")
    monkeypatch.setenv("ADS3D_SEED", "5")
    code = run(["synth", "--config", str(cfg), "--print-config",
                "out=x.ads3", "trials_per_class=2"])
    out = capsys.readouterr().out
    assert code == 0
    assert "seed = 5" in out            # env beats file
    assert "trials_per_class = 2" in out  # flag beats everything
    monkeypatch.delenv("ADS3D_SEED")
    run(["synth", "--config", str(cfg), "--print-config", "out=x.ads3"])
    out = capsys.readouterr().out
    assert "seed = 3" in out            # file value


def test_unknown_key_rejected(capsys):
    code = run(["synth", "out=x.ads3", "bogus=1"])
    err = capsys.readouterr().err
    assert code == 1
    assert err.startswith("error: config:")
    assert "bogus" in err


def test_missing_required_key(capsys):
    code = run(["synth"])
    err = capsys.readouterr().err
    assert code == 1 and "requires key 'out'" in err


def test_missing_input_file_is_io_error(tmp_path, capsys):
    code = run(["preprocess", f"in={tmp_path}/nope.ads3",
                f"out={tmp_path}/o.ads3"])
    err = capsys.readouterr().err
    assert code == 1 and err.startswith("error: io:")


def test_bad_magic_is_format_error(tmp_path, capsys):
    bad = tmp_path / "bad.ads3"
    bad.write_bytes(b"XXXX" + b"\0" * 64)
    code = run(["preprocess", f"in={bad}", f"out={tmp_path}/o.ads3"])
    err = capsys.readouterr().err
    assert code == 1 and err.startswith("error: format:")


def test_synth_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a.ads3", tmp_path / "b.ads3"
    for path in (a, b):
        assert run(["synth", f"out={path}", "seed=7",
                    "trials_per_class=3"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.ads3.config.txt").exists()


def test_synth_seed_changes_bytes(tmp_path):
    a, b = tmp_path / "a.ads3", tmp_path / "b.ads3"
    run(["synth", f"out={a}", "seed=7", "trials_per_class=3"])
    run(["synth", f"out={b}", "seed=8", "trials_per_class=3"])
    assert a.read_bytes() != b.read_bytes()


@pytest.mark.slow
def test_full_smoke_chain(tmp_path, capsys):
    raw = tmp_path / "raw.ads3"
    pre = tmp_path / "pre.ads3"
    train_dir = tmp_path / "run"
    assert run(["synth", f"out={raw}", "seed=11", "trials_per_class=10",
                "effect_scale=2.5"]) == 0
    assert run(["preprocess", f"in={raw}", f"out={pre}"]) == 0
    loaded = eegio.read_epochset(pre)
    assert loaded.n_samples == 1001 and loaded.fs == 250.0

    assert run(["train", f"in={pre}", f"out_dir={train_dir}", "reduced=true",
                "epochs=20", "folds=5", "seed=1", "lr=0.002"]) == 0
    files = sorted(os.listdir(train_dir))
    assert "summary.txt" in files and "run_config.txt" in files
    for fold in range(5):
        assert f"fold{fold}.log" in files and f"fold{fold}.ckpt" in files

    metrics = tmp_path / "metrics.txt"
    assert run(["eval", f"in={pre}", f"checkpoint={train_dir}/fold0.ckpt",
                f"out={metrics}"]) == 0
    text = metrics.read_text()
    assert text.startswith("loss ") and "accuracy" in text

    assert run(["stats", f"in={pre}", f"out_prefix={tmp_path}/alpha",
                "class_a=split+spread_out+fall_in", "class_b=hovering",
                "band=alpha"]) == 0
    for suffix in ("_t.csv", "_mask.csv", "_t.pgm", "_report.txt",
                   "_anova.txt"):
        assert (tmp_path / f"alpha{suffix}").exists(), suffix
    err = capsys.readouterr().err
    assert "significant channels" in err


def test_train_zero_lr_keeps_initial_accuracy(tmp_path):
    raw = tmp_path / "raw.ads3"
    pre = tmp_path / "pre.ads3"
    out = tmp_path / "run"
    run(["synth", f"out={raw}", "seed=3", "trials_per_class=5"])
    run(["preprocess", f"in={raw}", f"out={pre}"])
    assert run(["train", f"in={pre}", f"out_dir={out}", "reduced=true",
                "epochs=2", "folds=2", "lr=0.0", "weight_decay=0.0"]) == 0
    log = (out / "fold0.log").read_text().strip().splitlines()
    rows = [line.split() for line in log if not line.startswith("#")]
    accs = {row[3] for row in rows}
    assert len(accs) <= 2   # batchnorm stats settle; weights never move


def test_stats_custom_band_and_eval_errors(tmp_path, capsys):
    code = run(["stats", f"in={tmp_path}/x.ads3", "out_prefix=p",
                "class_a=split", "class_b=hovering", "band=whatever"])
    err = capsys.readouterr().err
    assert code == 1 and "unknown band" in err


def test_help_lists_known_keys(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for key in ("epochs", "lr", "weight_decay", "reduced", "jobs", "folds"):
        assert key in out
