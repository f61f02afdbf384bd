import csv

import pytest

from pivotrl import cli, plotting


@pytest.fixture
def tiny_ini(tiny_config, tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(tiny_config.to_ini())
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_train_eval_sweep_plot(tiny_ini, tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", str(tiny_ini), "--out", str(out)]) == 0
    assert len(_rows(out / "curve.csv")) == 2
    ckpt = str(out / "policy_best.ckpt")

    assert cli.main(["eval", "--config", str(tiny_ini), "--checkpoint", ckpt, "--trials", "3",
                     "--out", str(out)]) == 0
    (summary,) = _rows(out / "eval_summary.csv")
    assert summary["n_trials"] == "3"

    assert cli.main(["sweep", "--config", str(tiny_ini), "--checkpoint", ckpt, "--multipliers", "1", "2.5",
                     "--trials", "2", "--out", str(out)]) == 0
    assert len(_rows(out / "sweep.csv")) == 2

    for name in ("curve", "eval_traces", "sweep"):
        png = out / f"{name}.png"
        assert cli.main(["plot", "--csv", str(out / f"{name}.csv"), "--out", str(png)]) == 0
        assert png.stat().st_size > 0
        assert _rows(out / f"{name}_summary.csv")
    assert "success rate" in capsys.readouterr().out


def test_seed_flag_overrides_config(tiny_ini, tmp_path):
    assert cli.main(["train", "--config", str(tiny_ini), "--seed", "5", "--iterations", "1",
                     "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "curve.csv")
    assert len(rows) == 1 and rows[0]["seed"] == "5"


def test_bad_config_reports_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[experiment]\nbogus = 1\n")
    assert cli.main(["train", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_corrupt_checkpoint_reports_error(tmp_path, capsys):
    ckpt = tmp_path / "x.ckpt"
    ckpt.write_bytes(b"garbage")
    assert cli.main(["eval", "--checkpoint", str(ckpt), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_value_checkpoint_is_not_a_policy(tiny_ini, tmp_path, capsys):
    assert cli.main(["train", "--config", str(tiny_ini), "--iterations", "1", "--out", str(tmp_path)]) == 0
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "value_last.ckpt"), "--out", str(tmp_path)]) == 2


def test_plot_transfer_csv_to_summary_only(tmp_path):
    src = tmp_path / "transfer.csv"
    src.write_text("policy,trained_idealized,eval_env,n_trials,successes,success_rate,config_hash,seed\n"
                   "A,True,idealized,10,9,0.9,abc,0\nA,True,real_proxy,10,4,0.4,abc,0\n"
                   "B,False,idealized,10,8,0.8,abc,0\nB,False,real_proxy,10,8,0.8,abc,0\n")
    out = tmp_path / "t.csv"
    assert plotting.render(src, out) == [out]
    assert len(_rows(out)) == 4


def test_plot_rejects_unknown_csv(tmp_path):
    src = tmp_path / "x.csv"
    src.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        plotting.render(src, tmp_path / "x.png")
    assert cli.main(["plot", "--csv", str(src), "--out", str(tmp_path / "x.png")]) == 2


def test_distance_summary_statistics(tmp_path):
    src = tmp_path / "eval_traces.csv"
    src.write_text("trial,step,time,abs_angle_error,config_hash,seed\n"
                   "0,0,0.0,1.0,h,0\n1,0,0.0,3.0,h,0\n0,1,0.05,0.0,h,0\n1,1,0.05,2.0,h,0\n")
    plotting.render(src, tmp_path / "d.csv")
    rows = _rows(tmp_path / "d.csv")
    assert [float(r["mean_abs_error"]) for r in rows] == [2.0, 1.0]
    assert [float(r["std_abs_error"]) for r in rows] == [1.0, 1.0]
