import json
import subprocess
import sys

import numpy as np
import pytest
from conftest import small_config

from aircomp_fl.cli import main
from aircomp_fl.engine import SCHEMES
from aircomp_fl.harness import (
    CSV_HEADER, HarnessError, Manifest, fmt, ordering_line, read_metrics, run_experiment, summarize,
)

HEADER_LINE = "round,test_acc,train_loss,num_selected,ps,sum_ap,sdp_obj,term_a,term_b,term_c,term_d,A_t,wall_ms"


def write_config(path, **changes):
    path.write_text(json.dumps(small_config(**changes).to_dict()))
    return str(path)


def fake_csv(path, acc):
    rows = [HEADER_LINE]
    for i, a in enumerate(acc, 1):
        rows.append(",".join([str(i), fmt(a)] + ["0"] * 11))
    path.write_text("\n".join(rows) + "\n")
    return path


def test_header_is_exact():
    assert ",".join(CSV_HEADER) == HEADER_LINE


def test_seventeen_digits_round_trip():
    rng = np.random.default_rng(0)
    for x in rng.standard_normal(1000) * 10.0 ** rng.integers(-30, 30, 1000):
        assert float(fmt(x)) == x


def test_run_writes_outputs(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    out = tmp_path / "run"
    code = main(["run", "--config", cfg, "--scheme", "proposed", "--constraint", "individual",
                 "--rounds", "4", "--seed", "7", "--out", str(out)])
    assert code == 0
    text = (out / "metrics_proposed.csv").read_text()
    assert text.splitlines()[0] == HEADER_LINE
    rows = read_metrics(out / "metrics_proposed.csv")
    assert [r["round"] for r in rows] == [1, 2, 3, 4]
    assert all(r["wall_ms"] == 0 for r in rows)
    bounds = json.loads((out / "bounds_proposed.json").read_text())
    assert len(bounds["rounds"]) == 4 and bounds["Lambda"] >= 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "complete" and man["seed"] == 7 and man["finished"] is not None
    assert man["config"]["T"] == 4 and man["config"]["constraint_mode"] == "individual"


def test_identical_invocations_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    for d in ("a", "b"):
        assert main(["run", "--config", cfg, "--rounds", "3", "--scheme", "all", "--out", str(tmp_path / d)]) == 0
    for s in SCHEMES:
        a = (tmp_path / "a" / f"metrics_{s}.csv").read_bytes()
        assert a == (tmp_path / "b" / f"metrics_{s}.csv").read_bytes()
        assert (tmp_path / "a" / f"bounds_{s}.json").read_bytes() == (tmp_path / "b" / f"bounds_{s}.json").read_bytes()


def test_scheme_all_shares_channels(tmp_path, monkeypatch):
    import aircomp_fl.baselines as bl
    import aircomp_fl.engine as en

    seen = {}
    current = {}

    def spy(module):
        orig = module.round_channels

        def wrapped(seed, t, K):
            ch = orig(seed, t, K)
            seen.setdefault(current["s"], []).append((t, ch.gain_up.tobytes(), ch.gain_dl.tobytes()))
            return ch
        monkeypatch.setattr(module, "round_channels", wrapped)

    spy(en)
    spy(bl)
    orig_train = en.run_training

    def tagged(setup, scheme, *a, **k):
        current["s"] = scheme
        return orig_train(setup, scheme, *a, **k)
    import aircomp_fl.harness as hs
    monkeypatch.setattr(hs, "run_training", tagged)

    csvs = run_experiment(small_config(T=3), list(SCHEMES), tmp_path, dump_channels=True)
    assert sorted(csvs) == sorted(SCHEMES) and all(p.exists() for p in csvs.values())
    assert (tmp_path / "channels.csv").exists()
    assert "fedavg-ideal" not in seen
    assert seen["proposed"] == seen["mse-threshold"] == seen["truncated-inversion"]
    assert [t for t, _, _ in seen["proposed"]] == [1, 2, 3]


def test_unknown_scheme_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--scheme", "bogus"])
    assert exc.value.code == 2


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"K": 0}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "error" in capsys.readouterr().err
    bad.write_text("[1, 2]")
    assert main(["validate", "--config", str(bad)]) == 2


def test_validate_ok(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    assert main(["validate", "--config", cfg]) == 0


def test_calibrate_prints_threshold(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json")
    assert main(["calibrate", "--config", cfg, "--draws", "50"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("mse_threshold ") and float(line.split()[1]) > 0


def test_manifest_lifecycle(tmp_path):
    cfg = small_config()
    m = Manifest.start(tmp_path, cfg, ["proposed"], [tmp_path / "x.csv"])
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["status"] == "running" and doc["finished"] is None and doc["started"]
    m.finish()
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["status"] == "complete" and doc["finished"]


def test_failed_run_marks_manifest(tmp_path):
    with pytest.raises(HarnessError):
        run_experiment(small_config(), ["bogus"], tmp_path)
    cfg = small_config(T=2, eta0=10.0, strict_convergence=False)
    with pytest.raises(Exception):
        run_experiment(cfg, ["proposed"], tmp_path)
    assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "failed"


def test_summarize_constant_column(tmp_path):
    p = fake_csv(tmp_path / "metrics_x.csv", [0.9] * 25)
    (row,) = summarize([p])
    assert row["final_acc"] == pytest.approx(0.9, abs=1e-15) and row["scheme"] == "x"


def test_summarize_window(tmp_path):
    acc = [0.0] * 80 + list(np.linspace(0.5, 0.7, 20))
    (row,) = summarize([fake_csv(tmp_path / "metrics_y.csv", acc)])
    assert row["final_acc"] == pytest.approx(0.6, abs=1e-12)


def test_summarize_short_run(tmp_path):
    with pytest.raises(HarnessError):
        summarize([fake_csv(tmp_path / "metrics_z.csv", [0.5] * 19)])


def test_ordering_line(tmp_path):
    s = summarize([fake_csv(tmp_path / "metrics_a.csv", [0.7] * 20), fake_csv(tmp_path / "metrics_b.csv", [0.8] * 20)])
    assert ordering_line(s).startswith("b(0.8000) >= a(0.7000)")


def test_summarize_cli(tmp_path, capsys):
    p = fake_csv(tmp_path / "metrics_a.csv", [0.75] * 20)
    assert main(["summarize", str(p)]) == 0
    assert "0.7500" in capsys.readouterr().out
    assert main(["summarize", str(fake_csv(tmp_path / "metrics_b.csv", [0.1] * 3))]) == 2


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "aircomp_fl", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "summarize" in out.stdout
