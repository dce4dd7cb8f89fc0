import filecmp

import pytest

from chargescope.cli import main
from chargescope.nn.model import ShapeError
from chargescope.runner import ConfigError, load_settings, run_experiment

TINY = """
[experiment]
scenario = {scenario}
classifier = {classifier}
[sim]
classes = 3
traces_per_class = 6
duration_s = 2.0
fs = 120
[preprocess]
overlap = 0.5
[model]
conv_filters = 3,3
kernel = 3
lstm_units = 3
dense_units = 4
[train]
max_epochs = 2
[forest]
n_trees = 5
[scenario]
durations = 1.5,2
socs = 0.5,1.0
lowpass_hz = 40
"""


def write(tmp_path, scenario="attack", classifier="cnn", extra=""):
    p = tmp_path / f"{scenario}_{classifier}.ini"
    p.write_text(TINY.format(scenario=scenario, classifier=classifier) + extra)
    return p


def test_desk_and_full_defaults():
    s = load_settings(text="")
    assert (s.sim.classes, s.sim.traces_per_class, s.sim.duration_s, s.sim.fs) == (20, 20, 2.5, 500)
    assert s.overlap == 0.90 and s.model.conv_filters == (128, 192, 300)
    full = load_settings(text="", full=True)
    assert (full.sim.traces_per_class, full.sim.fs, full.overlap) == (50, 700, 0.975)


def test_unknown_keys_are_listed():
    with pytest.raises(ConfigError) as err:
        load_settings(text="[sim]\nclases = 3\nfoo = 1\n[bogus]\nx = 1\n")
    msg = str(err.value)
    assert "clases" in msg and "foo" in msg and "[bogus]" in msg


def test_bad_values():
    with pytest.raises(ConfigError):
        load_settings(text="[experiment]\nscenario = nope\n")
    with pytest.raises(ConfigError):
        load_settings(text="[sim]\ndevice = nokia\n")
    with pytest.raises(ConfigError):
        load_settings(text="[sim]\nclasses = many\n")


def test_shape_error_names_layer():
    with pytest.raises(ShapeError) as err:
        load_settings(text="[sim]\nfs = 36\n")
    assert err.value.layer.startswith(("conv", "pool"))


def test_custom_device_section():
    s = load_settings(text="[sim]\ndevice = lab\nchannel = wired\n[device.lab]\nbase = pixel4\ngain = 2.5\nwireless_ramp = none\n"
                           "[scenario]\n")
    assert s.sim.device.gain == 2.5 and s.sim.device.smoothing_ms == 45.0
    assert s.sim.device.wireless_ramp is None
    with pytest.raises(ConfigError):
        load_settings(text="[device.lab]\ncolour = red\n")


def test_overrides_and_charge_cap():
    s = load_settings(text="", seed=42, charge_cap=0.8, lowpass_hz=60)
    assert s.seed == 42 and s.sim.signature_seed == 42 and s.train.seed == 42
    assert s.sim.soc == 0.8 and s.lowpass_hz == 60.0
    assert "seed = 42" in s.runinfo()


def test_attack_artifacts_and_determinism(tmp_path):
    cfg = write(tmp_path)
    reports = run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    report = reports["attack"]
    assert report.rank2_acc >= report.rank1_acc
    for name in ("runinfo.txt", "summary.txt", "data/main/manifest.csv", "attack/model.ckpt", "attack/report.csv",
                 "attack/confusion.csv", "attack/summary.txt", "attack/history.csv"):
        assert (tmp_path / "a" / name).is_file()
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
    for sub in ("attack", "data/main"):
        _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / sub, tmp_path / "b" / sub,
                                               [p.name for p in (tmp_path / "a" / sub).iterdir()], shallow=False)
        assert not mismatch and not errors


@pytest.mark.parametrize("scenario, runs", [
    ("device_compare", {"iphone11_wireless", "iphone11_wired", "pixel4_wireless", "pixel4_wired"}),
    ("cross_device", {"iphone11_to_iphone11", "iphone11_to_pixel4", "pixel4_to_pixel4", "pixel4_to_iphone11"}),
    ("cross_charger", {"wireless_to_wireless", "wireless_to_wired", "wired_to_wired", "wired_to_wireless"}),
    ("noise", {"noise_low", "noise_high"}),
    ("duration_sweep", {"duration_1.5", "duration_2"}),
    ("aging", {"drift_0", "drift_0.8"}),
    ("soc_sweep", {"soc_0.5", "soc_1"}),
    ("countermeasure", {"baseline", "lowpass_40", "charge_cap_0.8"}),
])
def test_scenarios_forest(tmp_path, scenario, runs):
    reports = run_experiment(write(tmp_path, scenario, "forest"), tmp_path / "out")
    assert set(reports) == runs
    summary = (tmp_path / "out" / "summary.txt").read_text()
    assert all(name in summary for name in runs)


def test_cli_pipeline(tmp_path, capsys):
    cfg = write(tmp_path)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    manifest = tmp_path / "data" / "manifest.csv"
    assert main(["train", "--config", str(cfg), "--data", str(manifest), "--out", str(tmp_path / "model")]) == 0
    assert main(["evaluate", "--model", str(tmp_path / "model"), "--data", str(manifest), "--test-split",
                 "--out", str(tmp_path / "eval")]) == 0
    assert "rank1" in capsys.readouterr().out
    assert (tmp_path / "eval" / "summary.txt").read_text().startswith("traces 3")
    assert main(["attack", "--config", str(cfg), "--out", str(tmp_path / "atk"), "--countermeasure", "lowpass:40",
                 "--charge-cap", "0.9"]) == 0
    assert "lowpass_hz = 40.0" in (tmp_path / "atk" / "runinfo.txt").read_text()


def test_cli_ingest(tmp_path):
    raw = tmp_path / "raw.csv"
    raw.write_text("t,ma\n" + "".join(f"{i},{10 + i % 3}\n" for i in range(50)))
    assert main(["ingest", str(raw), "--out", str(tmp_path / "set"), "--fs", "25", "--label", "1",
                 "--classes", "3"]) == 0
    lines = (tmp_path / "set" / "manifest.csv").read_text().splitlines()
    assert len(lines) == 2 and ",1,unknown,wireless,25," in lines[1]


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[sim]\nnope = 1\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "nope" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["attack", "--out", "x", "--countermeasure", "highpass:3"])


def test_cli_gradcheck(capsys):
    assert main(["gradcheck", "--configs", "2"]) == 0
    assert "PASS" in capsys.readouterr().out
