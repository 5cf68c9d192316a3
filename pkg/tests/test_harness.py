import numpy as np
import pytest

from backupcbf.errors import ConfigurationError
from backupcbf.harness import GridSpec, ScenarioConfig, parse_config, rasterize_sets, run_scenario
from backupcbf.harness.cli import main
from backupcbf.harness.io import read_raster, read_trajectory_csv, trajectory_csv, write_raster, write_trajectory_csv
from backupcbf.harness.raster import IN_S, IN_SB, IN_SI, IN_SNS
from backupcbf.harness.simulate import COMPLETED, FAILED, compare_controllers
from backupcbf.systems import pendulum as pend
from backupcbf.systems import scalar as scal

SCALAR_INI = """
[scenario]
system = scalar
controller = backup_cbf_qp
initial_state = 0.5
dt = 0.01
t_max = 2   # short run
"""


def scalar_cfg(**kw):
    base = dict(system="scalar", controller="backup_cbf_qp", initial_state=(0.5,), dt=0.01, t_max=2.0)
    base.update(kw)
    return ScenarioConfig(**base)


def test_parse_config_roundtrip():
    cfg = parse_config(SCALAR_INI + "\n[filter]\nT = 2\nN_c = 21\n[system]\nK = 0.5\n")
    assert cfg.system == "scalar" and cfg.initial_state == (0.5,)
    assert cfg.filter_params == {"T": 2.0, "N_c": 21}
    assert cfg.system_params == {"K": 0.5}


@pytest.mark.parametrize(
    "extra",
    [
        "[bogus]\nx = 1\n",
        "[system]\nKK = 0.5\n",
        "[filter]\nTT = 1\n",
        "[output]\nfolder = x\n",
        "[raster]\nzoom = 2\n",
    ],
)
def test_unknown_keys_are_errors(extra):
    with pytest.raises(ConfigurationError):
        parse_config(SCALAR_INI + extra)


@pytest.mark.parametrize(
    "text",
    [
        "[scenario]\nsystem = rocket\ncontroller = desired\ninitial_state = 0\n",
        "[scenario]\nsystem = scalar\ncontroller = magic\ninitial_state = 0\n",
        "[scenario]\nsystem = scalar\ncontroller = desired\ninitial_state = 0\ndt = 0\n",
        "[scenario]\nsystem = scalar\ncontroller = desired\ninitial_state = 0\nt_max = -1\n",
        "[scenario]\nsystem = scalar\ncontroller = desired\n",
        "[scenario]\nsystem = scalar\ncontroller = desired\ninitial_state = a,b\n",
        "no sections at all",
    ],
)
def test_invalid_configs(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_backup_direct_equilibrium():
    log = run_scenario(scalar_cfg(controller="backup_direct", initial_state=(0.0,)))
    assert log.status == COMPLETED
    assert np.all(log.column("x") == 0.0)


def test_rows_are_time_monotone_and_inputs_in_box():
    log = run_scenario(scalar_cfg())
    t = log.column("t")
    assert np.all(np.diff(t) > 0)
    u = log.column("u")[:-1]
    assert np.all((u >= -0.5) & (u <= 0.75))
    assert np.isnan(log.column("u")[-1])
    assert log.summary["min_h"] >= 0


def test_csv_is_deterministic_and_roundtrips(tmp_path):
    a = trajectory_csv(run_scenario(scalar_cfg()))
    b = trajectory_csv(run_scenario(scalar_cfg()))
    assert a == b
    assert a.splitlines()[0] == "# schema: backupcbf-trajectory/1"
    log = run_scenario(scalar_cfg())
    path = write_trajectory_csv(log, tmp_path / "x.csv")
    cols, data, st = read_trajectory_csv(path)
    assert cols == log.columns
    np.testing.assert_array_equal(data, log.data)
    assert st == log.qp_status
    assert not list(tmp_path.glob(".*tmp"))


def test_compare_duplicate_controllers_identical():
    rep = compare_controllers(scalar_cfg(t_max=1.0), ["backup_cbf_qp", "backup_cbf_qp"])
    a, b = rep.logs.values()
    assert trajectory_csv(a) == trajectory_csv(b)
    assert list(rep.logs) == ["backup_cbf_qp", "backup_cbf_qp#2"]


def test_filter_error_ends_run_with_partial_log():
    # from x = 1.5 the backup flow diverges: the filter raises and the run is marked failed
    log = run_scenario(scalar_cfg(initial_state=(1.5,), filter_params={"N_c": 400}))
    assert log.status == FAILED and "diverged" in log.message
    assert log.meta["error_kind"] == "run"


def test_raster_labels_scalar_ns_roots():
    pair, cf = scal.scalar_backup_pair(), scal.scalar_constraint()
    grid = GridSpec(x_range=(-1.5, 1.5), nx=3001, dims=(0,))
    res = rasterize_sets(cf, pair, grid, [0.0], d_theta=0.1)
    ns = (res.flags[0.0][0] & IN_SNS) > 0
    xs = grid.xs
    for target in (0.5, -0.75):  # x^3 + 0.5 x = -u_bound
        r = np.roots([1.0, 0.0, 0.5, -target])
        root = float(np.real(r[np.abs(r.imag) < 1e-12][0]))
        i = np.searchsorted(xs, root)
        assert ns[i - 1] != ns[i]
        assert xs[i - 1] < root <= xs[i]
    assert ns.sum() > 0


def test_raster_nesting_and_prefix_consistency():
    p = pend.PendulumParams.preset("k1_k1")
    pair, cf = pend.pendulum_backup_pair(p), pend.pendulum_constraint(p)
    grid = GridSpec(x_range=(-np.pi / 2, np.pi / 2), nx=31, y_range=(-1.5, 1.5), ny=31)
    res = rasterize_sets(cf, pair, grid, [1.0, 3.0], d_theta=0.1)
    f1, f3 = res.flags[1.0], res.flags[3.0]
    si1, si3 = (f1 & IN_SI) > 0, (f3 & IN_SI) > 0
    assert np.all(si3[si1])  # a longer horizon never loses a cell
    assert np.all((f3 & IN_S)[si3])
    assert f3[15, 15] & IN_SB  # grid center is the pair center
    assert np.array_equal(f1 & (0xFF ^ IN_SI), f3 & (0xFF ^ IN_SI))
    with pytest.raises(ConfigurationError):
        rasterize_sets(cf, pair, grid, [0.15], d_theta=0.1)


def test_raster_file_roundtrip(tmp_path):
    pair, cf = scal.scalar_backup_pair(), scal.scalar_constraint()
    grid = GridSpec(x_range=(-1.0, 1.0), nx=21, dims=(0,))
    res = rasterize_sets(cf, pair, grid, [1.0], d_theta=0.1)
    header, flags = read_raster(write_raster(res, 1.0, tmp_path / "r.bin"))
    assert header["nx"] == 21 and header["ny"] == 1 and header["horizon"] == 1.0
    np.testing.assert_array_equal(flags, res.flags[1.0])


def _write(tmp_path, text):
    p = tmp_path / "s.ini"
    p.write_text(text)
    return str(p)


def test_cli_run_and_exit_codes(tmp_path, capsys):
    cfg = _write(tmp_path, SCALAR_INI)
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "s_backup_cbf_qp.csv").exists()
    assert main(["run", _write(tmp_path, SCALAR_INI + "[bad]\n"), "--out", str(tmp_path)]) == 2
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    unsafe = SCALAR_INI.replace("backup_cbf_qp", "desired") + "desired = select_high\nrequire_safe = yes\n"
    unsafe = unsafe.replace("t_max = 2   # short run", "t_max = 5")
    assert main(["run", _write(tmp_path, unsafe), "--out", str(tmp_path / "o")]) == 3


def test_cli_compare_raster_verify(tmp_path, capsys):
    cfg = _write(tmp_path, SCALAR_INI)
    out = str(tmp_path / "o")
    assert main(["compare", cfg, "--controllers", "desired,backup_cbf_qp", "--out", out]) == 0
    assert "safe_controllers" in capsys.readouterr().out
    assert main(["compare", cfg, "--controllers", "warp", "--out", out]) == 2
    assert main(["raster", cfg, "--grid", "41x1", "--horizon", "1,2", "--out", out, "--seed", "3"]) == 0
    assert (tmp_path / "o" / "s_raster_T2.bin").exists()
    assert main(["raster", cfg, "--grid", "41by1", "--horizon", "1", "--out", out]) == 2
    assert main(["verify-pair", cfg, "--out", out]) == 0
    text = (tmp_path / "o" / "s_verify.txt").read_text()
    assert "valid: yes" in text


def test_csv_inputs_within_box(tmp_path):
    log = run_scenario(scalar_cfg(controller="cbf_qp_saturated", initial_state=(0.8,), desired="select_high"))
    cols, data, _ = read_trajectory_csv(write_trajectory_csv(log, tmp_path / "a.csv"))
    u = data[:, cols.index("u")]
    u = u[~np.isnan(u)]
    assert np.all((u >= -0.5) & (u <= 0.75))
