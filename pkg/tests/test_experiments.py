import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdpolymer.experiments import cli, runs
from sdpolymer.experiments.config import ConfigError, ExperimentConfig, format_config, load_config, parse_config
from sdpolymer.experiments.io import RunManifest, read_csv, write_csv
from sdpolymer.experiments.runs import (
    NumericalFailure,
    PreconditionWarning,
    SkeletonBoxes,
    beta_sweep,
    coarse_grain_observables,
    delta_L,
    estimate_masses,
    fractional_moment_certificate,
    g3_statistic,
    localization_scan,
    oracle_report,
    renewal_analysis,
    single_solve,
    sum_v_squared,
    sweep_precondition,
    v_kernel,
)
from sdpolymer.model import DisorderSpec, phi_uncentered

SMALL = dict(workers=1, replicas=12, L_list=list(range(4, 9)))


# ---------------------------------------------------------------------------
# configuration


def test_parse_config_types_ranges_and_comments():
    cfg = parse_config("# comment\nd = 1\nlam = 0.7  # per step\nL_list = 2..4, 8\nK2 = 1, 2.5\n")
    assert cfg.d == 1 and cfg.lam == 0.7 and cfg.L_list == [2, 3, 4, 8] and cfg.K2 == [1.0, 2.5]
    assert cfg.beta == ExperimentConfig().beta


@pytest.mark.parametrize("text,line,fragment", [
    ("d = 2\nlam = -1\n", 2, "lam"),
    ("d = 2\nbogus = 3\n", 2, "unknown key"),
    ("d = 2\nd = 3\n", 2, "duplicate"),
    ("gamma = 1.5\n", 1, "gamma"),
    ("lam 0.5\n", 1, "key = value"),
    ("L_list = 5..2\n", 1, "L_list"),
    ("replicas = many\n", 1, "replicas"),
])
def test_parse_config_errors_name_the_line(text, line, fragment):
    with pytest.raises(ConfigError) as e:
        parse_config(text, "c.cfg")
    assert e.value.line == line
    assert f"c.cfg:{line}:" in str(e.value) and fragment in str(e.value)


def test_overrides_and_point_mass_validation(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("beta = 1\n")
    assert load_config(p, ["beta=0"]).beta == 0.0
    with pytest.raises(ConfigError):
        parse_config("law = point_masses\nvalues = 0, 1\nprobs = 0.5, 0.6\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
    with pytest.raises(ConfigError):
        parse_config("", overrides=["nonsense"])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.floats(0.01, 5.0), st.floats(0.0, 10.0), st.floats(0.01, 0.99),
       st.lists(st.integers(1, 40), min_size=1, max_size=6), st.integers(0, 2**64 - 1))
def test_config_round_trip(d, lam, beta, gamma, Ls, seed):
    cfg = ExperimentConfig(d=d, lam=lam, beta=beta, gamma=gamma, L_list=Ls, seed=seed)
    back = parse_config(format_config(cfg))
    assert back == cfg and back.digest() == cfg.digest()


def test_digest_ignores_output_location():
    a = ExperimentConfig(output_dir="x", workers=3)
    assert a.digest() == ExperimentConfig(output_dir="y").digest()
    assert a.digest() != ExperimentConfig(seed=1).digest()


# ---------------------------------------------------------------------------
# output files


def test_csv_round_trip_and_manifest(tmp_path):
    rows = [{"L": 1, "estimate": 0.1 + 0.2, "stderr": 1e-300, "replicas": 5}, {"L": 2, "estimate": 1.5, "stderr": 0.0, "replicas": 5}]
    cols = ("L", "estimate", "stderr", "replicas")
    p = tmp_path / "s.csv"
    write_csv(p, cols, rows, "abc")
    rid, got_cols, got = read_csv(p)
    assert rid == "abc" and got_cols == list(cols) and got == rows
    m = RunManifest("masses", "h", 1, [0, 1])
    m.record(p)
    m.write(tmp_path / "manifest.json")
    assert RunManifest.verify(tmp_path / "manifest.json")
    p.write_text(p.read_text() + "3,1,1,1\n")
    assert not RunManifest.verify(tmp_path / "manifest.json")


# ---------------------------------------------------------------------------
# operations


def test_masses_beta_zero_gap_vanishes():
    res = estimate_masses(ExperimentConfig(d=2, beta=0.0, **SMALL))
    s = res.summary
    assert abs(s["gap"]) <= 3 * s["gap_ci"] + 1e-12
    assert s["beta_star"] == pytest.approx(s["alpha_star"], abs=1e-9)


def test_masses_d1_strong_disorder_and_schema():
    res = estimate_masses(ExperimentConfig(d=1, beta=1.0, workers=1, replicas=60, L_list=list(range(4, 17))))
    assert res.summary["gap"] > 0 and res.summary["jensen_ok"]
    cols, rows = res.tables["quenched"]
    assert cols == ("L", "estimate", "stderr", "replicas") and len(rows) == 13


def test_replica_failures_tolerated_then_fatal(monkeypatch):
    real = runs.sample_field

    def flaky(spec, region, seed, r, *a, **k):
        if r in bad:
            raise FloatingPointError("injected")
        return real(spec, region, seed, r, *a, **k)

    monkeypatch.setattr(runs, "sample_field", flaky)
    bad = {3}
    res = estimate_masses(ExperimentConfig(d=1, **SMALL))
    assert res.failures == [3] and 3 not in res.replica_ids
    bad = {0, 1}
    with pytest.raises(NumericalFailure):
        estimate_masses(ExperimentConfig(d=1, **SMALL))


def test_fractional_certificate_beta_zero_and_normalizations():
    for d in (1, 2):
        res = fractional_moment_certificate(ExperimentConfig(d=d, beta=0.0, L=3, N=2, workers=1, replicas=8))
        assert abs(res.summary["c"]) < 3 * res.summary["ci_halfwidth"]
    res = fractional_moment_certificate(ExperimentConfig(d=1, beta=1.0, L=4, N=2, workers=1, replicas=30,
                                                         normalization="slope_fit"))
    assert res.summary["normalization"] == "slope_fit"
    assert res.summary["c"] == pytest.approx(res.summary["c_slope_fit"])


def test_localization_scan_d1_single_endpoint():
    res = localization_scan(ExperimentConfig(d=1, L_list=[2, 4], workers=1, replicas=4))
    assert all(r["max_atom_median"] == 1.0 for r in res.tables["localization"][1])


def test_sweep_precondition_and_table():
    ok, _ = sweep_precondition(DisorderSpec.bernoulli(0.6, 1.0), 2)
    assert ok
    assert not sweep_precondition(DisorderSpec.bernoulli(0.4, 1.0), 2)[0]
    assert not sweep_precondition(DisorderSpec.exponential(1.0), 2)[0]
    cfg = ExperimentConfig(d=2, p=0.4, beta_grid=[1.0, 2.0], **SMALL)
    with pytest.warns(PreconditionWarning):
        res = beta_sweep(cfg)
    cols, rows = res.tables["sweep"]
    assert cols[:4] == ("beta", "alpha_star", "beta_star", "phi_beta")
    assert rows[0]["phi_beta"] == pytest.approx(phi_uncentered(1.0, cfg.spec()))


def test_phi_over_beta_decreasing_for_essinf_zero():
    spec = DisorderSpec.bernoulli(0.5, 1.0)
    r = [phi_uncentered(b, spec) / b for b in (1.0, 10.0, 100.0)]
    assert r[0] > r[1] > r[2]


def test_skeleton_boxes():
    box = SkeletonBoxes(2, 64, 1.0, 4.0)
    assert box.j0_radius() == 31 and box.j0_size() == 64 * 63
    assert delta_L(64) ** 2 * box.j0_size() == pytest.approx(4032 / 512)
    lv, trans = box.block((0, 0))
    assert lv == range(0, 64) and trans[0] == range(-31, 32)
    lvl, land = box.landing_box((2, 1))
    assert lvl == 128 and land[0] == range(8, 16)


def test_delta_sign_and_scale():
    assert delta_L(16) == pytest.approx(-0.125)


@pytest.mark.parametrize("d,L,r", [(2, 5, 2), (3, 4, 1)])
def test_v_kernel_sums_match_brute_force(d, L, r):
    C4 = 1.3
    K = v_kernel(d, L, C4, r)
    perp = list(itertools.product(range(-r, r + 1), repeat=d - 1))
    sites = [(h,) + t for h in range(L) for t in perp]

    def V(y, z):
        if y == z:
            return 0.0
        a = abs(y[0] - z[0])
        dp = math.sqrt(sum((u - v) ** 2 for u, v in zip(y[1:], z[1:])))
        return (dp < C4 * math.sqrt(a)) / (a + 1) / (L * math.sqrt(math.log(L)))

    brute2 = math.fsum(V(y, z) ** 2 for y in sites for z in sites)
    assert sum_v_squared(d, L, C4, r) == pytest.approx(brute2, rel=1e-12)
    w = np.random.default_rng(0).normal(size=(L,) + (2 * r + 1,) * (d - 1))
    wv = {s: w[(s[0],) + tuple(t + r for t in s[1:])] for s in sites}
    brute3 = math.fsum(V(y, z) * wv[y] * wv[z] for y in sites for z in sites)
    assert g3_statistic(w, K) == pytest.approx(brute3, rel=1e-9, abs=1e-12)


def test_coarse_observables():
    res = coarse_grain_observables(ExperimentConfig(d=2, L=16, replicas=400, workers=1))
    s = res.summary
    assert abs(s["mean_G2"]) <= 3 * s["mean_G2_ci"]
    assert s["bounds_respected"]
    res3 = coarse_grain_observables(ExperimentConfig(d=3, L=4, replicas=20, workers=1))
    assert res3.summary["C_fit"] > 0
    with pytest.raises(ValueError):
        coarse_grain_observables(ExperimentConfig(d=1))


def test_renewal_and_solve_operations():
    res = renewal_analysis(ExperimentConfig(d=1, L_max=12, n_blocks=20_000, L_cut=6))
    assert res.summary["provenance"] == "oracle" and res.summary["residual"] < 1e-4
    assert 0.8 <= res.summary["renewal_product"] <= 1.2
    one = single_solve(ExperimentConfig(d=2, L=4, W=6))
    assert 0 < one.summary["max_atom"] <= 1
    assert one.summary["tilted_bridge"] == pytest.approx(one.summary["total"] * math.exp(ExperimentConfig(d=2).params().kappa * 4))


def test_oracle_report_fields():
    rep = oracle_report(1, 2, 30)
    assert rep["quenched_bridge_tilted"] == pytest.approx(rep["quenched_bridge"] * math.exp(
        ExperimentConfig(d=1, p=0.5).params().kappa * 2))
    assert rep["truncation_bound"] > 0


# ---------------------------------------------------------------------------
# command line


def test_cli_masses_writes_outputs_and_is_deterministic(tmp_path, capsys):
    cfgp = tmp_path / "c.cfg"
    cfgp.write_text(f"d = 2\nreplicas = 10\nL_list = 4..8\nworkers = 1\noutput_dir = {tmp_path / 'out'}\n")
    assert cli.main(["masses", "--config", str(cfgp), "--set", "beta=0"]) == 0
    summary = json.loads((tmp_path / "out/masses/summary.json").read_text())
    assert abs(summary["summary"]["gap"]) <= 3 * summary["summary"]["gap_ci"] + 1e-12
    manifest = tmp_path / "out/masses/manifest.json"
    assert RunManifest.verify(manifest)
    first = (tmp_path / "out/masses/quenched.csv").read_bytes()
    assert cli.main(["masses", "--config", str(cfgp), "--set", "beta=0"]) == 0
    assert (tmp_path / "out/masses/quenched.csv").read_bytes() == first
    rid, _, _ = read_csv(tmp_path / "out/masses/quenched.csv")
    assert rid == json.loads(manifest.read_text())["run_id"]


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    bad = tmp_path / "bad.cfg"
    bad.write_text("d = 2\nlam = oops\n")
    assert cli.main(["masses", "--config", str(bad)]) == 2
    assert "bad.cfg:2:" in capsys.readouterr().err
    assert cli.main(["frobnicate"]) == 2
    assert cli.main([]) == 2
    assert cli.main(["coarse", "--set", "d=1"]) == 2

    def boom(*a, **k):
        raise FloatingPointError("injected")

    monkeypatch.setattr(runs, "sample_field", boom)
    assert cli.main(["masses", "--set", "workers=1", "--set", "replicas=4", "--set",
                     f"output_dir={tmp_path}"]) == 3


def test_cli_oracle_prints_values(capsys):
    assert cli.main(["oracle", "--d", "1", "--L", "2", "--nmax", "30"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["N_max"] == 30 and out["truncation_bound"] == pytest.approx(math.exp(-0.5 * 31) / (1 - math.exp(-0.5)))
    assert cli.main(["oracle", "--d", "0", "--L", "2"]) == 2
