import csv
import json
import re
from dataclasses import replace

import numpy as np
import pytest

from stochflock.cli import main
from stochflock.ensemble import CHUNK, Moments, run_ensemble
from stochflock.errors import ConfigError, EmptyEnsemble, IoError
from stochflock.kernels import PowerLaw
from stochflock.report import emit_report, stats_from_json, stats_to_json
from stochflock.scenarios import (
    builtin_scenarios,
    get_scenario,
    load_scenario,
    parse_scenario,
    serialize_scenario,
)


def _small(name="S2", paths=40, **kw):
    sc = get_scenario(name)
    return replace(sc, n_paths=paths, horizon=kw.pop("horizon", 0.4),
                   output_step=kw.pop("output_step", 0.05), **kw)


# scenarios


def test_builtin_suite():
    suite = builtin_scenarios()
    assert len(suite) == 8
    names = [sc.name for sc in suite]
    assert names[0] == "S1-exp-flock" and names[-1] == "S8-dufresne"
    assert get_scenario("S4-collision-avoid").cfg.kernel == PowerLaw(1.5)
    s7 = get_scenario("S7-appendixA")
    assert (s7.cfg.n, s7.cfg.d) == (2, 1)
    assert get_scenario("S3") is not None
    with pytest.raises(ConfigError):
        get_scenario("S9")


def test_serialize_round_trip_is_idempotent():
    for sc in builtin_scenarios():
        text = serialize_scenario(sc)
        again = parse_scenario(text)
        assert again == sc
        assert serialize_scenario(again) == text


def test_unknown_keys_are_errors():
    text = serialize_scenario(get_scenario("S2"))
    with pytest.raises(ConfigError):
        parse_scenario(text.replace("[system]", "[system]\ncolour = blue"))
    with pytest.raises(ConfigError):
        parse_scenario(text + "\n[extra]\nkey = 1\n")
    with pytest.raises(ConfigError):
        parse_scenario(text.replace("kernel = power:1.2", "kernel = cubic:2"))


def test_load_scenario_from_file(tmp_path):
    sc = replace(get_scenario("S2"), name="custom", n_paths=12, master_seed=5)
    path = tmp_path / "custom.ini"
    path.write_text(serialize_scenario(sc), encoding="utf-8")
    assert load_scenario(str(path)) == sc
    assert load_scenario("S2-comparison") == get_scenario("S2")
    with pytest.raises(ConfigError):
        load_scenario(str(tmp_path / "missing.ini"))


def test_with_overrides():
    sc = get_scenario("S1").with_overrides(paths=10, seed=3)
    assert (sc.n_paths, sc.master_seed) == (10, 3)


# ensemble


def test_empty_ensemble():
    with pytest.raises(EmptyEnsemble):
        run_ensemble(replace(get_scenario("S2"), n_paths=0))


def test_single_path_worker_independence():
    sc = _small(paths=1)
    a, _ = run_ensemble(sc, workers=1)
    b, _ = run_ensemble(sc, workers=4)
    assert a == b


def test_multi_chunk_worker_independence():
    sc = _small(paths=2 * CHUNK + 17)
    a, ma = run_ensemble(sc, workers=1)
    b, mb = run_ensemble(sc, workers=3)
    assert a == b
    assert stats_to_json(a) == stats_to_json(b)
    assert (ma.workers, mb.workers) == (1, 3)


def test_adding_paths_keeps_existing_ones():
    from stochflock.ensemble import run_paths

    sc = _small(paths=10)
    first = run_paths(sc, 0, 5)
    more = run_paths(replace(sc, n_paths=50), 0, 5)
    assert all(np.array_equal(a.vnorm, b.vnorm) for a, b in zip(first, more))


def test_moments_merge_matches_direct():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(101, 4))
    merged = Moments.of(x[:30], 4).merge(Moments.of(x[30:], 4))
    assert np.allclose(merged.mean, x.mean(axis=0), atol=1e-14)
    assert np.allclose(merged.m2, ((x - x.mean(axis=0)) ** 2).sum(axis=0), atol=1e-12)


def test_manifest_carries_criteria():
    stats, manifest = run_ensemble(_small(paths=30))
    names = [c["name"] for c in manifest.criteria]
    assert "S2-comparison conservation" in names
    assert manifest.to_dict()["scenario"] == stats.scenario


def test_event_and_appendix_passes_run():
    stats, _ = run_ensemble(_small("S7", paths=20, horizon=0.5, output_step=0.05))
    assert stats.extras["appendix_a"]["count"] == 20
    stats, _ = run_ensemble(_small("S5", paths=20, horizon=1.0, output_step=0.1))
    assert stats.cond_count + stats.indeterminate <= 20
    assert stats.event_frequency is not None


# report


def test_report_formats(tmp_path):
    sc = _small(p_list=(2.0, 4.0, float("inf")))
    stats, manifest = run_ensemble(sc)
    written = emit_report(stats, manifest, tmp_path)
    assert {p.name for p in written} == {"stats.csv", "stats.json", "manifest.json",
                                         "mean_vnorm.svg", "mean_xnorm.svg"}
    assert stats_from_json((tmp_path / "stats.json").read_text()) == stats
    for name in ("mean_vnorm.svg", "mean_xnorm.svg"):
        svg = (tmp_path / name).read_text()
        assert len(re.findall(r"<polyline", svg)) == 3
        assert "<script" not in svg
    with (tmp_path / "stats.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == len(stats.grid) + 1
    header = rows[0]
    assert header[0] == "t" and "master_seed" in header and "scenario_config" in header
    cfg_text = json.loads(rows[1][header.index("scenario_config")])
    assert parse_scenario(cfg_text) == sc


def test_fit_overlay_is_dashed(tmp_path):
    sc = _small("S1", paths=20, horizon=1.0, output_step=0.05)
    sc = replace(sc, analysis=replace(sc.analysis, fit_window=None))
    stats, manifest = run_ensemble(sc)
    assert "mean_vnorm" in stats.fits
    emit_report(stats, manifest, tmp_path, ["svg"])
    svg = (tmp_path / "mean_vnorm.svg").read_text()
    assert "stroke-dasharray" in svg


def test_report_identical_for_identical_inputs(tmp_path):
    sc = _small(paths=25)
    for sub in ("a", "b"):
        stats, manifest = run_ensemble(sc)
        emit_report(stats, manifest, tmp_path / sub, ["csv", "json", "svg"])
    for name in ("stats.csv", "stats.json", "mean_vnorm.svg", "mean_xnorm.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_report_errors(tmp_path):
    stats, manifest = run_ensemble(_small(paths=5))
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(IoError):
        emit_report(stats, manifest, blocker / "sub")
    with pytest.raises(ConfigError):
        emit_report(stats, manifest, tmp_path, ["pdf"])


# command line


def test_cli_list(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    assert out.count("S") >= 8 and "S8-dufresne" in out


def test_cli_simulate(tmp_path, capsys):
    sc = _small(paths=6)
    cfg = tmp_path / "sc.ini"
    cfg.write_text(serialize_scenario(sc), encoding="utf-8")
    out = tmp_path / "out"
    code = main(["simulate", "--scenario", str(cfg), "--paths", "4", "--seed", "9",
                 "--out", str(out), "--dump-paths", "--format", "csv,json"])
    assert code == 0
    assert sorted(p.name for p in (out / "paths").iterdir())[0] == "path_000000.csv"
    with (out / "paths" / "path_000003.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "min_dist", "xnorm_p2", "vnorm_p2", "M_t", "qv_t"]
    assert len(rows) == len(sc.output_grid) + 1
    stats = stats_from_json((out / "stats.json").read_text())
    assert stats.n_paths == 4 and stats.master_seed == 9
    assert not (out / "mean_vnorm.svg").exists()


def test_cli_errors(tmp_path, capsys):
    assert main(["simulate", "--scenario", "nope", "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["simulate", "--scenario", "S2", "--out", str(tmp_path), "--format", "pdf"])
    assert main(["check", "--only", "S42"]) == 2


def test_cli_check_subset(capsys):
    assert main(["check", "--only", "properties"]) == 0
    out = capsys.readouterr().out
    assert "PASS  determinism across workers" in out
