import csv
import json
from pathlib import Path

import numpy as np
import pytest

from densgroup.cli import (
    EXIT_INGESTION,
    EXIT_OK,
    EXIT_VALIDATION,
    OUTPUT_ENV,
    ingest,
    main,
    read_config_file,
)
from densgroup.clustering import Partition, nmi
from densgroup.density import Grid
from densgroup.exceptions import ConfigError
from densgroup.pipeline import densities_from_samples, lqd_matrix
from densgroup.simulation import DgpConfig, generate_dataset
from densgroup.smoothing import group_curves, group_partial_residual
from densgroup.splines import fit_initial

FAST = ["--bandwidth-policy", "rate"]


def export(tmp: Path, n=30, T=60, seed=4, **edits) -> Path:
    data = generate_dataset(DgpConfig(n=n, T=T, seed=seed), 0)
    tmp.mkdir(parents=True, exist_ok=True)
    for name, text in data.to_csv_texts().items():
        (tmp / name).write_text(edits.get(name, text))
    return tmp


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def snapshot(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    return export(tmp_path_factory.mktemp("inputs"))


@pytest.fixture(scope="module")
def fitted(inputs, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit") / "out"
    code = main(["fit", "--samples", str(inputs / "samples.csv"),
                 "--covariates", str(inputs / "covariates.csv"), "--out", str(out), *FAST])
    assert code == EXIT_OK
    return out


def fit_args(inputs, out, *extra):
    return ["fit", "--samples", str(inputs / "samples.csv"),
            "--covariates", str(inputs / "covariates.csv"), "--out", str(out), *FAST, *extra]


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------

def test_simulate_is_byte_identical(tmp_path):
    args = ["simulate", "--n", "20", "--T", "30", "--reps", "2", "--seed", "7", "--k-max", "4",
            *FAST]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert set(a) == {"table1.csv", "table2.csv", "mc_report.json", "manifest.json"}
    assert a == b
    assert json.loads(a["manifest.json"])["seed"] == 7


def test_simulate_multiple_cells(tmp_path):
    assert main(["simulate", "--cells", "20x20,30x20", "--reps", "1", "--k-max", "3",
                 "--out", str(tmp_path), *FAST]) == EXIT_OK
    rows = read_rows(tmp_path / "table1.csv")
    assert [r[:2] for r in rows[1:]] == [["20", "20"], ["30", "20"]]


def test_simulate_zero_reps_writes_nothing(tmp_path):
    out = tmp_path / "never"
    assert main(["simulate", "--reps", "0", "--out", str(out)]) == EXIT_VALIDATION
    assert not out.exists()


def test_bad_cells_rejected(tmp_path):
    assert main(["simulate", "--cells", "100by100", "--out", str(tmp_path / "x")]) == EXIT_VALIDATION


def test_output_must_be_given(tmp_path, monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    assert main(["simulate", "--reps", "1"]) == EXIT_VALIDATION


def test_output_path_that_is_a_file(tmp_path):
    f = tmp_path / "file"
    f.write_text("")
    assert main(["simulate", "--reps", "1", "--out", str(f)]) == EXIT_VALIDATION


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == EXIT_OK
    assert main(["frobnicate"]) == EXIT_VALIDATION


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

def test_config_precedence(tmp_path, monkeypatch):
    ini = tmp_path / "run.ini"
    ini.write_text("[densgroup]\nseed = 3\nreps = 1\nn = 20\nT = 20\nk_max = 3\n"
                   "bandwidth_policy = rate\n")
    env_out = tmp_path / "from_env"
    monkeypatch.setenv(OUTPUT_ENV, str(env_out))
    assert main(["simulate", "--config", str(ini), "--seed", "5"]) == EXIT_OK
    manifest = json.loads((env_out / "manifest.json").read_text())
    assert manifest["seed"] == 5  # flag beats file
    assert manifest["config"]["n"] == 20  # file beats default
    flag_out = tmp_path / "from_flag"
    assert main(["simulate", "--config", str(ini), "--out", str(flag_out)]) == EXIT_OK
    assert json.loads((flag_out / "manifest.json").read_text())["seed"] == 3


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[densgroup]\ncolour = blue\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)
    bad.write_text("[other]\nseed = 1\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)
    bad.write_text("[densgroup]\nseed = one\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "absent.ini")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_VALIDATION


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------

def test_fit_artifacts(fitted, inputs):
    names = {p.name for p in fitted.iterdir()}
    assert {"partition.csv", "ic_trace.json", "group_curves.csv", "additive_x1.csv",
            "additive_x2.csv", "fitted_densities.csv", "fve_report.json", "fve_report.csv",
            "manifest.json"} <= names
    part = read_rows(fitted / "partition.csv")
    assert part[0] == ["subject_id", "group_label"] and len(part) == 31
    manifest = json.loads((fitted / "manifest.json").read_text())
    assert set(manifest["rescale"]) == {"data_min", "data_max", "lower", "upper",
                                        "margin_fraction"}
    assert manifest["skipped_subjects"] == []
    assert len(manifest["input_sha256"]["samples"]) == 64
    trace = json.loads((fitted / "ic_trace.json").read_text())
    assert trace["k_hat"] == manifest["k"]
    additive = read_rows(fitted / "additive_x1.csv")
    assert additive[0] == ["u", "x", "value"] and len(additive) == 1 + 101 * 51


def test_fit_rerun_is_byte_identical(fitted, inputs, tmp_path):
    assert main(fit_args(inputs, tmp_path / "again")) == EXIT_OK
    assert snapshot(tmp_path / "again") == snapshot(fitted)


def test_manifest_replay(fitted, tmp_path):
    out = tmp_path / "replay"
    assert main(["fit", "--config", str(fitted / "manifest.json"), "--out", str(out)]) == EXIT_OK
    assert snapshot(out) == snapshot(fitted)


def test_rescaling_margin(inputs):
    data = ingest(inputs / "samples.csv", inputs / "covariates.csv")
    pooled = np.concatenate([s.values for s in data.samples])
    width = data.rescale["upper"] - data.rescale["lower"]
    gap = 0.005 * (data.rescale["data_max"] - data.rescale["data_min"]) / width
    assert pooled.min() == pytest.approx(gap)
    assert pooled.max() == pytest.approx(1 - gap)


def test_forced_single_group_is_pooled_smoother(inputs, tmp_path):
    out = tmp_path / "k1"
    assert main(fit_args(inputs, out, "--k", "1", "--no-eliminate")) == EXIT_OK
    rows = read_rows(out / "group_curves.csv")
    assert rows[0] == ["u", "group_1"]
    got = np.array([float(r[1]) for r in rows[1:]])
    manifest = json.loads((out / "manifest.json").read_text())
    data = ingest(inputs / "samples.csv", inputs / "covariates.csv")
    grid = Grid(101)
    F = lqd_matrix(densities_from_samples(data.samples, grid))
    fit = fit_initial(F, data.X, grid=grid, n_obs=60)
    pooled = group_curves(group_partial_residual(F, fit), Partition(np.ones(30, dtype=int)),
                          manifest["bandwidths"]["h0"], grid)[0]
    np.testing.assert_allclose(got, pooled, atol=1e-12)
    assert "fve_report.csv" not in {p.name for p in out.iterdir()}


def test_covariate_outside_unit_interval(inputs, tmp_path):
    text = (inputs / "covariates.csv").read_text().splitlines()
    sid, x1, x2 = text[1].split(",")
    text[1] = f"{sid},{x1},1.7"
    bad = export(tmp_path / "in", **{"covariates.csv": "\n".join(text) + "\n"})
    out = tmp_path / "out"
    code = main(fit_args(bad, out))
    assert code == EXIT_VALIDATION
    assert not out.exists()
    with pytest.raises(ConfigError, match="x2"):
        ingest(bad / "samples.csv", bad / "covariates.csv")


def test_minmax_scaling_accepts_wide_covariates(inputs, tmp_path):
    lines = (inputs / "covariates.csv").read_text().splitlines()
    scaled = [lines[0]] + [",".join([r.split(",")[0]] + [repr(10 * float(v) - 3)
                                                           for v in r.split(",")[1:]])
                           for r in lines[1:]]
    wide = export(tmp_path / "in", **{"covariates.csv": "\n".join(scaled) + "\n"})
    data = ingest(wide / "samples.csv", wide / "covariates.csv", covariate_scaling="minmax")
    assert data.X.min() == 0.0 and data.X.max() == 1.0
    assert set(data.covariate_rescale) == {"x1", "x2"}


def test_subject_mismatch_lists_offenders(inputs, tmp_path, capsys):
    lines = (inputs / "covariates.csv").read_text().splitlines()
    lines = [lines[0]] + [l for l in lines[1:] if not l.startswith("s007,")] + ["s999,0.5,0.5"]
    bad = export(tmp_path / "in", **{"covariates.csv": "\n".join(lines) + "\n"})
    out = tmp_path / "out"
    assert main(fit_args(bad, out)) == EXIT_INGESTION
    err = capsys.readouterr().err
    assert "s007" in err and "s999" in err
    assert not out.exists()


def test_bad_headers(inputs, tmp_path):
    bad = export(tmp_path / "in", **{"samples.csv": "id,value\ns001,0.5\n"})
    assert main(fit_args(bad, tmp_path / "out")) == EXIT_INGESTION


def test_sparse_subject_is_skipped_and_recorded(inputs, tmp_path):
    lines = (inputs / "samples.csv").read_text().splitlines()
    kept, seen = [lines[0]], 0
    for line in lines[1:]:
        if line.startswith("s005,"):
            seen += 1
            if seen > 5:
                continue
        kept.append(line)
    sparse = export(tmp_path / "in", **{"samples.csv": "\n".join(kept) + "\n"})
    out = tmp_path / "out"
    assert main(fit_args(sparse, out, "--no-eliminate")) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["skipped_subjects"] == [{"subject_id": "s005", "observations": 5}]
    ids = [r[0] for r in read_rows(out / "partition.csv")[1:]]
    assert "s005" not in ids and len(ids) == 29


def test_missing_input_file(tmp_path):
    code = main(["fit", "--samples", str(tmp_path / "nope.csv"),
                 "--covariates", str(tmp_path / "nope2.csv"), "--out", str(tmp_path / "o")])
    assert code == EXIT_VALIDATION


@pytest.mark.xfail(strict=True, reason="NMI round trip of about 0.6 at n=60; see decisions ledger")
def test_round_trip_recovers_embedded_partition(tmp_path):
    src = export(tmp_path / "in", n=60, T=100, seed=1)
    out = tmp_path / "out"
    assert main(["fit", "--samples", str(src / "samples.csv"), "--covariates",
                 str(src / "covariates.csv"), "--out", str(out), "--no-eliminate"]) == EXIT_OK
    est = [int(r[1]) for r in read_rows(out / "partition.csv")[1:]]
    truth = [int(r[1]) for r in read_rows(src / "truth.csv")[1:]]
    assert nmi(Partition(np.array(est)), Partition(np.array(truth))) >= 0.9


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def test_report_outputs(fitted, tmp_path):
    out = tmp_path / "rep"
    assert main(["report", "--artifacts", str(fitted), "--out", str(out)]) == EXIT_OK
    heat = read_rows(out / "heatmap_x1.csv")
    assert len(heat) - 1 == 101 and len(heat[0]) - 1 == 51
    overlay = read_rows(out / "overlay_s001.csv")
    assert overlay[0] == ["u", "observed", "fitted"]
    assert all(len(r) == 3 for r in overlay) and len(overlay) == 102
    index = json.loads((out / "report_index.json").read_text())
    assert len(index["overlays"]) == 30
    assert main(["report", "--artifacts", str(fitted), "--out", str(tmp_path / "rep2")]) == EXIT_OK
    assert snapshot(out) == snapshot(tmp_path / "rep2")


def test_report_subject_filter(fitted, tmp_path):
    out = tmp_path / "rep"
    assert main(["report", "--artifacts", str(fitted), "--out", str(out),
                 "--subjects", "s002,s010"]) == EXIT_OK
    assert sorted(p.name for p in out.glob("overlay_*")) == ["overlay_s002.csv", "overlay_s010.csv"]
    assert main(["report", "--artifacts", str(fitted), "--out", str(tmp_path / "x"),
                 "--subjects", "zzz"]) == EXIT_INGESTION


def test_report_missing_artifact(fitted, tmp_path):
    partial = tmp_path / "partial"
    partial.mkdir()
    (partial / "manifest.json").write_bytes((fitted / "manifest.json").read_bytes())
    out = tmp_path / "rep"
    assert main(["report", "--artifacts", str(partial), "--out", str(out)]) == EXIT_INGESTION
    assert not out.exists()
