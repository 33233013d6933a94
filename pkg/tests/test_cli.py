"""Command-line entry points, driven in-process through main()."""

import json

import numpy as np
import pytest

from edt.amm import AmmParams, GridGeometry, build_amm, load_amm_csv
from edt.architecture import edt_nano_config
from edt.cli import main


def tiny_model_config_file(tmp_path):
    cfg = edt_nano_config(
        stage_blocks=(1, 1, 1, 1, 1),
        stage_dims=(8, 12, 16, 12, 8),
        stage_heads=(2, 2, 4, 2, 2),
    )
    path = tmp_path / "model.json"
    cfg.save(path)
    return str(path)


def test_dataset_gen_writes_the_slice(tmp_path):
    prefix = str(tmp_path / "toy")
    assert main(["dataset", "gen", "--count", "12", "--start", "4", "--out", prefix]) == 0
    data = np.load(prefix + "_data.npy")
    labels = np.load(prefix + "_labels.npy")
    assert data.shape == (12, 4, 16, 16)
    assert list(labels) == [(4 + i) % 8 for i in range(12)]
    spec = json.loads(open(prefix + "_spec.json").read())
    assert spec["class_count"] == 8


def test_amm_export_round_trips(tmp_path):
    out = str(tmp_path / "amm.csv")
    assert main(["amm", "export", "--grid", "4", "--scale", "0.5", "--out", out]) == 0
    back = load_amm_csv(out)
    direct = build_amm(GridGeometry(4), AmmParams(scale=0.5))
    assert np.array_equal(back, direct.entries)
    sidecar = json.loads(open(out + ".json").read())
    assert sidecar["N"] == 4


def test_flops_csv_includes_the_oracle_check(capsys):
    assert main(["flops", "--format", "csv", "--oracle"]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.strip()]
    assert lines[0].startswith("module,tokens,dim,blocks,flops,params")
    totals = [l for l in lines if l.startswith("total,")]
    assert totals and totals[0].split(",")[4] == "4813440"
    assert "analytic == oracle: True" in out


def test_flops_table_accepts_a_config_file(tmp_path, capsys):
    path = tiny_model_config_file(tmp_path)
    assert main(["flops", "--config", path]) == 0
    out = capsys.readouterr().out
    assert "stage0" in out and "total" in out


def test_train_sample_eval_chain(tmp_path, capsys):
    model_cfg = tiny_model_config_file(tmp_path)
    run_dir = str(tmp_path / "run")
    assert main([
        "train", "--out", run_dir, "--steps", "2", "--batch", "2",
        "--model-config", model_cfg, "--quiet",
    ]) == 0

    sample_dir = str(tmp_path / "gen")
    labels = ",".join(str(c) for c in range(8) for _ in range(2))
    assert main([
        "sample", "--ckpt", f"{run_dir}/ckpt_000002", "--labels", labels,
        "--steps", "2", "--out", sample_dir,
    ]) == 0
    gen = np.load(f"{sample_dir}/samples.npy")
    assert gen.shape == (16, 4, 16, 16)

    ref_prefix = str(tmp_path / "ref")
    assert main(["dataset", "gen", "--count", "64", "--out", ref_prefix]) == 0

    report_path = str(tmp_path / "report.json")
    assert main([
        "eval",
        "--generated", f"{sample_dir}/samples.npy",
        "--generated-labels", f"{sample_dir}/labels.npy",
        "--reference", f"{ref_prefix}_data.npy",
        "--reference-labels", f"{ref_prefix}_labels.npy",
        "--classes", "8", "--out", report_path,
    ]) == 0
    report = json.loads(open(report_path).read())
    assert report["mmd"] >= 0
    assert len(report["class_mmd"]) == 8
    out = capsys.readouterr().out
    assert "mmd:" in out


def test_train_without_out_or_config_refuses():
    with pytest.raises(SystemExit):
        main(["train", "--steps", "1"])


def test_sample_needs_exactly_one_label_form(tmp_path):
    with pytest.raises(SystemExit):
        main(["sample", "--ckpt", "x", "--labels", "1", "--class", "1", "--out", str(tmp_path)])
    with pytest.raises(SystemExit):
        main(["sample", "--ckpt", "x", "--out", str(tmp_path)])


def test_domain_errors_exit_nonzero(tmp_path, capsys):
    # missing checkpoint
    code = main([
        "sample", "--ckpt", str(tmp_path / "nope"), "--class", "0",
        "--out", str(tmp_path / "out"),
    ])
    assert code == 1
    assert "error:" in capsys.readouterr().err

    # impossible dataset spec: 4 channels cannot encode 16 classes
    code = main([
        "dataset", "gen", "--count", "4", "--classes", "16",
        "--out", str(tmp_path / "bad"),
    ])
    assert code == 1


def test_validation_and_io_errors_print_cleanly(tmp_path, capsys):
    # missing config file: OSError becomes an error line, not a traceback
    assert main(["flops", "--config", str(tmp_path / "nope.json")]) == 1
    assert "error:" in capsys.readouterr().err

    # malformed config file: JSON decode errors are ValueErrors
    bad = tmp_path / "bad.json"
    bad.write_text("not json\n")
    assert main(["flops", "--config", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err

    # guidance weight below one is rejected after the checkpoint loads
    model_cfg = tiny_model_config_file(tmp_path)
    run_dir = str(tmp_path / "run")
    assert main([
        "train", "--out", run_dir, "--steps", "1", "--batch", "2",
        "--model-config", model_cfg, "--quiet",
    ]) == 0
    code = main([
        "sample", "--ckpt", f"{run_dir}/ckpt_000001", "--class", "0",
        "--omega", "0.5", "--out", str(tmp_path / "gen"),
    ])
    assert code == 1
    assert "guidance weight" in capsys.readouterr().err
