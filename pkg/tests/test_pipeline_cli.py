import json

import numpy as np
import pytest

from metafuse import io
from metafuse.cli import main
from metafuse.errors import ConfigError
from metafuse.forward import color_average
from metafuse.image import Image
from metafuse.metrics import psnr, read_report
from metafuse.pipeline import PipelineConfig, load_config, run_restore, verify_manifest

SIZE = 64


@pytest.fixture
def workspace(tmp_path):
    def run(*args):
        return main([str(a) for a in args])

    assert run("make-scene", "--size", SIZE, "--scene-seed", 2, "--out", tmp_path / "scene.imgf") == 0
    for name, lo, hi in [("pc", 0.5, 1.5), ("ps", 0.3, 0.7)]:
        assert run("make-psf", "--size", f"{SIZE}x{SIZE}", "--grid", 3, "--kernel", 9,
                   "--sigma-center", lo, "--sigma-edge", hi, "--out", tmp_path / f"{name}.psfg") == 0
    assert run("make-psf", "--kind", "delta", "--size", f"{SIZE}x{SIZE}", "--grid", 2,
               "--kernel", 3, "--out", tmp_path / "delta.psfg") == 0
    ini = tmp_path / "run.ini"
    ini.write_text(f"""[paths]
scene = {tmp_path / 'scene.imgf'}
psf_c = {tmp_path / 'pc.psfg'}
psf_s = {tmp_path / 'ps.psfg'}

[diffusion]
timesteps = 20
""")
    return tmp_path, run, ini


def test_config_sections_and_overrides(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[predeblur]\nkout = 21\nlambda_scale = 50\n[fusion]\ngamma_grid = 0.5, 1, 2\n"
                   "[alignment]\nenabled = false\n")
    cfg = load_config(ini, kout=11)
    assert (cfg.kout, cfg.lambda_scale, cfg.gamma_grid, cfg.align) == (11, 50.0, (0.5, 1.0, 2.0), False)
    for bad in ["[predeblur]\nkout = 20\n", "[nowhere]\nx = 1\n", "[diffusion]\neta = x\n",
                "[alignment]\nmodel = spline\n", "[alignment]\nenabled = maybe\n"]:
        ini.write_text(bad)
        with pytest.raises(ConfigError):
            load_config(ini)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


def test_synth_delta_identity(workspace):
    tmp, run, _ = workspace
    out = tmp / "d"
    assert run("synth", "--outdir", out, "--scene", tmp / "scene.imgf", "--psf-c", tmp / "delta.psfg",
               "--psf-s", tmp / "delta.psfg", "--sigma", 0) == 0
    gt = io.load_image(out / "gt.imgf")
    np.testing.assert_array_equal(io.load_image(out / "y_c.imgf").data, gt.data)
    expected = color_average(gt).data.astype(np.float32)
    np.testing.assert_array_equal(io.load_image(out / "y_s.imgf").data.astype(np.float32), expected)
    domain = json.loads((out / "domain.json").read_text())
    assert set(domain) == {"color", "structure"}


def test_synth_restore_determinism(workspace):
    tmp, run, ini = workspace
    outs = []
    for name in ("a", "b"):
        d = tmp / name
        assert run("--config", ini, "--outdir", d, "--seed", 7, "synth") == 0
        assert run("restore", "--config", ini, "--outdir", d, "--seed", 7, "--no-figures") == 0
        outs.append(d)
    a, b = outs
    for f in ("y_c.imgf", "y_s.imgf", "gt.imgf", "restored.imgf", "stages/tilde_y_c.imgf",
              "manifest.jsonl"):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    run("--config", ini, "--outdir", tmp / "c", "--seed", 8, "synth")
    assert (tmp / "c" / "y_c.imgf").read_bytes() != (a / "y_c.imgf").read_bytes()


def test_manifest_records_and_tamper(workspace, capsys):
    tmp, run, ini = workspace
    d = tmp / "m"
    run("--config", ini, "--outdir", d, "synth")
    records = [json.loads(l) for l in (d / "manifest.jsonl").read_text().splitlines()]
    assert {r["path"] for r in records} == {"y_c.imgf", "y_s.imgf", "gt.imgf", "domain.json"}
    assert all(r["command"] == "synth" and len(r["sha256"]) == 64 and r["seed"] == 0 for r in records)
    assert run("verify-manifest", d) == 0
    raw = bytearray((d / "y_c.imgf").read_bytes())
    raw[-1] ^= 0xFF
    (d / "y_c.imgf").write_bytes(bytes(raw))
    assert verify_manifest(d) == ["y_c.imgf"]
    assert run("verify-manifest", d / "manifest.jsonl") == 3
    assert "MISMATCH y_c.imgf" in capsys.readouterr().out


def test_restore_outputs_and_dumps(workspace):
    tmp, run, ini = workspace
    d = tmp / "r"
    run("--config", ini, "--outdir", d, "--seed", 3, "synth", "--misalign", "1.0,0.5")
    assert run("--config", ini, "--outdir", d, "--seed", 3, "restore") == 0
    for f in ("restored.imgf", "stages.png", "stages/y_c_aligned.imgf", "stages/tilde_y_s.imgf",
              "stages/baseline.imgf", "stages/stage_info.json"):
        assert (d / f).exists(), f
    info = json.loads((d / "stages" / "stage_info.json").read_text())
    assert set(info["tone"]) == {"color", "structure"}
    assert info["transform"][0][2] == pytest.approx(-1.0, abs=0.1)
    records = {json.loads(l)["path"]: json.loads(l) for l in (d / "manifest.jsonl").read_text().splitlines()}
    assert records["restored.imgf"]["command"] == "restore"
    assert records["y_c.imgf"]["command"] == "synth"
    assert run("verify-manifest", d) == 0


def test_rerun_from_dumps(workspace):
    tmp, run, ini = workspace
    d, e = tmp / "full", tmp / "resume"
    run("--config", ini, "--outdir", d, "--seed", 5, "synth")
    run("--config", ini, "--outdir", d, "--seed", 5, "restore", "--no-figures")
    assert run("--config", ini, "--outdir", e, "--seed", 5, "restore", "--from-dumps", d / "stages") == 0
    a = io.load_image(d / "restored.imgf").data
    b = io.load_image(e / "restored.imgf").data
    assert np.max(np.abs(a - b)) < 1e-6


def test_restore_delta_does_not_degrade(workspace):
    tmp, run, _ = workspace
    d = tmp / "clean"
    run("synth", "--outdir", d, "--scene", tmp / "scene.imgf", "--psf-c", tmp / "delta.psfg",
        "--psf-s", tmp / "delta.psfg", "--sigma", 0)
    assert run("restore", "--outdir", d, "--psf-c", tmp / "delta.psfg", "--psf-s", tmp / "delta.psfg",
               "--sigma", 0, "--lambda-scale", 1, "--predictor", "gaussian", "--prior-sigma", 0,
               "--timesteps", 20, "--no-figures") == 0
    gt = io.load_image(d / "gt.imgf")
    before = psnr(io.load_image(d / "y_c.imgf"), gt)
    assert psnr(io.load_image(d / "restored.imgf"), gt) >= before - 0.1


@pytest.mark.parametrize("predictor", ["oracle", "gaussian", "fused-gaussian"])
def test_predictor_choices(workspace, predictor):
    tmp, run, ini = workspace
    d = tmp / predictor
    run("--config", ini, "--outdir", d, "synth")
    assert run("--config", ini, "--outdir", d, "restore", "--predictor", predictor, "--no-figures",
               "--no-dumps") == 0
    gt = io.load_image(d / "gt.imgf")
    assert psnr(io.load_image(d / "restored.imgf"), gt) > psnr(io.load_image(d / "y_c.imgf"), gt)


def test_eval_report(workspace):
    tmp, run, ini = workspace
    d = tmp / "ev"
    run("--config", ini, "--outdir", d, "synth")
    csv = d / "report.csv"
    assert run("eval", "--pair", "yc", d / "y_c.imgf", d / "gt.imgf",
               "--pair", "self", d / "gt.imgf", d / "gt.imgf", "--out", csv) == 0
    rows = read_report(csv)
    assert [r[0] for r in rows] == ["yc", "self", "mean"]
    assert rows[1][1] == 99.0
    assert rows[2][1] == pytest.approx((rows[0][1] + 99.0) / 2, abs=1e-5)
    assert csv.with_suffix(".png").exists()
    assert run("eval", "--pair", "x", d / "nope.imgf", d / "gt.imgf", "--out", csv) == 2


def test_exit_codes(workspace, capsys):
    tmp, run, ini = workspace
    assert run("synth", "--outdir", tmp / "x") == 2  # no scene configured
    bad = tmp / "bad.psfg"
    bad.write_bytes(b"PSFG\x01")
    assert run("synth", "--outdir", tmp / "x", "--scene", tmp / "scene.imgf", "--psf-c", bad,
               "--psf-s", tmp / "ps.psfg") == 3
    # a PSF grid calibrated for another image size fails inside a stage
    run("make-psf", "--size", "32x32", "--out", tmp / "small.psfg")
    run("--config", ini, "--outdir", tmp / "y", "synth")
    code = run("--config", ini, "--outdir", tmp / "y", "restore", "--psf-c", tmp / "small.psfg")
    assert code == 3
    assert "[predeblur]" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        run("restore", "--eta", "abc")
    assert exc.value.code == 2


def test_no_align_and_no_dam_flags(workspace):
    tmp, run, ini = workspace
    d = tmp / "abl"
    run("--config", ini, "--outdir", d, "synth", "--misalign", "1.5,0", "--tone-gamma", 2.0)
    run("--config", ini, "--outdir", d, "--no-align", "--no-dam", "restore", "--no-figures")
    info = json.loads((d / "stages" / "stage_info.json").read_text())
    assert info["align_enabled"] is False and info["dam_enabled"] is False
    assert info["transform"] == np.eye(3).tolist()
    assert info["tone"]["color"]["gamma"] == [1.0, 1.0, 1.0]


def test_nonconverged_alignment_is_flagged(workspace):
    tmp, run, ini = workspace
    d = tmp / "nc"
    run("--config", ini, "--outdir", d, "synth", "--misalign", "2,1")
    assert run("--config", ini, "--outdir", d, "restore", "--align-iters", 1, "--no-figures") == 0
    rec = [json.loads(l) for l in (d / "manifest.jsonl").read_text().splitlines()
           if json.loads(l)["path"] == "restored.imgf"][0]
    assert rec["inputs"]["align_converged"] is False
    assert "warning" in rec["inputs"]
