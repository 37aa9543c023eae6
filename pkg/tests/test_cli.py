import json
import subprocess
import sys
import threading
from pathlib import Path

import numpy as np
import pytest

from streamstgs.cli import main
from streamstgs.scenes import SceneSpec

from test_codec import make_model

SPEC = SceneSpec(n_static=24, n_dynamic=12, motion="oscillation", gop_length=4,
                 cameras=8, resolution=24, seed=1)


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("run")
    spec_file = path / "spec.json"
    spec_file.write_text(SPEC.to_json())
    rc = main(["train", "--scene-spec", str(spec_file), "--out", str(path / "model"),
               "--iterations", "30", "--coarse-iterations", "10",
               "--cache-dir", str(path / "cache")])
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def scene_dir(trained_dir):
    out = trained_dir / "encoded"
    rc = main(["encode", "--checkpoint", str(trained_dir / "model" / "checkpoint.stgs"),
               "--out", str(out), "--qp", "16", "--qp", "24", "--qp", "32",
               "--gops", "2", "--scene-spec", str(trained_dir / "spec.json"),
               "--cache-dir", str(trained_dir / "cache")])
    assert rc == 0
    return out


class TestCliPipeline:
    def test_train_outputs(self, trained_dir):
        model_dir = trained_dir / "model"
        assert (model_dir / "checkpoint.stgs").exists()
        assert (model_dir / "weights.bin").exists()
        lines = (model_dir / "metrics.jsonl").read_text().strip().splitlines()
        assert all("loss" in json.loads(l) or "density_event" in json.loads(l) for l in lines)
        summary = json.loads((model_dir / "summary.json").read_text())
        assert np.isfinite(summary["train_psnr"])

    def test_encode_layout(self, scene_dir):
        assert (scene_dir / "meta.json").exists()
        segs = sorted(p.name for p in (scene_dir / "segments").glob("*.stgs"))
        assert len(segs) == 6  # 2 gops x 3 qps

    def test_decode_command(self, trained_dir, tmp_path):
        rc = main(["decode", "--segment", str(trained_dir / "model" / "checkpoint.stgs"),
                   "--out", str(tmp_path / "dec")])
        assert rc == 0
        data = np.load(tmp_path / "dec" / "model.npz")
        assert data["positions"].shape[1] == 3

    def test_render_command(self, scene_dir, tmp_path):
        out = tmp_path / "frame.png"
        rc = main(["render", "--scene-dir", str(scene_dir), "--frame", "1",
                   "--pose", "0.0,0.3,4.0", "--out", str(out)])
        assert rc == 0 and out.exists()

    def test_bench_command(self, scene_dir, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        rc = main(["bench", "--scene-dir", str(scene_dir), "--out", str(out)])
        assert rc == 0
        rows = out.read_text().strip().splitlines()
        assert rows[0].startswith("qp,segment_bytes")
        assert len(rows) == 4

    def test_serve_and_play(self, scene_dir, tmp_path):
        from streamstgs.stream import make_server

        httpd = make_server(scene_dir, "127.0.0.1:0")
        thread = threading.Thread(target=httpd.serve_forever, daemon=True)
        thread.start()
        host, port = httpd.server_address[:2]
        try:
            report = tmp_path / "report.json"
            rc = main(["play", "--url", f"http://{host}:{port}", "--report", str(report),
                       "--pin-qp", "24"])
            assert rc == 0
            saved = json.loads(report.read_text())
            assert all(e["qp"] == 24 for e in saved["entries"])
        finally:
            httpd.shutdown()

    def test_decode_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.stgs"
        bad.write_bytes(b"not a segment at all")
        rc = main(["decode", "--segment", str(bad), "--out", str(tmp_path / "out")])
        assert rc == 3

    def test_missing_file_exit_code(self, tmp_path):
        rc = main(["decode", "--segment", str(tmp_path / "nope.stgs"),
                   "--out", str(tmp_path / "out")])
        assert rc == 3

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            main(["decode"])  # missing required args
        assert exc.value.code == 2

    def test_console_entrypoint(self):
        proc = subprocess.run([sys.executable, "-m", "streamstgs.cli", "gradcheck",
                               "--entries", "2", "--seed", "0"],
                              capture_output=True, text=True, timeout=300)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        assert "gradient check" in proc.stdout
