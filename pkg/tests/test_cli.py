import json

import numpy as np
import pytest

from compress_interplay.cli import main
from compress_interplay.tnsr import encode, read_tnsr, write_tnsr


@pytest.fixture
def tensor(tmp_path):
    path = tmp_path / "in.tnsr"
    write_tnsr(path, np.random.default_rng(0).standard_normal((8, 64)))
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestQuantizeCommand:
    def test_writes_output_and_stats(self, tensor, tmp_path, capsys):
        out_path = tmp_path / "q.tnsr"
        code, out, _ = run(["quantize", "--input", tensor, "--output", out_path, "--preset", "INT8"], capsys)
        assert code == 0
        for key in ("max_abs_error", "mean_abs_error", "l1_error", "l2_error"):
            assert key in out
        q, _ = read_tnsr(out_path)
        assert q.shape == (8, 64)

    def test_truncated_input_exits_2(self, tensor, tmp_path, capsys):
        bad = tmp_path / "bad.tnsr"
        bad.write_bytes(tensor.read_bytes()[:-3])
        code, _, err = run(["quantize", "--input", bad, "--output", tmp_path / "o.tnsr", "--preset", "INT8"], capsys)
        assert code == 2 and "payload" in err
        assert not (tmp_path / "o.tnsr").exists()

    def test_missing_file_exits_2(self, tmp_path, capsys):
        code, _, _ = run(["quantize", "--input", tmp_path / "none", "--output", tmp_path / "o", "--preset", "INT8"], capsys)
        assert code == 2

    def test_nan_payload_exits_2(self, tmp_path, capsys):
        path = tmp_path / "nan.tnsr"
        path.write_bytes(encode(np.array([1.0, np.nan])))
        code, _, _ = run(["quantize", "--input", path, "--output", tmp_path / "o", "--preset", "INT8", "--block-size", "2"], capsys)
        assert code == 2

    def test_unknown_preset_exits_3(self, tensor, tmp_path, capsys):
        code, _, err = run(["quantize", "--input", tensor, "--output", tmp_path / "o", "--preset", "FP3"], capsys)
        assert code == 3 and "FP3" in err

    def test_indivisible_block_exits_3(self, tensor, tmp_path, capsys):
        code, _, _ = run(["quantize", "--input", tensor, "--output", tmp_path / "o", "--block-size", "48"], capsys)
        assert code == 3


class TestArguments:
    def test_bad_pattern_exits_3(self, tensor, tmp_path, capsys):
        code, _, err = run(["sparsify", "--input", tensor, "--output", tmp_path / "o", "--pattern", "5:4"], capsys)
        assert code == 3 and "5:4" in err

    def test_argparse_error_exits_3(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["threshold", "--em-base", "x"])
        assert exc.value.code == 3

    def test_unknown_command_exits_3(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 3


class TestAuditCommands:
    def test_audit_tensor_strict(self, tensor, tmp_path, capsys):
        code, out, _ = run(["audit-tensor", "--input", tensor, "--preset", "MXFP6", "--strict",
                            "--csv-out", tmp_path / "a.csv"], capsys)
        assert code == 0 and json.loads(out) == {"l1_order": 0, "sum_bound": 0, "reorder_bound": 0}
        assert (tmp_path / "a.csv").read_text().count("\n") == 9

    def test_audit_dot_golden(self, capsys):
        code, out, _ = run(["audit-dot", "--x", "1,1", "--w", "0.6,1.3", "--preset", "HBFP4-paper",
                            "--pattern", "1:2", "--order", "s-q"], capsys)
        d = json.loads(out)["S_THEN_Q"]
        assert code == 0 and d["eps_total"] == pytest.approx(0.65)

    def test_threshold_verdict(self, capsys):
        code, out, _ = run(["threshold", "--em-base", "27.65", "--em-q", "28.06", "--em-s", "29.94",
                            "--em-combined", "31"], capsys)
        assert code == 0 and "threshold=30.35" in out and "VIOLATES" in out


class TestConfigFile:
    def test_precedence(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"synthetic-blocks": 20, "pattern": "1:4", "p": 2}))
        out = tmp_path / "r.json"
        code, _, _ = run(["audit-tensor", "--config", cfg, "--pattern", "2:4", "--json-out", out], capsys)
        conf = json.loads(out.read_text())["config"]
        assert code == 0
        assert conf["pattern"] == "2:4" and conf["synthetic_blocks"] == 20 and conf["p"] == 2

    def test_unknown_key_exits_3(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        code, _, err = run(["threshold", "--config", cfg, "--em-base", "1", "--em-q", "1", "--em-s", "1"], capsys)
        assert code == 3 and "bogus" in err

    def test_unreadable_config_exits_2(self, tmp_path, capsys):
        code, _, _ = run(["threshold", "--config", tmp_path / "none.json", "--em-base", "1",
                          "--em-q", "1", "--em-s", "1"], capsys)
        assert code == 2


DETERMINISM_COMMANDS = [
    ["deviation", "--count", "50", "--csv-out", "{d}/o.csv", "--json-out", "{d}/o.json"],
    ["propagate", "--depth", "3", "--width", "64", "--seeds", "0-1", "--csv-out", "{d}/o.csv", "--json-out", "{d}/o.json"],
    ["collide", "--synthetic", "16x64", "--csv-out", "{d}/o.csv", "--json-out", "{d}/o.json"],
    ["audit-tensor", "--synthetic-blocks", "30", "--csv-out", "{d}/o.csv", "--json-out", "{d}/o.json"],
    ["audit-dot", "--x", "1,2,3,4", "--w", "4,3,2,1", "--json-out", "{d}/o.json"],
    ["threshold", "--em-base", "1", "--em-q", "2", "--em-s", "3", "--json-out", "{d}/o.json"],
]


@pytest.mark.parametrize("argv", DETERMINISM_COMMANDS, ids=lambda a: a[0])
def test_rerun_is_byte_identical(argv, tmp_path, capsys):
    outputs = []
    for run_dir in ("a", "b"):
        d = tmp_path / run_dir
        d.mkdir()
        assert main([a.format(d=d) for a in argv]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    capsys.readouterr()
    assert outputs[0] == outputs[1] and outputs[0]


class TestSweep:
    def test_manifest_and_parallel_match_serial(self, tmp_path, capsys, monkeypatch):
        argv = ["sweep", "--presets", "HBFP6,INT8", "--patterns", "2:4", "--orders", "s-q,q-s",
                "--seeds", "0", "--count", "20"]
        assert main(argv + ["--out-dir", str(tmp_path / "s"), "--jobs", "1"]) == 0
        monkeypatch.setenv("COMPRESS_INTERPLAY_JOBS", "2")
        assert main(argv + ["--out-dir", str(tmp_path / "p")]) == 0
        capsys.readouterr()
        serial = {p.name: p.read_bytes() for p in (tmp_path / "s").iterdir()}
        parallel = {p.name: p.read_bytes() for p in (tmp_path / "p").iterdir()}
        assert serial == parallel
        manifest = json.loads(serial["manifest.json"])
        assert len(manifest["cells"]) == 4
        assert len({c["config_hash"] for c in manifest["cells"]}) == 4

    def test_empty_grid(self, tmp_path, capsys):
        assert main(["sweep", "--out-dir", str(tmp_path / "e")]) == 0
        capsys.readouterr()
        assert json.loads((tmp_path / "e" / "manifest.json").read_text())["cells"] == []
