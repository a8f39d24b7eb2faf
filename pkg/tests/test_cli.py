import json
import os

import numpy as np
import pytest

from co3 import cli
from co3.distfit import GenNormParams, gennorm_sample

MINI = """\
[experiment]
task = quadratic
dimension = 128
rounds = 6
users = 2
eta = 0.1
seed = 1

[scheme co3]
scheme = co3
format = fp4

[scheme raw]
scheme = uncompressed
"""


@pytest.fixture
def mini(tmp_path):
    p = tmp_path / "mini.ini"
    p.write_text(MINI)
    return p


def only_dir(base):
    (name,) = os.listdir(base)
    return base / name


class TestRun:
    def test_outputs(self, mini, tmp_path, capsys):
        out = tmp_path / "runs"
        assert cli.main(["run", "--config", str(mini), "--out", str(out)]) == 0
        run_dir = only_dir(out)
        assert run_dir.name.endswith("-mini-seed1")
        assert sorted(os.listdir(run_dir)) == ["co3.csv", "manifest.json", "raw.csv", "summary.csv"]
        lines = (run_dir / "co3.csv").read_text().splitlines()
        assert len(lines) == 1 + 6
        manifest = json.loads((run_dir / "manifest.json").read_text())
        assert manifest["seed"] == 1 and manifest["schemes"] == ["co3", "raw"]
        assert "wrote" in capsys.readouterr().out

    def test_repeat_is_byte_identical_in_fresh_dirs(self, mini, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert cli.main(["run", "--config", str(mini), "--out", str(d), "--seed", "7"]) == 0
        da, db = only_dir(a), only_dir(b)
        assert da.name.endswith("seed7")
        for name in ("co3.csv", "raw.csv", "summary.csv"):
            assert (da / name).read_bytes() == (db / name).read_bytes()

    def test_seed_changes_output(self, mini, tmp_path):
        cli.main(["run", "--config", str(mini), "--out", str(tmp_path / "a"), "--seed", "1"])
        cli.main(["run", "--config", str(mini), "--out", str(tmp_path / "b"), "--seed", "2"])
        assert (only_dir(tmp_path / "a") / "co3.csv").read_bytes() != (only_dir(tmp_path / "b") / "co3.csv").read_bytes()

    def test_never_overwrites(self, tmp_path):
        d1 = cli.make_run_dir(str(tmp_path), "x", 0)
        d2 = cli.make_run_dir(str(tmp_path), "x", 0)
        assert d1 != d2

    def test_bad_config(self, tmp_path, capsys):
        p = tmp_path / "bad.ini"
        p.write_text(MINI.replace("scheme = uncompressed", "scheme = gzip"))
        assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "bad.ini:14" in err and "scheme" in err

    def test_bad_threads_env(self, mini, tmp_path, monkeypatch):
        monkeypatch.setenv("CO3_THREADS", "many")
        assert cli.main(["run", "--config", str(mini), "--out", str(tmp_path)]) == 2


class TestFit:
    def write(self, tmp_path, x, name="s.txt"):
        p = tmp_path / name
        p.write_text("\n".join(repr(float(v)) for v in x))
        return p

    def test_laplace_prefers_heavy_tail(self, tmp_path, capsys):
        x = gennorm_sample(GenNormParams(0, 1, 1), 20_000, 3)
        p = self.write(tmp_path, x)
        assert cli.main(["fit", str(p), "--out", str(tmp_path / "o")]) == 0
        out = capsys.readouterr().out
        assert "<- best" in out
        rows = {r[0]: r for r in (line.split(",") for line in (tmp_path / "o" / "fit.csv").read_text().splitlines()[1:])}
        assert set(rows) == {"gennorm", "norm", "laplace", "dweibull"}
        assert float(rows["laplace"][1]) < float(rows["norm"][1])

    def test_normal(self, tmp_path, capsys):
        x = np.random.default_rng(0).normal(0, 2, 20_000)
        assert cli.main(["fit", str(self.write(tmp_path, x))]) == 0
        lines = capsys.readouterr().out.splitlines()
        best = [ln.split()[0] for ln in lines if "<- best" in ln][0]
        assert best in ("norm", "gennorm")

    @pytest.mark.parametrize("content", ["", "1.0 2.0 abc", "1\n2\nnan"])
    def test_bad_input(self, tmp_path, content):
        p = tmp_path / "bad.txt"
        p.write_text(content)
        assert cli.main(["fit", str(p)]) == 2

    def test_too_few_and_constant(self, tmp_path):
        assert cli.main(["fit", str(self.write(tmp_path, [1.0, 2.0, 3.0]))]) == 2
        assert cli.main(["fit", str(self.write(tmp_path, [0.5] * 500, "c.txt"))]) == 2

    def test_missing_file(self, tmp_path):
        assert cli.main(["fit", str(tmp_path / "none.txt")]) == 2


class TestVerify:
    def test_distfit_suite(self, tmp_path, capsys):
        assert cli.main(["verify", "--suite", "distfit", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert out.strip().endswith("PASS")
        run_dir = only_dir(tmp_path)
        assert (run_dir / "distfit.csv").exists()
        assert json.loads((run_dir / "manifest.json").read_text())["passed"] is True

    def test_unknown_suite(self):
        with pytest.raises(SystemExit) as e:
            cli.main(["verify", "--suite", "nope"])
        assert e.value.code == 2

    def test_module_entry(self):
        import subprocess
        import sys
        r = subprocess.run([sys.executable, "-m", "co3", "--help"], capture_output=True, text=True)
        assert r.returncode == 0 and "verify" in r.stdout
