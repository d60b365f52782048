import json
import os

import numpy as np
import pytest

from rbflab import cli


def _read(path):
    with open(path, "r", encoding="ascii") as fh:
        return fh.read()


class TestNodes:
    def test_writes_csv_and_manifest(self, tmp_path):
        out = str(tmp_path / "X.csv")
        rc = cli.main(["nodes", "--h", "0.1", "--seed", "3", "--out", out])
        assert rc == 0
        lines = _read(out).splitlines()
        assert lines[0] == "x,y,boundary"
        assert all(line.split(",")[2] in ("0", "1") for line in lines[1:])
        doc = json.loads(_read(out + ".manifest.json"))
        assert doc["subcommand"] == "nodes"
        assert doc["seed"] == 3
        assert doc["outputs"] == [out]
        assert doc["wall_clock_s"] >= 0.0

    def test_deterministic_reruns_byte_identical(self, tmp_path):
        a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        cli.main(["nodes", "--h", "0.1", "--seed", "5", "--out", a])
        cli.main(["nodes", "--h", "0.1", "--seed", "5", "--out", b])
        assert _read(a) == _read(b)

    def test_eval_and_edges_outputs(self, tmp_path):
        out = str(tmp_path / "X.csv")
        ev = str(tmp_path / "Y.csv")
        ed = str(tmp_path / "edges.csv")
        rc = cli.main(["nodes", "--h", "0.1", "--q", "4", "--out", out,
                       "--out-eval", ev, "--out-edges", ed])
        assert rc == 0
        assert _read(ev).splitlines()[0] == "x,y,boundary"
        assert _read(ed).splitlines()[0] == "i,j,mx,my,len"

    def test_missing_h_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["nodes"])
        assert exc.value.code == 2

    def test_unknown_domain_returns_2(self, tmp_path):
        rc = cli.main(["nodes", "--h", "0.1", "--domain", "disk",
                       "--out", str(tmp_path / "X.csv")])
        assert rc == 2


class TestSolve:
    def _config(self, tmp_path, **over):
        cfg = {"method": "fd", "h": 0.1, "q": 4, "p": 3, "cfl": 0.2,
               "t_final": 0.0, "penalty": True, "seed": 0,
               "outdir": str(tmp_path)}
        cfg.update(over)
        path = tmp_path / "run.json"
        path.write_text(json.dumps(cfg), encoding="ascii")
        return str(path)

    def test_t_final_zero_outputs_sampled_ic(self, tmp_path):
        from rbflab import advection as adv

        rc = cli.main(["solve", "--config", self._config(tmp_path)])
        assert rc == 0
        rows = [l.split(",") for l in
                _read(str(tmp_path / "solution.csv")).splitlines()[1:]]
        pts = np.array([[float(r[0]), float(r[1])] for r in rows])
        u = np.array([float(r[2]) for r in rows])
        proj = u - adv.initial_condition(pts)
        # the stored solution is the evaluated projection of the bump
        # (peak value 3; coarse h=0.1 evaluation error is a few percent)
        assert np.max(np.abs(proj)) < 0.2
        energy = _read(str(tmp_path / "energy.csv")).splitlines()
        assert energy == ["t,ratio", "0,1"]

    def test_manifest_echoes_config(self, tmp_path):
        cli.main(["solve", "--config", self._config(tmp_path)])
        doc = json.loads(_read(str(tmp_path / "manifest.json")))
        assert doc["subcommand"] == "solve"
        assert doc["config"]["method"] == "fd"
        assert doc["config"]["t_final"] == 0.0

    def test_missing_key_returns_2(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"method": "fd", "h": 0.1}),
                       encoding="ascii")
        assert cli.main(["solve", "--config", str(cfg)]) == 2

    def test_missing_file_returns_2(self, tmp_path):
        assert cli.main(["solve", "--config",
                         str(tmp_path / "nope.json")]) == 2

    def test_invalid_json_returns_2(self, tmp_path):
        cfg = tmp_path / "broken.json"
        cfg.write_text("{not json", encoding="ascii")
        assert cli.main(["solve", "--config", str(cfg)]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverging_run_returns_3(self, tmp_path):
        path = self._config(tmp_path, cfl=5.0, t_final=150.0, penalty=False)
        assert cli.main(["solve", "--config", path]) == 3


class TestSpectrum:
    def test_outputs(self, tmp_path):
        rc = cli.main(["spectrum", "--method", "fd", "--h", "0.12", "--p", "2",
                       "--q", "3", "--cfl", "0.2", "--penalty",
                       "--outdir", str(tmp_path)])
        assert rc == 0
        lines = _read(str(tmp_path / "spectrum.csv")).splitlines()
        assert lines[0] == "re,im,stable"
        flags = {l.split(",")[2] for l in lines[1:]}
        assert flags <= {"0", "1"}
        svg = _read(str(tmp_path / "spectrum.svg"))
        assert svg.startswith("<svg")
        assert "polyline" in svg and "circle" in svg


class TestRerun:
    def test_round_trip_byte_identical(self, tmp_path):
        d1, d2 = tmp_path / "one", tmp_path / "two"
        d1.mkdir(), d2.mkdir()
        out1 = str(d1 / "X.csv")
        cli.main(["nodes", "--h", "0.1", "--seed", "2", "--out", out1])
        manifest = json.loads(_read(out1 + ".manifest.json"))
        manifest["config"]["out"] = str(d2 / "X.csv")
        mpath = d2 / "redo.manifest.json"
        mpath.write_text(json.dumps(manifest), encoding="ascii")
        assert cli.main(["rerun", str(mpath)]) == 0
        assert _read(out1) == _read(str(d2 / "X.csv"))

    def test_unknown_subcommand_returns_2(self, tmp_path):
        mpath = tmp_path / "bad.json"
        mpath.write_text(json.dumps({"subcommand": "rerun", "config": {}}),
                         encoding="ascii")
        assert cli.main(["rerun", str(mpath)]) == 2


class TestSmallStudies:
    def test_jumps1d(self, tmp_path, capsys):
        rc = cli.main(["jumps1d", "--p", "3", "--N", "20", "--n", "20",
                       "--outdir", str(tmp_path)])
        assert rc == 0
        assert "max_jump" in capsys.readouterr().out
        lines = _read(str(tmp_path / "jumps1d.csv")).splitlines()
        assert lines[0] == "N,n,p,max_jump"
        assert float(lines[1].split(",")[3]) <= 1e-12

    def test_quadrature_small(self, tmp_path):
        rc = cli.main(["quadrature", "--kind", "cartesian", "--f", "cubic",
                       "--h-list", "0.12,0.09,0.07,0.05",
                       "--outdir", str(tmp_path)])
        assert rc == 0
        lines = _read(str(tmp_path / "quadrature.csv")).splitlines()
        assert lines[0] == "integrand,kind,h_y,error"
        assert len(lines) == 5

    def test_maxcfl_q_list(self, tmp_path):
        rc = cli.main(["maxcfl", "--method", "fd", "--h", "0.12", "--p", "2",
                       "--q-list", "2,3", "--penalty",
                       "--outdir", str(tmp_path)])
        assert rc == 0
        lines = _read(str(tmp_path / "maxcfl.csv")).splitlines()
        assert lines[0] == "q,max_cfl,stable"
        assert len(lines) == 3
        for line in lines[1:]:
            q, cfl, stable = line.split(",")
            assert float(cfl) > 0.0
            assert stable == "1"


class TestLoggingAndFormats:
    def test_invalid_rbf_log_returns_2(self, tmp_path, monkeypatch):
        monkeypatch.setenv("RBF_LOG", "chatty")
        assert cli.main(["nodes", "--h", "0.1",
                         "--out", str(tmp_path / "X.csv")]) == 2

    def test_write_matrix_coordinate_format(self, tmp_path):
        import scipy.sparse as sp

        A = sp.csr_matrix(np.array([[1.5, 0.0], [0.0, -2.0], [3.0, 0.0]]))
        path = str(tmp_path / "A.txt")
        cli.write_matrix_coordinate(path, A)
        lines = _read(path).splitlines()
        assert lines[0] == "3 2 3"
        assert lines[1].split() == ["0", "0", "1.5"]

    def test_floats_use_17_significant_digits(self, tmp_path):
        path = str(tmp_path / "f.csv")
        cli.write_csv(path, "v", [(1.0 / 3.0,)])
        assert _read(path).splitlines()[1] == "0.33333333333333331"

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--version"])
        assert exc.value.code == 0
