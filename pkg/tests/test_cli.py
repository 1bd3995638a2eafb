import csv
import io
import json

import pytest

from nctma.cli import main
from nctma.network import load_dataset


def run(*argv):
    out = io.StringIO()
    return main(list(argv), out=out), out.getvalue()


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("generate", "--count", "8", "--servers", "2-5", "--flows", "2-8", "--seed", "3",
               "--out", str(d / "raw.jsonl"))[0] == 0
    assert run("label", "--in", str(d / "raw.jsonl"), "--out", str(d / "lab.jsonl"))[0] == 0
    assert run("train", "--data", str(d / "lab.jsonl"), "--epochs", "2", "--hidden", "8",
               "--iterations", "2", "--attention", "off", "--out", str(d / "m.json"))[0] == 0
    return d


class TestPipeline:
    def test_generated_and_labelled(self, workdir):
        nets = load_dataset(workdir / "lab.jsonl")
        assert len(nets) == 8 and all(n.labels is not None for n in nets)

    def test_checkpoint(self, workdir):
        obj = json.loads((workdir / "m.json").read_text())
        assert (obj["hidden"], obj["iterations"], obj["attention"]) == (8, 2, False)

    @pytest.mark.parametrize("mode", ["exhaustive", "random", "deeptma"])
    def test_analyze(self, workdir, mode):
        code, text = run("analyze", "--network", str(workdir / "lab.jsonl"), "--flow", "0",
                         "--mode", mode, "--model", str(workdir / "m.json"), "--n", "2")
        assert code == 0
        assert json.loads(text)["mode"] == mode

    def test_evaluate_writes_csv_and_summary(self, workdir):
        code, _ = run("evaluate", "--data", str(workdir / "lab.jsonl"), "--model",
                      str(workdir / "m.json"), "--n", "1,2", "--csv", str(workdir / "e.csv"))
        assert code == 0
        rows = list(csv.reader((workdir / "e.csv").open()))
        assert rows[0][0] == "network_id" and len(rows) > 1
        assert (workdir / "e.summary.csv").exists()

    def test_importance_and_sweep(self, workdir):
        code, text = run("importance", "--data", str(workdir / "lab.jsonl"), "--model",
                         str(workdir / "m.json"), "--feature", "serverRate", "--permutations", "2")
        assert code == 0 and text.splitlines()[1].startswith("serverRate,")
        code, text = run("sweep-iterations", "--data", str(workdir / "lab.jsonl"), "--model",
                         str(workdir / "m.json"))
        assert code == 0 and len(text.splitlines()) == 4


class TestExitCodes:
    def test_unknown_subcommand(self):
        assert run("frobnicate")[0] == 1

    def test_bad_flag_value(self, tmp_path):
        assert run("generate", "--servers", "x", "--out", str(tmp_path / "a"))[0] == 1
        assert run("evaluate", "--data", "a", "--model", "b", "--n", "0")[0] == 1

    def test_missing_file(self, tmp_path):
        assert run("label", "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "o"))[0] == 2

    def test_schema_error(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": 0}\n')
        assert run("label", "--in", str(bad), "--out", str(tmp_path / "o"))[0] == 2

    def test_bad_checkpoint(self, workdir, tmp_path):
        obj = json.loads((workdir / "m.json").read_text())
        obj["tensors"]["msg_w"]["shape"] = [2, 2]
        (tmp_path / "m.json").write_text(json.dumps(obj))
        assert run("evaluate", "--data", str(workdir / "lab.jsonl"), "--model",
                   str(tmp_path / "m.json"))[0] == 2

    def test_unknown_flow(self, workdir):
        assert run("analyze", "--network", str(workdir / "lab.jsonl"), "--flow", "999")[0] == 1
