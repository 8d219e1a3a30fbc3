import json
import re

import pytest

from mapforensics.cli import (
    EXIT_BACKEND,
    EXIT_DATA,
    EXIT_OK,
    EXIT_TRAINING,
    EXIT_VALIDATION,
    exit_code_for,
    main,
    parse_config_file,
)
from mapforensics.errors import (
    BackendUnavailableError,
    ManifestFormatError,
    NonFiniteLossError,
    VocabularyError,
)


class TestExitCodes:
    def test_mapping(self):
        assert exit_code_for(VocabularyError("f", "m")) == EXIT_VALIDATION
        assert exit_code_for(ValueError("x")) == EXIT_VALIDATION
        assert exit_code_for(ManifestFormatError("x")) == EXIT_DATA
        assert exit_code_for(FileNotFoundError("x")) == EXIT_DATA
        assert exit_code_for(BackendUnavailableError("x")) == EXIT_BACKEND
        assert exit_code_for(NonFiniteLossError("x", epoch=1, batch=0)) == EXIT_TRAINING
        assert exit_code_for(RuntimeError("x")) == 1

    def test_no_arguments_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as e:
            main([])
        assert e.value.code == 2

    def test_unknown_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(["--version"])
        assert e.value.code == 0
        assert "mapforensics" in capsys.readouterr().out

    def test_errors_are_single_tab_separated_lines(self, tmp_path, capsys):
        rc = main(["train", "--corpus", str(tmp_path / "missing"), "--out", str(tmp_path / "m.pt")])
        assert rc == EXIT_DATA
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1
        kind, name, message = err[0].split("\t", 2)
        assert kind == "error" and name == "FileNotFoundError" and message


class TestPlanCommand:
    def test_default_plan_totals(self, tmp_path, capsys):
        out = tmp_path / "plan.jsonl"
        assert main(["plan", "--out", str(out)]) == EXIT_OK
        assert "planned 4675 prompts" in capsys.readouterr().out
        header = json.loads(out.read_text().splitlines()[0])
        assert header["total"] == 4675
        assert header["quotas"] == {"state": 30, "country": 30, "continent": 25}

    def test_bad_quota_level(self, tmp_path):
        rc = main(["plan", "--out", str(tmp_path / "p.jsonl"), "--quotas", "planet=3"])
        assert rc == EXIT_VALIDATION

    def test_malformed_quotas(self, tmp_path):
        rc = main(["plan", "--out", str(tmp_path / "p.jsonl"), "--quotas", "state:3"])
        assert rc == EXIT_VALIDATION


class TestEvalCommand:
    def test_cm_mode_prints_published_numbers(self, capsys):
        assert main(["eval", "--cm", "616,92,86,1135"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "accuracy  0.908" in out
        assert "recall    0.878" in out
        assert "positive class: ai_generated" in out

    def test_cm_machine_mode(self, capsys, tmp_path):
        report_path = tmp_path / "report.txt"
        rc = main(["eval", "--cm", "616,92,86,1135", "--machine", "--out", str(report_path)])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "accuracy=1751/1929" in out
        assert report_path.read_text() == out

    def test_cm_malformed(self):
        assert main(["eval", "--cm", "1,2,3"]) == EXIT_VALIDATION
        assert main(["eval", "--cm", "1,2,3,x"]) == EXIT_VALIDATION

    def test_eval_requires_inputs(self):
        assert main(["eval"]) == EXIT_VALIDATION


class TestConfigFile:
    def test_parse_config_file(self, tmp_path):
        path = tmp_path / "opts.cfg"
        path.write_text("# comment\nseed = 7\nmax-epochs=2\n\nverbose = true\n")
        assert parse_config_file(path) == {"seed": "7", "max_epochs": "2", "verbose": "true"}

    def test_malformed_config_line(self, tmp_path):
        path = tmp_path / "opts.cfg"
        path.write_text("seed 7\n")
        with pytest.raises(ValueError):
            parse_config_file(path)

    def test_config_supplies_defaults_cli_overrides(self, tmp_path):
        cfg = tmp_path / "opts.cfg"
        cfg.write_text("seed = 9\nquotas = continent=2\n")
        out1 = tmp_path / "p1.jsonl"
        assert main(["--config", str(cfg), "plan", "--out", str(out1)]) == EXIT_OK
        header = json.loads(out1.read_text().splitlines()[0])
        assert header["seed"] == 9 and header["quotas"] == {"continent": 2}

        out2 = tmp_path / "p2.jsonl"
        assert main(["--config", str(cfg), "plan", "--out", str(out2), "--seed", "4"]) == EXIT_OK
        header = json.loads(out2.read_text().splitlines()[0])
        assert header["seed"] == 4 and header["quotas"] == {"continent": 2}

    def test_inapplicable_config_keys_are_ignored(self, tmp_path):
        cfg = tmp_path / "opts.cfg"
        cfg.write_text("batch-size = 16\n")  # a train option; plan ignores it
        assert main(["--config", str(cfg), "plan", "--out", str(tmp_path / "p.jsonl"),
                     "--quotas", "continent=1"]) == EXIT_OK

    def test_missing_config_file(self, tmp_path):
        rc = main(["--config", str(tmp_path / "nope.cfg"), "plan", "--out", str(tmp_path / "p")])
        assert rc == EXIT_DATA


class TestArgumentValidation:
    def test_generate_needs_endpoint_or_offline(self, tmp_path, vocab):
        from mapforensics.corpus import build_generation_plan, save_plan

        plan_path = tmp_path / "plan.jsonl"
        save_plan(build_generation_plan(quotas={"continent": 1}, vocab=vocab), plan_path)
        rc = main(["generate", "--plan", str(plan_path), "--staging", str(tmp_path / "s")])
        assert rc == EXIT_VALIDATION

    def test_offline_scrape_needs_fixtures(self, tmp_path):
        rc = main(["--offline", "scrape", "--staging", str(tmp_path / "s")])
        assert rc == EXIT_VALIDATION

    def test_scrape_rejects_unknown_level(self, tmp_path):
        rc = main(["--offline", "scrape", "--staging", str(tmp_path / "s"),
                   "--fixtures", str(tmp_path / "f"), "--counts", "planet=2"])
        assert rc == EXIT_VALIDATION

    def test_build_rejects_bad_fractions(self, tmp_path):
        rc = main(["build", "--corpus", str(tmp_path / "c"), "--staging", str(tmp_path / "s"),
                   "--fractions", "0.5,0.5"])
        assert rc == EXIT_VALIDATION


@pytest.mark.slow
class TestPipelineEndToEnd:
    def test_offline_pipeline(self, tmp_path, capsys):
        plan = tmp_path / "plan.jsonl"
        staging_ai = tmp_path / "staging-ai"
        staging_human = tmp_path / "staging-human"
        fixtures = tmp_path / "fixtures"
        corpus = tmp_path / "corpus"
        model = tmp_path / "model.pt"

        assert main(["plan", "--out", str(plan), "--quotas", "continent=1", "--seed", "5"]) == EXIT_OK
        assert main(["--offline", "generate", "--plan", str(plan),
                     "--staging", str(staging_ai)]) == EXIT_OK
        assert main(["--offline", "scrape", "--staging", str(staging_human),
                     "--fixtures", str(fixtures), "--counts", "continent=1"]) == EXIT_OK
        assert main(["build", "--corpus", str(corpus), "--staging", str(staging_ai),
                     "--staging", str(staging_human), "--split-seed", "2"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "built corpus: 14 records" in out
        assert "ai_generated=7, human_designed=7" in out

        assert main(["--offline", "train", "--corpus", str(corpus), "--out", str(model),
                     "--max-epochs", "2", "--batch-size", "4", "--seed", "0"]) == EXIT_OK
        assert model.exists()
        sidecar = json.loads((tmp_path / "model.pt.config.json").read_text())
        assert sidecar["config"]["pretrained_init"] is False  # offline forces scratch
        capsys.readouterr()

        assert main(["eval", "--corpus", str(corpus), "--checkpoint", str(model),
                     "--split", "val"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "observations: 2" in out

        image = sorted((corpus / "images").rglob("*.png"))[0]
        assert main(["detect", "--checkpoint", str(model), str(image)]) == EXIT_OK
        line = capsys.readouterr().out.strip()
        assert re.fullmatch(
            rf"{re.escape(str(image))}\t(ai_generated|human_designed)\t0\.\d{{4}}|"
            rf"{re.escape(str(image))}\t(ai_generated|human_designed)\t1\.0000",
            line,
        )
