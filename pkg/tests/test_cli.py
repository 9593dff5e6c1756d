import json
import logging
import os
import tempfile
import unittest

import pandas as pd
import yaml
from click.testing import CliRunner

from sums import __version__
from sums.cli import cli
from sums.services.data_service import sha256_file

TINY_CONFIG = {
    "chain": {
        "n_iter": 30,
        "burnin": 10,
        "thin": 2,
        "adapt_burnin": 5,
        "seed": 5,
        "progress_every": 10,
    },
    "graph": {"n_mc": 100},
    "logging": {"file": "sums.log", "level": "WARNING"},
}

STUDY_FILES = ("panel.csv", "covariates.csv", "covariates_tv.csv", "design.yaml")


def read_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


class TestCli(unittest.TestCase):

    def setUp(self):
        root = logging.getLogger()
        self._handlers = root.handlers[:]
        self._level = root.level
        self.runner = CliRunner()
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = self.tmp.name
        self.config_path = os.path.join(self.dir, "tiny.yaml")
        with open(self.config_path, "w", encoding="utf-8") as handle:
            yaml.safe_dump(TINY_CONFIG, handle)

    def tearDown(self):
        root = logging.getLogger()
        for handler in root.handlers:
            if handler not in self._handlers:
                handler.close()
        root.handlers = self._handlers
        root.setLevel(self._level)
        self.tmp.cleanup()

    def path(self, *parts):
        return os.path.join(self.dir, *parts)

    def invoke(self, *args):
        return self.runner.invoke(cli, list(args))

    def simulate(self, name="data", seed="3", n_subjects="8"):
        result = self.invoke(
            "simulate", "--seed", seed, "--n-subjects", n_subjects,
            "--out", self.path(name),
        )
        self.assertEqual(result.exit_code, 0, result.output)
        return self.path(name)

    def fit(self, data_dir, name="run"):
        result = self.invoke("fit", "--data", data_dir, "--config", self.config_path,
                             "--out", self.path(name))
        self.assertEqual(result.exit_code, 0, result.output)
        return self.path(name)

    def test_version(self):
        result = self.invoke("--version")
        self.assertEqual(result.exit_code, 0)
        self.assertIn(__version__, result.output)

    def test_simulate_writes_study(self):
        data_dir = self.simulate()
        for name in STUDY_FILES + ("truth.json",):
            self.assertTrue(os.path.exists(os.path.join(data_dir, name)), name)
        truth = read_json(os.path.join(data_dir, "truth.json"))
        self.assertEqual(truth["preset"], "sm4")
        self.assertEqual(truth["seed"], 3)
        self.assertEqual(len(truth["allocations"]), 8)

    def test_simulate_requires_out(self):
        result = self.invoke("simulate", "--seed", "1")
        self.assertEqual(result.exit_code, 2)

    def test_simulate_is_reproducible(self):
        first = self.simulate("a", seed="9")
        second = self.simulate("b", seed="9")
        for name in STUDY_FILES:
            self.assertEqual(
                sha256_file(os.path.join(first, name)),
                sha256_file(os.path.join(second, name)),
            )

    def test_fit_and_summarize(self):
        data_dir = self.simulate()
        run_dir = self.fit(data_dir)

        manifest = read_json(os.path.join(run_dir, "manifest.json"))
        self.assertEqual(manifest["status"], "complete")
        self.assertEqual(manifest["seed"], 5)
        self.assertEqual(manifest["n_chains"], 1)
        self.assertEqual(manifest["chains"][0]["saved"], 10)
        self.assertEqual(manifest["config"]["chain"]["n_iter"], 30)
        self.assertIn("panel.csv", manifest["inputs"])
        self.assertIn("x1", manifest["covariate_transform"])
        samples = os.path.join(run_dir, "chain_0", "samples.jsonl")
        with open(samples, "r", encoding="utf-8") as handle:
            self.assertEqual(len(handle.readlines()), 10)
        self.assertTrue(os.path.exists(os.path.join(run_dir, "sums.log")))

        out = self.path("summary")
        result = self.invoke(
            "summarize", "--samples", run_dir, "--out", out,
            "--truth", os.path.join(data_dir, "truth.json"),
        )
        self.assertEqual(result.exit_code, 0, result.output)
        summary = read_json(os.path.join(out, "summary.json"))
        self.assertEqual(summary["n_saved"], 10)
        self.assertEqual(summary["phi_source"], "cluster_average")
        self.assertIn("adjusted_rand", summary)
        self.assertEqual(len(summary["binder_partition"]), 8)
        edges = pd.read_csv(os.path.join(out, "edge_probs.csv"))
        self.assertEqual(len(edges), 3)
        coclustering = pd.read_csv(os.path.join(out, "coclustering.csv"))
        self.assertEqual(coclustering.shape, (8, 9))
        for name in ("bf_table.csv", "phi_by_cluster.csv"):
            self.assertTrue(os.path.exists(os.path.join(out, name)), name)

    def test_same_seed_same_outputs(self):
        data_dir = self.simulate(n_subjects="6")
        digests = []
        for name in ("run_a", "run_b"):
            run_dir = self.fit(data_dir, name=name)
            out = self.path(name + "_summary")
            result = self.invoke("summarize", "--samples", run_dir, "--out", out)
            self.assertEqual(result.exit_code, 0, result.output)
            outputs = [
                os.path.join(out, f) for f in sorted(os.listdir(out)) if f != "sums.log"
            ]
            samples = os.path.join(run_dir, "chain_0", "samples.jsonl")
            digests.append([sha256_file(path) for path in [samples] + outputs])
        self.assertEqual(digests[0], digests[1])

    def test_summarize_with_fixed_partition_rerun(self):
        data_dir = self.simulate(n_subjects="6")
        run_dir = self.fit(data_dir)
        out = self.path("summary")
        result = self.invoke(
            "summarize", "--samples", run_dir, "--out", out, "--data", data_dir
        )
        self.assertEqual(result.exit_code, 0, result.output)
        summary = read_json(os.path.join(out, "summary.json"))
        self.assertEqual(summary["phi_source"], "fixed_partition_rerun")
        frame = pd.read_csv(os.path.join(out, "phi_by_cluster.csv"))
        self.assertEqual(frame["size"].groupby(frame["cluster"]).first().sum(), 6)

    def test_summarize_empty_samples(self):
        os.makedirs(self.path("empty", "chain_0"))
        open(self.path("empty", "chain_0", "samples.jsonl"), "w").close()
        result = self.invoke(
            "summarize", "--samples", self.path("empty"), "--out", self.path("summary")
        )
        self.assertEqual(result.exit_code, 3)
        self.assertIn("no saved iterations", result.output)

    def test_fit_malformed_panel(self):
        os.makedirs(self.path("bad"))
        with open(self.path("bad", "panel.csv"), "w", encoding="utf-8") as handle:
            handle.write(
                "subject_id,process,time,state\nA,P1,0,1\nA,P1,1,1\nA,P1,2,two\n"
            )
        result = self.invoke(
            "fit", "--data", self.path("bad"), "--config", self.config_path,
            "--out", self.path("run"),
        )
        self.assertEqual(result.exit_code, 3)
        self.assertIn("row 4", result.output)

    def test_fit_invalid_config(self):
        data_dir = self.simulate()
        bad_config = self.path("bad.yaml")
        with open(bad_config, "w", encoding="utf-8") as handle:
            yaml.safe_dump({"chain": {"n_iter": 5, "burnin": 10}}, handle)
        result = self.invoke(
            "fit", "--data", data_dir, "--config", bad_config, "--out", self.path("run")
        )
        self.assertEqual(result.exit_code, 2)

    def test_sensitivity(self):
        data_dir = self.simulate(n_subjects="6")
        out = self.path("grid")
        result = self.invoke(
            "sensitivity", "--data", data_dir, "--config", self.config_path,
            "--out", out, "--lambdas", "0.5,1", "--gammas", "1",
        )
        self.assertEqual(result.exit_code, 0, result.output)
        frame = pd.read_csv(os.path.join(out, "sensitivity.csv"))
        self.assertEqual(list(frame.columns), [
            "Lambda", "gamma_s", "mode_K_N", "mode_M", "binder_clusters",
            "entropy_lo", "entropy_hi",
        ])
        self.assertEqual(frame["Lambda"].tolist(), [0.5, 1.0])

    def test_sensitivity_rejects_bad_grid(self):
        data_dir = self.simulate(n_subjects="6")
        result = self.invoke(
            "sensitivity", "--data", data_dir, "--config", self.config_path,
            "--out", self.path("grid"), "--lambdas", "a,b", "--gammas", "1",
        )
        self.assertEqual(result.exit_code, 2)
