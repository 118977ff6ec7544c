#!/usr/bin/env python3

import unittest
import os
import sys
import re
import tempfile
import shutil

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from print_job_ledger.repro import (REPORTS, TESTNET_BLOCK_MS, Check, repro_mainnet_estimate,
                                    repro_ropsten_context, seconds, write_report)

TAGGED_NUMBER = re.compile(r"\d+\.\d{3} s(?! \[(ref|oracle|sim)\])")


class TestFormatting(unittest.TestCase):

    def test_seconds(self):
        self.assertEqual(seconds(48000, "ref"), "48.000 s [ref]")
        self.assertEqual(seconds(4585.6, "oracle"), "4.586 s [oracle]")

    def test_check_render(self):
        self.assertEqual(Check("bound", True).render(), "bound: PASS")
        self.assertEqual(Check("bound", False).render(), "bound: FAIL")


class TestMainnetEstimate(unittest.TestCase):
    """12 s blocks with a two-block inclusion wait"""

    @classmethod
    def setUpClass(cls):
        cls.report = repro_mainnet_estimate(seed=0, n_jobs=20)

    def test_all_checks_pass(self):
        failed = [check.label for check in self.report.checks if not check.passed]
        self.assertEqual(failed, [])
        self.assertTrue(self.report.passed)

    def test_scenarios(self):
        main, single = self.report.scenarios
        self.assertEqual((main.inclusion_skip, single.inclusion_skip), (2, 1))
        self.assertEqual(main.n_jobs, 20)
        self.assertLessEqual(main.request_approve_max, 48000)
        self.assertLessEqual(main.response_max, 24000)
        self.assertEqual(main.bound_violations, 0)

    def test_markdown(self):
        text = self.report.render_markdown()
        self.assertIn("48.000 s [ref]", text)
        self.assertIn("24.000 s [ref]", text)
        self.assertIn("Overall: PASS", text)
        self.assertIsNone(TAGGED_NUMBER.search(text))

    def test_rendering_is_deterministic(self):
        again = repro_mainnet_estimate(seed=0, n_jobs=20)
        self.assertEqual(again.render_markdown(), self.report.render_markdown())


class TestTestnetContext(unittest.TestCase):
    """Propagation delay sweep at 9.17 s blocks"""

    @classmethod
    def setUpClass(cls):
        cls.report = repro_ropsten_context(seed=0, n_tx=600, n_jobs=5, delays=(0, 6000))

    def test_mean_follows_delay(self):
        no_delay, delayed = self.report.rows
        self.assertAlmostEqual(no_delay.mean_d_tx, TESTNET_BLOCK_MS / 2, delta=0.1 * TESTNET_BLOCK_MS / 2)
        self.assertAlmostEqual(delayed.mean_d_tx, 6000 + TESTNET_BLOCK_MS / 2,
                               delta=0.1 * (6000 + TESTNET_BLOCK_MS / 2))
        self.assertEqual(no_delay.oracle_d_tx, 4585)
        self.assertEqual(delayed.oracle_d_tx, 10585)
        self.assertEqual(no_delay.n_tx, 600)

    def test_markdown(self):
        text = self.report.render_markdown()
        for reference in ("9.170 s [ref]", "15.900 s [ref]", "14.660 s [ref]", "38.930 s [ref]"):
            self.assertIn(reference, text)
        self.assertRegex(text, r"lies (inside|outside) it")
        self.assertNotIn("FAIL", text)
        self.assertIsNone(TAGGED_NUMBER.search(text))


class TestWriteReport(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        if os.path.exists(self.test_dir):
            shutil.rmtree(self.test_dir)

    def test_write_creates_directory(self):
        reports_dir = os.path.join(self.test_dir, "reports")
        path = write_report("# title\n", "mainnet-estimate.md", reports_dir)
        self.assertEqual(path, os.path.join(reports_dir, "mainnet-estimate.md"))
        with open(path) as f:
            self.assertEqual(f.read(), "# title\n")

    def test_report_registry(self):
        self.assertEqual(REPORTS["mainnet"][0], "mainnet-estimate.md")
        self.assertEqual(REPORTS["ropsten"][0], "testnet-context.md")


if __name__ == '__main__':
    unittest.main()
