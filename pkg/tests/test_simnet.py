#!/usr/bin/env python3

import unittest
import os
import sys
import io
import re

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from print_job_ledger.agents import Phase
from print_job_ledger.config import SimConfig
from print_job_ledger.errors import ConfigError, SimulationError
from print_job_ledger.simnet import (JOB_CSV_HEADER, EventKind, EventQueue, SimMetrics, TxMetric,
                                     VirtualClock, check_bound, job_csv_text, read_job_csv,
                                     render_summary_text, run_load, run_sim, summarize, summarize_job_rows,
                                     summary_from_json, summary_to_json)

D_BLOCK = 12000


class TestEventQueue(unittest.TestCase):

    def test_time_order_then_scheduling_order(self):
        queue = EventQueue()
        fired = []
        queue.schedule(20, EventKind.AGENT_TICK, lambda: fired.append("late"))
        queue.schedule(10, EventKind.BLOCK_PRODUCTION, lambda: fired.append("block"))
        queue.schedule(10, EventKind.AGENT_TICK, lambda: fired.append("tick"))
        self.assertEqual(queue.peek_time(), 10)
        self.assertEqual(len(queue), 3)
        while queue:
            queue.pop()[2]()
        self.assertEqual(fired, ["block", "tick", "late"])
        self.assertIsNone(queue.peek_time())

    def test_clock_never_moves_back(self):
        clock = VirtualClock()
        clock.advance_to(500)
        clock.advance_to(500)
        self.assertEqual(clock.now(), 500)
        with self.assertRaises(SimulationError):
            clock.advance_to(499)


class TestSimConfig(unittest.TestCase):

    def test_invalid_values(self):
        for bad in [dict(d_block=0), dict(block_dist="uniform"), dict(inclusion_skip=0),
                    dict(propagation_delay=-1), dict(n_jobs=0), dict(poll_interval=0),
                    dict(print_model="fixed:-5"), dict(approval_timeout_ms=0)]:
            with self.assertRaises(ConfigError, msg=str(bad)):
                SimConfig(**bad)

    def test_unknown_keys_refused(self):
        with self.assertRaises(ConfigError):
            SimConfig.from_dict({"d_block": 1000, "block_time": 5})

    def test_overrides_skip_missing_values(self):
        config = SimConfig(d_block=9000).with_overrides(d_block=None, inclusion_skip=2)
        self.assertEqual(config.d_block, 9000)
        self.assertEqual(config.inclusion_skip, 2)
        self.assertEqual(config.to_dict()["print_model"], "fixed:1000")


class TestJobRuns(unittest.TestCase):
    """Print job sequences on deterministic block intervals"""

    @classmethod
    def setUpClass(cls):
        cls.skip2_config = SimConfig(d_block=D_BLOCK, inclusion_skip=2, n_jobs=100, rng_seed=3)
        cls.skip2 = run_sim(cls.skip2_config)
        cls.skip1_config = SimConfig(d_block=D_BLOCK, inclusion_skip=1, n_jobs=30, rng_seed=3)
        cls.skip1 = run_sim(cls.skip1_config)

    def test_every_job_completes(self):
        self.assertEqual(len(self.skip2.metrics.per_job), 100)
        self.assertEqual(self.skip2.metrics.failed_jobs, [])

    def test_two_block_wait_bounds(self):
        """Two-block inclusion keeps request-approve within 48 s and response within 24 s"""
        jobs = self.skip2.metrics.per_job
        self.assertLessEqual(max(job.request_approve_ms for job in jobs), 4 * D_BLOCK)
        self.assertLessEqual(max(job.response_ms for job in jobs), 2 * D_BLOCK)
        mean = sum(job.request_approve_ms for job in jobs) / len(jobs)
        self.assertGreaterEqual(mean, 2 * D_BLOCK)
        self.assertLessEqual(mean, 4 * D_BLOCK)

    def test_one_block_wait_bounds(self):
        jobs = self.skip1.metrics.per_job
        self.assertLessEqual(max(job.request_approve_ms for job in jobs), 2 * D_BLOCK)
        self.assertLessEqual(max(job.response_ms for job in jobs), D_BLOCK)
        self.assertLessEqual(max(job.request_ms for job in jobs), D_BLOCK)

    def test_latency_bound_holds(self):
        for result, config in [(self.skip2, self.skip2_config), (self.skip1, self.skip1_config)]:
            report = check_bound(result.metrics, config)
            self.assertTrue(report.ok, report.describe())
            self.assertEqual(report.checked, 3 * config.n_jobs)

    def test_inclusion_waits_at_least_skip_blocks(self):
        for tx in self.skip2.metrics.per_tx:
            self.assertGreaterEqual(tx.n_until_included, 2)
            self.assertGreaterEqual(tx.d_tx, 0)

    def test_phases_add_up(self):
        for job in self.skip2.metrics.per_job:
            self.assertGreaterEqual(job.request_approve_ms, job.request_ms)
            self.assertGreaterEqual(job.all_phase_ms - job.request_approve_ms, job.response_ms)

    def phase_times_from_log(self, result):
        """Submission time and first tick reaching each phase, per job id, read off the event log"""
        submitted, reached = {}, {}
        for record in result.event_log:
            if record.kind == EventKind.SUBMISSION.value:
                job_hex = re.match(r"job=(0x[0-9a-f]+)", record.detail).group(1)
                submitted[job_hex] = record.at
            elif record.kind == EventKind.AGENT_TICK.value:
                for job_hex, name in re.findall(r"job=(0x[0-9a-f]+) phase=(\w+)", record.detail):
                    stamps = reached.setdefault(job_hex, {})
                    for phase in Phase:
                        if Phase.SUBMITTED < phase <= Phase[name] and phase not in stamps:
                            stamps[phase] = record.at
        return submitted, reached

    def test_phases_match_event_log(self):
        """Request-approve and all-phase times decompose exactly from the logged ticks"""
        for result in (self.skip2, self.skip1):
            submitted, reached = self.phase_times_from_log(result)
            for job in result.metrics.per_job:
                job_hex = job.job_id.hex0x()
                start = submitted[job_hex]
                stamps = reached[job_hex]
                self.assertEqual(stamps[Phase.AWAITING_RESPONSE] - start, job.request_approve_ms, job_hex)
                self.assertEqual(stamps[Phase.DONE] - start, job.all_phase_ms, job_hex)
                self.assertLessEqual(stamps[Phase.AWAITING_APPROVAL], stamps[Phase.AWAITING_RESPONSE])
                self.assertGreaterEqual(stamps[Phase.AWAITING_APPROVAL] - start, job.request_ms)

    def test_every_job_finishes_within_liveness_bound(self):
        """Three inclusions, one print and two polling delays bound each job"""
        for result, config in [(self.skip2, self.skip2_config), (self.skip1, self.skip1_config)]:
            bound = (3 * config.inclusion_skip * config.d_block + config.print_model.duration(config.model_size)
                     + 2 * config.poll_interval)
            for job in result.metrics.per_job:
                self.assertLessEqual(job.all_phase_ms, bound, job.job_id.hex0x())

    def test_chain_records_every_job(self):
        state = self.skip2.chain.read_state()
        self.assertEqual(len(state.jobs), 100)
        self.assertTrue(all(record.printed for record in state.jobs.values()))

    def test_deterministic_replay(self):
        """Same config, same CSV bytes, event log and tip"""
        config = SimConfig(d_block=D_BLOCK, n_jobs=10, rng_seed=11, start_jitter_ms=700)
        first, second = run_sim(config), run_sim(config)
        self.assertEqual(job_csv_text(first.metrics), job_csv_text(second.metrics))
        self.assertEqual([e.render() for e in first.event_log], [e.render() for e in second.event_log])
        self.assertEqual(first.chain.canonical_tip, second.chain.canonical_tip)

    def test_seed_changes_run(self):
        config = SimConfig(d_block=D_BLOCK, n_jobs=5, block_dist="exponential")
        first = run_sim(config.with_overrides(rng_seed=1))
        second = run_sim(config.with_overrides(rng_seed=2))
        self.assertNotEqual(first.chain.canonical_tip, second.chain.canonical_tip)


class TestRunVariants(unittest.TestCase):

    def test_exponential_blocks_complete(self):
        config = SimConfig(d_block=D_BLOCK, block_dist="exponential", n_jobs=10, rng_seed=5)
        result = run_sim(config)
        self.assertEqual(len(result.metrics.per_job), 10)
        with self.assertLogs("print_job_ledger.simnet", level="WARNING"):
            check_bound(result.metrics, config)

    def test_propagation_delay(self):
        config = SimConfig(d_block=D_BLOCK, n_jobs=10, propagation_delay=3000, rng_seed=5)
        result = run_sim(config)
        self.assertEqual(len(result.metrics.per_job), 10)
        self.assertTrue(check_bound(result.metrics, config).ok)
        for job in result.metrics.per_job:
            self.assertGreaterEqual(job.request_ms, 3000)

    def test_time_ceiling(self):
        config = SimConfig(d_block=D_BLOCK, n_jobs=1, time_limit_ms=1000)
        with self.assertRaises(SimulationError) as context:
            run_sim(config)
        self.assertIn("height 0", str(context.exception))

    def test_approval_timeout_records_failures(self):
        config = SimConfig(d_block=D_BLOCK, n_jobs=3, approval_timeout_ms=5000)
        metrics = run_sim(config).metrics
        self.assertEqual(metrics.per_job, [])
        self.assertEqual([reason for _, reason in metrics.failed_jobs], ["timeout"] * 3)


class TestLoadRuns(unittest.TestCase):
    """Mean inclusion latency under uniform background load"""

    def assertMeanNear(self, result, expected):
        delays = [tx.d_tx for tx in result.metrics.per_tx]
        self.assertEqual(len(delays), 1000)
        mean = sum(delays) / len(delays)
        self.assertAlmostEqual(mean, expected, delta=0.1 * expected)

    def test_one_block_wait(self):
        self.assertMeanNear(run_load(SimConfig(d_block=D_BLOCK, rng_seed=1), 1000), D_BLOCK / 2)

    def test_two_block_wait(self):
        self.assertMeanNear(run_load(SimConfig(d_block=D_BLOCK, inclusion_skip=2, rng_seed=1), 1000),
                            1.5 * D_BLOCK)

    def test_delay_adds_to_mean(self):
        result = run_load(SimConfig(d_block=9170, propagation_delay=6000, rng_seed=1), 1000)
        self.assertMeanNear(result, 6000 + 9170 / 2)

    def test_needs_transactions(self):
        with self.assertRaises(SimulationError):
            run_load(SimConfig(), 0)


class TestSummaries(unittest.TestCase):

    def test_single_value(self):
        metrics = SimMetrics(per_tx=[TxMetric(b"\x00" * 32, 0, 12000, 12000, 1)])
        rows = summarize(metrics)
        self.assertEqual([row.quantity for row in rows], ["d_tx_ms", "n_until_included"])
        self.assertEqual(rows[0].count, 1)
        self.assertEqual(rows[0].stddev, 0.0)
        self.assertEqual(rows[0].mean, rows[0].min)

    def test_empty_metrics(self):
        self.assertEqual(summarize(SimMetrics()), [])
        self.assertEqual(render_summary_text([]).splitlines()[0].split(),
                         ["quantity", "count", "mean", "stddev", "min", "max"])

    def test_csv_round_trip(self):
        metrics = run_sim(SimConfig(d_block=D_BLOCK, n_jobs=5, rng_seed=2)).metrics
        text = job_csv_text(metrics)
        self.assertEqual(text.splitlines()[0], ",".join(JOB_CSV_HEADER))
        rows = read_job_csv(io.StringIO(text))
        self.assertEqual(len(rows), 5)
        from_csv = {row.quantity: row for row in summarize_job_rows(rows)}
        direct = {row.quantity: row for row in summarize(metrics)}
        for quantity in JOB_CSV_HEADER[1:]:
            self.assertAlmostEqual(from_csv[quantity].mean, direct[quantity].mean)

    def test_csv_header_checked(self):
        with self.assertRaises(ValueError):
            read_job_csv(io.StringIO("job,request\n1,2\n"))

    def test_json_round_trip(self):
        rows = summarize(run_sim(SimConfig(d_block=D_BLOCK, n_jobs=3)).metrics)
        self.assertEqual(summary_from_json(summary_to_json(rows)), rows)

    def test_text_table_is_aligned(self):
        rows = summarize(run_sim(SimConfig(d_block=D_BLOCK, n_jobs=3)).metrics)
        lines = render_summary_text(rows).splitlines()
        self.assertEqual(len(lines), len(rows) + 1)
        self.assertTrue(lines[1].startswith("d_tx_ms"))


if __name__ == '__main__':
    unittest.main()
