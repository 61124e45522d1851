import json

import pytest

from bsgkit.artifacts import Status
from bsgkit.orchestrator import (ConfigError, DeterministicBackend, GoldAccessError, GoldGuard, PipelineConfig,
                                 ProviderBackend, run_baseline, run_pipeline)
from bsgkit.provider import MockProvider
from bsgkit.transformer import FaultSpec
from bsgkit.validator import TestResult, summarize

from conftest import bundled

POINT = FaultSpec("point_constant", "mini-s1/ValidateOrder")
STRUCTURAL = FaultSpec("structural_drop_endpoint", "mini-s1/PriceOrder")


def scenario(sid="mini-s1"):
    return next(s for s in bundled() if s.id == sid)


def bundle(sid="mini-s1"):
    return scenario(sid).bundle()


class TestConfig:
    @pytest.mark.parametrize("kwargs", [{"max_iterations": 0}, {"extraction_temperature": 2.5},
                                        {"generation_temperature": -0.1}, {"mode": "turbo"},
                                        {"backend": "oracle"}])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigError):
            PipelineConfig(**kwargs)

    def test_defaults(self):
        c = PipelineConfig()
        assert (c.max_iterations, c.convergence_ber, c.extraction_temperature, c.generation_temperature) == \
            (3, 100.0, 0.2, 0.0)
        assert c.best_iteration_retention is False


class TestPipeline:
    def test_clean_run_needs_no_loop(self):
        state = run_pipeline(bundle())
        assert state.status is Status.COMPLETED
        assert state.history == [(0, 100.0)]
        assert state.iteration == 0

    def test_point_fault_is_repaired(self):
        state = run_pipeline(bundle(), PipelineConfig(fault=POINT))
        bers = [b for _, b in state.history]
        assert bers[0] < 100.0 and bers[-1] == 100.0
        assert state.iteration <= 3
        assert state.equiv_report.ber_percent == 100.0

    def test_no_feedback_validates_once(self):
        full = run_pipeline(bundle(), PipelineConfig(fault=POINT))
        single = run_pipeline(bundle(), PipelineConfig(fault=POINT, mode="no_feedback"))
        assert len(single.history) == 1
        assert single.equiv_report.ber_percent < full.equiv_report.ber_percent

    def test_structural_fault_persists(self):
        state = run_pipeline(bundle(), PipelineConfig(fault=STRUCTURAL))
        assert len(state.history) == 4
        assert all(b < 100.0 for _, b in state.history)
        dropped = [f for f in state.equiv_report.failures if f.node_ids == ("mini-s1/PriceOrder",)]
        assert dropped and {f.root_cause for f in dropped} == {"structural"}

    def test_deterministic_runs_agree(self):
        a = run_pipeline(bundle("mini-s8"))
        b = run_pipeline(bundle("mini-s8"))
        assert a.business_rules == b.business_rules
        assert a.bsg == b.bsg
        assert a.modern_code == b.modern_code
        assert a.equiv_report == b.equiv_report
        assert a.history == b.history

    def test_agent_failure_is_tagged(self):
        class Exploding(DeterministicBackend):
            def specify(self, bri, context, bundle):
                raise ValueError("boom")
        state = run_pipeline(bundle(), backend=Exploding())
        assert state.status is Status.FAILED
        assert state.failure["stage"] == "specify"
        assert state.bsg is None


class Scripted(DeterministicBackend):
    """Reports a fixed pass count per iteration, regardless of the package."""

    def __init__(self, passes):
        super().__init__()
        self.passes = passes
        self.calls = 0

    def validate(self, bsg, package, iteration):
        self.calls += 1
        p = self.passes[iteration]
        results = [TestResult(f"t{i:02d}", i < p, "obs", "exp", None if i < p else "point", (bsg.node_ids[0],))
                   for i in range(10)]
        return summarize(results, iteration)


class TestRetention:
    # iteration 1 scores best and iteration 2 regresses
    PASSES = {0: 5, 1: 9, 2: 6}

    def run(self, keep_best):
        config = PipelineConfig(max_iterations=2, best_iteration_retention=keep_best)
        backend = Scripted(self.PASSES)
        return run_pipeline(bundle(), config, backend=backend), backend

    def test_keeps_best_iteration(self):
        state, _ = self.run(True)
        assert [b for _, b in state.history] == [50.0, 90.0, 60.0]
        assert state.equiv_report.iteration == 1
        assert state.equiv_report.ber_percent == max(b for _, b in state.history)
        assert state.modern_code.iteration_tag == 1

    def test_default_keeps_last(self):
        state, backend = self.run(False)
        assert state.equiv_report.iteration == 2
        assert state.equiv_report.ber_percent == state.history[-1][1]
        assert backend.calls == 3

    def test_ties_prefer_earliest(self):
        config = PipelineConfig(max_iterations=2, best_iteration_retention=True)
        state = run_pipeline(bundle(), config, backend=Scripted({0: 7, 1: 7, 2: 7}))
        assert state.equiv_report.iteration == 0


class TestGoldIsolation:
    def test_pipeline_never_reads_gold(self):
        s = scenario()
        state = run_pipeline(s.bundle(), PipelineConfig(fault=POINT), gold_dirs=[s.gold_dir])
        assert state.status is Status.COMPLETED

    def test_guard_trips_on_read(self):
        s = scenario()
        with GoldGuard([s.gold_dir]) as guard:
            with pytest.raises(GoldAccessError):
                open(s.gold_dir / "rules.json").close()
        assert guard.violations
        # restored afterwards
        open(s.gold_dir / "rules.json").close()

    def test_sneaky_backend_fails_the_run(self):
        s = scenario()

        class Peeking(DeterministicBackend):
            def analyze(self, b):
                (s.gold_dir / "tests.json").read_text()
                return super().analyze(b)
        state = run_pipeline(s.bundle(), backend=Peeking(), gold_dirs=[s.gold_dir])
        assert state.status is Status.FAILED
        assert "GoldAccessError" in state.failure["message"]


SOURCE = json.dumps({"files": [{"path": "svc/app.py", "text": "print('hi')\n"}],
                     "manifest": {"command": ["python", "svc/app.py"], "mode": "stdio"}})


class TestBaselines:
    def test_sp_llm_with_mock(self, tmp_path):
        config = PipelineConfig(backend="provider", mode="sp_llm")
        state = run_baseline(bundle(), config, MockProvider(default=f"```json\n{SOURCE}\n```"), tmp_path)
        assert state.status is Status.COMPLETED
        assert state.bsg is None and state.business_rules is None
        assert state.modern_code.source_files == (("svc/app.py", "print('hi')\n"),)
        assert (tmp_path / "svc" / "app.py").read_text() == "print('hi')\n"

    def test_deterministic_backend_rejects_baselines(self):
        with pytest.raises(ConfigError):
            run_baseline(bundle(), PipelineConfig(mode="cot_llm"))

    def test_prompt_uses_mode_template(self, tmp_path):
        mock = MockProvider(default=SOURCE)
        run_baseline(bundle(), PipelineConfig(backend="provider", mode="cot_llm"), mock, tmp_path)
        [record] = mock.transcript.records
        assert "then design the modern API, then implement it" in record["request"]["messages"][0]["content"]

    def test_unparseable_output_leaves_empty_package(self, tmp_path):
        state = run_baseline(bundle(), PipelineConfig(backend="provider", mode="sp_llm"),
                             MockProvider(default="I cannot do that."), tmp_path)
        assert state.status is Status.COMPLETED
        assert state.modern_code.source_files == ()
        assert state.modern_code.notes

    def test_provider_failure(self):
        state = run_baseline(bundle(), PipelineConfig(backend="provider", mode="sp_llm"), MockProvider())
        assert state.status is Status.FAILED


def test_provider_backend_with_canned_documents(tmp_path):
    """The provider path parses and validates what the model returns."""
    det = run_pipeline(bundle())
    from bsgkit.bsg import serialize_bsg
    from bsgkit import docio
    answers = [json.dumps({"rules": [r.to_doc() for r in det.business_rules.rules]}),
               docio.dumps(serialize_bsg(det.bsg)),
               SOURCE]

    class Sequenced(MockProvider):
        def exchange(self, messages, temperature=0.0):
            self.default = answers.pop(0)
            return super().exchange(messages, temperature)

    config = PipelineConfig(backend="provider", max_iterations=1)
    backend = ProviderBackend(Sequenced(), config, tmp_path)
    bri, _ = backend.analyze(bundle())
    assert [r.id for r in bri.rules] == [r.id for r in det.business_rules.rules]
    bsg = backend.specify(bri, None, bundle())
    assert bsg == det.bsg
    package = backend.transform(bsg, None, None)
    assert package.variant == "external_sources"
    assert (tmp_path / "iteration-0" / "svc" / "app.py").exists()
