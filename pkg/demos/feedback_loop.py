"""Walk through one pipeline run where the feedback loop repairs a planted fault.

    python demos/feedback_loop.py

A constant in the ValidateOrder endpoint of the bundled mini-s1 scenario is
perturbed after transformation. The validator catches the resulting mismatch,
the feedback step rewrites the affected endpoint, and the next validation
comes back clean. The same fault with feedback disabled is shown for contrast.
"""

from bsgkit.evalkit import load_scenarios
from bsgkit.orchestrator import PipelineConfig, run_pipeline
from bsgkit.transformer import FaultSpec


def show(label, state):
    print(f"{label}: status={state.status.value} iterations={state.iteration}")
    for iteration, ber in state.history:
        print(f"  iteration {iteration}: BER {ber:.1f}%")
    for failure in state.equiv_report.failures[:3]:
        print(f"  residual {failure.test_id} ({failure.root_cause})")


def main():
    scenario = next(s for s in load_scenarios() if s.id == "mini-s1")
    bundle = scenario.bundle()
    print(f"scenario {scenario.id}: {len(bundle.files)} files")

    fault = FaultSpec("point_constant", "mini-s1/ValidateOrder")
    show("with feedback", run_pipeline(bundle, PipelineConfig(fault=fault, mode="full")))
    show("without feedback", run_pipeline(bundle, PipelineConfig(fault=fault, mode="no_feedback")))

    # A dropped endpoint is a structural fault; rewriting checks cannot bring it back.
    dropped = FaultSpec("structural_drop_endpoint", "mini-s1/PriceOrder")
    show("structural fault", run_pipeline(bundle, PipelineConfig(fault=dropped)))


if __name__ == "__main__":
    main()
