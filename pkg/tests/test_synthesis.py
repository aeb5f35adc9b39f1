"""Stage-B tests: pivot mining, the consolidation prompt, verified synthesis."""

from pathlib import Path

import numpy as np
import pytest

from shortpath.backends import (
    Backend,
    BackendCaps,
    ChannelledOutput,
    DecodeParams,
    Provenance,
    ReasoningTrace,
)
from shortpath.bootstrap import BootstrapConfig, collect_pool, pool_to_Rplus
from shortpath.corpus import Label
from shortpath.errors import TransportError
from shortpath.simulator import (
    SimBackend,
    generate_worlds,
    minimal_pivot_walk,
    worlds_to_dataset,
)
from shortpath.synthesis import (
    PivotSet,
    SynthesisConfig,
    build_consolidation_prompt,
    load_sprs,
    mine_pivots,
    parse_verifier_output,
    save_sprs,
    step_pivot_extractor,
    synthesize_spr,
)

GOLDEN = Path(__file__).parent / "data" / "consolidation_prompt.golden.txt"


def text_trace(text, provenance=Provenance.ZERO_SHOT):
    return ReasoningTrace.from_text(text, provenance)


def walk_trace(*nodes):
    return text_trace("\n".join(nodes))


class TestMinePivots:
    def test_majority_filter_is_strict(self):
        # Supports a:3, b:2, c:1 over three traces; threshold is 1.5.
        traces = [
            walk_trace("s", "a", "b", "c", "t"),
            walk_trace("s", "a", "b", "t"),
            walk_trace("s", "a", "t"),
        ]
        pivot_set = mine_pivots(traces, step_pivot_extractor)
        assert pivot_set.support_of("a") == 3
        assert pivot_set.support_of("b") == 2
        assert pivot_set.support_of("c") == 1
        assert pivot_set.majority == ("a", "b")

    def test_two_trace_pool_requires_full_support(self):
        traces = [walk_trace("s", "a", "t"), walk_trace("s", "b", "t")]
        assert mine_pivots(traces, step_pivot_extractor).majority == ()
        both = [walk_trace("s", "a", "t"), walk_trace("s", "a", "t")]
        assert mine_pivots(both, step_pivot_extractor).majority == ("a",)

    def test_singleton_pool_keeps_everything(self):
        pivot_set = mine_pivots([walk_trace("s", "x", "y", "t")], step_pivot_extractor)
        assert pivot_set.majority == ("x", "y")
        assert all(c == 1 for _, c in pivot_set.pivots)

    def test_mentions_deduplicated_within_trace(self):
        trace = text_trace("Key Fact\nkey   fact\nother")
        pivot_set = mine_pivots([trace], lambda t: t.steps)
        assert pivot_set.support_of("key fact") == 1

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            mine_pivots([], step_pivot_extractor)

    def test_simulator_majority_superset_of_ground_truth(self):
        for world in generate_worlds(50, seed=55):
            backend = SimBackend.from_worlds([world])
            x = worlds_to_dataset([world]).examples[0]
            pool = collect_pool(
                backend, x, BootstrapConfig(pool_size=5), np.random.default_rng(11)
            )
            rplus = pool_to_Rplus(pool)
            if not rplus:
                continue
            majority = set(mine_pivots(rplus, step_pivot_extractor).majority)
            assert world.pivots <= majority


class TestConsolidationPrompt:
    def test_matches_golden_file(self):
        prompt = build_consolidation_prompt([text_trace("A."), text_trace("B.")])
        assert prompt.encode("utf-8") == GOLDEN.read_bytes()

    def test_contains_numbered_reasoning_lines(self):
        prompt = build_consolidation_prompt([text_trace("A."), text_trace("B.")])
        assert "Reasoning 1: A." in prompt
        assert "Reasoning 2: B." in prompt

    def test_single_trace_prompt(self):
        prompt = build_consolidation_prompt([text_trace("Only one.")])
        assert "Reasoning 1: Only one." in prompt
        assert "Reasoning 2:" not in prompt

    def test_deterministic(self):
        traces = [text_trace("A."), text_trace("B.")]
        assert build_consolidation_prompt(traces) == build_consolidation_prompt(traces)


class TestParseVerifierOutput:
    def test_bulleted_block_then_reasoning(self):
        pivots, text = parse_verifier_output("- alpha\n- beta\n\nfused reasoning here")
        assert pivots == ("alpha", "beta")
        assert text == "fused reasoning here"

    def test_numbered_block_with_header(self):
        pivots, text = parse_verifier_output(
            "Shared decision pivots:\n1. alpha\n2) beta\nthe reasoning"
        )
        assert pivots == ("alpha", "beta")
        assert text == "the reasoning"

    def test_lenient_fallback_whole_output(self):
        pivots, text = parse_verifier_output("no bullets at all, just prose")
        assert pivots == ()
        assert text == "no bullets at all, just prose"

    def test_empty_remainder(self):
        pivots, text = parse_verifier_output("- only pivots")
        assert pivots == ("only pivots",)
        assert text == ""


class _StubVerifier(Backend):
    """Verifier returning a fixed consolidation output."""

    def __init__(self, output):
        self.output = output

    @property
    def backend_id(self):
        return "stub-verifier"

    def caps(self):
        return BackendCaps(False, False, False)

    def predict_with_reasoning(self, x, decode):
        raise NotImplementedError

    def justify(self, x, y, decode):
        raise NotImplementedError

    def label_probability(self, x, trace):
        raise NotImplementedError

    def consolidate(self, x, rplus, prompt, decode):
        if isinstance(self.output, Exception):
            raise self.output
        return ChannelledOutput(output=self.output)


class TestSynthesizeSpr:
    def _sim_setup(self, seed=0, pool_seed=5):
        world = generate_worlds(1, seed=seed)[0]
        backend = SimBackend.from_worlds([world])
        x = worlds_to_dataset([world]).examples[0]
        pool = collect_pool(
            backend, x, BootstrapConfig(pool_size=5), np.random.default_rng(pool_seed)
        )
        return world, backend, x, pool_to_Rplus(pool)

    def test_simulator_verifier_always_passes_check(self):
        passed = 0
        total = 0
        for seed in range(40):
            world, backend, x, rplus = self._sim_setup(seed=seed, pool_seed=seed + 1)
            if not rplus:
                continue
            total += 1
            spr = synthesize_spr(backend, backend, x, rplus, SynthesisConfig())
            assert spr.check_passed and not spr.fallback_used
            assert spr.trace.provenance == Provenance.SYNTHESIZED
            passed += 1
        assert passed == total > 0

    def test_empty_verifier_output_forces_fallback(self):
        world, backend, x, rplus = self._sim_setup()
        assert rplus
        spr = synthesize_spr(backend, _StubVerifier(""), x, rplus, SynthesisConfig())
        assert spr.fallback_used and not spr.check_passed
        assert spr.trace.raw_text in {t.raw_text for t in rplus}

    def test_transport_failure_forces_fallback(self):
        world, backend, x, rplus = self._sim_setup()
        verifier = _StubVerifier(TransportError("verifier down", attempts=3))
        spr = synthesize_spr(backend, verifier, x, rplus, SynthesisConfig())
        assert spr.fallback_used
        assert spr.trace.raw_text in {t.raw_text for t in rplus}

    def test_singleton_pool_fallback_is_that_trace(self):
        world, backend, x, rplus = self._sim_setup()
        solo = [rplus[0]] if rplus else []
        assert solo
        spr = synthesize_spr(backend, _StubVerifier(""), x, solo, SynthesisConfig())
        assert spr.trace == solo[0]

    def test_mined_pivots_kept_regardless_of_branch(self):
        world, backend, x, rplus = self._sim_setup()
        assert rplus
        direct = mine_pivots(rplus, step_pivot_extractor)
        spr = synthesize_spr(backend, _StubVerifier(""), x, rplus, SynthesisConfig())
        assert spr.shared_pivots == direct

    def test_every_short_path_is_checked_or_fallback(self):
        for seed in range(10):
            world, backend, x, rplus = self._sim_setup(seed=seed, pool_seed=seed)
            if not rplus:
                continue
            spr = synthesize_spr(backend, backend, x, rplus, SynthesisConfig())
            assert spr.check_passed or spr.fallback_used

    def test_spr_not_longer_than_any_covering_pool_trace(self):
        for seed in range(20):
            world, backend, x, rplus = self._sim_setup(seed=seed, pool_seed=seed + 3)
            if not rplus:
                continue
            spr = synthesize_spr(backend, backend, x, rplus, SynthesisConfig())
            if spr.fallback_used:
                continue
            majority = set(spr.shared_pivots.majority)
            covering = [
                t for t in rplus if majority <= set(t.steps[1:-1])
            ]
            if covering:
                assert spr.trace.token_count <= min(t.token_count for t in covering)


class TestSprPersistence:
    def test_round_trip(self, tmp_path):
        world = generate_worlds(1, seed=3)[0]
        backend = SimBackend.from_worlds([world])
        x = worlds_to_dataset([world]).examples[0]
        pool = collect_pool(backend, x, BootstrapConfig(pool_size=5), np.random.default_rng(1))
        rplus = pool_to_Rplus(pool)
        spr = synthesize_spr(backend, backend, x, rplus, SynthesisConfig())
        path = tmp_path / "sprs.jsonl"
        save_sprs([spr], path)
        loaded = load_sprs(path)
        assert loaded == [spr]
        save_sprs(loaded, tmp_path / "again.jsonl")
        assert path.read_bytes() == (tmp_path / "again.jsonl").read_bytes()
