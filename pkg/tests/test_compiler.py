"""Tests for analogverify.compiler."""

import math
import multiprocessing
from dataclasses import replace
from typing import Dict, List
from unittest.mock import patch

import numpy as np
import pytest

from analogverify.compiler import (
    Checkpoint,
    CompiledSequence,
    CompilerConfig,
    Layer,
    LayerCache,
    _accept,
    _init_pool,
    _worker,
    _WorkerResult,
    anneal_search,
    compile_inverse,
    random_forward_sequence,
    random_layer,
    replay_population,
    with_seed,
)
from analogverify.exceptions import CompilerError, NoConvergence
from analogverify.models import build_preset
from analogverify.quantum_core import Hamiltonian, SystemState
from analogverify.streams import stream_rng


@pytest.fixture
def ising() -> Hamiltonian:
    """Two-qubit Ising model."""
    return build_preset("Ising2Q")


class TestLayer:
    """Test cases for Layer."""

    def test_validation(self) -> None:
        """Test empty subsets, bad signs and non-positive durations are refused."""
        with pytest.raises(CompilerError, match="at least one term"):
            Layer((), 1, 1e-3)
        with pytest.raises(CompilerError, match="sign"):
            Layer(("field",), 0, 1e-3)
        with pytest.raises(CompilerError, match="duration"):
            Layer(("field",), 1, 0.0)

    def test_mask(self, ising: Hamiltonian) -> None:
        """Test the mask follows Hamiltonian order."""
        assert Layer(("coupling",), 1, 1e-3).mask(ising).tolist() == [False, True]
        with pytest.raises(CompilerError, match="unknown term label"):
            Layer(("zz",), 1, 1e-3).mask(ising)

    def test_dict_form(self) -> None:
        """Test the persisted form of a layer."""
        layer = Layer(("field", "coupling"), -1, 2.5e-4)
        data = layer.to_dict()
        assert data == {"subset": ["field", "coupling"], "sign": -1, "duration_s": 2.5e-4}
        assert Layer.from_dict(data) == layer


class TestCompilerConfig:
    """Test cases for CompilerConfig."""

    def test_defaults(self) -> None:
        """Test the default annealing schedule."""
        cfg = CompilerConfig()
        assert cfg.beta(0) == pytest.approx(0.5)
        assert cfg.beta(cfg.max_steps) == pytest.approx(0.005)
        assert cfg.beta(cfg.max_steps // 2) == pytest.approx(0.2525)
        assert cfg.threshold == 0.99

    def test_invalid(self) -> None:
        """Test inconsistent settings are refused."""
        with pytest.raises(CompilerError, match="beta_initial"):
            CompilerConfig(beta_initial=0.001, beta_final=0.01)
        with pytest.raises(CompilerError, match="threshold"):
            CompilerConfig(threshold=1.5)
        with pytest.raises(CompilerError, match="positive"):
            CompilerConfig(n_workers=0)
        with pytest.raises(CompilerError, match="proposal weights"):
            CompilerConfig(proposal_weights=(0.0, 0.5, 0.5))

    def test_with_seed(self) -> None:
        """Test derived seeds differ per index and repeat per key."""
        cfg = CompilerConfig(seed=3)
        assert with_seed(cfg, 7, 0).seed == with_seed(cfg, 7, 0).seed
        assert with_seed(cfg, 7, 0).seed != with_seed(cfg, 7, 1).seed
        assert with_seed(cfg, 7, 0).threshold == cfg.threshold


class TestForwardSequence:
    """Test cases for random layers and forward sequences."""

    def test_random_layer_is_nonempty(self, ising: Hamiltonian) -> None:
        """Test every drawn layer enables at least one term."""
        rng = stream_rng(0, 99)
        layers = [random_layer(ising, 1e-4, rng) for _ in range(200)]
        assert all(layer.subset for layer in layers)
        assert {layer.sign for layer in layers} == {1, -1}
        assert {layer.subset for layer in layers} == {
            ("field",),
            ("coupling",),
            ("field", "coupling"),
        }

    def test_reproducible(self, ising: Hamiltonian) -> None:
        """Test the same seed gives the same layers and state."""
        layers_a, phi_a = random_forward_sequence(ising, 12, 2e-3, seed=5)
        layers_b, phi_b = random_forward_sequence(ising, 12, 2e-3, seed=5)
        layers_c, _ = random_forward_sequence(ising, 12, 2e-3, seed=6)
        assert layers_a == layers_b
        assert layers_a != layers_c
        np.testing.assert_array_equal(phi_a.vector, phi_b.vector)

    def test_layer_duration(self, ising: Hamiltonian) -> None:
        """Test n layers of duration 2τ/n."""
        layers, phi = random_forward_sequence(ising, 8, 2e-3, seed=1, initial_state=2)
        assert len(layers) == 8
        assert all(layer.duration == pytest.approx(5e-4) for layer in layers)
        assert phi.vector is not None
        assert np.linalg.norm(phi.vector) == pytest.approx(1.0)

    def test_replay_matches_forward(self, ising: Hamiltonian) -> None:
        """Test replaying the layers on the initial state reproduces phi."""
        layers, phi = random_forward_sequence(ising, 6, 1e-3, seed=2)
        populations = replay_population(SystemState.basis(0, 2), ising, layers)
        np.testing.assert_allclose(populations, np.abs(phi.vector) ** 2, atol=1e-12)

    def test_invalid_length(self, ising: Hamiltonian) -> None:
        """Test a forward sequence needs at least one layer."""
        with pytest.raises(CompilerError, match="n >= 1"):
            random_forward_sequence(ising, 0, 1e-3, seed=0)


class TestLayerCache:
    """Test cases for LayerCache."""

    def test_reverse_undoes_forward(self, ising: Hamiltonian) -> None:
        """Test a reversed layer inverts the forward one."""
        cache = LayerCache(ising, 3e-4)
        forward = cache.unitary(Layer(("field", "coupling"), 1, 3e-4))
        reverse = cache.unitary(Layer(("field", "coupling"), -1, 3e-4))
        np.testing.assert_allclose(reverse @ forward, np.eye(4), atol=1e-12)

    def test_memoized(self, ising: Hamiltonian) -> None:
        """Test the same subset and sign return the cached matrix."""
        cache = LayerCache(ising, 3e-4)
        layer = Layer(("field",), 1, 3e-4)
        assert cache.unitary(layer) is cache.unitary(layer)


class TestAnnealSearch:
    """Test cases for anneal_search."""

    def test_basis_state_converges_immediately(self, ising: Hamiltonian) -> None:
        """Test a state already on a basis state needs no layers."""
        result = anneal_search(SystemState.basis(1, 2).vector, ising, 1e-4, CompilerConfig())
        assert result.converged
        assert result.steps_used == 0
        assert result.layers == ()
        assert result.target_basis_state == 1

    def test_checkpoint(self, ising: Hamiltonian) -> None:
        """Test the checkpoint callback receives the maintained product."""
        _, phi = random_forward_sequence(ising, 20, 3e-3, seed=4)
        seen = []

        def checkpoint(step: int, product: np.ndarray, layers: list) -> None:
            seen.append(step)
            replayed = np.eye(4, dtype=complex)
            cache = LayerCache(ising, 3e-4)
            for layer in layers:
                replayed = cache.unitary(layer) @ replayed
            np.testing.assert_allclose(product, replayed, atol=1e-9)

        cfg = CompilerConfig(threshold=1.0, max_steps=300)
        anneal_search(phi.vector, ising, 3e-4, cfg, checkpoint=checkpoint, checkpoint_every=100)
        assert seen == [100, 200, 300]


class TestAcceptRule:
    """Test cases for the annealed acceptance rule."""

    def test_cold_never_accepts_a_loss(self) -> None:
        """Test β → 0 rejects every decrease and keeps every gain."""
        rng = np.random.default_rng(0)
        assert not any(_accept(-1e-3, 1e-9, rng) for _ in range(10_000))
        assert all(_accept(1e-6, 1e-9, rng) for _ in range(1_000))

    def test_hot_accepts_almost_everything(self) -> None:
        """Test a large β accepts nearly all losses."""
        rng = np.random.default_rng(1)
        accepted = sum(_accept(-0.5, 1e3, rng) for _ in range(10_000))
        assert accepted >= 9_950

    def test_boltzmann_rate(self) -> None:
        """Test a loss of β·ln 2 is accepted half of the time."""
        rng = np.random.default_rng(2)
        beta = 0.05
        accepted = sum(_accept(-beta * math.log(2), beta, rng) for _ in range(20_000))
        assert accepted / 20_000 == pytest.approx(0.5, abs=0.02)

    def test_cold_chain_never_loses_population(self, ising: Hamiltonian) -> None:
        """Test a chain held at tiny β only climbs."""
        _, phi = random_forward_sequence(ising, 20, 3e-3, seed=4)
        populations: List[float] = []

        def checkpoint(step: int, product: np.ndarray, layers: list) -> None:
            populations.append(float(np.max(np.abs(product @ phi.vector) ** 2)))

        cfg = CompilerConfig(beta_initial=1e-9, beta_final=1e-9, threshold=1.0, max_steps=400)
        anneal_search(phi.vector, ising, 3e-4, cfg, checkpoint=checkpoint, checkpoint_every=1)
        assert len(populations) == 400
        assert all(b >= a for a, b in zip(populations, populations[1:]))

    def test_hot_chain_takes_nearly_every_move(self, ising: Hamiltonian) -> None:
        """Test a chain held at large β changes its sequence on almost every step."""
        _, phi = random_forward_sequence(ising, 20, 3e-3, seed=4)
        lengths: List[int] = [0]

        def checkpoint(step: int, product: np.ndarray, layers: list) -> None:
            lengths.append(len(layers))

        cfg = CompilerConfig(beta_initial=1e3, beta_final=1e3, threshold=1.0, max_steps=1000)
        anneal_search(phi.vector, ising, 3e-4, cfg, checkpoint=checkpoint, checkpoint_every=1)
        moved = sum(a != b for a, b in zip(lengths, lengths[1:]))
        assert moved >= 990


class TestStepBound:
    """Test cases for stopping chains that can no longer win."""

    def test_chain_stops_past_the_bound(self, ising: Hamiltonian) -> None:
        """Test a chain gives up once it passes the reported step count."""
        _, phi = random_forward_sequence(ising, 20, 3e-3, seed=4)
        cfg = CompilerConfig(threshold=1.0, max_steps=500)
        result = anneal_search(phi.vector, ising, 3e-4, cfg, step_bound=lambda: 120)
        assert not result.converged
        assert result.steps_used == 120

    def test_bounded_chain_retraces_unbounded(self, ising: Hamiltonian) -> None:
        """Test a bound truncates the chain without changing its path."""
        _, phi = random_forward_sequence(ising, 20, 3e-3, seed=4)
        cfg = CompilerConfig(threshold=1.0, max_steps=300)
        products: Dict[str, List[np.ndarray]] = {"free": [], "bounded": []}

        def recorder(key: str) -> Checkpoint:
            return lambda step, product, layers: products[key].append(product.copy())

        anneal_search(phi.vector, ising, 3e-4, cfg, checkpoint=recorder("free"))
        anneal_search(
            phi.vector, ising, 3e-4, cfg, checkpoint=recorder("bounded"), step_bound=lambda: 200
        )
        assert len(products["free"]) == 3
        assert len(products["bounded"]) == 2
        for free, bounded in zip(products["free"], products["bounded"]):
            np.testing.assert_array_equal(free, bounded)

    def test_serial_workers_receive_best_step_count(self, ising: Hamiltonian) -> None:
        """Test each later worker is bounded by the best converged count so far."""
        layer = Layer(("field",), 1, 1e-4)
        outcomes = {
            0: _WorkerResult(0, True, (layer,), 0, 0.995, 0.995, 30),
            1: _WorkerResult(1, True, (layer,), 1, 0.993, 0.993, 10),
            2: _WorkerResult(2, False, (), 0, 0.6, 0.7, 10),
        }
        bounds: Dict[int, int] = {}

        def fake(phi, h, d, cfg, worker, step_bound) -> _WorkerResult:
            bounds[worker] = step_bound()
            return outcomes[worker]

        with patch("analogverify.compiler.anneal_search", side_effect=fake):
            result = compile_inverse(
                SystemState.basis(0, 2), ising, 1e-4, CompilerConfig(n_workers=3)
            )
        assert bounds == {0: 20_000, 1: 30, 2: 10}
        assert result.worker_index == 1

    def test_bound_keeps_the_unbounded_winner(self, ising: Hamiltonian) -> None:
        """Test bounded workers select the same winner as chains run to the end."""
        layers, phi = random_forward_sequence(ising, 3, 1e-3, seed=6)
        cfg = CompilerConfig(threshold=0.99, max_steps=5000, n_workers=4, seed=2)
        duration = layers[0].duration
        free = [anneal_search(phi.vector, ising, duration, cfg, w) for w in range(4)]
        expected = min(
            (r for r in free if r.converged), key=lambda r: (r.steps_used, r.worker_index)
        )
        result = compile_inverse(phi, ising, duration, cfg)
        assert (result.worker_index, result.steps_used) == (
            expected.worker_index,
            expected.steps_used,
        )
        assert result.layers == expected.layers

    def test_pool_worker_publishes_its_steps(self, ising: Hamiltonian) -> None:
        """Test a converged pool worker lowers the shared bound."""
        bound = multiprocessing.Value("q", 5000)
        _init_pool(bound)
        try:
            job = (SystemState.basis(2, 2).vector, ising, 1e-4, CompilerConfig(), 0)
            result = _worker(job)
        finally:
            _init_pool(None)
        assert result.converged
        assert bound.value == 0


class TestCompileInverse:
    """Test cases for compile_inverse."""

    def test_single_layer_is_inverted(self, ising: Hamiltonian) -> None:
        """Test a one-layer forward sequence is undone."""
        layers, phi = random_forward_sequence(ising, 1, 5e-4, seed=3)
        cfg = CompilerConfig(threshold=0.99, max_steps=5000, n_workers=2, seed=1)
        result = compile_inverse(phi, ising, layers[0].duration, cfg)
        assert isinstance(result, CompiledSequence)
        assert result.achieved_population >= 0.99
        populations = replay_population(phi, ising, result.layers)
        assert populations[result.target_basis_state] == pytest.approx(
            result.achieved_population, abs=1e-9
        )

    def test_deterministic(self, ising: Hamiltonian) -> None:
        """Test the same configuration returns the same sequence."""
        layers, phi = random_forward_sequence(ising, 1, 5e-4, seed=3)
        cfg = CompilerConfig(max_steps=5000, n_workers=3, seed=8)
        first = compile_inverse(phi, ising, layers[0].duration, cfg)
        second = compile_inverse(phi, ising, layers[0].duration, cfg)
        assert first == second

    def test_parallel_matches_serial(self, ising: Hamiltonian) -> None:
        """Test worker processes give the serial result."""
        layers, phi = random_forward_sequence(ising, 1, 5e-4, seed=3)
        cfg = CompilerConfig(max_steps=5000, n_workers=2, seed=8)
        serial = compile_inverse(phi, ising, layers[0].duration, cfg)
        parallel = compile_inverse(phi, ising, layers[0].duration, replace(cfg, parallel=True))
        assert serial == parallel

    def test_winner_is_fewest_steps_then_lowest_index(self, ising: Hamiltonian) -> None:
        """Test winner selection ignores completion order."""
        layer = Layer(("field",), 1, 1e-4)
        outcomes = {
            0: _WorkerResult(0, True, (layer,), 0, 0.995, 0.995, 50),
            1: _WorkerResult(1, True, (layer, layer), 1, 0.992, 0.992, 10),
            2: _WorkerResult(2, True, (layer,), 2, 0.999, 0.999, 10),
            3: _WorkerResult(3, False, (), 0, 0.5, 0.8, 400),
        }
        with patch(
            "analogverify.compiler.anneal_search",
            side_effect=lambda phi, h, d, cfg, worker, **_: outcomes[worker],
        ):
            result = compile_inverse(
                SystemState.basis(0, 2), ising, 1e-4, CompilerConfig(n_workers=4)
            )
        assert result.worker_index == 1
        assert result.steps_used == 10
        assert result.target_basis_state == 1

    def test_no_convergence(self, ising: Hamiltonian) -> None:
        """Test exhausting every worker raises with the best population."""
        layers, phi = random_forward_sequence(ising, 30, 5e-3, seed=0)
        cfg = CompilerConfig(threshold=1.0, max_steps=5, n_workers=2)
        with pytest.raises(NoConvergence, match="No worker reached threshold") as excinfo:
            compile_inverse(phi, ising, layers[0].duration, cfg)
        assert 0 < excinfo.value.best_population < 1.0
        assert excinfo.value.steps_used == 10

    def test_inverse_is_not_the_reversed_forward_sequence(self, ising: Hamiltonian) -> None:
        """Test a ten-layer inverse is found by search, not by undoing each layer."""
        n, tau = 10, 2e-3
        layers, phi = random_forward_sequence(ising, n, tau, seed=4, initial_state=1)
        cfg = CompilerConfig(threshold=0.98, max_steps=20_000, n_workers=4)
        compiled = compile_inverse(phi, ising, 2 * tau / n, cfg)
        undone = [(layer.subset, -layer.sign) for layer in reversed(layers)]
        assert [(layer.subset, layer.sign) for layer in compiled.layers] != undone
        populations = replay_population(phi, ising, compiled.layers)
        assert populations[compiled.target_basis_state] >= 0.98

    def test_invalid_inputs(self, ising: Hamiltonian) -> None:
        """Test mixed states and non-positive durations are refused."""
        mixed = SystemState(2, matrix=np.eye(4) / 4)
        with pytest.raises(CompilerError, match="pure state"):
            compile_inverse(mixed, ising, 1e-4, CompilerConfig())
        with pytest.raises(CompilerError, match="Layer duration"):
            compile_inverse(SystemState.basis(0, 2), ising, 0.0, CompilerConfig())
