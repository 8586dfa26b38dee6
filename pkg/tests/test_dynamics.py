import itertools

import numpy as np
import pytest

from services.dynamics import (
    State,
    Trajectory,
    check_duality,
    descendants,
    dual_field,
    dual_step,
    first_extinction,
    is_monotone_pair,
    primal_step,
    run_dual,
    run_primal,
    run_primal_ensemble,
)
from services.errors import PreconditionError
from services.graph_gen import GraphConfig, generate, is_tree_neighborhood
from services.noise import NoiseField
from services.theory import OffspringLaw, simulate_branching


def _reference_primal(g, noise, bits, T):
    """Direct transcription of the update rule, one vertex at a time."""
    states = [bits.copy()]
    for t in range(1, T + 1):
        prev = states[-1]
        nxt = np.zeros(g.n, dtype=bool)
        for x in range(g.n):
            nxt[x] = noise.bit(t, x) and any(prev[y] for y in g.inputs(x))
        states.append(nxt)
    return states


# ----------------------------------------------------------------
# State
# ----------------------------------------------------------------

def test_state_basics():
    s = State.from_support(8, [1, 5])
    assert s.popcount() == 2
    assert s.support().tolist() == [1, 5]
    assert not s.is_empty()
    assert State.empty(8).is_empty()
    assert State.full(8).popcount() == 8
    assert s.issubset(State.full(8))
    assert not State.full(8).issubset(s)
    assert s.intersects(State.from_support(8, [5]))
    assert not s.intersects(State.from_support(8, [0]))
    assert s == State.from_support(8, [5, 1])
    assert len({s, State.from_support(8, [1, 5])}) == 1


def test_state_support_out_of_range():
    with pytest.raises(PreconditionError):
        State.from_support(4, [4])


def test_state_hex_and_packed():
    s = State.from_support(70, [0, 9, 64, 69])
    assert State.from_hex(70, s.to_hex()) == s
    words = s.packed()
    assert words.size == 2
    assert int(words[0]) == (1 << 0) | (1 << 9)
    assert int(words[1]) == (1 << 0) | (1 << 5)


# ----------------------------------------------------------------
# Primal
# ----------------------------------------------------------------

def test_cycle_with_full_noise_rotates(cycle_graph):
    noise = NoiseField(q=1.0, seed=0)
    s = primal_step(cycle_graph, State.from_support(5, [0]), noise, 1)
    assert s.support().tolist() == [1]


def test_q_zero_dies_in_one_step(small_graph):
    traj = run_primal(small_graph, NoiseField(q=0.0, seed=0), State.full(6), 5)
    assert traj.occupied_counts() == [6, 0, 0, 0, 0, 0]
    assert traj.extinction_time() == 1


def test_empty_start_stays_empty(small_graph):
    traj = run_primal(small_graph, NoiseField(q=1.0, seed=0), State.empty(6), 3)
    assert traj.occupied_counts() == [0, 0, 0, 0]
    assert traj.extinction_time() == 1


def test_run_primal_matches_reference():
    g = generate(GraphConfig(n=40, r=2, seed=4))
    noise = NoiseField(q=0.7, seed=4)
    start = State.from_support(40, [0, 3, 17])
    traj = run_primal(g, noise, start, 12, keep_snapshots=True)
    expected = _reference_primal(g, noise, start.bits, 12)
    for snap, ref in zip(traj.snapshots(), expected):
        assert np.array_equal(snap.bits, ref)


def test_sparse_and_dense_paths_agree():
    # one occupied vertex in a large graph takes the gather path
    g = generate(GraphConfig(n=2000, r=2, seed=1))
    noise = NoiseField(q=0.8, seed=1)
    sparse = State.from_support(2000, [10])
    step = primal_step(g, sparse, noise, 1)
    has_input = g.in_nbrs == 10
    expected = has_input.any(axis=1) & noise.column(1, 2000)
    assert np.array_equal(step.bits, expected)


class FixedNoise:
    """Noise with hand-chosen columns: ``table[t]`` is the bit vector at time t."""

    def __init__(self, table):
        self.table = {t: np.asarray(col, dtype=bool) for t, col in table.items()}

    def column(self, t, n):
        return self.table[t][:n].copy()

    def bits(self, t, xs):
        return self.table[t][np.asarray(xs, dtype=np.int64)]


def test_primal_step_hand_trace(triangle_graph):
    # vertex 0 occupied; noise at t=1 lets vertices 0 and 1 receive
    noise = FixedNoise({1: [1, 1, 0]})
    s = primal_step(triangle_graph, State.from_support(3, [0]), noise, 1)
    assert s.support().tolist() == [1]


def test_full_noise_keeps_everything_occupied():
    g = generate(GraphConfig(n=500, r=2, seed=6))
    traj = run_primal(g, NoiseField(q=1.0, seed=6), State.full(500), 25)
    assert traj.occupied_counts() == [500] * 26


def test_one_step_density_is_q():
    n = 100_000
    g = generate(GraphConfig(n=n, r=2, seed=2))
    s = primal_step(g, State.full(n), NoiseField(q=0.6, seed=2), 1)
    assert abs(s.popcount() / n - 0.6) < 0.01


def test_state_size_must_match(small_graph):
    with pytest.raises(PreconditionError):
        primal_step(small_graph, State.full(5), NoiseField(q=0.5, seed=0), 1)


def test_trajectory_times_increase():
    traj = Trajectory()
    traj.append(0, State.full(3))
    with pytest.raises(ValueError):
        traj.append(0, State.full(3))


def test_first_extinction_agrees_with_run(small_graph):
    for seed in range(20):
        noise = NoiseField(q=0.5, seed=seed)
        traj = run_primal(small_graph, noise, State.full(6), 50)
        assert first_extinction(small_graph, noise, State.full(6), 50) == traj.extinction_time()


def test_monotone_in_initial_set():
    g = generate(GraphConfig(n=30, r=2, seed=2))
    for seed in range(10):
        noise = NoiseField(q=0.6, seed=seed)
        assert is_monotone_pair(g, noise, State.from_support(30, [1, 2]), State.from_support(30, [1, 2, 9]), 15)
    with pytest.raises(PreconditionError):
        is_monotone_pair(g, NoiseField(q=0.6, seed=0), State.full(30), State.empty(30), 3)


# ----------------------------------------------------------------
# Dual
# ----------------------------------------------------------------

def test_dual_step_births(small_graph):
    noise = NoiseField(q=1.0, seed=0)
    s = dual_step(small_graph, State.from_support(6, [0]), noise, T=3, t=0)
    assert s.support().tolist() == [1, 2]


def test_dual_step_time_range(small_graph):
    noise = NoiseField(q=1.0, seed=0)
    with pytest.raises(PreconditionError):
        dual_step(small_graph, State.full(6), noise, T=3, t=3)
    with pytest.raises(PreconditionError):
        dual_step(small_graph, State.full(6), noise, T=3, t=-1)


def test_horizon_dual_reads_reversed_columns():
    g = generate(GraphConfig(n=25, r=2, seed=6))
    noise = NoiseField(q=0.6, seed=6)
    T = 6
    traj = run_dual(g, noise, State.from_support(25, [3]), T, keep_snapshots=True)
    state = State.from_support(25, [3])
    for t, snap in enumerate(traj.snapshots()[1:]):
        state = dual_step(g, state, noise, T, t)
        assert snap == state


def test_free_running_dual_uses_dual_stream():
    g = generate(GraphConfig(n=25, r=2, seed=6))
    noise = NoiseField(q=0.6, seed=6)
    free = run_dual(g, noise, State.from_support(25, [3]), 8, free_running=True)
    support = descendants(g, dual_field(noise), np.array([3]), 0, 8)
    assert free.records[-1].occupied == support.size
    assert dual_field(dual_field(noise)) == dual_field(noise)


def test_descendants_hook_sees_parents_and_givers(small_graph):
    seen = []
    noise = NoiseField(q=1.0, seed=0)
    out = descendants(small_graph, noise, np.array([0]), 4, 2, on_step=lambda t, s, b: seen.append((t, s.tolist(), b.tolist())))
    assert seen[0] == (4, [0], [0])
    assert seen[1] == (5, [1, 2], [1, 2])
    assert out.tolist() == [3, 4, 5]


# ----------------------------------------------------------------
# Duality
# ----------------------------------------------------------------

DUALITY_GRID = [(n, r, T) for n in (4, 5, 6, 7) for r in (1, 2, 3) if r < n for T in range(1, 6)]


@pytest.mark.parametrize("n,r,T", DUALITY_GRID)
def test_duality_all_singleton_pairs(n, r, T):
    singletons = [State.from_support(n, [x]) for x in range(n)]
    for trial in range(200):
        key = ((n * 10 + r) * 10 + T) * 1000 + trial
        g = generate(GraphConfig(n=n, r=r, seed=key))
        noise = NoiseField(q=0.55, seed=key)
        for A, B in itertools.product(singletons, repeat=2):
            assert check_duality(g, noise, A, B, T)



def test_dual_on_tree_matches_branching_process():
    n, steps = 100_000, 3
    g = generate(GraphConfig(n=n, r=2, seed=13))
    roots = [x for x in range(1500) if is_tree_neighborhood(g, x, steps)][:1000]
    assert len(roots) == 1000
    sizes = np.array([
        descendants(g, NoiseField(q=0.75, seed=13, stream="dual", replica=i), np.array([x]), 0, steps).size
        for i, x in enumerate(roots)
    ])
    reference = simulate_branching(OffspringLaw(0.75, 2), steps, 20_000, seed=13).generation_sizes[:, steps]
    # mean 1.5^3; extinction by generation 3 is about 0.316
    assert sizes.mean() == pytest.approx(reference.mean(), abs=0.35)
    assert np.mean(sizes == 0) == pytest.approx(np.mean(reference == 0), abs=0.06)
    assert sizes.max() <= 2**steps


def test_duality_random_sets():
    g = generate(GraphConfig(n=50, r=3, seed=9))
    rng = np.random.default_rng(0)
    for trial in range(50):
        noise = NoiseField(q=0.5, seed=trial)
        A = State(rng.random(50) < 0.2)
        B = State(rng.random(50) < 0.2)
        assert check_duality(g, noise, A, B, int(rng.integers(0, 20)))


def test_duality_at_horizon_zero(small_graph):
    noise = NoiseField(q=0.5, seed=0)
    A = State.from_support(6, [1])
    assert check_duality(small_graph, noise, A, State.from_support(6, [1]), 0)
    assert check_duality(small_graph, noise, A, State.from_support(6, [2]), 0)


# ----------------------------------------------------------------
# Ensemble
# ----------------------------------------------------------------

def test_ensemble_matches_single_runs():
    graphs = [generate(GraphConfig(n=12, r=2, seed=s)) for s in range(6)]
    noises = [NoiseField(q=0.6, seed=77, replica=i) for i in range(6)]
    res = run_primal_ensemble(graphs, noises, 200, window=(5, 40))
    for i, (g, noise) in enumerate(zip(graphs, noises)):
        traj = run_primal(g, noise, State.full(12), 200)
        ext = traj.extinction_time()
        assert res.extinction_times[i] == (-1 if ext is None else ext)
        counts = traj.occupied_counts()
        assert res.window_sums[i] == sum(counts[5:41])
        assert res.final_counts[i] == counts[-1]
    assert res.window_length == 36
    assert res.window_means(12).shape == (6,)
    assert np.array_equal(res.censored, res.extinction_times < 0)


def test_ensemble_initial_empty_row_dies_at_one():
    graphs = [generate(GraphConfig(n=8, r=2, seed=s)) for s in range(2)]
    noises = [NoiseField(q=1.0, seed=0, replica=i) for i in range(2)]
    initial = np.zeros((2, 8), dtype=bool)
    initial[1, 0] = True
    res = run_primal_ensemble(graphs, noises, 10, initial=initial)
    assert res.extinction_times[0] == 1


def test_ensemble_rejects_mismatch():
    g = generate(GraphConfig(n=8, r=2, seed=0))
    with pytest.raises(PreconditionError):
        run_primal_ensemble([g], [], 5)
    with pytest.raises(PreconditionError):
        run_primal_ensemble(
            [g, generate(GraphConfig(n=9, r=2, seed=0))],
            [NoiseField(q=0.5, seed=0), NoiseField(q=0.5, seed=0, replica=1)],
            5,
        )
