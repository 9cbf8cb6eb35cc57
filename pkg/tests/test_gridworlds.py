import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maxentstate import oracle
from maxentstate.gridworlds import (
    DOWN,
    LEFT,
    RIGHT,
    UP,
    GridEnv,
    double_slit,
    four_rooms,
    frozen_lake,
    golden_layout,
    load_layout,
    pachinko,
    parse_layout,
    save_layout,
)
from maxentstate.mdp import TabularSoftmaxPolicy

ALL_SPECS = {
    "frozen_lake_4x4": lambda: frozen_lake(4)[0],
    "frozen_lake_8x8": lambda: frozen_lake(8)[0],
    "pachinko_21x21_p3": pachinko,
    "double_slit_3x7_d1": double_slit,
    "four_rooms_11x11": four_rooms,
}


def empirical_next(env, s, a, n):
    counts = np.zeros(env.num_states)
    for _ in range(n):
        env.state, env.t, env.done = s, 0, False
        counts[env.step(a).next_state] += 1
    return counts / n


# -- FrozenLake ------------------------------------------------------------

def test_frozen_lake_sizes():
    spec, mdp = frozen_lake(4)
    assert (mdp.num_states, mdp.num_actions) == (16, 4)
    np.testing.assert_allclose(mdp.transitions.sum(axis=2), 1.0, atol=1e-12)
    assert frozen_lake(8)[1].num_states == 64
    with pytest.raises(ValueError):
        frozen_lake(5)


def test_frozen_lake_layout_corners():
    spec, _ = frozen_lake(4)
    assert spec.start_cells() == [((0, 0), 1.0)]
    assert spec.goal == (3, 3)
    assert spec.holes == frozenset({(1, 1), (3, 1), (3, 2), (0, 3)})


def test_frozen_lake_deterministic_right():
    spec, mdp = frozen_lake(4, slip=False)
    s0 = spec.index((0, 0))
    assert mdp.transitions[s0, RIGHT, spec.index((1, 0))] == 1.0


def test_frozen_lake_slip_thirds():
    spec, mdp = frozen_lake(4, slip=True)
    s = spec.index((1, 0))
    row = mdp.transitions[s, DOWN]
    # intended down to (1,1), perpendicular left (0,0) and right (2,0)
    for cell in [(1, 1), (0, 0), (2, 0)]:
        assert row[spec.index(cell)] == pytest.approx(1 / 3)


def test_frozen_lake_absorbing_terminals():
    spec, mdp = frozen_lake(4)
    for cell in spec.holes | {spec.goal}:
        i = spec.index(cell)
        assert np.all(mdp.transitions[i, :, i] == 1.0)
        assert np.all(mdp.rewards[i] == 0.0)


def test_frozen_lake_success_probability_vs_monte_carlo():
    spec, mdp = frozen_lake(4, slip=True, discount=0.99)
    pol = TabularSoftmaxPolicy.uniform(16, 4)
    exact = oracle.absorption_probability(mdp, spec.index(spec.goal), pol)
    mc, _ = oracle.mc_success_probability(mdp, pol, spec.index(spec.goal), 1_000_000, seed=3)
    assert abs(exact - mc) < 3e-3


# -- Pachinko --------------------------------------------------------------------

def closed_form_pachinko_walls(w, h, p):
    total = 0
    for k in range(h // p):
        offset = (k % 2) * (p // 2)
        r = (p - 1 - offset) % p
        total += (w - r + p - 1) // p
    return total


def test_pachinko_wall_count():
    spec = pachinko(21, 21, 3)
    enumerated = sum((x, y) in spec.walls for x in range(21) for y in range(21))
    assert enumerated == closed_form_pachinko_walls(21, 21, 3) == len(spec.walls)


@settings(max_examples=30, deadline=None)
@given(st.integers(4, 25), st.integers(4, 25), st.integers(2, 4))
def test_pachinko_wall_count_property(w, h, p):
    spec = pachinko(w, h, p)
    assert len(spec.walls) == closed_form_pachinko_walls(w, h, p)


def test_pachinko_start_and_rewards():
    spec = pachinko()
    assert spec.start_cells() == [((10, 0), 1.0)]
    mdp = spec.to_mdp(0.99)
    np.testing.assert_allclose(mdp.transitions.sum(axis=2), 1.0, atol=1e-12)
    assert np.all(mdp.rewards == 0.0)


def test_pachinko_bump():
    spec = pachinko()
    wall = (2, 2)
    assert wall in spec.walls
    assert spec.move((2, 1), DOWN) == (2, 1)
    assert spec.move((0, 0), LEFT) == (0, 0)
    assert spec.move((0, 0), UP) == (0, 0)


def test_pachinko_degenerate():
    with pytest.raises(ValueError):
        pachinko(21, 21, 1)
    with pytest.raises(ValueError):
        pachinko(2, 21, 3)


# -- double slit ---------------------------------------------------------------------

def test_double_slit_reachable_and_shortest_path():
    spec = double_slit()
    start = spec.start_cells()[0][0]
    assert start == (0, spec.height - 1)
    assert spec.goal == (spec.width - 1, 0)
    open_cells = [spec.coord(i) for i in range(spec.num_states)]
    dist = oracle.bfs_distance(open_cells, start, spec.goal)
    assert dist is not None
    assert spec.shortest_path_length() == dist


def test_double_slit_full_door_is_open_grid():
    spec = double_slit(room_count=3, room_size=7, door_width=7)
    assert spec.walls == frozenset()
    assert spec.num_states == spec.width * spec.height


def test_double_slit_bad_door():
    with pytest.raises(ValueError):
        double_slit(room_size=7, door_width=8)
    with pytest.raises(ValueError):
        double_slit(room_size=2)


def test_double_slit_rewards():
    spec = double_slit()
    mdp = spec.to_mdp(0.99)
    left = spec.index((spec.width - 2, 0))
    below = spec.index((spec.width - 1, 1))
    assert mdp.rewards[left, RIGHT] == 1.0
    assert mdp.rewards[below, UP] == 1.0
    assert mdp.rewards.sum() == pytest.approx(2.0)  # RIGHT from the left neighbour, UP from below


# -- four rooms ------------------------------------------------------------------------

def test_four_rooms_cell_count():
    spec = four_rooms(11)
    assert spec.num_states == sum((x, y) not in spec.walls for x in range(11) for y in range(11)) == 104
    assert len(spec.walls) == 21 - 4


def test_four_rooms_connected():
    spec = four_rooms(11)
    assert len(spec.reachable_cells()) == spec.num_states


def test_four_rooms_even_size():
    with pytest.raises(ValueError):
        four_rooms(10)
    with pytest.raises(ValueError):
        four_rooms(5)


def test_four_rooms_rooms():
    spec = four_rooms(11)
    start, goal = spec.start_cells()[0][0], spec.goal
    assert start[0] < 5 and start[1] > 5  # lower-left
    assert goal[0] > 5 and goal[1] < 5  # upper-right


def test_four_rooms_goal_terminates():
    spec = four_rooms(11)
    env = GridEnv(spec, seed=0)
    env.reset()
    below_goal = spec.index((spec.goal[0], spec.goal[1] + 1))
    env.state, env.t, env.done = below_goal, 0, False
    out = env.step(UP)
    assert out.done and not out.truncated and out.reward == 1.0
    with pytest.raises(RuntimeError):
        env.step(UP)


# -- env interface -------------------------------------------------------------------------

def test_step_errors():
    env = GridEnv(four_rooms(), seed=0)
    with pytest.raises(RuntimeError):
        env.step(0)
    env.reset()
    with pytest.raises(ValueError):
        env.step(4)


def test_truncation():
    spec, _ = frozen_lake(4, slip=False, max_episode_steps=5)
    env = GridEnv(spec, seed=0)
    env.reset()
    steps = [env.step(LEFT) for _ in range(5)]
    assert [s.done for s in steps] == [False] * 4 + [True]
    assert steps[-1].truncated and steps[-1].step == 5


def test_deterministic_replay():
    spec = four_rooms()
    actions = np.random.default_rng(0).integers(0, 4, size=200)

    def play(seed):
        env = GridEnv(spec, seed=seed)
        env.reset()
        out = []
        for a in actions:
            if env.done:
                break
            out.append(env.step(int(a)))
        return out

    assert play(1) == play(1) == play(2)


def test_index_bijection():
    for make in ALL_SPECS.values():
        spec = make()
        for i in range(spec.num_states):
            assert spec.index(spec.coord(i)) == i


@pytest.mark.parametrize("name", list(ALL_SPECS))
def test_simulator_matches_tensor(name):
    spec = ALL_SPECS[name]()
    mdp = spec.to_mdp(0.9)
    env = GridEnv(spec, seed=7)
    rng = np.random.default_rng(0)
    non_terminal = [i for i in range(spec.num_states) if not spec.is_terminal(spec.coord(i))]
    pairs = [(int(s), int(rng.integers(4))) for s in rng.choice(non_terminal, size=3, replace=False)]
    for s, a in pairs:
        freq = empirical_next(env, s, a, 100_000)
        assert 0.5 * np.abs(freq - mdp.transitions[s, a]).sum() < 5e-3


def test_slippery_chi_square_all_pairs():
    spec, mdp = frozen_lake(4, slip=True)
    env = GridEnv(spec, seed=11)
    n = 3000
    stats, dof = 0.0, 0
    for s in range(16):
        if spec.is_terminal(spec.coord(s)):
            continue
        for a in range(4):
            p = mdp.transitions[s, a]
            support = p > 0
            obs = empirical_next(env, s, a, n) * n
            stats += (((obs - n * p)[support]) ** 2 / (n * p[support])).sum()
            dof += support.sum() - 1
    # chi-square with dof degrees of freedom: mean dof, sd sqrt(2 dof); allow 5 sd
    assert stats < dof + 5 * np.sqrt(2 * dof)


# -- layouts -------------------------------------------------------------------------------

@pytest.mark.parametrize("name", list(ALL_SPECS))
def test_golden_layouts_match_constructors(name):
    assert golden_layout(name) == ALL_SPECS[name]().to_layout()


@pytest.mark.parametrize("name", list(ALL_SPECS))
def test_layout_round_trip(name, tmp_path):
    spec = ALL_SPECS[name]()
    save_layout(spec, tmp_path / "g.txt")
    back = load_layout(tmp_path / "g.txt")
    assert back.to_layout() == spec.to_layout()
    assert back.walls == spec.walls and back.goal == spec.goal and back.holes == spec.holes
    assert back.start_cells() == spec.start_cells()


def test_parse_layout_errors():
    with pytest.raises(ValueError):
        parse_layout("..\n...")
    with pytest.raises(ValueError):
        parse_layout("..\n..")
    with pytest.raises(ValueError):
        parse_layout("S?\n..")
