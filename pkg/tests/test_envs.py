import numpy as np
import pytest

from eapo.core import TerminalKind, validate_mdp
from eapo.envs import (ActionOutOfRange, BadSize, DoorKeyLiteEnv, EpisodeOver, GridEmptyEnv,
                       StateSpaceTooLarge, TabularEnv, bisimulation_mismatches, chain_mdp,
                       export_tabular, make_env, optimal_steps, random_tabular_mdp,
                       shortest_path_length)
from eapo.envs.grid import DONE, FORWARD, PICKUP, TOGGLE, TURN_LEFT, TURN_RIGHT


def walk(env, actions):
    outs = [env.step(a) for a in actions]
    return outs[-1]


# An optimal 10-step route from (1, 1, east) to (6, 6) with turn-moves.
OPTIMAL_ROUTE = [FORWARD] * 4 + [TURN_RIGHT] + [FORWARD] * 4 + [TURN_LEFT]


def test_goal_reward_at_t10():
    env = GridEmptyEnv()
    out = walk(env, OPTIMAL_ROUTE)
    assert (env.x, env.y) == (6, 6)
    assert out.reward == 0.96484375
    assert out.terminal_kind == TerminalKind.TERMINATED


def test_noop_is_free_and_not_terminal():
    env = GridEmptyEnv()
    for a in (3, 4, 5, 6):
        out = env.step(a)
        assert out.reward == 0.0 and out.terminal_kind == TerminalKind.NONE
    assert env.t == 4 and (env.x, env.y, env.heading) == (1, 1, 0)


def test_truncation_at_256():
    env = GridEmptyEnv()
    for _ in range(255):
        assert env.step(DONE).terminal_kind == TerminalKind.NONE
    out = env.step(DONE)
    assert out.terminal_kind == TerminalKind.TRUNCATED and out.reward == 0.0
    with pytest.raises(EpisodeOver):
        env.step(DONE)


def test_goal_on_last_step_is_termination():
    env = GridEmptyEnv()
    for _ in range(246):
        env.step(DONE)
    out = walk(env, OPTIMAL_ROUTE)
    assert env.t == 256
    assert out.terminal_kind == TerminalKind.TERMINATED
    assert out.reward == pytest.approx(0.1)


def test_action_out_of_range():
    env = GridEmptyEnv()
    with pytest.raises(ActionOutOfRange):
        env.step(7)
    with pytest.raises(ActionOutOfRange):
        DoorKeyLiteEnv().step(-1)


def test_turn_into_wall_keeps_position():
    env = GridEmptyEnv()
    env.step(TURN_LEFT)  # now facing north against the top wall
    assert (env.x, env.y, env.heading) == (1, 1, 3)
    env.step(TURN_RIGHT)  # east, and moves
    assert (env.x, env.y, env.heading) == (2, 1, 0)


def test_unmodified_turns_do_not_move():
    env = GridEmptyEnv(modified_turns=False)
    env.step(TURN_RIGHT)
    assert (env.x, env.y, env.heading) == (1, 1, 1)


def test_observation_encoding():
    env = GridEmptyEnv()
    obs = env.observe()
    assert obs.shape == (16,)
    assert np.flatnonzero(obs).tolist() == [0, 6, 12]
    seen = set()
    for x in range(1, 7):
        for y in range(1, 7):
            for d in range(4):
                env.set_state(((x, y, d), 0, False))
                o = env.observe()
                assert o.sum() == 3
                seen.add(o.tobytes())
    assert len(seen) == 144


def test_reward_bounds_on_random_walks():
    rng = np.random.default_rng(0)
    for _ in range(50):
        env = GridEmptyEnv()
        while True:
            out = env.step(int(rng.integers(7)))
            assert out.reward == 0.0 or 0.1 <= out.reward <= 1 - 0.9 / 256
            assert (out.reward != 0.0) == (out.terminal_kind == TerminalKind.TERMINATED)
            assert 1 <= env.x <= 6 and 1 <= env.y <= 6
            if out.done:
                break


def test_determinism():
    rng = np.random.default_rng(1)
    actions = rng.integers(0, 7, size=300)
    for cls in (GridEmptyEnv, DoorKeyLiteEnv):
        a, b = cls(), cls()
        for act in actions:
            if a.done:
                break
            oa, ob = a.step(int(act)), b.step(int(act))
            assert np.array_equal(oa.observation, ob.observation)
            assert oa.reward == ob.reward and oa.terminal_kind == ob.terminal_kind


def test_optimal_steps():
    assert optimal_steps() == 10
    assert optimal_steps(GridEmptyEnv(modified_turns=False)) == 11


def test_time_augmented_export_shortest_path():
    env = GridEmptyEnv()
    exported = export_tabular(env, time_augmented=True)
    validate_mdp(exported)
    assert shortest_path_length(exported, exported.goal_states) == 10
    # the t-augmented table carries the exact time-dependent reward
    s = exported.index_of(((5, 6, 0), 9))
    assert exported.reward[s, FORWARD] == 0.96484375


@pytest.mark.parametrize("augmented", [False, True])
def test_export_bisimulation(augmented):
    env = GridEmptyEnv()
    exported = export_tabular(env, time_augmented=augmented)
    assert bisimulation_mismatches(env, exported, 10_000, np.random.default_rng(7)) == 0


def test_doorkey_export_bisimulation():
    env = DoorKeyLiteEnv()
    exported = export_tabular(env)
    assert bisimulation_mismatches(env, exported, 10_000, np.random.default_rng(3)) == 0


def test_export_random_walk_matches_env():
    env = GridEmptyEnv()
    exported = export_tabular(env, time_augmented=True)
    rng = np.random.default_rng(11)
    for _ in range(20):
        env.reset()
        s = int(np.flatnonzero(exported.initial_distribution)[0])
        while True:
            a = int(rng.integers(7))
            out = env.step(a)
            assert out.reward == exported.reward[s, a]
            s = int(exported.transition[s, a])
            if out.done:
                assert exported.terminal_mask[s]
                break
            assert exported.states[s] == ((env.x, env.y, env.heading), env.t)


def test_export_cap():
    with pytest.raises(StateSpaceTooLarge):
        export_tabular(GridEmptyEnv(), time_augmented=True, max_states=1000)


def test_chain_export_is_identity():
    mdp = chain_mdp(4, 2)
    assert export_tabular(TabularEnv(mdp)) is mdp


def test_chain_mdp_construction():
    mdp = chain_mdp(3, 2)
    assert mdp.transition[1, 0] == 2 and mdp.reward[1, 0] == 1.0 and mdp.terminal_mask[2]
    assert mdp.transition[0, 1] == 0 and mdp.reward[0, 1] == 0.0
    validate_mdp(chain_mdp(10, 4))
    with pytest.raises(BadSize):
        chain_mdp(1, 2)
    with pytest.raises(BadSize):
        chain_mdp(3, 1)


def test_random_mdp_reproducible():
    a, b = random_tabular_mdp(42, 7, 3), random_tabular_mdp(42, 7, 3)
    assert np.array_equal(a.transition, b.transition) and np.array_equal(a.reward, b.reward)


def test_random_mdp_golden():
    mdp = random_tabular_mdp(2024, 5, 3)
    # frozen from the documented default_rng stream on first build
    assert mdp.transition.tolist() == GOLDEN_TRANSITION
    assert np.allclose(mdp.reward, GOLDEN_REWARD, rtol=0, atol=1e-15)
    assert mdp.terminal_mask.tolist() == GOLDEN_TERMINAL


def test_random_mdp_validates_1000_seeds():
    for seed in range(1000):
        validate_mdp(random_tabular_mdp(seed, 1 + seed % 9 + 1, 1 + seed % 4))


def test_tabular_env_follows_table():
    mdp = chain_mdp(3, 2)
    env = TabularEnv(mdp)
    assert env.step(1).reward == 0.0
    env.step(0)
    out = env.step(0)
    assert out.reward == 1.0 and out.terminal_kind == TerminalKind.TERMINATED


def test_doorkey_toggle_without_key_does_nothing():
    env = DoorKeyLiteEnv()
    # walk to (2, 3) facing east, next to the door at (3, 3)
    for a in [FORWARD, TURN_RIGHT, FORWARD, FORWARD, TURN_LEFT]:
        env.step(a)
    assert (env.x, env.y, env.heading) == (2, 3, 0)
    before = env.state_key()
    out = env.step(TOGGLE)
    assert env.state_key() == before and out.reward == 0.0
    env.step(FORWARD)
    assert (env.x, env.y) == (2, 3)


def test_doorkey_scripted_optimal_route():
    env = DoorKeyLiteEnv()
    exported = export_tabular(env)
    best = shortest_path_length(exported, exported.goal_states)
    # south to the key, turn around and pick up, north to the door row, open, then around
    route = ([TURN_RIGHT] + [FORWARD] * 4 + [TURN_LEFT, TURN_LEFT, PICKUP, FORWARD, FORWARD,
             TURN_RIGHT, FORWARD, TOGGLE] + [FORWARD] * 4 + [TURN_RIGHT] + [FORWARD] * 3)
    out = walk(env, route)
    assert out.terminal_kind == TerminalKind.TERMINATED and out.reward > 0
    assert env.t == best == 21
    assert out.reward == 1 - 0.9 * 21 / 256


def test_doorkey_truncates():
    env = DoorKeyLiteEnv()
    for _ in range(255):
        env.step(DONE)
    assert env.step(DONE).terminal_kind == TerminalKind.TRUNCATED


def test_make_env_names():
    assert isinstance(make_env("grid_empty"), GridEmptyEnv)
    assert isinstance(make_env("doorkey_lite"), DoorKeyLiteEnv)
    assert make_env("chain:5:3").mdp.num_states == 5
    assert make_env("random:1:4:2").mdp.num_actions == 2
    with pytest.raises(ValueError):
        make_env("procgen")


GOLDEN_TRANSITION = [[0, 0, 0], [1, 1, 1], [4, 3, 4], [4, 0, 0], [4, 0, 0]]
GOLDEN_REWARD = [
    [0.0, 0.0, 0.0],
    [0.23361502764755615, -0.7892286405032487, 0.1314621020516611],
    [-0.9907407133432284, -0.06976160118235541, 0.9512443952570753],
    [0.5988568769029938, 0.19364473340823718, -0.349300689834555],
    [-0.5873121772289394, -0.11454886581432944, -0.4439172005159695],
]
GOLDEN_TERMINAL = [True, False, False, False, False]
