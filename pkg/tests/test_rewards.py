import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from teamgrpo.core import MacroAction, MixerConfig, TerminationFlag
from teamgrpo.envs import PLAN_PATH, SOKOBAN, SUDOKU, generate
from teamgrpo.rewards import (
    LocalComponents,
    PRESETS,
    RewardSchedule,
    ScheduleError,
    combine_local,
    component_scores,
    mix,
    schedule_for,
    team_reward,
)

NOT_DONE = TerminationFlag(False)

# the shipped coefficient tables, digit for digit
EXPECTED_PRESETS = {
    "sudoku": (0.60, {"Reasoner": [("fmt", 0.15), ("legal", 0.55), ("prog", 0.30)],
                      "Tool": [("fmt", 0.10), ("exec", 0.20), ("san", 0.70)]}),
    "plan-path": (0.50, {"Planner": [("fmt", 0.20), ("leg", 0.40), ("sp", 0.40)],
                         "Tool": [("fmt", 0.10), ("exec", 0.40), ("shape", 0.50)]}),
    "sokoban": (0.40, {"Planner": [("fmt", 0.10), ("leg", 0.45), ("dlk", 0.45)],
                       "Tool": [("fmt", 0.10), ("exec", 0.30), ("pot", 0.60)]}),
}


def test_presets_match_expected_tables_exactly():
    assert set(PRESETS) == set(EXPECTED_PRESETS)
    for env, (lam, tables) in EXPECTED_PRESETS.items():
        schedule = schedule_for(env)
        assert schedule.lam == lam
        for role, table in tables.items():
            assert schedule.role_coefficients(role) == tuple(table)


def test_presets_match_checked_in_constants_file():
    raw = json.loads(
        resources.files("teamgrpo.data").joinpath("schedules.json").read_text()
    )
    for env, block in raw.items():
        schedule = schedule_for(env)
        assert schedule.lam == block["lambda"]
        for role, table in block["coefficients"].items():
            assert list(map(list, schedule.role_coefficients(role))) == table


# --- team rewards -------------------------------------------------------------


def planpath_pair(text_before, move):
    prev = PLAN_PATH.load_instance(text_before)
    nxt = PLAN_PATH.apply_agent(prev, "Planner", MacroAction(0, move))
    return prev, nxt


def test_planpath_progress_reward():
    prev, nxt = planpath_pair("P...G\n", "R")  # d 4 -> 3, d0 = 4
    assert team_reward("plan-path", prev, nxt, NOT_DONE) == pytest.approx(0.25, abs=1e-12)


def test_planpath_regress_clamps_to_zero():
    prev = PLAN_PATH.load_instance(".P..G\n")  # d=3, d0=3
    nxt = PLAN_PATH.apply_agent(prev, "Planner", MacroAction(0, "L"))  # d 3 -> 4
    assert team_reward("plan-path", prev, nxt, NOT_DONE) == 0.0


def test_planpath_goal_reward_is_one():
    prev, nxt = planpath_pair("P.G\n", "R")
    mid, done = nxt, PLAN_PATH.apply_agent(nxt, "Tool", MacroAction(0, "R"))
    assert team_reward("plan-path", mid, done, TerminationFlag(True, "solved")) == 1.0


def test_sokoban_ratio_reward():
    state = SOKOBAN.load_instance("#####\n#P*.#\n#.BG#\n#####\n")
    assert state.boxes_on_goal == 1 and state.n_boxes == 2
    assert team_reward("sokoban", state, state, NOT_DONE) == 0.5


def test_sokoban_all_boxes_on_goals_is_one():
    state = SOKOBAN.load_instance("#####\n#P*.#\n#..*#\n#####\n")
    assert team_reward("sokoban", state, state, NOT_DONE) == 1.0


def test_sudoku_sparse_success_only_at_solved_termination():
    state = generate("sudoku", 1, 1)
    assert team_reward("sudoku", state, state, NOT_DONE) == 0.0
    assert team_reward("sudoku", state, state, TerminationFlag(True, "horizon")) == 0.0
    assert team_reward("sudoku", state, state, TerminationFlag(True, "solved")) == 1.0


# --- component scores ----------------------------------------------------------


def test_sudoku_reasoner_progress_three_cells():
    prev_grid = ((0, 0, 0, 4), (3, 4, 1, 2), (2, 1, 4, 3), (4, 3, 2, 1))
    next_grid = ((1, 2, 3, 4), (3, 4, 1, 2), (2, 1, 4, 3), (4, 3, 2, 1))
    prev = SUDOKU.load_instance("...4\n3412\n2143\n4321\n")
    nxt = prev.__class__(
        size=4, subgrid=2, grid_prev=prev_grid, grid_now=next_grid, givens=prev.givens
    )
    action = MacroAction(0, ((0, 0, 1), (0, 1, 2), (0, 2, 3)))
    comps = component_scores("sudoku", "Reasoner", prev, action, nxt)
    scores = dict(comps.scores)
    assert scores["prog"] == pytest.approx(3 / 16, abs=1e-12)
    assert scores["prog"] == pytest.approx(0.1875, abs=1e-12)
    assert scores["fmt"] == 1.0 and scores["legal"] == 1.0
    assert comps.mask == 1


def test_planpath_planner_on_shortest_path_move():
    prev = PLAN_PATH.load_instance("P...G\n")
    action = MacroAction(3, "R")
    nxt = PLAN_PATH.apply_agent(prev, "Planner", action)
    comps = component_scores("plan-path", "Planner", prev, action, nxt)
    assert comps.scores == (("fmt", 1.0), ("leg", 1.0), ("sp", 1.0))


def test_planpath_planner_wall_move_scores():
    prev = PLAN_PATH.load_instance("P#.G\n....\n")
    action = MacroAction(3, "R")
    nxt = PLAN_PATH.apply_agent(prev, "Planner", action)
    comps = component_scores("plan-path", "Planner", prev, action, nxt)
    assert comps.scores == (("fmt", 1.0), ("leg", 0.0), ("sp", 0.0))


def test_planpath_tool_shape_tracks_potential():
    prev = PLAN_PATH.load_instance(".P.G\n")
    toward = MacroAction(3, "R")
    nxt = PLAN_PATH.apply_agent(prev, "Tool", toward)
    comps = component_scores("plan-path", "Tool", prev, toward, nxt)
    assert dict(comps.scores) == {"fmt": 1.0, "exec": 1.0, "shape": 1.0}
    away = MacroAction(2, "L")
    nxt = PLAN_PATH.apply_agent(prev, "Tool", away)
    comps = component_scores("plan-path", "Tool", prev, away, nxt)
    assert dict(comps.scores) == {"fmt": 1.0, "exec": 1.0, "shape": 0.0}


def test_sokoban_tool_potential_gain():
    prev = SOKOBAN.load_instance("######\n#PB.G#\n#....#\n######\n")
    action = MacroAction(3, "R")
    nxt = SOKOBAN.apply_agent(prev, "Tool", action)
    assert nxt.potential == prev.potential + 1  # psi -2 -> -1
    comps = component_scores("sokoban", "Tool", prev, action, nxt)
    assert dict(comps.scores) == {"fmt": 1.0, "exec": 1.0, "pot": 1.0}


def test_sokoban_planner_corner_push_scores_zero_dlk():
    prev = SOKOBAN.load_instance("#####\n#...#\n#B.G#\n#P..#\n#####\n")
    action = MacroAction(0, "U")
    nxt = SOKOBAN.apply_agent(prev, "Planner", action)
    comps = component_scores("sokoban", "Planner", prev, action, nxt)
    scores = dict(comps.scores)
    assert scores["dlk"] == 0.0
    assert scores["fmt"] == 1.0 and scores["leg"] == 1.0


def test_sudoku_tool_sanity_scores():
    state = generate("sudoku", 3, 1)
    menu = SUDOKU.legal_menu(state, "Tool")
    legal_idx = next(i for i in range(len(menu) - 1) if menu.features[i].sum() >= 1)
    action = menu.action(legal_idx)
    nxt = SUDOKU.apply_agent(state, "Tool", action)
    comps = component_scores("sudoku", "Tool", state, action, nxt)
    assert dict(comps.scores) == {"fmt": 1.0, "exec": 1.0, "san": 1.0}
    # empty edit list: sane by definition (noted ambiguity), still executable
    empty = MacroAction(0, ())
    comps = component_scores("sudoku", "Tool", state, empty, state)
    assert dict(comps.scores) == {"fmt": 1.0, "exec": 1.0, "san": 1.0}


def test_malformed_payload_zeroes_fmt():
    prev = PLAN_PATH.load_instance("P..G\n")
    bad = MacroAction(0, "diagonal")
    comps = component_scores("plan-path", "Planner", prev, bad, prev)
    assert dict(comps.scores) == {"fmt": 0.0, "leg": 0.0, "sp": 0.0}
    sk = generate("sokoban", 1, 1)
    comps = component_scores("sokoban", "Planner", sk, bad, sk)
    assert dict(comps.scores)["fmt"] == 0.0
    sd = generate("sudoku", 1, 1)
    comps = component_scores("sudoku", "Tool", sd, MacroAction(0, "garbage"), sd)
    assert dict(comps.scores) == {"fmt": 0.0, "exec": 0.0, "san": 0.0}


def test_component_scores_rejects_unknown_role():
    state = generate("plan-path", 1, 1)
    with pytest.raises(Exception, match="role"):
        component_scores("plan-path", "Oracle", state, MacroAction(0, "R"), state)


def test_component_scores_pure_recomputation():
    # recomputing scores for logged transitions reproduces the same values
    state = generate("sokoban", 2, 1)
    rng = np.random.default_rng(0)
    for _ in range(20):
        role = SOKOBAN.roles[int(rng.integers(2))]
        menu = SOKOBAN.legal_menu(state, role)
        action = menu.action(int(rng.integers(len(menu))))
        nxt = SOKOBAN.apply_agent(state, role, action)
        first = component_scores("sokoban", role, state, action, nxt)
        again = component_scores("sokoban", role, state, action, nxt)
        assert first == again
        if SOKOBAN.is_terminal(nxt):
            break
        state = nxt


# --- convex combination ---------------------------------------------------------


def test_combine_local_dot_product():
    comps = LocalComponents((("fmt", 1.0), ("leg", 1.0), ("sp", 0.0)))
    coeffs = (("fmt", 0.20), ("leg", 0.40), ("sp", 0.40))
    assert combine_local(comps, coeffs) == pytest.approx(0.60, abs=1e-12)


def test_combine_local_upper_bound():
    comps = LocalComponents((("fmt", 1.0), ("leg", 1.0), ("sp", 1.0)))
    coeffs = (("fmt", 0.20), ("leg", 0.40), ("sp", 0.40))
    assert combine_local(comps, coeffs) == pytest.approx(1.0, abs=1e-12)


def test_combine_local_rejects_bad_coefficient_sum():
    comps = LocalComponents((("a", 1.0), ("b", 1.0), ("c", 1.0)))
    with pytest.raises(ScheduleError, match="sum"):
        combine_local(comps, (("a", 0.5), ("b", 0.5), ("c", 0.5)))


def test_combine_local_rejects_name_mismatch():
    comps = LocalComponents((("fmt", 1.0), ("leg", 1.0)))
    with pytest.raises(ScheduleError, match="names"):
        combine_local(comps, (("fmt", 0.5), ("sp", 0.5)))


# --- mixing ----------------------------------------------------------------------


def test_mix_appendix_fixture():
    schedule = schedule_for("plan-path")  # lambda = 0.5
    out = mix(1.0, 0.6, 1, MixerConfig("appendix"), schedule)
    assert out == pytest.approx(0.80, abs=1e-12)


def test_mix_appendix_mask_zeroes_local():
    schedule = schedule_for("sudoku")  # lambda = 0.6
    assert mix(0.7, 0.9, 0, MixerConfig("appendix"), schedule) == pytest.approx(
        0.6 * 0.7, abs=1e-12
    )


def test_mix_main_text_fixture():
    schedule = schedule_for("plan-path")
    out = mix(0.25, 0.6, 1, MixerConfig("main-text", alpha=1.0), schedule)
    assert out == pytest.approx(0.85, abs=1e-12)


def test_mix_rejects_out_of_range_inputs():
    schedule = schedule_for("sokoban")
    with pytest.raises(ScheduleError):
        mix(1.5, 0.0, 1, MixerConfig("appendix"), schedule)
    with pytest.raises(ScheduleError):
        mix(0.5, -0.1, 1, MixerConfig("appendix"), schedule)


def test_schedule_validation():
    with pytest.raises(ScheduleError, match="lambda"):
        RewardSchedule("plan-path", 1.5, ((("Planner"), (("fmt", 1.0),)),))
    with pytest.raises(ScheduleError, match="negative"):
        RewardSchedule("x", 0.5, (("R", (("a", -0.1), ("b", 1.1))),))


def test_local_components_validate_range_and_mask():
    with pytest.raises(ScheduleError):
        LocalComponents((("a", 1.5),))
    with pytest.raises(ScheduleError):
        LocalComponents((("a", 0.5),), mask=2)


# --- randomized range property ----------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.sampled_from(["plan-path", "sokoban", "sudoku"]))
def test_scores_and_mixes_stay_in_unit_interval(seed, kind):
    from teamgrpo.envs import get_env

    env = get_env(kind)
    rng = np.random.default_rng(seed)
    state = generate(kind, int(rng.integers(1000)), 1)
    schedule = schedule_for(kind)
    mixer = MixerConfig("appendix")
    for _ in range(3):
        if env.is_terminal(state):
            break
        role = env.roles[int(rng.integers(env.n_roles))]
        menu = env.legal_menu(state, role)
        action = menu.action(int(rng.integers(len(menu))))
        nxt = env.apply_agent(state, role, action)
        term = env.termination(nxt)
        team = team_reward(kind, state, nxt, term)
        comps = component_scores(kind, role, state, action, nxt)
        local = combine_local(comps, schedule.role_coefficients(role))
        mixed = mix(team, local, comps.mask, mixer, schedule)
        assert 0.0 <= team <= 1.0
        assert all(0.0 <= v <= 1.0 for _, v in comps.scores)
        assert 0.0 <= local <= 1.0
        assert 0.0 <= mixed <= 1.0
        state = nxt
