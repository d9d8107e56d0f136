import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from formation_planner.guide import local_subgoal, route
from formation_planner.world import OccupancyGrid, build_edt, query_distance


def field_with(cells_fn, size=(20.0, 20.0, 3.0), res=0.2):
    dims = tuple(int(round(s / res)) for s in size)
    cells = np.zeros(dims, bool)
    cells_fn(cells)
    return build_edt(OccupancyGrid(np.zeros(3), res, cells))


def test_free_window_goes_straight():
    f = field_with(lambda c: None)
    c = np.array([5.1, 10.1, 1.5])
    sg = local_subgoal(f, c, [18.1, 10.1, 1.5], 4.0, 0.9, 3.0)
    assert_allclose(sg, [8.1, 10.1, 1.5], atol=0.2)


def test_goal_within_lookahead_is_returned():
    f = field_with(lambda c: None)
    goal = np.array([7.0, 11.0, 1.2])
    assert_array_equal(local_subgoal(f, [5.0, 10.0, 1.5], goal, 4.0, 0.9, 3.0), goal)


def test_route_goes_through_gap():
    def wall(c):
        c[50:52, :, :] = True
        c[50:52, 20:30, :] = False  # 2 m gap around y = 5

    f = field_with(wall)
    path = route(f, [6.0, 9.0, 1.5], [16.0, 9.0, 1.5], 6.0, 0.5)
    pts = np.c_[path, np.full(len(path), 1.5)]
    assert query_distance(f, pts).min() > 0
    crossing = path[np.argmin(np.abs(path[:, 0] - 10.2))]
    assert 4.0 <= crossing[1] <= 6.0


def test_route_prefers_wide_side_of_pillar():
    def pillar(c):
        ii, jj = np.meshgrid(np.arange(100), np.arange(100), indexing="ij")
        c[(ii - 50) ** 2 + (jj - 50) ** 2 <= 4] = True  # centre (10.1, 10.1)
        c[40:60, 43:45, :] = True  # wall just below: the south side is too tight

    f = field_with(pillar)
    path = route(f, [7.0, 10.1, 1.5], [13.0, 10.1, 1.5], 5.0, 0.8)
    mid = path[np.argmin(np.abs(path[:, 0] - 10.1))]
    assert mid[1] > 10.1
    pts = np.c_[path, np.full(len(path), 1.5)]
    assert query_distance(f, pts).min() >= 0.8 - 1e-9


def test_blocked_window_falls_back_to_goal_direction():
    f = field_with(lambda c: c.__setitem__((slice(None), slice(None), slice(None)), True))
    path = route(f, [5.0, 5.0, 1.5], [15.0, 5.0, 1.5], 3.0, 0.5)
    assert_allclose(path, [[5.0, 5.0], [15.0, 5.0]])


@pytest.mark.parametrize("lookahead", [1.0, 2.5, 4.0])
def test_subgoal_is_on_route_at_lookahead(lookahead):
    def pillar(c):
        c[48:53, 48:53, :] = True

    f = field_with(pillar)
    c = np.array([7.0, 10.1, 1.5])
    goal = np.array([19.0, 10.1, 1.5])
    path = route(f, c, goal, 5.0, 0.8)
    sg = local_subgoal(f, c, goal, 5.0, 0.8, lookahead)
    assert np.min(np.linalg.norm(path - sg[:2], axis=1)) < 1e-12
    along = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))])
    k = int(np.argmin(np.linalg.norm(path - sg[:2], axis=1)))
    assert lookahead <= along[k] < lookahead + 0.3
