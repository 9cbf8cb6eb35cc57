"""Gridworld environments: FrozenLake, Pachinko, double-slit and four rooms.

Each layout is a :class:`GridSpec`. A spec exports an exact
:class:`~maxentstate.mdp.TabularMDP` and drives a step simulator
(:class:`GridEnv`) whose dynamics match that MDP.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row, row 0
at the top. Actions follow the FrozenLake convention
``0=left, 1=down, 2=right, 3=up``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .mdp import TabularMDP

LEFT, DOWN, RIGHT, UP = 0, 1, 2, 3
MOVES = {LEFT: (-1, 0), DOWN: (0, 1), RIGHT: (1, 0), UP: (0, -1)}
NUM_ACTIONS = 4

Cell = tuple[int, int]

FROZEN_LAKE_MAPS = {
    4: ["SFFF", "FHFH", "FFFH", "HFFG"],
    8: [
        "SFFFFFFF",
        "FFFFFFFF",
        "FFFHFFFF",
        "FFFFFHFF",
        "FFFHFFFF",
        "FHHFFFHF",
        "FHFFHFHF",
        "FFFHFFFG",
    ],
}

DEFAULT_HORIZON = {"frozen_lake": 100, "pachinko": 200, "double_slit": 200, "four_rooms": 500}


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    walls: frozenset = frozenset()
    start: Cell | tuple = (0, 0)
    goal: Cell | None = None
    step_reward: float = 0.0
    goal_reward: float = 1.0
    slip_prob: float = 0.0
    max_episode_steps: int = 100
    holes: frozenset = frozenset()
    name: str = "grid"
    _cells: tuple = field(init=False, repr=False, compare=False)
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0.0 <= self.slip_prob <= 1.0:
            raise ValueError("slip_prob must lie in [0, 1]")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be positive")
        object.__setattr__(self, "walls", frozenset(tuple(c) for c in self.walls))
        object.__setattr__(self, "holes", frozenset(tuple(c) for c in self.holes))
        for c in self.walls | self.holes:
            if not self.in_bounds(c):
                raise ValueError(f"cell {c} out of bounds")
        if self.walls & self.holes:
            raise ValueError("a cell cannot be both a wall and a hole")
        for c, _ in self.start_cells():
            self._check_open(c, "start")
        if self.goal is not None:
            object.__setattr__(self, "goal", tuple(self.goal))
            self._check_open(self.goal, "goal")
        cells = tuple((x, y) for y in range(self.height) for x in range(self.width)
                      if (x, y) not in self.walls)
        object.__setattr__(self, "_cells", cells)
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(cells)})

    def _check_open(self, cell, what):
        if not self.in_bounds(cell):
            raise ValueError(f"{what} {cell} is out of bounds")
        if tuple(cell) in self.walls:
            raise ValueError(f"{what} {cell} is a wall")

    def in_bounds(self, cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def start_cells(self) -> list[tuple[Cell, float]]:
        if isinstance(self.start, dict):
            return [(tuple(c), float(p)) for c, p in self.start.items()]
        if len(self.start) == 2 and all(isinstance(v, (int, np.integer)) for v in self.start):
            return [(tuple(self.start), 1.0)]
        return [(tuple(c), float(p)) for c, p in self.start]

    # -- state indexing -----------------------------------------------
    @property
    def num_states(self) -> int:
        return len(self._cells)

    def index(self, cell) -> int:
        return self._index[tuple(cell)]

    def coord(self, i: int) -> Cell:
        return self._cells[i]

    def terminal_cells(self) -> frozenset:
        return self.holes | ({self.goal} if self.goal is not None else frozenset())

    def is_terminal(self, cell) -> bool:
        return tuple(cell) in self.terminal_cells()

    # -- dynamics -----------------------------------------------------
    def move(self, cell, action: int) -> Cell:
        """Deterministic move; bumping into a wall or the edge stays put."""
        dx, dy = MOVES[action]
        nxt = (cell[0] + dx, cell[1] + dy)
        if not self.in_bounds(nxt) or nxt in self.walls:
            return tuple(cell)
        return nxt

    def outcome_distribution(self, cell, action: int) -> list[tuple[Cell, float]]:
        """Next-cell distribution: intended move w.p. 1 - slip, perpendicular moves share slip."""
        if action not in MOVES:
            raise ValueError(f"action {action} out of range")
        if self.slip_prob == 0.0:
            return [(self.move(cell, action), 1.0)]
        side = self.slip_prob / 2.0
        perp = ((action - 1) % 4, (action + 1) % 4)
        out: dict = {}
        for a, p in ((action, 1.0 - self.slip_prob), (perp[0], side), (perp[1], side)):
            if p > 0:
                c = self.move(cell, a)
                out[c] = out.get(c, 0.0) + p
        return list(out.items())

    def to_mdp(self, discount: float = 0.99) -> TabularMDP:
        """Exact tabular MDP. Terminal cells become zero-reward absorbing states.

        The reward ``r(s, a)`` is the expected immediate reward: the step
        reward plus ``goal_reward`` times the probability of entering the goal.
        """
        S, A = self.num_states, NUM_ACTIONS
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        for i, cell in enumerate(self._cells):
            if self.is_terminal(cell):
                P[i, :, i] = 1.0
                continue
            for a in range(A):
                for nxt, p in self.outcome_distribution(cell, a):
                    j = self.index(nxt)
                    P[i, a, j] += p
                    R[i, a] += p * (self.step_reward + (self.goal_reward if nxt == self.goal else 0.0))
        alpha = np.zeros(S)
        for c, p in self.start_cells():
            alpha[self.index(c)] += p
        return TabularMDP(P, R, alpha, discount)

    def reachable_cells(self) -> set:
        """Cells reachable from any start cell by BFS over open cells."""
        seen = {c for c, p in self.start_cells() if p > 0}
        queue = deque(seen)
        while queue:
            cell = queue.popleft()
            if self.is_terminal(cell):
                continue
            for a in MOVES:
                nxt = self.move(cell, a)
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return seen

    def shortest_path_length(self, src=None, dst=None) -> int | None:
        src = tuple(src) if src is not None else self.start_cells()[0][0]
        dst = tuple(dst) if dst is not None else self.goal
        dist = {src: 0}
        queue = deque([src])
        while queue:
            cell = queue.popleft()
            if cell == dst:
                return dist[cell]
            for a in MOVES:
                nxt = self.move(cell, a)
                if nxt not in dist:
                    dist[nxt] = dist[cell] + 1
                    queue.append(nxt)
        return None

    def grid_array(self, values, wall_value=-1) -> np.ndarray:
        """Scatter a per-state vector into a ``height x width`` array."""
        out = np.full((self.height, self.width), wall_value, dtype=np.asarray(values).dtype)
        for i, (x, y) in enumerate(self._cells):
            out[y, x] = values[i]
        return out

    # -- layout text --------------------------------------------------
    def to_layout(self) -> str:
        starts = {c for c, p in self.start_cells() if p > 0}
        rows = []
        for y in range(self.height):
            row = []
            for x in range(self.width):
                c = (x, y)
                if c in self.walls:
                    row.append("#")
                elif c == self.goal:
                    row.append("G")
                elif c in starts:
                    row.append("S")
                elif c in self.holes:
                    row.append("H")
                else:
                    row.append(".")
            rows.append("".join(row))
        return "\n".join(rows) + "\n"


def parse_layout(text: str, **kwargs) -> GridSpec:
    """Build a GridSpec from a ``#``/``.``/``S``/``G``/``H`` map.

    Several ``S`` cells give a uniform start distribution.
    """
    rows = [ln.rstrip("\n") for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise ValueError("empty layout")
    width = len(rows[0])
    walls, holes, starts, goal = set(), set(), [], None
    for y, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"layout row {y} has width {len(row)}, expected {width}")
        for x, ch in enumerate(row):
            if ch == "#":
                walls.add((x, y))
            elif ch == "S":
                starts.append((x, y))
            elif ch == "G":
                if goal is not None:
                    raise ValueError("layout has more than one goal")
                goal = (x, y)
            elif ch == "H":
                holes.add((x, y))
            elif ch != ".":
                raise ValueError(f"unknown layout character {ch!r} at ({x}, {y})")
    if not starts:
        raise ValueError("layout has no start cell")
    start = starts[0] if len(starts) == 1 else tuple((c, 1.0 / len(starts)) for c in starts)
    return GridSpec(width=width, height=len(rows), walls=frozenset(walls), holes=frozenset(holes),
                    start=start, goal=goal, **kwargs)


def save_layout(spec: GridSpec, path: str | Path) -> None:
    Path(path).write_text(spec.to_layout())


def load_layout(path: str | Path, **kwargs) -> GridSpec:
    return parse_layout(Path(path).read_text(), **kwargs)


def golden_layout(name: str) -> str:
    return resources.files("maxentstate").joinpath("layouts", f"{name}.txt").read_text()


# -- constructors -------------------------------------------------------

def frozen_lake(size: int = 4, slip: bool = True, discount: float = 0.99,
                max_episode_steps: int | None = None) -> tuple[GridSpec, TabularMDP]:
    """FrozenLake with holes and goal absorbing; slippery moves split 1/3 each way."""
    if size not in FROZEN_LAKE_MAPS:
        raise ValueError(f"unsupported FrozenLake size {size}; use 4 or 8")
    text = "\n".join(FROZEN_LAKE_MAPS[size]).replace("F", ".")
    spec = parse_layout(
        text,
        slip_prob=2.0 / 3.0 if slip else 0.0,
        max_episode_steps=max_episode_steps or DEFAULT_HORIZON["frozen_lake"],
        name=f"frozen_lake_{size}x{size}",
    )
    return spec, spec.to_mdp(discount)


def pachinko_walls(width: int, height: int, wall_period: int) -> frozenset:
    """Staggered single-cell pegs.

    Peg rows sit at ``y % p == p - 1``; the k-th peg row is shifted by
    ``(k % 2) * (p // 2)`` columns.
    """
    p = wall_period
    walls = set()
    for y in range(p - 1, height, p):
        offset = ((y // p) % 2) * (p // 2)
        for x in range(width):
            if (x + offset) % p == p - 1:
                walls.add((x, y))
    return frozenset(walls)


def pachinko(width: int = 21, height: int = 21, wall_period: int = 3,
             max_episode_steps: int | None = None) -> GridSpec:
    if wall_period < 2:
        raise ValueError("wall_period must be at least 2")
    if width < wall_period or height < wall_period:
        raise ValueError("grid must be at least one wall period in each dimension")
    return GridSpec(
        width=width,
        height=height,
        walls=pachinko_walls(width, height, wall_period),
        start=(width // 2, 0),
        goal=None,
        goal_reward=0.0,
        max_episode_steps=max_episode_steps or DEFAULT_HORIZON["pachinko"],
        name=f"pachinko_{width}x{height}_p{wall_period}",
    )


def double_slit(room_count: int = 3, room_size: int = 7, door_width: int = 1,
                max_episode_steps: int | None = None) -> GridSpec:
    """Rooms side by side, separated by one-cell walls each with a centered door."""
    if room_size < 3:
        raise ValueError("room_size must be at least 3")
    if room_count < 1:
        raise ValueError("room_count must be positive")
    if not 1 <= door_width <= room_size:
        raise ValueError(f"door_width must lie in [1, {room_size}]")
    width = room_count * room_size + (room_count - 1)
    height = room_size
    lo = (room_size - door_width) // 2
    door_rows = set(range(lo, lo + door_width))
    walls = {
        (k * (room_size + 1) - 1, y)
        for k in range(1, room_count)
        for y in range(height)
        if y not in door_rows
    }
    return GridSpec(
        width=width,
        height=height,
        walls=frozenset(walls),
        start=(0, height - 1),
        goal=(width - 1, 0),
        max_episode_steps=max_episode_steps or DEFAULT_HORIZON["double_slit"],
        name=f"double_slit_{room_count}x{room_size}_d{door_width}",
    )


def double_slit_wall_columns(spec: GridSpec, room_size: int, room_count: int = 3) -> list[int]:
    return [k * (room_size + 1) - 1 for k in range(1, room_count)]


def four_rooms(size: int = 11, max_episode_steps: int | None = None) -> GridSpec:
    """A cross of walls with one doorway per arm; start lower-left, goal upper-right."""
    if size % 2 == 0 or size < 7:
        raise ValueError("four_rooms size must be odd and at least 7")
    mid = size // 2
    door_lo = mid // 2
    door_hi = mid + 1 + (size - mid - 1) // 2
    walls = {(mid, y) for y in range(size)} | {(x, mid) for x in range(size)}
    walls -= {(mid, door_lo), (mid, door_hi), (door_lo, mid), (door_hi, mid)}
    return GridSpec(
        width=size,
        height=size,
        walls=frozenset(walls),
        start=(1, size - 2),
        goal=(size - 2, 1),
        max_episode_steps=max_episode_steps or DEFAULT_HORIZON["four_rooms"],
        name=f"four_rooms_{size}x{size}",
    )


def open_grid(width: int, height: int, start: Cell = (0, 0), max_episode_steps: int = 100) -> GridSpec:
    return GridSpec(width=width, height=height, start=start, goal=None, goal_reward=0.0,
                    max_episode_steps=max_episode_steps, name=f"open_{width}x{height}")


# -- simulator ------------------------------------------------------------

@dataclass(frozen=True)
class EnvStep:
    next_state: int
    reward: float
    done: bool
    step: int
    truncated: bool = False


class GridEnv:
    """Step simulator over a GridSpec. Owns its RNG and episode cursor."""

    def __init__(self, spec: GridSpec, seed: int | None = None):
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        S = spec.num_states
        self.num_states = S
        self.num_actions = NUM_ACTIONS
        self._start_idx = np.array([spec.index(c) for c, _ in spec.start_cells()])
        self._start_cum = np.cumsum([p for _, p in spec.start_cells()])
        self._start_cum[-1] = 1.0
        # per (s, a): candidate next states, cumulative probabilities and rewards
        self._next: list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = []
        self._terminal = np.zeros(S, dtype=bool)
        for i in range(S):
            cell = spec.coord(i)
            self._terminal[i] = spec.is_terminal(cell)
            row = []
            for a in range(NUM_ACTIONS):
                outs = spec.outcome_distribution(cell, a)
                idx = np.array([spec.index(c) for c, _ in outs])
                cum = np.cumsum([p for _, p in outs])
                cum[-1] = 1.0
                rew = np.array([spec.step_reward + (spec.goal_reward if c == spec.goal else 0.0)
                                for c, _ in outs])
                row.append((idx, cum, rew))
            self._next.append(row)
        self.state: int | None = None
        self.t = 0
        self.done = True

    def seed(self, seed: int | None) -> None:
        self.rng = np.random.default_rng(seed)

    def reset(self) -> int:
        k = int(np.searchsorted(self._start_cum, self.rng.random(), side="right")) if len(self._start_idx) > 1 else 0
        self.state = int(self._start_idx[k])
        self.t = 0
        self.done = bool(self._terminal[self.state])
        return self.state

    def step(self, action: int) -> EnvStep:
        if self.done or self.state is None:
            raise RuntimeError("episode is over; call reset() before step()")
        if not 0 <= action < NUM_ACTIONS:
            raise ValueError(f"action {action} out of range [0, {NUM_ACTIONS})")
        idx, cum, rew = self._next[self.state][action]
        k = int(np.searchsorted(cum, self.rng.random(), side="right")) if len(idx) > 1 else 0
        nxt = int(idx[k])
        self.state = nxt
        self.t += 1
        terminated = bool(self._terminal[nxt])
        truncated = not terminated and self.t >= self.spec.max_episode_steps
        self.done = terminated or truncated
        return EnvStep(nxt, float(rew[k]), self.done, self.t, truncated)

    def one_hot(self, states) -> np.ndarray:
        states = np.asarray(states, dtype=int)
        out = np.zeros((states.size, self.num_states))
        out[np.arange(states.size), states.ravel()] = 1.0
        return out

    def coordinates(self, states) -> np.ndarray:
        """(x, y) scaled to [-1, 1]."""
        cells = np.array([self.spec.coord(int(s)) for s in np.atleast_1d(states)], dtype=float)
        scale = np.array([max(self.spec.width - 1, 1), max(self.spec.height - 1, 1)], dtype=float)
        return 2.0 * cells / scale - 1.0

    def encode(self, states, encoding: str = "one_hot") -> np.ndarray:
        if encoding == "one_hot":
            return self.one_hot(states)
        if encoding == "coordinates":
            return self.coordinates(states)
        raise ValueError(f"unknown encoding {encoding!r}")

    def encoding_dim(self, encoding: str = "one_hot") -> int:
        return self.num_states if encoding == "one_hot" else 2


def make_env(name: str, **params) -> GridSpec:
    """Look up a named layout constructor."""
    if name == "frozen_lake":
        spec, _ = frozen_lake(**{k: v for k, v in params.items() if k != "discount"})
        return spec
    builders = {"pachinko": pachinko, "double_slit": double_slit, "four_rooms": four_rooms,
                "open_grid": open_grid}
    if name not in builders:
        raise ValueError(f"unknown environment {name!r}")
    return builders[name](**params)


def with_horizon(spec: GridSpec, max_episode_steps: int) -> GridSpec:
    return replace(spec, max_episode_steps=max_episode_steps)
