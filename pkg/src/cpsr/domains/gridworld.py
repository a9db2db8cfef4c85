"""Maze with coloured walls observed along the four compass directions.

Map glyphs::

    .   free cell
    S   start cell (free)
    G   goal cell (free)
    #   wall of colour 1
    1 2 3  wall of the given colour

The observation is the colour of the first wall met when looking north,
east, south and west from the agent's cell, so there are 3**4 = 81 symbols.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from importlib import resources

import numpy as np

N_COLOURS = 3
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))   # N, E, S, W
ACTION_NAMES = ("N", "E", "S", "W")
SUCCESS_PROB = 0.8
WALL_GLYPHS = {"#": 1, "1": 1, "2": 2, "3": 3}
FREE_GLYPHS = ".SG"


class MapError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("malformed map: " + "; ".join(self.problems))


def encode_observation(colours) -> int:
    """Colours (1..3) seen N, E, S, W -> id in [0, 81)."""
    out = 0
    for i, c in enumerate(colours):
        if not 1 <= c <= N_COLOURS:
            raise ValueError(f"colour {c} out of range")
        out += (c - 1) * N_COLOURS ** i
    return out


def decode_observation(obs: int) -> tuple:
    if not 0 <= obs < N_COLOURS ** 4:
        raise ValueError(f"observation id {obs} out of range")
    return tuple(obs // N_COLOURS ** i % N_COLOURS + 1 for i in range(4))


def parse_map(text: str):
    lines = [ln.rstrip("\n") for ln in text.splitlines()]
    lines = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith(";")]
    problems = []
    if not lines:
        raise MapError(["map is empty"])
    width = len(lines[0])
    if any(len(ln) != width for ln in lines):
        problems.append("rows differ in length")
        raise MapError(problems)
    grid = np.zeros((len(lines), width), np.int64)  # 0 free, else wall colour
    start = goal = None
    for r, ln in enumerate(lines):
        for c, ch in enumerate(ln):
            if ch in WALL_GLYPHS:
                grid[r, c] = WALL_GLYPHS[ch]
            elif ch in FREE_GLYPHS:
                if r in (0, len(lines) - 1) or c in (0, width - 1):
                    problems.append(f"free cell {(r, c)} on the border")
                if ch == "S":
                    if start is not None:
                        problems.append("more than one start cell")
                    start = (r, c)
                elif ch == "G":
                    if goal is not None:
                        problems.append("more than one goal cell")
                    goal = (r, c)
            else:
                problems.append(f"unknown glyph {ch!r} at {(r, c)}")
    if start is None:
        problems.append("no start cell")
    if goal is None:
        problems.append("no goal cell")
    if start is not None and start == goal:
        problems.append("start and goal coincide")
    if not problems:
        free = {tuple(x) for x in np.argwhere(grid == 0)}
        seen = {start}
        todo = deque([start])
        while todo:
            r, c = todo.popleft()
            for dr, dc in MOVES:
                nxt = (r + dr, c + dc)
                if nxt in free and nxt not in seen:
                    seen.add(nxt)
                    todo.append(nxt)
        if seen != free:
            problems.append(f"{len(free - seen)} free cells unreachable from start")
    if problems:
        raise MapError(problems)
    return grid, start, goal


def default_map_text() -> str:
    return resources.files("cpsr.domains.maps").joinpath("colored_grid.txt").read_text()


@dataclass(eq=False)
class ColoredGridWorld:
    grid: np.ndarray
    start: tuple
    goal: tuple
    name: str = "colored_grid"
    max_episode_len: int = 13
    continues_after_done: bool = True
    n_actions: int = 4
    n_observations: int = N_COLOURS ** 4

    def __post_init__(self):
        self.free_cells = [tuple(int(v) for v in x) for x in np.argwhere(self.grid == 0)]
        self._obs = {cell: self._compute_obs(cell) for cell in self.free_cells}

    @classmethod
    def from_text(cls, text: str, **kw) -> "ColoredGridWorld":
        grid, start, goal = parse_map(text)
        return cls(grid, start, goal, **kw)

    @property
    def n_free(self) -> int:
        return len(self.free_cells)

    def _compute_obs(self, cell) -> int:
        colours = []
        for dr, dc in MOVES:
            r, c = cell
            while self.grid[r, c] == 0:
                r, c = r + dr, c + dc
            colours.append(int(self.grid[r, c]))
        return encode_observation(colours)

    def observe(self, cell) -> int:
        return self._obs[cell]

    def move(self, cell, direction: int):
        dr, dc = MOVES[direction]
        nxt = (cell[0] + dr, cell[1] + dc)
        return cell if self.grid[nxt] != 0 else nxt

    def reset(self, rng):
        return self.start

    def transition_probs(self, cell, action: int) -> dict:
        """Exact successor distribution before the goal reset."""
        out: dict = {}
        slip = (1.0 - SUCCESS_PROB) / 2
        for d, p in ((action, SUCCESS_PROB), ((action + 1) % 4, slip), ((action + 3) % 4, slip)):
            nxt = self.move(cell, d)
            out[nxt] = out.get(nxt, 0.0) + p
        return out

    def step(self, state, action: int, rng):
        if not 0 <= action < 4:
            raise ValueError(f"action {action} out of range")
        u = rng.random()
        if u < SUCCESS_PROB:
            d = action
        elif u < SUCCESS_PROB + (1 - SUCCESS_PROB) / 2:
            d = (action + 1) % 4
        else:
            d = (action + 3) % 4
        nxt = self.move(state, d)
        if nxt == self.goal:
            return self.start, self._obs[self.start], 1.0, True
        return nxt, self._obs[nxt], 0.0, False

    def observation_features(self, obs: int) -> np.ndarray:
        """One-hot colour per direction (12 entries)."""
        out = np.zeros(4 * N_COLOURS)
        for i, c in enumerate(decode_observation(obs)):
            out[i * N_COLOURS + c - 1] = 1.0
        return out


def colored_grid_world(map_file: str | None = None, **kw) -> ColoredGridWorld:
    """Load a map file (the bundled 47-cell maze when ``map_file`` is None)."""
    if map_file is None:
        text = default_map_text()
    else:
        with open(map_file) as fh:
            text = fh.read()
    return ColoredGridWorld.from_text(text, **kw)
