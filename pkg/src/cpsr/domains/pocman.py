"""PocMan: a partially observable Pac-Man on a 17x19 maze, plus a sparse variant.

Map glyphs: ``#`` wall, ``.`` cell that may hold food, ``o`` power pill,
``P`` PocMan start, ``g`` ghost home, space for an empty free cell.

Constants: -1 per step, +10 per food, +25 per ghost eaten, -50 on death,
power lasts 15 steps, 4 ghosts that chase (or flee while PocMan is powered)
with probability 0.75 when within Manhattan distance 5 and otherwise wander
without reversing. The episode ends on death or when no food remains.

Observation bits (full variant, 13 bits)::

    0-3   wall adjacent N, E, S, W
    4-7   ghost visible along N, E, S, W
    8-11  food visible along N, E, S, W
    12    power active

The sparse variant drops bits 8-11 (9 bits) and places 7 fixed foods.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .gridworld import MOVES

STEP_REWARD = -1.0
FOOD_REWARD = 10.0
GHOST_REWARD = 25.0
DEATH_REWARD = -50.0
POWER_STEPS = 15
N_GHOSTS = 4
CHASE_RANGE = 5
CHASE_PROB = 0.75
FOOD_PROB = 0.5
EVAL_CAP = 1000
SPARSE_FOOD = ((1, 4), (3, 12), (5, 1), (9, 2), (13, 7), (16, 14), (17, 4))


@dataclass(frozen=True)
class PocState:
    pos: tuple
    ghosts: tuple
    ghost_dirs: tuple
    food: int          # bitmask over food cells
    pills: int         # bitmask over power pills
    power: int
    steps: int = 0


def _maze_text() -> str:
    return resources.files("cpsr.domains.maps").joinpath("pocman.txt").read_text()


class PocMan:
    """``variant`` is ``"full"`` or ``"sparse"``."""

    continues_after_done = False
    n_actions = 4

    def __init__(self, variant: str = "full", max_episode_len: int = EVAL_CAP):
        if variant not in ("full", "sparse"):
            raise ValueError("variant must be 'full' or 'sparse'")
        self.variant = variant
        self.name = "pocman" if variant == "full" else "s-pocman"
        self.max_episode_len = max_episode_len
        rows = [ln for ln in _maze_text().splitlines() if ln.strip()]
        self.height, self.width = len(rows), len(rows[0])
        self.wall = np.array([[ch == "#" for ch in r] for r in rows])
        self.food_cells = []
        self.pills = []
        self.homes = []
        self.start = None
        for r, row in enumerate(rows):
            for c, ch in enumerate(row):
                if ch == ".":
                    self.food_cells.append((r, c))
                elif ch == "o":
                    self.pills.append((r, c))
                elif ch == "g":
                    self.homes.append((r, c))
                elif ch == "P":
                    self.start = (r, c)
        if variant == "sparse":
            missing = [c for c in SPARSE_FOOD if c not in self.food_cells]
            if missing:
                raise ValueError(f"sparse food outside food cells: {missing}")
            self.food_cells = list(SPARSE_FOOD)
        self.food_index = {c: i for i, c in enumerate(self.food_cells)}
        self.pill_index = {c: i for i, c in enumerate(self.pills)}
        self.n_bits = 13 if variant == "full" else 9
        self.n_observations = 2 ** self.n_bits

    # geometry
    def free(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width and not self.wall[r, c]

    def _move(self, cell, d):
        nxt = (cell[0] + MOVES[d][0], cell[1] + MOVES[d][1])
        return nxt if self.free(nxt) else cell

    def _ray(self, cell, d):
        r, c = cell
        while True:
            r, c = r + MOVES[d][0], c + MOVES[d][1]
            if not self.free((r, c)):
                return
            yield (r, c)

    # simulator interface
    def reset(self, rng) -> PocState:
        if self.variant == "full":
            mask = 0
            draws = rng.random(len(self.food_cells))
            for i, u in enumerate(draws):
                if u < FOOD_PROB:
                    mask |= 1 << i
        else:
            mask = (1 << len(self.food_cells)) - 1
        ghosts = tuple(self.homes[i % len(self.homes)] for i in range(N_GHOSTS))
        pills = (1 << len(self.pills)) - 1
        return PocState(self.start, ghosts, (0,) * N_GHOSTS, mask, pills, 0, 0)

    def _ghost_step(self, g, last_dir, pos, powered, rng):
        dist = abs(g[0] - pos[0]) + abs(g[1] - pos[1])
        options = [d for d in range(4) if self._move(g, d) != g]
        if not options:
            return g, last_dir
        if dist <= CHASE_RANGE and rng.random() < CHASE_PROB:
            def after(d):
                n = self._move(g, d)
                return abs(n[0] - pos[0]) + abs(n[1] - pos[1])
            # chase by minimising distance, flee by maximising it; first best wins
            key = (lambda d: -after(d)) if powered else after
            d = min(options, key=key)
            return self._move(g, d), d
        forward = [d for d in options if d != (last_dir + 2) % 4] or options
        d = forward[int(rng.integers(len(forward)))]
        return self._move(g, d), d

    def step(self, state: PocState, action: int, rng):
        if not 0 <= action < 4:
            raise ValueError(f"action {action} out of range")
        reward = STEP_REWARD
        pos = self._move(state.pos, action)
        food = state.food
        power = max(state.power - 1, 0)
        i = self.food_index.get(pos)
        if i is not None and food >> i & 1:
            food &= ~(1 << i)
            reward += FOOD_REWARD
        pills = state.pills
        j = self.pill_index.get(pos)
        if j is not None and pills >> j & 1:
            pills &= ~(1 << j)
            power = POWER_STEPS
        ghosts = list(state.ghosts)
        dirs = list(state.ghost_dirs)
        dead = False

        def collide(k):
            nonlocal reward, dead
            if power > 0:
                reward += GHOST_REWARD
                ghosts[k] = self.homes[k % len(self.homes)]
                dirs[k] = 0
            else:
                dead = True

        for k in range(N_GHOSTS):
            if ghosts[k] == pos:
                collide(k)
        if not dead:
            for k in range(N_GHOSTS):
                ghosts[k], dirs[k] = self._ghost_step(ghosts[k], dirs[k], pos, power > 0, rng)
                if ghosts[k] == pos:
                    collide(k)
                if dead:
                    break
        done = dead or food == 0
        if dead:
            reward += DEATH_REWARD
        nxt = PocState(pos, tuple(ghosts), tuple(dirs), food, pills, power, state.steps + 1)
        return nxt, self.observe(nxt), reward, done

    def observation_bits(self, state: PocState) -> list:
        bits = []
        for d in range(4):
            bits.append(int(self._move(state.pos, d) == state.pos))
        gset = set(state.ghosts)
        for d in range(4):
            bits.append(int(any(c in gset for c in self._ray(state.pos, d))))
        if self.variant == "full":
            for d in range(4):
                bits.append(int(any(state.food >> self.food_index[c] & 1
                                    for c in self._ray(state.pos, d) if c in self.food_index)))
        bits.append(int(state.power > 0))
        return bits

    def observe(self, state: PocState) -> int:
        return encode_bits(self.observation_bits(state))

    def observation_features(self, obs: int) -> np.ndarray:
        return np.array(decode_bits(obs, self.n_bits), float)


def encode_bits(bits) -> int:
    out = 0
    for i, b in enumerate(bits):
        if b not in (0, 1):
            raise ValueError("bits must be 0 or 1")
        out |= b << i
    return out


def decode_bits(obs: int, n_bits: int) -> list:
    if not 0 <= obs < 2 ** n_bits:
        raise ValueError(f"observation id {obs} out of range")
    return [obs >> i & 1 for i in range(n_bits)]


def pocman(variant: str = "full", max_episode_len: int = EVAL_CAP) -> PocMan:
    return PocMan(variant, max_episode_len)
