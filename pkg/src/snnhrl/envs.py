"""Deterministic 2D point-robot environments.

Three tasks share one robot:

* ``PretrainEnv``: open plane, reward = speed norm.
* ``MazeEnv``: walled corridors, reward 1 on reaching the goal disk.
* ``GatherEnv``: square arena with green (+1) and red (-1) balls.

All environments are batched: ``n`` robots are simulated in lock-step with
array state.  Per-robot randomness (ball layouts) comes from one
``RngStream`` per robot so results do not depend on batch composition.

The robot drives through a first-order actuator with a deadzone: the action
is low-pass filtered into an activation ``m`` and only the part of ``m`` beyond
the deadzone produces force.  Incoherent (i.i.d.) actions therefore barely
move the robot while sustained ones reach full speed.  With
``actuation_rate=1`` and ``deadzone=0`` the filter disappears and the
velocity update is the plain damped point mass.

The speed limit is direction dependent: it equals ``v_max`` along ``lobes``
evenly spaced headings (the first one pointing along +x) and dips by the
fraction ``lobe_depth`` half-way between them.  Like a legged body with a few
natural gaits, the robot thus has a handful of preferred travel directions,
each a separate local optimum of the speed reward.  ``lobes=0`` gives an
isotropic limit.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import _kernels
from .core import FactoredObservation, ObsLayout, RngStream

AGENT_FIELDS = ("vx", "vy", "cos_heading", "sin_heading", "act_x", "act_y")


@dataclass(frozen=True)
class DynamicsConfig:
    damping: float = 0.1
    gain: float = 0.004
    v_max: float = 0.02
    actuation_rate: float = 0.2
    deadzone: float = 0.5
    lobes: int = 6
    lobe_depth: float = 0.3
    contact_eps: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.actuation_rate <= 1.0:
            raise ValueError(f"actuation_rate must lie in (0, 1], got {self.actuation_rate}")
        if not 0.0 <= self.deadzone < 1.0:
            raise ValueError(f"deadzone must lie in [0, 1), got {self.deadzone}")
        if not 0.0 <= self.damping <= 1.0:
            raise ValueError(f"damping must lie in [0, 1], got {self.damping}")
        if self.lobes < 0 or not 0.0 <= self.lobe_depth < 1.0:
            raise ValueError("lobes must be >= 0 and lobe_depth in [0, 1)")
        if self.v_max <= 0 or self.gain <= 0:
            raise ValueError("v_max and gain must be positive")


# plain damped point mass: no actuator filter, isotropic speed limit
DIRECT_DYNAMICS = DynamicsConfig(gain=0.1, v_max=0.5, actuation_rate=1.0, deadzone=0.0, lobes=0)


@dataclass
class PointRobotState:
    position: np.ndarray
    velocity: np.ndarray
    heading: float = 0.0
    activation: np.ndarray = field(default_factory=lambda: np.zeros(2))
    balls: "BallSet | None" = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(2)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(2)
        self.activation = np.asarray(self.activation, dtype=np.float64).reshape(2)
        self.heading = float(self.heading)


@dataclass(frozen=True)
class WallSegment:
    a: tuple[float, float]
    b: tuple[float, float]

    def __post_init__(self):
        if tuple(self.a) == tuple(self.b):
            raise ValueError(f"degenerate wall segment at {self.a}")

    def mirrored_x(self) -> "WallSegment":
        return WallSegment((-self.a[0], self.a[1]), (-self.b[0], self.b[1]))


@dataclass(frozen=True)
class SensorConfig:
    n_rays: int = 8
    max_range: float = 8.0
    targets: tuple[str, ...] = ("walls", "goal")

    def __post_init__(self):
        if self.n_rays < 1 or self.max_range <= 0:
            raise ValueError("sensor needs n_rays >= 1 and max_range > 0")
        unknown = set(self.targets) - {"walls", "goal", "green", "red"}
        if unknown:
            raise ValueError(f"unknown sensor targets {sorted(unknown)}")

    def angles(self) -> np.ndarray:
        # symmetric about the vertical axis: mirroring x reverses the ray order
        i = np.arange(self.n_rays)
        return 2.0 * np.pi * (i + 0.5) / self.n_rays - 0.5 * np.pi


@dataclass(frozen=True)
class MazeSpec:
    walls: tuple[WallSegment, ...]
    start: tuple[float, float]
    goal: tuple[float, float]
    goal_radius: float = 0.4
    id: int = 0

    def segment_array(self) -> np.ndarray:
        return np.array([[w.a[0], w.a[1], w.b[0], w.b[1]] for w in self.walls], dtype=np.float64).reshape(-1, 4)

    def mirrored_x(self) -> "MazeSpec":
        return MazeSpec(
            walls=tuple(w.mirrored_x() for w in self.walls),
            start=(-self.start[0], self.start[1]), goal=(-self.goal[0], self.goal[1]),
            goal_radius=self.goal_radius, id=self.id,
        )

    def validate(self) -> None:
        segs = self.segment_array()
        for name, pt in (("start", self.start), ("goal", self.goal)):
            p = np.asarray(pt, dtype=float)
            for s in segs:
                if _point_segment_distance(p, s) < 1e-9:
                    raise ValueError(f"maze {self.id}: {name} {pt} lies on a wall")


@dataclass(frozen=True)
class GatherSpec:
    arena_half_size: float = 6.0
    n_green: int = 4
    n_red: int = 4
    ball_radius: float = 0.3
    robot_radius: float = 0.2
    min_spawn_dist: float = 1.5

    def __post_init__(self):
        if self.n_green < 1 or self.n_red < 1:
            raise ValueError("gather needs at least one green and one red ball")

    def segment_array(self) -> np.ndarray:
        return _box_segments(-self.arena_half_size, -self.arena_half_size, self.arena_half_size, self.arena_half_size)


@dataclass
class BallSet:
    positions: np.ndarray
    colors: np.ndarray  # +1 green, -1 red
    alive: np.ndarray

    @property
    def n_green_left(self) -> int:
        return int(np.sum(self.alive & (self.colors > 0)))


def _point_segment_distance(p, s) -> float:
    a, b = s[:2], s[2:]
    e = b - a
    t = np.clip(np.dot(p - a, e) / np.dot(e, e), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * e)))


def _box_segments(x0, y0, x1, y1) -> np.ndarray:
    return np.array([
        [x0, y0, x1, y0], [x1, y0, x1, y1], [x1, y1, x0, y1], [x0, y1, x0, y0],
    ], dtype=np.float64)


def _walls(segs: np.ndarray) -> tuple[WallSegment, ...]:
    return tuple(WallSegment((float(s[0]), float(s[1])), (float(s[2]), float(s[3]))) for s in segs)


def make_maze(maze_id: int, arm: float = 1.2, width: float = 0.8, goal_radius: float = 0.5) -> MazeSpec:
    """Desk-scale maze layouts.

    0: U-turn, start at the south-west end, goal at the north-west end.
    1: mirror image of 0 about the y-axis.
    2/3: square room split by two offset walls; start in the centre and the
       goal in the north-east (2) or south-west (3) corner.
    """
    h = width / 2.0
    if maze_id in (0, 1):
        outer = _box_segments(-h, -h, arm + h, arm + h)
        inner = np.array([
            [-h, h, arm - h, h], [arm - h, h, arm - h, arm - h], [arm - h, arm - h, -h, arm - h],
        ])
        spec = MazeSpec(_walls(np.vstack([outer, inner])), (0.0, 0.0), (0.0, arm), goal_radius, 0)
        if maze_id == 1:
            spec = replace(spec.mirrored_x(), id=1)
    elif maze_id in (2, 3):
        r = arm + h
        outer = _box_segments(-r, -r, r, r)
        inner = np.array([[-h, h, r, h], [-r, -h, h, -h]])
        goal = (arm, arm) if maze_id == 2 else (-arm, -arm)
        spec = MazeSpec(_walls(np.vstack([outer, inner])), (0.0, 0.0), goal, goal_radius, maze_id)
    else:
        raise ValueError(f"unknown maze id {maze_id}")
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# batched dynamics
# ---------------------------------------------------------------------------

def _check_actions(actions: np.ndarray) -> np.ndarray:
    a = np.asarray(actions, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        rows = np.nonzero(~np.all(np.isfinite(a.reshape(len(a), -1)), axis=1))[0]
        raise ValueError(f"non-finite action for robot(s) {rows.tolist()}")
    return np.clip(a, -1.0, 1.0)


def actuate(velocity, activation, actions, dyn: DynamicsConfig):
    """One step of actuator + velocity update; returns (velocity', activation')."""
    a = _check_actions(actions)
    m = (1.0 - dyn.actuation_rate) * activation + dyn.actuation_rate * a
    if dyn.deadzone > 0.0:
        drive = np.sign(m) * np.maximum(np.abs(m) - dyn.deadzone, 0.0) / (1.0 - dyn.deadzone)
    else:
        drive = m
    v = (1.0 - dyn.damping) * velocity + dyn.gain * drive
    speed = np.linalg.norm(v, axis=-1, keepdims=True)
    cap = speed_cap(v, dyn)
    v = np.where(speed > cap, v * (cap / np.maximum(speed, 1e-300)), v)
    return v, m


def speed_cap(velocity, dyn: DynamicsConfig):
    """Direction-dependent speed limit, v_max along the ``lobes`` preferred directions."""
    if dyn.lobes == 0:
        return np.full(np.shape(velocity)[:-1] + (1,), dyn.v_max)
    theta = np.arctan2(velocity[..., 1:2], velocity[..., 0:1])
    return dyn.v_max * (1.0 - 0.5 * dyn.lobe_depth * (1.0 - np.cos(dyn.lobes * theta)))


def _update_heading(heading, velocity):
    speed = np.linalg.norm(velocity, axis=-1)
    return np.where(speed > 1e-12, np.arctan2(velocity[..., 1], velocity[..., 0]), heading)


class BatchEnv:
    """Common state and stepping for ``n`` robots."""

    kind = "base"
    rest_fields: tuple[str, ...] = ()

    def __init__(self, dyn: DynamicsConfig = DynamicsConfig(), horizon: int = 500):
        self.dyn = dyn
        self.horizon = int(horizon)
        self.layout = ObsLayout(AGENT_FIELDS, self.rest_fields)
        self.n = 0
        self.pos = np.zeros((0, 2))
        self.vel = np.zeros((0, 2))
        self.heading = np.zeros(0)
        self.act = np.zeros((0, 2))

    @property
    def obs_dim(self) -> int:
        return self.layout.dim

    @property
    def act_dim(self) -> int:
        return 2

    @property
    def com(self) -> np.ndarray:
        return self.pos

    def _start_positions(self, n: int) -> np.ndarray:
        return np.zeros((n, 2))

    def reset(self, rngs: Sequence[RngStream] | int) -> np.ndarray:
        n = rngs if isinstance(rngs, int) else len(rngs)
        self.n = n
        self.pos = self._start_positions(n)
        self.vel = np.zeros((n, 2))
        self.heading = np.zeros(n)
        self.act = np.zeros((n, 2))
        self._reset_task(rngs if not isinstance(rngs, int) else None)
        return self.observe()

    def _reset_task(self, rngs) -> None:
        pass

    def set_state(self, states: Sequence[PointRobotState]) -> np.ndarray:
        self.n = len(states)
        self.pos = np.array([s.position for s in states], dtype=np.float64)
        self.vel = np.array([s.velocity for s in states], dtype=np.float64)
        self.heading = np.array([s.heading for s in states], dtype=np.float64)
        self.act = np.array([s.activation for s in states], dtype=np.float64)
        return self.observe()

    def state(self, i: int = 0) -> PointRobotState:
        return PointRobotState(self.pos[i].copy(), self.vel[i].copy(), float(self.heading[i]), self.act[i].copy())

    def agent_obs(self) -> np.ndarray:
        v = self.vel / self.dyn.v_max
        return np.column_stack([v, np.cos(self.heading), np.sin(self.heading), self.act])

    def rest_obs(self) -> np.ndarray:
        return np.zeros((self.n, 0))

    def observe(self) -> np.ndarray:
        return np.hstack([self.agent_obs(), self.rest_obs()])

    def _move(self, disp: np.ndarray):
        self.pos = self.pos + disp

    def step(self, actions: np.ndarray):
        actions = np.reshape(actions, (self.n, 2))
        v, m = actuate(self.vel, self.act, actions, self.dyn)
        self.act = m
        self.vel = v
        self._move(v)
        self.heading = _update_heading(self.heading, self.vel)
        reward, done = self._task_reward()
        return self.observe(), reward, done

    def _task_reward(self):
        return np.zeros(self.n), np.zeros(self.n, dtype=bool)

    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.vel, axis=1)


class PretrainEnv(BatchEnv):
    kind = "pretrain"

    def _task_reward(self):
        return self.speed(), np.zeros(self.n, dtype=bool)


class WalledEnv(BatchEnv):
    segs = np.zeros((0, 4))

    def _move(self, disp):
        new, normals, n_hits = _kernels.move_with_walls(self.pos, disp, self.segs, self.dyn.contact_eps)
        v = self.vel
        for k in range(normals.shape[1]):
            nk = normals[:, k, :]
            active = (n_hits > k)[:, None]
            dn = np.sum(v * nk, axis=1, keepdims=True)
            v = np.where(active & (dn < 0.0), v - dn * nk, v)
        self.vel = v
        self.pos = new

    def _wall_rays(self, sensors: SensorConfig) -> np.ndarray:
        ang = np.broadcast_to(sensors.angles(), (self.n, sensors.n_rays))
        d = _kernels.ray_segments(self.pos, ang, self.segs, sensors.max_range)
        return (sensors.max_range - d) / sensors.max_range


class MazeEnv(WalledEnv):
    kind = "maze"

    def __init__(self, spec: MazeSpec, dyn: DynamicsConfig = DynamicsConfig(), horizon: int = 400,
                 sensors: SensorConfig = SensorConfig()):
        self.spec = spec
        self.sensors = sensors
        self.segs = spec.segment_array()
        self.rest_fields = tuple(f"wall_{i}" for i in range(sensors.n_rays)) + tuple(
            f"goal_{i}" for i in range(sensors.n_rays))
        super().__init__(dyn, horizon)

    def _start_positions(self, n):
        return np.tile(np.asarray(self.spec.start, dtype=np.float64), (n, 1))

    def rest_obs(self):
        s = self.sensors
        ang = np.broadcast_to(s.angles(), (self.n, s.n_rays))
        centers = np.broadcast_to(np.asarray(self.spec.goal, dtype=np.float64), (self.n, 1, 2))
        g = _kernels.ray_circles(self.pos, ang, centers, np.ones((self.n, 1), bool), self.spec.goal_radius,
                                 s.max_range)
        return np.hstack([self._wall_rays(s), (s.max_range - g) / s.max_range])

    def at_goal(self) -> np.ndarray:
        return np.linalg.norm(self.pos - np.asarray(self.spec.goal), axis=1) <= self.spec.goal_radius

    def _task_reward(self):
        done = self.at_goal()
        return done.astype(np.float64), done


class GatherEnv(WalledEnv):
    kind = "gather"

    def __init__(self, spec: GatherSpec = GatherSpec(), dyn: DynamicsConfig = DynamicsConfig(), horizon: int = 400,
                 sensors: SensorConfig = SensorConfig(max_range=6.0, targets=("green", "red", "walls"))):
        self.spec = spec
        self.sensors = sensors
        self.segs = spec.segment_array()
        n = sensors.n_rays
        self.rest_fields = tuple(f"green_{i}" for i in range(n)) + tuple(f"red_{i}" for i in range(n)) + tuple(
            f"wall_{i}" for i in range(n))
        super().__init__(dyn, horizon)
        m = spec.n_green + spec.n_red
        self.balls = np.zeros((0, m, 2))
        self.colors = np.concatenate([np.ones(spec.n_green), -np.ones(spec.n_red)])
        self.alive = np.zeros((0, m), bool)

    def _reset_task(self, rngs):
        if rngs is None:
            raise ValueError("gather reset needs one RngStream per robot")
        self.balls = np.stack([sample_balls(self.spec, r).positions for r in rngs]) if len(rngs) else self.balls[:0]
        self.alive = np.ones((self.n, len(self.colors)), bool)

    def set_balls(self, balls: Sequence[BallSet]):
        self.balls = np.stack([b.positions for b in balls]).astype(np.float64)
        self.colors = np.asarray(balls[0].colors, dtype=np.float64)
        self.alive = np.stack([b.alive for b in balls]).astype(bool)

    def ball_set(self, i: int = 0) -> BallSet:
        return BallSet(self.balls[i].copy(), self.colors.copy(), self.alive[i].copy())

    def rest_obs(self):
        s = self.sensors
        ang = np.broadcast_to(s.angles(), (self.n, s.n_rays))
        green = self.colors > 0
        out = []
        for mask in (green, ~green):
            d = _kernels.ray_circles(self.pos, ang, self.balls, self.alive & mask[None, :], self.spec.ball_radius,
                                     s.max_range)
            out.append((s.max_range - d) / s.max_range)
        out.append(self._wall_rays(s))
        return np.hstack(out)

    def _task_reward(self):
        reach = self.spec.ball_radius + self.spec.robot_radius
        d = np.linalg.norm(self.balls - self.pos[:, None, :], axis=2)
        hit = self.alive & (d <= reach)
        reward = np.sum(np.where(hit, self.colors[None, :], 0.0), axis=1)
        self.alive = self.alive & ~hit
        done = ~np.any(self.alive & (self.colors > 0)[None, :], axis=1)
        return reward, done


def sample_balls(spec: GatherSpec, rng: RngStream, max_tries: int = 1000) -> BallSet:
    lim = spec.arena_half_size - spec.ball_radius
    pts: list[np.ndarray] = []
    for k in range(spec.n_green + spec.n_red):
        for _ in range(max_tries):
            p = rng.uniform(-lim, lim, size=2)
            if np.linalg.norm(p) < spec.min_spawn_dist:
                continue
            if any(np.linalg.norm(p - q) <= 2 * spec.ball_radius for q in pts):
                continue
            pts.append(p)
            break
        else:
            raise RuntimeError(f"could not place ball {k} after {max_tries} rejection samples")
    colors = np.concatenate([np.ones(spec.n_green), -np.ones(spec.n_red)])
    return BallSet(np.array(pts), colors, np.ones(len(pts), bool))


def make_env(task: str, dyn: DynamicsConfig = DynamicsConfig(), horizon: int | None = None,
             gather: GatherSpec = GatherSpec()) -> BatchEnv:
    if task == "pretrain":
        return PretrainEnv(dyn, horizon or 500)
    if task.startswith("maze"):
        return MazeEnv(make_maze(int(task[4:])), dyn, horizon or 400)
    if task == "gather":
        return GatherEnv(gather, dyn, horizon or 400)
    raise ValueError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# single-robot functional interface
# ---------------------------------------------------------------------------

def _single(env: BatchEnv, state: PointRobotState) -> None:
    env.set_state([state])


def _factored(env: BatchEnv, obs: np.ndarray) -> FactoredObservation:
    return FactoredObservation.from_full(obs[0], env.layout)


def pretrain_step(state: PointRobotState, action, dyn: DynamicsConfig = DynamicsConfig()):
    env = PretrainEnv(dyn)
    _single(env, state)
    obs, r, _ = env.step(np.reshape(action, (1, 2)))
    return env.state(0), float(r[0]), _factored(env, obs)


def maze_step(state: PointRobotState, action, spec: MazeSpec, dyn: DynamicsConfig = DynamicsConfig(),
              sensors: SensorConfig = SensorConfig()):
    env = MazeEnv(spec, dyn, sensors=sensors)
    _single(env, state)
    obs, r, done = env.step(np.reshape(action, (1, 2)))
    return env.state(0), float(r[0]), _factored(env, obs), bool(done[0])


def gather_step(state: PointRobotState, action, spec: GatherSpec, balls: BallSet | None = None,
                dyn: DynamicsConfig = DynamicsConfig()):
    """Step one robot; ``balls`` (default ``state.balls``) is updated in place."""
    balls = balls if balls is not None else state.balls
    if balls is None:
        raise ValueError("gather_step needs a ball set")
    env = GatherEnv(spec, dyn)
    _single(env, state)
    env.set_balls([balls])
    obs, r, done = env.step(np.reshape(action, (1, 2)))
    balls.alive[:] = env.alive[0]
    new = env.state(0)
    new.balls = balls
    return new, float(r[0]), _factored(env, obs), bool(done[0])


def raycast(origin, angle: float, segments, max_range: float) -> float:
    if max_range <= 0:
        raise ValueError("max_range must be positive")
    segs = np.array([[w.a[0], w.a[1], w.b[0], w.b[1]] if isinstance(w, WallSegment) else list(w)
                     for w in segments], dtype=np.float64).reshape(-1, 4)
    d = _kernels.ray_segments(np.reshape(np.asarray(origin, float), (1, 2)), np.array([[float(angle)]]), segs,
                              max_range)
    return float(d[0, 0])


def reset(kind: str, spec=None, rng: RngStream | None = None, dyn: DynamicsConfig = DynamicsConfig()):
    """Initial ``(state, obs)`` for one robot; gather states carry their balls."""
    if kind == "pretrain":
        env: BatchEnv = PretrainEnv(dyn)
        obs = env.reset(1)
        return env.state(0), _factored(env, obs)
    if kind == "maze":
        env = MazeEnv(spec if spec is not None else make_maze(0), dyn)
        obs = env.reset(1)
        return env.state(0), _factored(env, obs)
    if kind == "gather":
        if rng is None:
            raise ValueError("gather reset needs an RngStream")
        env = GatherEnv(spec if spec is not None else GatherSpec(), dyn)
        obs = env.reset([rng])
        st = env.state(0)
        st.balls = env.ball_set(0)
        return st, _factored(env, obs)
    raise ValueError(f"unknown env kind {kind!r}")
