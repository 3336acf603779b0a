//! Deterministic gridworlds.
//!
//! All maps share a 17x17 three-room layout: border walls, full-width walls at
//! rows 5 and 11, and one gate per inner wall. Row 0 is the bottom of the map
//! and `Up` increases `y`. The bottom room spans rows 1..=4, the middle room
//! rows 6..=10, and the top room rows 12..=15.
//!
//! * [`NavEnv`]: start anywhere in the bottom room, reach a goal anywhere in
//!   the top room. One stage (success).
//! * [`KeyDoorEnv`]: the upper gate is a locked door. Pick up the key in the
//!   bottom room, open the door, then reach the goal. Three stages:
//!   `[has_key, door_open, at_goal]`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Env, EnvSpec, StageVector, Trajectory, Transition};
use crate::error::{Error, Result};

pub const GRID_SIZE: usize = 17;
pub const WALL_ROWS: [usize; 2] = [5, 11];
pub const BOTTOM_ROOM_ROWS: std::ops::RangeInclusive<usize> = 1..=4;
pub const TOP_ROOM_ROWS: std::ops::RangeInclusive<usize> = 12..=15;
/// `(lower_gate_x, upper_gate_x)` of the map rewards are learned on.
pub const TRAIN_GATES: (usize, usize) = (4, 12);
/// `(lower_gate_x, upper_gate_x)` of the map rewards are reused on.
pub const TEST_GATES: (usize, usize) = (12, 4);
pub const NAV_OBS_DIM: usize = 13;
pub const NAV_MAX_STEPS: usize = 120;
pub const KEYDOOR_OBS_DIM: usize = 21;
pub const KEYDOOR_MAX_STEPS: usize = 200;
pub const NUM_ACTIONS: usize = 5;

/// Coordinates are divided by this so observations live in `[0, 1]`.
const COORD_SCALE: f64 = (GRID_SIZE - 1) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pos {
    pub x: usize,
    pub y: usize,
}

impl Pos {
    pub const fn new(x: usize, y: usize) -> Self {
        Pos { x, y }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const ALL: [Action; NUM_ACTIONS] = [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Stay => (0, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
}

/// Rectangular map. Cells outside the rectangle behave as walls.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

impl GridMap {
    /// Map with every cell free.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![Cell::Free; width * height],
        }
    }

    /// The 17x17 three-room layout with the given gate columns.
    pub fn three_rooms(lower_gate: usize, upper_gate: usize) -> Result<Self> {
        for g in [lower_gate, upper_gate] {
            if !(1..GRID_SIZE - 1).contains(&g) {
                return Err(Error::config(format!(
                    "gate column {g} is not an interior column (1..={})",
                    GRID_SIZE - 2
                )));
            }
        }
        let mut map = Self::empty(GRID_SIZE, GRID_SIZE);
        for y in 0..GRID_SIZE {
            for x in 0..GRID_SIZE {
                let border = x == 0 || y == 0 || x == GRID_SIZE - 1 || y == GRID_SIZE - 1;
                let wall_row = (y == WALL_ROWS[0] && x != lower_gate) || (y == WALL_ROWS[1] && x != upper_gate);
                if border || wall_row {
                    map.set(Pos::new(x, y), Cell::Wall);
                }
            }
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index_of(&self, p: Pos) -> usize {
        p.y * self.width + p.x
    }

    pub fn set(&mut self, p: Pos, cell: Cell) {
        let i = self.index_of(p);
        self.cells[i] = cell;
    }

    pub fn is_free(&self, p: Pos) -> bool {
        p.x < self.width && p.y < self.height && self.cells[self.index_of(p)] == Cell::Free
    }

    /// Free cells in row-major order from the bottom row.
    pub fn free_cells(&self) -> Vec<Pos> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| Pos::new(x, y)))
            .filter(|&p| self.is_free(p))
            .collect()
    }

    /// Target cell of `action` ignoring walls, if it lies on the map.
    pub fn neighbor(&self, p: Pos, action: Action) -> Option<Pos> {
        let (dx, dy) = action.delta();
        let x = p.x.checked_add_signed(dx)?;
        let y = p.y.checked_add_signed(dy)?;
        (x < self.width && y < self.height).then_some(Pos::new(x, y))
    }

    /// Where `action` leads from `p`; blocked moves stay in place.
    pub fn step_from(&self, p: Pos, action: Action) -> Pos {
        match self.neighbor(p, action) {
            Some(q) if self.is_free(q) => q,
            _ => p,
        }
    }

    /// 3x3 neighbourhood, rows from `y+1` down to `y-1`, columns left to
    /// right. Walls (and off-map cells) are 1, free cells 0.
    pub fn patch(&self, p: Pos) -> [f64; 9] {
        let mut out = [0.0; 9];
        let mut i = 0;
        for dy in [1isize, 0, -1] {
            for dx in [-1isize, 0, 1] {
                let free = match (p.x.checked_add_signed(dx), p.y.checked_add_signed(dy)) {
                    (Some(x), Some(y)) => self.is_free(Pos::new(x, y)),
                    _ => false,
                };
                out[i] = if free { 0.0 } else { 1.0 };
                i += 1;
            }
        }
        out
    }

    /// Every free cell reachable from every other.
    pub fn is_connected(&self) -> bool {
        let free = self.free_cells();
        let Some(&first) = free.first() else {
            return true;
        };
        let dist = distances_to(self, first);
        free.iter().all(|&p| dist[self.index_of(p)].is_some())
    }
}

/// BFS distance from every cell to `goal` (moves are symmetric, so this is
/// also the distance from `goal`). Walls and unreachable cells are `None`.
pub fn distances_to(map: &GridMap, goal: Pos) -> Vec<Option<usize>> {
    let mut dist = vec![None; map.width * map.height];
    if !map.is_free(goal) {
        return dist;
    }
    dist[map.index_of(goal)] = Some(0);
    let mut queue = VecDeque::from([goal]);
    while let Some(p) = queue.pop_front() {
        let d = dist[map.index_of(p)].expect("queued cells have a distance");
        for a in &Action::ALL[..4] {
            let q = map.step_from(p, *a);
            if q != p && dist[map.index_of(q)].is_none() {
                dist[map.index_of(q)] = Some(d + 1);
                queue.push_back(q);
            }
        }
    }
    dist
}

/// A minimal-step path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShortestPath {
    pub length: usize,
    pub actions: Vec<Action>,
}

/// Shortest path under the four moves (`Stay` is never useful).
pub fn bfs_shortest_path(map: &GridMap, start: Pos, goal: Pos) -> Result<ShortestPath> {
    let no_path = || Error::NoPath {
        from: (start.x, start.y),
        to: (goal.x, goal.y),
    };
    if !map.is_free(start) || !map.is_free(goal) {
        return Err(no_path());
    }
    let dist = distances_to(map, goal);
    let mut d = dist[map.index_of(start)].ok_or_else(no_path)?;
    let mut actions = Vec::with_capacity(d);
    let mut p = start;
    while d > 0 {
        let a = optimal_actions(map, &dist, p)[0];
        actions.push(a);
        p = map.step_from(p, a);
        d -= 1;
    }
    Ok(ShortestPath {
        length: actions.len(),
        actions,
    })
}

/// Actions that reduce the distance to the goal by one, in index order.
pub fn optimal_actions(map: &GridMap, dist: &[Option<usize>], p: Pos) -> Vec<Action> {
    let Some(d) = dist[map.index_of(p)] else {
        return Vec::new();
    };
    Action::ALL[..4]
        .iter()
        .copied()
        .filter(|&a| {
            let q = map.step_from(p, a);
            q != p && dist[map.index_of(q)].map_or(false, |dq| dq + 1 == d)
        })
        .collect()
}

fn coord(v: usize) -> f64 {
    v as f64 / COORD_SCALE
}

fn check_action(action: usize) -> Result<Action> {
    Action::from_index(action).ok_or_else(|| Error::usage(format!("action {action} out of range 0..{NUM_ACTIONS}")))
}

fn room_cells(rows: std::ops::RangeInclusive<usize>) -> Vec<Pos> {
    rows.flat_map(|y| (1..GRID_SIZE - 1).map(move |x| Pos::new(x, y))).collect()
}

/// Which pair of gate columns a three-room map uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapVariant {
    Train,
    Test,
    Custom { lower_gate: usize, upper_gate: usize },
}

impl MapVariant {
    pub fn gates(self) -> (usize, usize) {
        match self {
            MapVariant::Train => TRAIN_GATES,
            MapVariant::Test => TEST_GATES,
            MapVariant::Custom { lower_gate, upper_gate } => (lower_gate, upper_gate),
        }
    }
}

/// Navigation from the bottom room to a goal in the top room.
#[derive(Clone, Debug)]
pub struct NavEnv {
    map: GridMap,
    rng: ChaCha8Rng,
    agent: Pos,
    goal: Pos,
    goal_dist: Vec<Option<usize>>,
    steps: usize,
    done: bool,
    obs: Arc<[f64]>,
}

pub fn make_nav_env(variant: MapVariant, seed: u64) -> Result<NavEnv> {
    let (lower, upper) = variant.gates();
    let map = GridMap::three_rooms(lower, upper)?;
    let mut env = NavEnv {
        map,
        rng: ChaCha8Rng::seed_from_u64(seed),
        agent: Pos::new(1, 1),
        goal: Pos::new(1, 15),
        goal_dist: Vec::new(),
        steps: 0,
        done: true,
        obs: Arc::from(Vec::new()),
    };
    env.place(Pos::new(1, 1), Pos::new(1, 15))?;
    Ok(env)
}

impl NavEnv {
    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn agent(&self) -> Pos {
        self.agent
    }

    pub fn goal(&self) -> Pos {
        self.goal
    }

    /// Observation for an arbitrary agent/goal placement on `map`.
    pub fn observation_at(map: &GridMap, agent: Pos, goal: Pos) -> Vec<f64> {
        let mut obs = Vec::with_capacity(NAV_OBS_DIM);
        obs.extend([coord(agent.x), coord(agent.y), coord(goal.x), coord(goal.y)]);
        obs.extend(map.patch(agent));
        obs
    }

    /// Start an episode from a chosen placement.
    pub fn place(&mut self, agent: Pos, goal: Pos) -> Result<Arc<[f64]>> {
        if !self.map.is_free(agent) || !self.map.is_free(goal) {
            return Err(Error::usage(format!("cannot place agent {agent:?} / goal {goal:?} on a wall")));
        }
        self.agent = agent;
        if goal != self.goal || self.goal_dist.is_empty() {
            self.goal_dist = distances_to(&self.map, goal);
        }
        self.goal = goal;
        self.steps = 0;
        self.done = false;
        self.obs = Arc::from(Self::observation_at(&self.map, agent, goal));
        Ok(self.obs.clone())
    }
}

impl Env for NavEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: NAV_OBS_DIM,
            action_count: NUM_ACTIONS,
            num_stages: 1,
            max_episode_steps: NAV_MAX_STEPS,
        }
    }

    fn reset(&mut self) -> Arc<[f64]> {
        let bottom = room_cells(BOTTOM_ROOM_ROWS);
        let top = room_cells(TOP_ROOM_ROWS);
        let agent = bottom[self.rng.random_range(0..bottom.len())];
        let goal = top[self.rng.random_range(0..top.len())];
        self.place(agent, goal).expect("room cells are free")
    }

    fn step(&mut self, action: usize) -> Result<(Transition, bool)> {
        let a = check_action(action)?;
        if self.done {
            return Err(Error::usage("episode is over; call reset"));
        }
        self.agent = self.map.step_from(self.agent, a);
        self.steps += 1;
        let success = self.agent == self.goal;
        self.done = success || self.steps >= NAV_MAX_STEPS;
        let next_obs: Arc<[f64]> = Arc::from(Self::observation_at(&self.map, self.agent, self.goal));
        let transition = Transition {
            obs: std::mem::replace(&mut self.obs, next_obs.clone()),
            action,
            next_obs,
            next_stages: StageVector::new(vec![success]),
            success,
            terminal: success,
        };
        Ok((transition, self.done))
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn expert_action(&self) -> Option<usize> {
        optimal_actions(&self.map, &self.goal_dist, self.agent)
            .first()
            .map(|a| a.index())
    }
}

/// Navigation with a key and a locked door in the upper wall.
#[derive(Clone, Debug)]
pub struct KeyDoorEnv {
    /// Door cell free: the layout once the door is open.
    open_map: GridMap,
    /// Door cell walled: the layout while the door is locked.
    closed_map: GridMap,
    door: Pos,
    lower_gate: usize,
    /// Draw both gate columns at every reset.
    shuffle_gates: bool,
    rng: ChaCha8Rng,
    agent: Pos,
    key: Pos,
    goal: Pos,
    has_key: bool,
    door_open: bool,
    steps: usize,
    done: bool,
    obs: Arc<[f64]>,
}

/// `variant` gives `(lower_gate_x, door_x)`; the door replaces the upper gate.
/// The train variant instead draws both columns at every reset, each from
/// all interior columns except the test variant's, so a reward learned on it
/// has seen gates and doors in many places.
pub fn make_keydoor_env(variant: MapVariant, seed: u64) -> Result<KeyDoorEnv> {
    let (lower, door_x) = variant.gates();
    let open_map = GridMap::three_rooms(lower, door_x)?;
    let mut env = KeyDoorEnv {
        closed_map: open_map.clone(),
        open_map,
        door: Pos::new(door_x, WALL_ROWS[1]),
        lower_gate: lower,
        shuffle_gates: variant == MapVariant::Train,
        rng: ChaCha8Rng::seed_from_u64(seed),
        agent: Pos::new(1, 1),
        key: Pos::new(2, 1),
        goal: Pos::new(1, 15),
        has_key: false,
        door_open: false,
        steps: 0,
        done: true,
        obs: Arc::from(Vec::new()),
    };
    env.set_gates(lower, door_x)?;
    Ok(env)
}

impl KeyDoorEnv {
    /// Rebuild the map with the given lower gate and door columns. The door
    /// starts closed.
    pub fn set_gates(&mut self, lower_gate: usize, door_x: usize) -> Result<()> {
        self.open_map = GridMap::three_rooms(lower_gate, door_x)?;
        self.lower_gate = lower_gate;
        self.door = Pos::new(door_x, WALL_ROWS[1]);
        self.closed_map = self.open_map.clone();
        self.closed_map.set(self.door, Cell::Wall);
        self.door_open = false;
        self.obs = Arc::from(self.observe());
        Ok(())
    }

    pub fn stage_flags(&self) -> [bool; 3] {
        [self.has_key, self.door_open, self.agent == self.goal]
    }

    pub fn agent(&self) -> Pos {
        self.agent
    }

    pub fn key(&self) -> Pos {
        self.key
    }

    pub fn door(&self) -> Pos {
        self.door
    }

    pub fn goal(&self) -> Pos {
        self.goal
    }

    pub fn has_key(&self) -> bool {
        self.has_key
    }

    pub fn door_open(&self) -> bool {
        self.door_open
    }

    fn current_map(&self) -> &GridMap {
        if self.door_open {
            &self.open_map
        } else {
            &self.closed_map
        }
    }

    fn observe(&self) -> Vec<f64> {
        let key = if self.has_key { self.agent } else { self.key };
        let mut obs = Vec::with_capacity(KEYDOOR_OBS_DIM);
        obs.extend([
            coord(self.agent.x),
            coord(self.agent.y),
            coord(self.goal.x),
            coord(self.goal.y),
            coord(key.x),
            coord(key.y),
            coord(self.lower_gate),
            coord(WALL_ROWS[0]),
            coord(self.door.x),
            coord(self.door.y),
            f64::from(u8::from(self.has_key)),
            f64::from(u8::from(self.door_open)),
        ]);
        obs.extend(self.current_map().patch(self.agent));
        obs
    }

    /// Start an episode from a chosen placement.
    pub fn place(&mut self, agent: Pos, key: Pos, goal: Pos) -> Result<Arc<[f64]>> {
        for p in [agent, key, goal] {
            if !self.closed_map.is_free(p) {
                return Err(Error::usage(format!("{p:?} is not a free cell")));
            }
        }
        self.agent = agent;
        self.key = key;
        self.goal = goal;
        self.has_key = agent == key;
        self.door_open = false;
        self.steps = 0;
        self.done = false;
        self.obs = Arc::from(self.observe());
        Ok(self.obs.clone())
    }
}

impl Env for KeyDoorEnv {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: KEYDOOR_OBS_DIM,
            action_count: NUM_ACTIONS,
            num_stages: 3,
            max_episode_steps: KEYDOOR_MAX_STEPS,
        }
    }

    fn reset(&mut self) -> Arc<[f64]> {
        if self.shuffle_gates {
            let mut draw = |skip: usize| loop {
                let x = self.rng.random_range(1..GRID_SIZE - 1);
                if x != skip {
                    break x;
                }
            };
            let (lower, door) = (draw(TEST_GATES.0), draw(TEST_GATES.1));
            self.set_gates(lower, door).expect("gate columns are interior");
        }
        let bottom = room_cells(BOTTOM_ROOM_ROWS);
        let top = room_cells(TOP_ROOM_ROWS);
        let agent = bottom[self.rng.random_range(0..bottom.len())];
        let key = loop {
            let k = bottom[self.rng.random_range(0..bottom.len())];
            if k != agent {
                break k;
            }
        };
        let goal = top[self.rng.random_range(0..top.len())];
        self.place(agent, key, goal).expect("room cells are free")
    }

    fn step(&mut self, action: usize) -> Result<(Transition, bool)> {
        let a = check_action(action)?;
        if self.done {
            return Err(Error::usage("episode is over; call reset"));
        }
        if self.open_map.neighbor(self.agent, a) == Some(self.door) && !self.door_open && self.has_key {
            self.door_open = true;
        }
        self.agent = self.current_map().step_from(self.agent, a);
        if self.agent == self.key {
            self.has_key = true;
        }
        self.steps += 1;
        let flags = self.stage_flags();
        let success = flags[2];
        self.done = success || self.steps >= KEYDOOR_MAX_STEPS;
        let next_obs: Arc<[f64]> = Arc::from(self.observe());
        let transition = Transition {
            obs: std::mem::replace(&mut self.obs, next_obs.clone()),
            action,
            next_obs,
            next_stages: StageVector::new(flags.to_vec()),
            success,
            terminal: success,
        };
        Ok((transition, self.done))
    }

    fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn expert_action(&self) -> Option<usize> {
        let (map, target) = if self.has_key {
            (&self.open_map, self.goal)
        } else {
            (&self.closed_map, self.key)
        };
        let dist = distances_to(map, target);
        optimal_actions(map, &dist, self.agent).first().map(|a| a.index())
    }
}

/// Named environment configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvId {
    Nav(MapVariant),
    KeyDoor(MapVariant),
}

impl EnvId {
    pub fn build(self, seed: u64) -> Result<Box<dyn Env + Send>> {
        Ok(match self {
            EnvId::Nav(v) => Box::new(make_nav_env(v, seed)?),
            EnvId::KeyDoor(v) => Box::new(make_keydoor_env(v, seed)?),
        })
    }

    pub fn spec(self) -> Result<EnvSpec> {
        Ok(self.build(0)?.spec())
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (family, v) = match self {
            EnvId::Nav(v) => ("nav", v),
            EnvId::KeyDoor(v) => ("keydoor", v),
        };
        match v {
            MapVariant::Train => write!(f, "{family}-train"),
            MapVariant::Test => write!(f, "{family}-test"),
            MapVariant::Custom { lower_gate, upper_gate } => write!(f, "{family}-gates-{lower_gate}-{upper_gate}"),
        }
    }
}

impl FromStr for EnvId {
    type Err = Error;

    /// `nav-train`, `nav-test`, `keydoor-train`, `keydoor-test`, or
    /// `<family>-gates-<lower>-<upper>`.
    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::config(format!("unknown env id {s:?}"));
        let (family, rest) = s.split_once('-').ok_or_else(unknown)?;
        let variant = match rest {
            "train" => MapVariant::Train,
            "test" => MapVariant::Test,
            _ => {
                let gates = rest.strip_prefix("gates-").ok_or_else(unknown)?;
                let (l, u) = gates.split_once('-').ok_or_else(unknown)?;
                let lower_gate = l.parse().map_err(|_| unknown())?;
                let upper_gate = u.parse().map_err(|_| unknown())?;
                GridMap::three_rooms(lower_gate, upper_gate)?;
                MapVariant::Custom { lower_gate, upper_gate }
            }
        };
        match family {
            "nav" => Ok(EnvId::Nav(variant)),
            "keydoor" => Ok(EnvId::KeyDoor(variant)),
            _ => Err(unknown()),
        }
    }
}

/// Expert trajectories from randomized resets, following the environment's
/// shortest-path actions.
pub fn gen_demos(env: &mut dyn Env, count: usize, seed: u64) -> Result<Vec<Trajectory>> {
    env.reseed(seed);
    let mut demos = Vec::with_capacity(count);
    for _ in 0..count {
        env.reset();
        let mut steps = Vec::new();
        loop {
            let a = env
                .expert_action()
                .ok_or_else(|| Error::usage("environment has no expert planner"))?;
            let (t, done) = env.step(a)?;
            steps.push(t);
            if done {
                break;
            }
        }
        let traj = Trajectory::new(steps)?;
        if !traj.succeeded() {
            return Err(Error::usage("expert failed to reach the goal"));
        }
        demos.push(traj);
    }
    Ok(demos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::sparse_reward;

    fn nav(seed: u64) -> NavEnv {
        make_nav_env(MapVariant::Train, seed).unwrap()
    }

    #[test]
    fn nav_spec() {
        let mut env = nav(0);
        let spec = env.spec();
        assert_eq!(spec.action_count, 5);
        assert_eq!(spec.obs_dim, 13);
        assert_eq!(spec.num_stages, 1);
        assert_eq!(env.reset().len(), 13);
    }

    #[test]
    fn three_room_layout() {
        let map = GridMap::three_rooms(4, 12).unwrap();
        assert_eq!(map.free_cells().len(), 15 * 15 - 2 * 15 + 2);
        assert!(map.is_connected());
        for i in 0..GRID_SIZE {
            assert!(!map.is_free(Pos::new(i, 0)) && !map.is_free(Pos::new(i, 16)));
            assert!(!map.is_free(Pos::new(0, i)) && !map.is_free(Pos::new(16, i)));
        }
        assert!(map.is_free(Pos::new(4, 5)) && map.is_free(Pos::new(12, 11)));
        assert!(!map.is_free(Pos::new(12, 5)) && !map.is_free(Pos::new(4, 11)));
    }

    #[test]
    fn train_and_test_differ_only_at_gates() {
        let train = GridMap::three_rooms(TRAIN_GATES.0, TRAIN_GATES.1).unwrap();
        let test = GridMap::three_rooms(TEST_GATES.0, TEST_GATES.1).unwrap();
        let mut diff = Vec::new();
        for y in 0..GRID_SIZE {
            for x in 0..GRID_SIZE {
                let p = Pos::new(x, y);
                if train.is_free(p) != test.is_free(p) {
                    diff.push(p);
                }
            }
        }
        assert!(diff.iter().all(|p| WALL_ROWS.contains(&p.y)));
        assert_eq!(diff.len(), 4);
    }

    #[test]
    fn invalid_gates() {
        assert!(matches!(make_nav_env(MapVariant::Custom { lower_gate: 0, upper_gate: 3 }, 0), Err(Error::Config(_))));
        assert!(GridMap::three_rooms(3, 16).is_err());
    }

    #[test]
    fn reset_places_agent_bottom_goal_top() {
        let mut env = nav(3);
        for _ in 0..200 {
            env.reset();
            assert!(BOTTOM_ROOM_ROWS.contains(&env.agent().y));
            assert!(TOP_ROOM_ROWS.contains(&env.goal().y));
        }
    }

    #[test]
    fn stay_and_walls() {
        let mut env = nav(0);
        env.place(Pos::new(1, 1), Pos::new(8, 14)).unwrap();
        let (t, _) = env.step(Action::Stay.index()).unwrap();
        assert_eq!(env.agent(), Pos::new(1, 1));
        assert_eq!(t.obs, t.next_obs);
        env.step(Action::Left.index()).unwrap();
        assert_eq!(env.agent(), Pos::new(1, 1));
        env.step(Action::Down.index()).unwrap();
        assert_eq!(env.agent(), Pos::new(1, 1));
        assert!(matches!(env.step(5), Err(Error::Usage(_))));
    }

    #[test]
    fn stepping_onto_goal_succeeds() {
        let mut env = nav(0);
        env.place(Pos::new(8, 13), Pos::new(8, 14)).unwrap();
        let (t, done) = env.step(Action::Up.index()).unwrap();
        assert!(t.success && t.terminal && done);
        assert_eq!(t.next_stage_index(), 1);
        assert_eq!(sparse_reward(t.success), 1.0);
        assert!(env.step(0).is_err());
    }

    #[test]
    fn episode_times_out() {
        let mut env = nav(0);
        env.reset();
        let mut n = 0;
        loop {
            let (t, done) = env.step(Action::Stay.index()).unwrap();
            n += 1;
            assert!(!t.terminal);
            if done {
                break;
            }
        }
        assert_eq!(n, NAV_MAX_STEPS);
    }

    #[test]
    fn observations_are_bounded_and_deterministic() {
        let mut a = nav(17);
        let mut b = nav(17);
        for ep in 0..20 {
            assert_eq!(a.reset(), b.reset());
            for i in 0..NAV_MAX_STEPS {
                let act = (i * 7 + ep) % 5;
                let (ta, da) = a.step(act).unwrap();
                let (tb, db) = b.step(act).unwrap();
                assert_eq!(ta, tb);
                assert!(ta.next_obs.iter().all(|v| (0.0..=1.0).contains(v)));
                assert_eq!(da, db);
                if da {
                    break;
                }
            }
        }
    }

    #[test]
    fn patch_layout() {
        let map = GridMap::three_rooms(4, 12).unwrap();
        // Just below the lower wall, left of the gate: wall above except the gate.
        let p = map.patch(Pos::new(5, 4));
        assert_eq!(p, [0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let corner = map.patch(Pos::new(1, 1));
        assert_eq!(corner, [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn bfs_basics() {
        let map = GridMap::three_rooms(4, 12).unwrap();
        let p = Pos::new(3, 3);
        assert_eq!(bfs_shortest_path(&map, p, p).unwrap().length, 0);
        assert_eq!(bfs_shortest_path(&map, p, Pos::new(3, 4)).unwrap().length, 1);
        let mut blocked = GridMap::empty(3, 3);
        blocked.set(Pos::new(1, 0), Cell::Wall);
        blocked.set(Pos::new(1, 1), Cell::Wall);
        blocked.set(Pos::new(1, 2), Cell::Wall);
        assert!(matches!(
            bfs_shortest_path(&blocked, Pos::new(0, 0), Pos::new(2, 2)),
            Err(Error::NoPath { .. })
        ));
    }

    #[test]
    fn bfs_path_replays_to_goal() {
        let map = GridMap::three_rooms(4, 12).unwrap();
        let (s, g) = (Pos::new(15, 1), Pos::new(1, 15));
        let path = bfs_shortest_path(&map, s, g).unwrap();
        let end = path.actions.iter().fold(s, |p, &a| map.step_from(p, a));
        assert_eq!(end, g);
        assert_eq!(path.length, path.actions.len());
    }

    #[test]
    fn env_id_parsing() {
        for id in ["nav-train", "nav-test", "keydoor-train", "keydoor-test", "nav-gates-3-9"] {
            assert_eq!(id.parse::<EnvId>().unwrap().to_string(), id);
        }
        assert!("maze-train".parse::<EnvId>().is_err());
        assert!("nav-gates-0-9".parse::<EnvId>().is_err());
    }

    #[test]
    fn demos_succeed() {
        let mut env = nav(0);
        assert!(gen_demos(&mut env, 0, 1).unwrap().is_empty());
        let demos = gen_demos(&mut env, 20, 1).unwrap();
        assert!(demos.iter().all(|d| d.stage_index() == 1 && d.transitions().last().unwrap().success));
    }

    #[test]
    fn keydoor_stages() {
        let mut env = make_keydoor_env(MapVariant::Train, 0).unwrap();
        assert_eq!(env.spec().num_stages, 3);
        env.reset();
        assert_eq!(env.stage_flags(), [false, false, false]);
        env.set_gates(4, 12).unwrap();

        env.place(Pos::new(3, 2), Pos::new(4, 2), Pos::new(12, 14)).unwrap();
        let (t, _) = env.step(Action::Right.index()).unwrap();
        assert_eq!(t.next_stages.raw(), &[true, false, false]);
        assert_eq!(t.next_stage_index(), 1);

        // Walk to below the door, open it, and reach the goal.
        env.place(Pos::new(12, 10), Pos::new(12, 10), Pos::new(12, 13)).unwrap();
        assert!(env.has_key());
        let (t, _) = env.step(Action::Up.index()).unwrap();
        assert_eq!(t.next_stage_index(), 2);
        assert_eq!(env.agent(), Pos::new(12, 11));
        env.step(Action::Up.index()).unwrap();
        let (t, done) = env.step(Action::Up.index()).unwrap();
        assert!(t.success && done);
        assert_eq!(t.next_stage_index(), 3);
    }

    #[test]
    fn train_gates_vary_and_skip_the_test_columns() {
        let mut env = make_keydoor_env(MapVariant::Train, 4).unwrap();
        let mut lowers = std::collections::BTreeSet::new();
        let mut doors = std::collections::BTreeSet::new();
        for _ in 0..300 {
            let obs = env.reset();
            let door = env.door();
            assert_eq!(door.y, WALL_ROWS[1]);
            assert_eq!(&obs[8..10], &[coord(door.x), coord(door.y)]);
            lowers.insert((obs[6] * (GRID_SIZE - 1) as f64).round() as usize);
            doors.insert(door.x);
        }
        assert!(!lowers.contains(&TEST_GATES.0) && !doors.contains(&TEST_GATES.1));
        assert_eq!((lowers.len(), doors.len()), (GRID_SIZE - 3, GRID_SIZE - 3));

        let mut test = make_keydoor_env(MapVariant::Test, 4).unwrap();
        for _ in 0..20 {
            test.reset();
            assert_eq!(test.door(), Pos::new(TEST_GATES.1, WALL_ROWS[1]));
        }
    }

    #[test]
    fn locked_door_blocks_without_key() {
        let mut env = make_keydoor_env(MapVariant::Train, 0).unwrap();
        env.place(Pos::new(12, 10), Pos::new(1, 1), Pos::new(12, 13)).unwrap();
        let (t, _) = env.step(Action::Up.index()).unwrap();
        assert_eq!(env.agent(), Pos::new(12, 10));
        assert_eq!(t.next_stage_index(), 0);
    }

    #[test]
    fn keydoor_demos_and_monotone_stages() {
        let mut env = make_keydoor_env(MapVariant::Test, 5).unwrap();
        let demos = gen_demos(&mut env, 30, 2).unwrap();
        for d in &demos {
            assert_eq!(d.stage_index(), 3);
            let idx: Vec<usize> = d.transitions().iter().map(|t| t.next_stage_index()).collect();
            assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        }
        // Random play also never regresses.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            env.reset();
            let mut last = 0;
            loop {
                let (t, done) = env.step(rng.random_range(0..5)).unwrap();
                assert!(t.next_stage_index() >= last);
                assert!(t.next_obs.iter().all(|v| (0.0..=1.0).contains(v)));
                last = t.next_stage_index();
                if done {
                    break;
                }
            }
        }
    }
}
