//! Push-2-Box: a deterministic gridworld where agents push boxes toward a
//! goal wall.
//!
//! Coordinates are `(x, y)` with `x` growing east and `y` growing south, so
//! the north wall is the row `y = 0`.
//!
//! Push rule: for a cardinal direction `d`, the *face* of a box is the row of
//! three cells directly behind it (the cell at `box - d` plus its two
//! neighbours across the push axis). An agent standing on the face and
//! taking action `d` pushes the box. One pusher moves the box one cell, two
//! pushers in the same direction move it two cells, opposing pushes cancel
//! and orthogonal pushes are applied one after another in agent-index order.
//! Pushing agents follow their box along the push direction; every other
//! agent moves one cell when the target is free. Diagonal actions never push.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

/// Real-valued flattened global state.
pub type StateVector = Vec<f64>;

/// One action index per agent.
pub type JointAction = Vec<usize>;

pub const N_DIRECTIONS: usize = 8;

pub const SUCCESS_REWARD: f64 = 100.0;
pub const FAILURE_REWARD: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
    UpRight,
    DownRight,
    DownLeft,
    UpLeft,
}

impl Direction {
    pub const ALL: [Direction; N_DIRECTIONS] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
        Direction::UpRight,
        Direction::DownRight,
        Direction::DownLeft,
        Direction::UpLeft,
    ];

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
            Direction::UpRight => (1, -1),
            Direction::DownRight => (1, 1),
            Direction::DownLeft => (-1, 1),
            Direction::UpLeft => (-1, -1),
        }
    }

    pub fn is_cardinal(self) -> bool {
        matches!(
            self,
            Direction::Up | Direction::Down | Direction::Left | Direction::Right
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Wall {
    North,
    South,
    East,
    West,
}

impl Wall {
    pub fn name(self) -> &'static str {
        match self {
            Wall::North => "north",
            Wall::South => "south",
            Wall::East => "east",
            Wall::West => "west",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "north" => Some(Wall::North),
            "south" => Some(Wall::South),
            "east" => Some(Wall::East),
            "west" => Some(Wall::West),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    fn offset(self, dx: i32, dy: i32) -> Self {
        Cell::new(self.x + dx, self.y + dy)
    }
}

/// Where agents may be placed at reset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AgentStart {
    /// Any free cell off the goal wall.
    Anywhere,
    /// Off the goal wall and nearer to it than any box start cell, so agents
    /// begin on the wrong side of the boxes.
    GoalSide,
}

impl AgentStart {
    pub fn name(self) -> &'static str {
        match self {
            AgentStart::Anywhere => "anywhere",
            AgentStart::GoalSide => "goal_side",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [AgentStart::Anywhere, AgentStart::GoalSide]
            .into_iter()
            .find(|a| a.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub width: u32,
    pub height: u32,
    pub n_agents: usize,
    pub n_boxes: usize,
    pub episode_limit: u32,
    pub goal_wall: Wall,
    pub agent_start: AgentStart,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            width: 8,
            height: 8,
            n_agents: 2,
            n_boxes: 2,
            episode_limit: 12,
            goal_wall: Wall::North,
            agent_start: AgentStart::GoalSide,
            seed: 0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 6 || self.height < 6 {
            return Err(Error::Config(format!(
                "grid must be at least 6x6, got {}x{}",
                self.width, self.height
            )));
        }
        if self.n_agents < 2 {
            return Err(Error::Config(format!(
                "need at least 2 agents, got {}",
                self.n_agents
            )));
        }
        if self.n_boxes < 1 {
            return Err(Error::Config("need at least 1 box".into()));
        }
        if self.episode_limit < 1 {
            return Err(Error::Config("episode_limit must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PushBoxState {
    pub agents: Vec<Cell>,
    pub boxes: Vec<Cell>,
    pub t: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next_state: PushBoxState,
    pub reward_ext: f64,
    pub done: bool,
    pub success: bool,
}

/// Flattens a state as `(agent0.x, agent0.y, .., box0.x, box0.y, ..)`.
pub fn flatten_state(state: &PushBoxState) -> StateVector {
    let mut v = Vec::with_capacity(2 * (state.agents.len() + state.boxes.len()));
    for c in state.agents.iter().chain(&state.boxes) {
        v.push(c.x as f64);
        v.push(c.y as f64);
    }
    v
}

#[derive(Clone, Debug)]
pub struct PushBox {
    config: GridConfig,
}

impl PushBox {
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let env = PushBox { config };
        // Surface impossible placements at construction time.
        env.box_region()?;
        Ok(env)
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    pub fn n_actions(&self) -> usize {
        N_DIRECTIONS
    }

    pub fn action_space_sizes(&self) -> Vec<usize> {
        vec![N_DIRECTIONS; self.config.n_agents]
    }

    pub fn state_dim(&self) -> usize {
        2 * (self.config.n_agents + self.config.n_boxes)
    }

    /// Largest coordinate value per state dimension, used to scale inputs.
    pub fn dimension_extents(&self) -> Vec<f64> {
        let w = (self.config.width - 1) as f64;
        let h = (self.config.height - 1) as f64;
        (0..self.config.n_agents + self.config.n_boxes)
            .flat_map(|_| [w, h])
            .collect()
    }

    pub fn dimension_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.state_dim());
        for i in 0..self.config.n_agents {
            labels.push(format!("agent{i}.x"));
            labels.push(format!("agent{i}.y"));
        }
        for b in 0..self.config.n_boxes {
            labels.push(format!("box{b}.x"));
            labels.push(format!("box{b}.y"));
        }
        labels
    }

    /// Indices of the box coordinates in the flattened state.
    pub fn box_dimensions(&self) -> Vec<usize> {
        (2 * self.config.n_agents..self.state_dim()).collect()
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as u32) < self.config.width && (c.y as u32) < self.config.height
    }

    pub fn on_goal_wall(&self, c: Cell) -> bool {
        match self.config.goal_wall {
            Wall::North => c.y == 0,
            Wall::South => c.y == self.config.height as i32 - 1,
            Wall::West => c.x == 0,
            Wall::East => c.x == self.config.width as i32 - 1,
        }
    }

    /// Cells where boxes may start: off every wall and at least half the
    /// grid away from the goal wall.
    fn box_region(&self) -> Result<Vec<Cell>> {
        let (w, h) = (self.config.width as i32, self.config.height as i32);
        let cells: Vec<Cell> = (1..h - 1)
            .flat_map(|y| (1..w - 1).map(move |x| Cell::new(x, y)))
            .filter(|&c| self.goal_distance(c) >= self.min_box_goal_distance())
            .collect();
        if cells.len() < self.config.n_boxes {
            return Err(Error::Config(format!(
                "grid {}x{} has {} box start cells for {} boxes",
                w,
                h,
                cells.len(),
                self.config.n_boxes
            )));
        }
        let free = (w * h) as usize - w.max(h) as usize;
        if free < self.config.n_boxes + self.config.n_agents {
            return Err(Error::Config(format!(
                "grid {}x{} too small for {} entities",
                w,
                h,
                self.config.n_boxes + self.config.n_agents
            )));
        }
        Ok(cells)
    }

    fn goal_distance(&self, c: Cell) -> i32 {
        match self.config.goal_wall {
            Wall::North => c.y,
            Wall::South => self.config.height as i32 - 1 - c.y,
            Wall::West => c.x,
            Wall::East => self.config.width as i32 - 1 - c.x,
        }
    }

    fn min_box_goal_distance(&self) -> i32 {
        let extent = match self.config.goal_wall {
            Wall::North | Wall::South => self.config.height,
            Wall::East | Wall::West => self.config.width,
        };
        (extent / 2) as i32
    }

    /// Places boxes inside the start region and agents according to
    /// `agent_start`, all on distinct cells. The layout is a pure function of
    /// `(config.seed, seed)`.
    pub fn reset(&self, seed: u64) -> Result<(PushBoxState, Vec<StateVector>)> {
        let mut rng = rng::stream(self.config.seed, seed);
        let mut box_cells = self.box_region()?;
        let mut boxes = Vec::with_capacity(self.config.n_boxes);
        for _ in 0..self.config.n_boxes {
            let i = rng.gen_range(0..box_cells.len());
            boxes.push(box_cells.swap_remove(i));
        }
        let (w, h) = (self.config.width as i32, self.config.height as i32);
        let mut agent_cells: Vec<Cell> = (0..h)
            .flat_map(|y| (0..w).map(move |x| Cell::new(x, y)))
            .filter(|c| !self.on_goal_wall(*c) && !boxes.contains(c))
            .filter(|&c| match self.config.agent_start {
                AgentStart::Anywhere => true,
                AgentStart::GoalSide => self.goal_distance(c) < self.min_box_goal_distance(),
            })
            .collect();
        if agent_cells.len() < self.config.n_agents {
            return Err(Error::Config("no room to place agents".into()));
        }
        let mut agents = Vec::with_capacity(self.config.n_agents);
        for _ in 0..self.config.n_agents {
            let i = rng.gen_range(0..agent_cells.len());
            agents.push(agent_cells.swap_remove(i));
        }
        let state = PushBoxState { agents, boxes, t: 0 };
        let obs = self.observations(&state);
        Ok((state, obs))
    }

    /// Every agent observes the full flattened state.
    pub fn observations(&self, state: &PushBoxState) -> Vec<StateVector> {
        let flat = flatten_state(state);
        vec![flat; self.config.n_agents]
    }

    pub fn flatten_state(&self, state: &PushBoxState) -> StateVector {
        flatten_state(state)
    }

    /// Inverse of [`flatten_state`] for vectors holding integral coordinates.
    pub fn unflatten(&self, v: &[f64]) -> Result<PushBoxState> {
        if v.len() != self.state_dim() {
            return Err(Error::Input(format!(
                "state vector has length {}, expected {}",
                v.len(),
                self.state_dim()
            )));
        }
        let mut cells = Vec::with_capacity(v.len() / 2);
        for pair in v.chunks_exact(2) {
            let (x, y) = (pair[0], pair[1]);
            if x.fract() != 0.0 || y.fract() != 0.0 {
                return Err(Error::Input(format!("non-integral coordinate ({x}, {y})")));
            }
            let c = Cell::new(x as i32, y as i32);
            if !self.in_bounds(c) {
                return Err(Error::Input(format!("cell ({x}, {y}) outside the grid")));
            }
            cells.push(c);
        }
        let boxes = cells.split_off(self.config.n_agents);
        Ok(PushBoxState {
            agents: cells,
            boxes,
            t: 0,
        })
    }

    pub fn is_terminal(&self, state: &PushBoxState) -> bool {
        state.t >= self.config.episode_limit || state.boxes.iter().any(|&b| self.on_goal_wall(b))
    }

    pub fn step(&self, state: &PushBoxState, joint_action: &[usize]) -> Result<StepResult> {
        if self.is_terminal(state) {
            return Err(Error::State(format!(
                "step called on a terminal state at t={}",
                state.t
            )));
        }
        let next = self.transition(state, joint_action)?;
        let success = next.boxes.iter().any(|&b| self.on_goal_wall(b));
        let timeout = next.t >= self.config.episode_limit;
        let reward_ext = if success {
            SUCCESS_REWARD
        } else if timeout {
            FAILURE_REWARD
        } else {
            0.0
        };
        Ok(StepResult {
            next_state: next,
            reward_ext,
            done: success || timeout,
            success,
        })
    }

    /// Ground-truth next state without reward or termination bookkeeping.
    pub fn oracle_next(&self, state: &PushBoxState, joint_action: &[usize]) -> Result<StateVector> {
        Ok(flatten_state(&self.transition(state, joint_action)?))
    }

    fn parse_actions(&self, joint_action: &[usize]) -> Result<Vec<Direction>> {
        if joint_action.len() != self.config.n_agents {
            return Err(Error::Input(format!(
                "joint action has {} entries for {} agents",
                joint_action.len(),
                self.config.n_agents
            )));
        }
        joint_action
            .iter()
            .map(|&a| {
                Direction::from_index(a)
                    .ok_or_else(|| Error::Input(format!("action index {a} outside [0, 8)")))
            })
            .collect()
    }

    /// Box pushed by an agent taking `dir`: the box directly ahead wins,
    /// otherwise the lowest-index box whose face the agent stands on.
    fn pushed_box(&self, boxes: &[Cell], agent: Cell, dir: Direction) -> Option<usize> {
        if !dir.is_cardinal() {
            return None;
        }
        let (dx, dy) = dir.delta();
        let ahead = agent.offset(dx, dy);
        if let Some(b) = boxes.iter().position(|&b| b == ahead) {
            return Some(b);
        }
        // Diagonally ahead: box at agent + d ± perpendicular.
        let (px, py) = (dy, dx);
        boxes
            .iter()
            .position(|&b| b == ahead.offset(px, py) || b == ahead.offset(-px, -py))
    }

    fn transition(&self, state: &PushBoxState, joint_action: &[usize]) -> Result<PushBoxState> {
        let dirs = self.parse_actions(joint_action)?;
        if state.agents.len() != self.config.n_agents || state.boxes.len() != self.config.n_boxes {
            return Err(Error::Input("state entity counts do not match the config".into()));
        }
        let mut agents = state.agents.clone();
        let mut boxes = state.boxes.clone();

        let pushes: Vec<Option<usize>> = agents
            .iter()
            .zip(&dirs)
            .map(|(&a, &d)| self.pushed_box(&state.boxes, a, d))
            .collect();

        // Realised displacement of each box, per axis.
        let mut moved = vec![(0i32, 0i32); boxes.len()];
        for b in 0..boxes.len() {
            let pushers: Vec<Direction> = (0..agents.len())
                .filter(|&i| pushes[i] == Some(b))
                .map(|i| dirs[i])
                .collect();
            if pushers.is_empty() {
                continue;
            }
            let net_x: i32 = pushers.iter().map(|d| d.delta().0).sum::<i32>().clamp(-2, 2);
            let net_y: i32 = pushers.iter().map(|d| d.delta().1).sum::<i32>().clamp(-2, 2);
            let (mut left_x, mut left_y) = (net_x.abs(), net_y.abs());
            let mut units = Vec::with_capacity(4);
            for d in &pushers {
                let (dx, dy) = d.delta();
                if dx != 0 && left_x > 0 && dx.signum() == net_x.signum() {
                    units.push((dx, 0));
                    left_x -= 1;
                }
                if dy != 0 && left_y > 0 && dy.signum() == net_y.signum() {
                    units.push((0, dy));
                    left_y -= 1;
                }
            }
            // Same-direction pairs: the second unit comes from the leftover.
            while left_x > 0 {
                units.push((net_x.signum(), 0));
                left_x -= 1;
            }
            while left_y > 0 {
                units.push((0, net_y.signum()));
                left_y -= 1;
            }
            for (dx, dy) in units {
                let target = boxes[b].offset(dx, dy);
                let blocked = !self.in_bounds(target)
                    || boxes.contains(&target)
                    || agents.contains(&target);
                if !blocked {
                    boxes[b] = target;
                    moved[b].0 += dx;
                    moved[b].1 += dy;
                }
            }
        }

        for i in 0..agents.len() {
            let (dx, dy) = dirs[i].delta();
            let steps = match pushes[i] {
                // Follow the box for as far as it travelled along our push axis.
                Some(b) => {
                    let along = moved[b].0 * dx + moved[b].1 * dy;
                    along.max(0)
                }
                None => 1,
            };
            for _ in 0..steps {
                let target = agents[i].offset(dx, dy);
                let free = self.in_bounds(target)
                    && !boxes.contains(&target)
                    && !agents
                        .iter()
                        .enumerate()
                        .any(|(j, &a)| j != i && a == target);
                if !free {
                    break;
                }
                agents[i] = target;
            }
        }

        Ok(PushBoxState {
            agents,
            boxes,
            t: state.t + 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env_with(goal: Wall) -> PushBox {
        PushBox::new(GridConfig {
            goal_wall: goal,
            ..GridConfig::default()
        })
        .unwrap()
    }

    fn state(agents: &[(i32, i32)], boxes: &[(i32, i32)]) -> PushBoxState {
        PushBoxState {
            agents: agents.iter().map(|&(x, y)| Cell::new(x, y)).collect(),
            boxes: boxes.iter().map(|&(x, y)| Cell::new(x, y)).collect(),
            t: 0,
        }
    }

    const UP: usize = 0;
    const DOWN: usize = 1;
    const LEFT: usize = 2;
    const RIGHT: usize = 3;
    const UP_RIGHT: usize = 4;

    #[test]
    fn reset_places_distinct_cells() {
        let env = PushBox::new(GridConfig::default()).unwrap();
        for seed in 0..200 {
            let (s, obs) = env.reset(seed).unwrap();
            let mut all: Vec<Cell> = s.agents.iter().chain(&s.boxes).copied().collect();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), 4);
            assert_eq!(s.t, 0);
            assert!(s.boxes.iter().all(|&b| !env.on_goal_wall(b)));
            assert!(s.agents.iter().all(|&a| !env.on_goal_wall(a)));
            assert_eq!(obs.len(), 2);
            assert!(obs.iter().all(|o| *o == flatten_state(&s)));
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let env = PushBox::new(GridConfig::default()).unwrap();
        assert_eq!(env.reset(7).unwrap(), env.reset(7).unwrap());
        assert_ne!(env.reset(7).unwrap().0, env.reset(8).unwrap().0);
    }

    #[test]
    fn smallest_grid_still_places() {
        let env = PushBox::new(GridConfig {
            width: 6,
            height: 6,
            ..GridConfig::default()
        })
        .unwrap();
        let (s, _) = env.reset(3).unwrap();
        let mut all: Vec<Cell> = s.agents.iter().chain(&s.boxes).copied().collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn config_rejects_bad_values() {
        let bad = [
            GridConfig { width: 5, ..GridConfig::default() },
            GridConfig { n_agents: 1, ..GridConfig::default() },
            GridConfig { n_boxes: 0, ..GridConfig::default() },
            GridConfig { episode_limit: 0, ..GridConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(PushBox::new(cfg), Err(Error::Config(_))));
        }
        let crowded = GridConfig {
            width: 6,
            height: 6,
            n_boxes: 9,
            ..GridConfig::default()
        };
        assert!(matches!(PushBox::new(crowded), Err(Error::Config(_))));
    }

    #[test]
    fn flatten_orders_agents_then_boxes() {
        let s = state(&[(1, 1), (2, 2)], &[(3, 3), (4, 4)]);
        assert_eq!(flatten_state(&s), vec![1., 1., 2., 2., 3., 3., 4., 4.]);
        let env = PushBox::new(GridConfig::default()).unwrap();
        assert_eq!(env.unflatten(&flatten_state(&s)).unwrap(), s);
    }

    #[test]
    fn double_push_moves_two_cells() {
        let env = env_with(Wall::East);
        // Both agents on the west face of box0, both push east.
        let s = state(&[(2, 3), (2, 4)], &[(3, 3), (3, 6)]);
        let r = env.step(&s, &[RIGHT, RIGHT]).unwrap();
        assert_eq!(r.next_state.boxes[0], Cell::new(5, 3));
        assert_eq!(r.next_state.boxes[1], Cell::new(3, 6));
        // Pushers keep contact.
        assert_eq!(r.next_state.agents, vec![Cell::new(4, 3), Cell::new(4, 4)]);
        assert!(!r.success);
        assert_eq!(r.reward_ext, 0.0);
    }

    #[test]
    fn single_push_moves_one_cell() {
        let env = env_with(Wall::East);
        let s = state(&[(2, 3), (6, 6)], &[(3, 3), (3, 6)]);
        let r = env.step(&s, &[RIGHT, UP]).unwrap();
        assert_eq!(r.next_state.boxes[0], Cell::new(4, 3));
        assert_eq!(r.next_state.agents[0], Cell::new(3, 3));
        assert_eq!(r.next_state.agents[1], Cell::new(6, 5));
    }

    #[test]
    fn no_push_leaves_boxes() {
        let env = env_with(Wall::North);
        let s = state(&[(0, 7), (7, 7)], &[(3, 4), (5, 5)]);
        let r = env.step(&s, &[UP, LEFT]).unwrap();
        assert_eq!(r.next_state.boxes, s.boxes);
        assert_eq!(r.reward_ext, 0.0);
        assert!(!r.done);
    }

    #[test]
    fn diagonal_into_box_does_not_push() {
        let env = env_with(Wall::North);
        let s = state(&[(2, 5), (7, 7)], &[(3, 4), (5, 5)]);
        let r = env.step(&s, &[UP_RIGHT, LEFT]).unwrap();
        assert_eq!(r.next_state.boxes, s.boxes);
        assert_eq!(r.next_state.agents[0], Cell::new(2, 5));
    }

    #[test]
    fn opposing_pushes_cancel() {
        let env = env_with(Wall::North);
        let s = state(&[(2, 4), (4, 4)], &[(3, 4), (6, 6)]);
        let r = env.step(&s, &[RIGHT, LEFT]).unwrap();
        assert_eq!(r.next_state.boxes[0], Cell::new(3, 4));
        assert_eq!(r.next_state.agents, s.agents);
    }

    #[test]
    fn orthogonal_pushes_apply_in_order() {
        let env = env_with(Wall::East);
        // agent1 sits on the south face (diagonal) and pushes north.
        let s = state(&[(2, 3), (2, 4)], &[(3, 3), (6, 6)]);
        let r = env.step(&s, &[RIGHT, UP]).unwrap();
        assert_eq!(r.next_state.boxes[0], Cell::new(4, 2));
    }

    #[test]
    fn double_push_clips_at_wall_and_succeeds() {
        let env = env_with(Wall::North);
        let s = state(&[(3, 2), (4, 2)], &[(3, 1), (6, 6)]);
        let r = env.step(&s, &[UP, UP]).unwrap();
        assert_eq!(r.next_state.boxes[0], Cell::new(3, 0));
        assert!(r.success && r.done);
        assert_eq!(r.reward_ext, SUCCESS_REWARD);
    }

    #[test]
    fn timeout_gives_failure_reward() {
        let env = PushBox::new(GridConfig {
            episode_limit: 2,
            ..GridConfig::default()
        })
        .unwrap();
        let s = state(&[(0, 7), (7, 7)], &[(3, 4), (5, 5)]);
        let r1 = env.step(&s, &[DOWN, DOWN]).unwrap();
        assert!(!r1.done);
        let r2 = env.step(&r1.next_state, &[DOWN, DOWN]).unwrap();
        assert!(r2.done && !r2.success);
        assert_eq!(r2.reward_ext, FAILURE_REWARD);
        assert!(matches!(env.step(&r2.next_state, &[0, 0]), Err(Error::State(_))));
    }

    #[test]
    fn rejects_bad_actions() {
        let env = env_with(Wall::North);
        let (s, _) = env.reset(0).unwrap();
        assert!(matches!(env.step(&s, &[0, 8]), Err(Error::Input(_))));
        assert!(matches!(env.step(&s, &[0]), Err(Error::Input(_))));
    }

    #[test]
    fn blocked_moves_are_noops() {
        let env = env_with(Wall::North);
        let s = state(&[(0, 5), (1, 5)], &[(3, 4), (6, 6)]);
        let r = env.step(&s, &[RIGHT, LEFT]).unwrap();
        assert_eq!(r.next_state.agents, s.agents);
        let r = env.step(&s, &[LEFT, DOWN]).unwrap();
        assert_eq!(r.next_state.agents, vec![Cell::new(0, 5), Cell::new(1, 6)]);
    }

    #[test]
    fn box_blocked_by_box() {
        let env = env_with(Wall::North);
        let s = state(&[(3, 6), (7, 7)], &[(3, 5), (3, 4)]);
        let r = env.step(&s, &[UP, LEFT]).unwrap();
        assert_eq!(r.next_state.boxes, s.boxes);
        assert_eq!(r.next_state.agents[0], Cell::new(3, 6));
    }
}
