//! Gridworld with swappable scenes.
//!
//! Actions: 0 = Up (y-1), 1 = Down (y+1), 2 = Left (x-1), 3 = Right (x+1).
//! Observations are one-hot over `width * height` cells, index `y * width + x`.

use std::collections::{BTreeSet, VecDeque};

use crate::env::{Action, EnvError, Environment, EpisodeStatus, Info, Observation, Space, StepResult};

/// `(x, y)` cell coordinates.
pub type Pos = (usize, usize);

pub const GRID_ACTIONS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct GridScene {
    width: usize,
    height: usize,
    walls: BTreeSet<Pos>,
    start: Pos,
    goal: Pos,
    step_reward: f64,
    goal_reward: f64,
    max_steps: usize,
}

impl GridScene {
    pub fn new(
        width: usize,
        height: usize,
        walls: BTreeSet<Pos>,
        start: Pos,
        goal: Pos,
    ) -> Result<Self, EnvError> {
        let scene = GridScene {
            width,
            height,
            walls,
            start,
            goal,
            step_reward: -0.01,
            goal_reward: 1.0,
            max_steps: 200,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn empty(width: usize, height: usize, start: Pos, goal: Pos) -> Result<Self, EnvError> {
        GridScene::new(width, height, BTreeSet::new(), start, goal)
    }

    /// Parse a rectangular character map: `#` wall, `S` start, `G` goal,
    /// `.` free. Blank leading/trailing lines are ignored; ragged rows are an
    /// error.
    pub fn parse(map: &str) -> Result<Self, EnvError> {
        let rows: Vec<&str> = map
            .lines()
            .map(str::trim_end)
            .skip_while(|l| l.is_empty())
            .collect();
        let rows: Vec<&str> = {
            let mut r = rows;
            while r.last().is_some_and(|l| l.is_empty()) {
                r.pop();
            }
            r
        };
        if rows.is_empty() {
            return Err(EnvError::InvalidScene("empty map".into()));
        }
        let width = rows[0].chars().count();
        let mut walls = BTreeSet::new();
        let (mut start, mut goal) = (None, None);
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(EnvError::InvalidScene(format!(
                    "row {y} has {} cells, expected {width}",
                    row.chars().count()
                )));
            }
            for (x, c) in row.chars().enumerate() {
                match c {
                    '#' => {
                        walls.insert((x, y));
                    }
                    '.' => {}
                    'S' | 'G' => {
                        let slot = if c == 'S' { &mut start } else { &mut goal };
                        if slot.replace((x, y)).is_some() {
                            return Err(EnvError::InvalidScene(format!("more than one '{c}'")));
                        }
                    }
                    other => {
                        return Err(EnvError::InvalidScene(format!(
                            "unexpected character {other:?} at ({x}, {y})"
                        )))
                    }
                }
            }
        }
        let start = start.ok_or_else(|| EnvError::InvalidScene("map has no 'S'".into()))?;
        let goal = goal.ok_or_else(|| EnvError::InvalidScene("map has no 'G'".into()))?;
        GridScene::new(width, rows.len(), walls, start, goal)
    }

    pub fn with_rewards(mut self, step_reward: f64, goal_reward: f64) -> Result<Self, EnvError> {
        if !(step_reward.is_finite() && goal_reward.is_finite()) {
            return Err(EnvError::InvalidScene("rewards must be finite".into()));
        }
        self.step_reward = step_reward;
        self.goal_reward = goal_reward;
        Ok(self)
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Result<Self, EnvError> {
        if max_steps == 0 {
            return Err(EnvError::InvalidScene("max_steps must be >= 1".into()));
        }
        self.max_steps = max_steps;
        Ok(self)
    }

    pub fn with_walls(mut self, walls: BTreeSet<Pos>) -> Result<Self, EnvError> {
        self.walls = walls;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), EnvError> {
        if self.width == 0 || self.height == 0 {
            return Err(EnvError::InvalidScene("grid must be at least 1x1".into()));
        }
        for (name, p) in [("start", self.start), ("goal", self.goal)] {
            if !self.is_free(p) {
                return Err(EnvError::InvalidScene(format!(
                    "{name} {p:?} is out of bounds or a wall"
                )));
            }
        }
        if self.start == self.goal {
            return Err(EnvError::InvalidScene("start and goal coincide".into()));
        }
        if self.distance(self.start, self.goal).is_none() {
            return Err(EnvError::InvalidScene(format!(
                "goal {:?} is unreachable from start {:?}",
                self.goal, self.start
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn walls(&self) -> &BTreeSet<Pos> {
        &self.walls
    }

    pub fn start(&self) -> Pos {
        self.start
    }

    pub fn goal(&self) -> Pos {
        self.goal
    }

    pub fn step_reward(&self) -> f64 {
        self.step_reward
    }

    pub fn goal_reward(&self) -> f64 {
        self.goal_reward
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    /// In bounds and not a wall.
    pub fn is_free(&self, p: Pos) -> bool {
        p.0 < self.width && p.1 < self.height && !self.walls.contains(&p)
    }

    pub fn cell_index(&self, p: Pos) -> usize {
        p.1 * self.width + p.0
    }

    /// The cell reached by `action` from `p`, or `p` itself when blocked.
    pub fn neighbor(&self, p: Pos, action: usize) -> Pos {
        let target = match action {
            0 => p.1.checked_sub(1).map(|y| (p.0, y)),
            1 => Some((p.0, p.1 + 1)),
            2 => p.0.checked_sub(1).map(|x| (x, p.1)),
            3 => Some((p.0 + 1, p.1)),
            _ => None,
        };
        match target {
            Some(t) if self.is_free(t) => t,
            _ => p,
        }
    }

    /// Breadth-first move count between two free cells.
    pub fn distance(&self, from: Pos, to: Pos) -> Option<usize> {
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([(from, 0)]);
        while let Some((p, d)) = queue.pop_front() {
            if p == to {
                return Some(d);
            }
            for a in 0..GRID_ACTIONS {
                let n = self.neighbor(p, a);
                if seen.insert(n) {
                    queue.push_back((n, d + 1));
                }
            }
        }
        None
    }

    /// Renders the scene in the map format accepted by [`GridScene::parse`].
    pub fn to_map(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(match (x, y) {
                    p if p == self.start => 'S',
                    p if p == self.goal => 'G',
                    p if self.walls.contains(&p) => '#',
                    _ => '.',
                });
            }
            out.push('\n');
        }
        out
    }
}

/// Pure transition: `(next_pos, reward, reached_goal)`. The step limit is
/// enforced by the environment.
pub fn gridworld_step(pos: Pos, action: usize, scene: &GridScene) -> (Pos, f64, bool) {
    let next = scene.neighbor(pos, action);
    if next == scene.goal {
        (next, scene.goal_reward, true)
    } else {
        (next, scene.step_reward, false)
    }
}

pub struct GridWorld {
    scene: GridScene,
    pos: Pos,
    steps: usize,
    status: EpisodeStatus,
}

impl GridWorld {
    pub fn new(scene: GridScene) -> Self {
        let pos = scene.start;
        GridWorld {
            scene,
            pos,
            steps: 0,
            status: EpisodeStatus::NotStarted,
        }
    }

    pub fn scene(&self) -> &GridScene {
        &self.scene
    }

    pub fn position(&self) -> Pos {
        self.pos
    }

    pub fn observe(&self) -> Observation {
        Observation::one_hot(self.scene.cell_index(self.pos), self.scene.cells())
    }

    /// Replace the scene in place. The agent keeps its cell when that cell is
    /// free in the new scene, otherwise it moves to the new start. Returns an
    /// error if the new scene's dimensions differ.
    pub fn swap_scene(&mut self, scene: GridScene) -> Result<(), EnvError> {
        if (scene.width, scene.height) != (self.scene.width, self.scene.height) {
            return Err(EnvError::IncompatibleSpace(format!(
                "scene is {}x{} but the environment is {}x{}",
                scene.width, scene.height, self.scene.width, self.scene.height
            )));
        }
        if !scene.is_free(self.pos) {
            self.pos = scene.start;
        }
        self.scene = scene;
        Ok(())
    }
}

impl Environment for GridWorld {
    fn reset(&mut self, _seed: Option<u64>) -> Observation {
        self.pos = self.scene.start;
        self.steps = 0;
        self.status = EpisodeStatus::Running;
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        self.status.ensure_running()?;
        Space::Discrete(GRID_ACTIONS).check(action)?;
        let (next, reward, at_goal) = gridworld_step(self.pos, action.index().unwrap(), &self.scene);
        self.pos = next;
        self.steps += 1;
        let done = at_goal || self.steps >= self.scene.max_steps;
        if done {
            self.status = EpisodeStatus::Done;
        }
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done,
            info: Info::new(),
        })
    }

    fn action_space(&self) -> Space {
        Space::Discrete(GRID_ACTIONS)
    }

    fn observation_space(&self) -> Space {
        let n = self.scene.cells();
        Space::Box {
            low: vec![0.0; n],
            high: vec![1.0; n],
            shape: vec![n],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open5() -> GridScene {
        GridScene::empty(5, 5, (0, 0), (4, 4)).unwrap()
    }

    #[test]
    fn reset_puts_agent_on_start() {
        let mut env = GridWorld::new(open5());
        let obs = env.reset(Some(7));
        assert_eq!(obs.data()[0], 1.0);
        assert_eq!(obs.data().iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn boundary_blocks_movement() {
        let (p, r, done) = gridworld_step((0, 0), 2, &open5());
        assert_eq!(p, (0, 0));
        assert_eq!(r, -0.01);
        assert!(!done);
    }

    #[test]
    fn reaching_goal_ends_episode() {
        let (p, r, done) = gridworld_step((4, 3), 1, &open5());
        assert_eq!(p, (4, 4));
        assert_eq!(r, 1.0);
        assert!(done);
    }

    #[test]
    fn walls_block() {
        let scene = GridScene::parse("S#.\n..G\n").unwrap();
        assert_eq!(gridworld_step((0, 0), 3, &scene).0, (0, 0));
        assert_eq!(scene.distance(scene.start(), scene.goal()), Some(3));
    }

    #[test]
    fn parse_round_trips_and_rejects_bad_maps() {
        let map = "S..#\n.#..\n...G\n";
        let scene = GridScene::parse(map).unwrap();
        assert_eq!(scene.to_map(), map);
        assert!(matches!(GridScene::parse("S..\n.G\n"), Err(EnvError::InvalidScene(_))));
        assert!(GridScene::parse("S#G\n").is_err(), "unreachable goal");
        assert!(GridScene::parse("S..\n").is_err(), "missing goal");
        assert!(GridScene::parse("S.x\n..G").is_err());
        assert!(GridScene::parse("SG\nS.").is_err());
    }

    #[test]
    fn step_limit_and_done_contract() {
        let scene = open5().with_max_steps(2).unwrap();
        let mut env = GridWorld::new(scene);
        assert_eq!(env.step(&Action::Discrete(0)), Err(EnvError::NotReset));
        env.reset(None);
        assert!(!env.step(&Action::Discrete(0)).unwrap().done);
        assert!(env.step(&Action::Discrete(0)).unwrap().done);
        assert_eq!(env.step(&Action::Discrete(0)), Err(EnvError::EpisodeAlreadyDone));
    }

    #[test]
    fn swap_keeps_valid_position_or_moves_to_start() {
        let mut env = GridWorld::new(open5());
        env.reset(None);
        env.step(&Action::Discrete(3)).unwrap();
        assert_eq!(env.position(), (1, 0));
        let walled = GridScene::new(5, 5, BTreeSet::from([(1, 0)]), (0, 4), (4, 4)).unwrap();
        env.swap_scene(walled).unwrap();
        assert_eq!(env.position(), (0, 4));
        let open = GridScene::empty(5, 5, (2, 2), (4, 0)).unwrap();
        env.swap_scene(open).unwrap();
        assert_eq!(env.position(), (0, 4));
        assert!(env.swap_scene(GridScene::empty(3, 3, (0, 0), (2, 2)).unwrap()).is_err());
    }
}
