//! Grid-world search environment: target placement, local sensing, agent
//! motion, target recovery and the long-term memory map.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

/// A grid cell. Row 0 is the northern edge, column 0 the western edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

impl GridPos {
    pub const fn new(row: usize, col: usize) -> Self {
        GridPos { row, col }
    }

    /// Neighbour one cell along `action`, if it stays inside a `width`×`height` grid.
    pub fn step(self, action: Action, width: usize, height: usize) -> Option<GridPos> {
        let (dr, dc) = action.delta();
        let row = self.row as isize + dr;
        let col = self.col as isize + dc;
        if row < 0 || col < 0 || row >= height as isize || col >= width as isize {
            None
        } else {
            Some(GridPos::new(row as usize, col as usize))
        }
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

impl FromStr for GridPos {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("expected `row,col`, got `{s}`")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad grid coordinate `{v}`")))
        };
        Ok(GridPos::new(parse(r)?, parse(c)?))
    }
}

/// Navigational decision. Declaration order is the tie-break priority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    N,
    W,
    S,
    E,
}

impl Action {
    /// All actions in priority order N > W > S > E.
    pub const ALL: [Action; 4] = [Action::N, Action::W, Action::S, Action::E];

    /// (row, col) displacement.
    pub const fn delta(self) -> (isize, isize) {
        match self {
            Action::N => (-1, 0),
            Action::W => (0, -1),
            Action::S => (1, 0),
            Action::E => (0, 1),
        }
    }

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub const fn symbol(self) -> char {
        match self {
            Action::N => 'N',
            Action::W => 'W',
            Action::S => 'S',
            Action::E => 'E',
        }
    }

    pub const fn opposite(self) -> Action {
        match self {
            Action::N => Action::S,
            Action::W => Action::E,
            Action::S => Action::N,
            Action::E => Action::W,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "N" | "n" => Ok(Action::N),
            "W" | "w" => Ok(Action::W),
            "S" | "s" => Ok(Action::S),
            "E" | "e" => Ok(Action::E),
            other => Err(Error::Config(format!("unknown action `{other}`"))),
        }
    }
}

/// Small set of actions, iterated in priority order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);
    pub const FULL: ActionSet = ActionSet(0b1111);

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Highest-priority member.
    pub fn first(self) -> Option<Action> {
        self.iter().next()
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut set = ActionSet::EMPTY;
        for a in iter {
            set.insert(a);
        }
        set
    }
}

/// How unrecovered targets move after each agent step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum MotionModel {
    Static,
    /// With probability `p_move` a target picks uniformly among its four
    /// neighbours and staying put; moves off the grid are blocked.
    RandomWalk { p_move: f64 },
}

impl fmt::Display for MotionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MotionModel::Static => write!(f, "static"),
            MotionModel::RandomWalk { p_move } => write!(f, "random_walk:{p_move}"),
        }
    }
}

impl FromStr for MotionModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "static" {
            return Ok(MotionModel::Static);
        }
        if let Some(p) = s.strip_prefix("random_walk") {
            let p = p.trim_start_matches(':');
            let p_move = if p.is_empty() {
                0.1
            } else {
                p.parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad p_move `{p}`")))?
            };
            return Ok(MotionModel::RandomWalk { p_move });
        }
        Err(Error::Config(format!("unknown motion model `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub width: usize,
    pub height: usize,
    pub num_targets: usize,
    pub sense_half_width: usize,
    /// Fraction of visited cells at which the memory map is reset.
    pub reset_fraction: f64,
    pub motion: MotionModel,
    pub start: GridPos,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            width: 20,
            height: 20,
            num_targets: 17,
            sense_half_width: 2,
            reset_fraction: 0.9,
            motion: MotionModel::Static,
            start: GridPos::new(0, 0),
            seed: 0,
        }
    }
}

impl EpisodeConfig {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }

    pub fn sense_side(&self) -> usize {
        2 * self.sense_half_width + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("grid must have at least one cell".into()));
        }
        if self.start.row >= self.height || self.start.col >= self.width {
            return Err(Error::Config(format!("start {} outside grid", self.start)));
        }
        if self.num_targets > self.cells() - 1 {
            return Err(Error::Config(format!(
                "{} targets do not fit in {} free cells",
                self.num_targets,
                self.cells() - 1
            )));
        }
        if !(self.reset_fraction > 0.0 && self.reset_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "reset fraction {} not in (0, 1]",
                self.reset_fraction
            )));
        }
        if let MotionModel::RandomWalk { p_move } = self.motion {
            if !(0.0..=1.0).contains(&p_move) {
                return Err(Error::Config(format!("p_move {p_move} not in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value `{value}` for `{what}`"));
        let value = value.trim();
        match key.trim() {
            "width" => self.width = value.parse().map_err(|_| bad("width"))?,
            "height" => self.height = value.parse().map_err(|_| bad("height"))?,
            "grid" => {
                let (w, h) = parse_grid(value)?;
                self.width = w;
                self.height = h;
            }
            "targets" | "num_targets" => {
                self.num_targets = value.parse().map_err(|_| bad("targets"))?
            }
            "sense_half_width" => {
                self.sense_half_width = value.parse().map_err(|_| bad("sense_half_width"))?
            }
            "reset_fraction" | "delta" => {
                self.reset_fraction = value.parse().map_err(|_| bad("reset_fraction"))?
            }
            "motion" => self.motion = value.parse()?,
            "start" => self.start = value.parse()?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a `key=value` file body on top of the defaults. Blank lines
    /// and `#` comments are skipped.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = EpisodeConfig::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Single-line `key=value` rendering, parseable by [`EpisodeConfig::apply_kv`]
    /// after splitting on spaces.
    pub fn to_kv_line(&self) -> String {
        format!(
            "width={} height={} targets={} sense_half_width={} reset_fraction={} motion={} start={} seed={}",
            self.width,
            self.height,
            self.num_targets,
            self.sense_half_width,
            self.reset_fraction,
            self.motion,
            self.start,
            self.seed
        )
    }

    pub fn from_kv_line(line: &str) -> Result<Self> {
        let mut cfg = EpisodeConfig::default();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{tok}`")))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

/// Parses `WxH`.
pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Config(format!("expected WxH, got `{s}`")))?;
    let w = w.trim().parse().map_err(|_| Error::Config(format!("bad width `{w}`")))?;
    let h = h.trim().parse().map_err(|_| Error::Config(format!("bad height `{h}`")))?;
    Ok((w, h))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetState {
    pub pos: GridPos,
    pub recovered: bool,
    pub seen: bool,
}

/// Local binary field of view centred on the agent. Cell (0, 0) is the
/// north-west corner of the window.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensoryMap {
    side: usize,
    cells: Vec<bool>,
}

impl SensoryMap {
    pub fn empty(side: usize) -> Self {
        SensoryMap {
            side,
            cells: vec![false; side * side],
        }
    }

    pub fn from_cells(side: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != side * side {
            return Err(Error::Contract(format!(
                "sensory map of side {side} needs {} cells, got {}",
                side * side,
                cells.len()
            )));
        }
        Ok(SensoryMap { side, cells })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.side + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * self.side + col] = value;
    }

    /// Row-major cells.
    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// World cell under window cell (`row`, `col`) when the window is centred
    /// on `centre`; `None` beyond the world boundary.
    pub fn world_cell(
        &self,
        centre: GridPos,
        row: usize,
        col: usize,
        width: usize,
        height: usize,
    ) -> Option<GridPos> {
        let half = (self.side / 2) as isize;
        let r = centre.row as isize + row as isize - half;
        let c = centre.col as isize + col as isize - half;
        if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
            None
        } else {
            Some(GridPos::new(r as usize, c as usize))
        }
    }
}

/// Result of a single agent step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOutcome {
    pub from: GridPos,
    pub to: GridPos,
    pub recoveries: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    pub config: EpisodeConfig,
    pub agent: GridPos,
    pub targets: Vec<TargetState>,
    pub step_count: usize,
    pub recovered_count: usize,
    motion_rng: SimRng,
}

impl EpisodeState {
    /// Places `num_targets` distinct targets away from the start cell.
    /// Placement draws from stream 0 of the config seed, target motion from
    /// stream 1.
    pub fn spawn(config: &EpisodeConfig) -> Result<EpisodeState> {
        config.validate()?;
        let mut placement = rng::stream(config.seed, 0);
        let start_idx = config.start.row * config.width + config.start.col;
        let free = config.cells() - 1;
        let mut picks: Vec<usize> = index::sample(&mut placement, free, config.num_targets).into_vec();
        picks.sort_unstable();
        let targets = picks
            .into_iter()
            .map(|i| {
                let cell = if i >= start_idx { i + 1 } else { i };
                TargetState {
                    pos: GridPos::new(cell / config.width, cell % config.width),
                    recovered: false,
                    seen: false,
                }
            })
            .collect();
        let mut state = EpisodeState {
            config: config.clone(),
            agent: config.start,
            targets,
            step_count: 0,
            recovered_count: 0,
            motion_rng: rng::stream(config.seed, 1),
        };
        state.mark_seen();
        Ok(state)
    }

    /// Builds a state with explicit target cells (tests, replays, scenarios).
    pub fn with_targets(config: &EpisodeConfig, agent: GridPos, cells: &[GridPos]) -> Result<Self> {
        let mut config = config.clone();
        config.num_targets = cells.len().min(config.cells().saturating_sub(1));
        config.validate()?;
        if agent.row >= config.height || agent.col >= config.width {
            return Err(Error::Config(format!("agent {agent} outside grid")));
        }
        if let Some(p) = cells.iter().find(|p| p.row >= config.height || p.col >= config.width) {
            return Err(Error::Config(format!("target {p} outside grid")));
        }
        config.num_targets = cells.len();
        let mut state = EpisodeState {
            agent,
            targets: cells
                .iter()
                .map(|&pos| TargetState {
                    pos,
                    recovered: false,
                    seen: false,
                })
                .collect(),
            step_count: 0,
            recovered_count: 0,
            motion_rng: rng::stream(config.seed, 1),
            config,
        };
        state.recover_at_agent();
        state.mark_seen();
        Ok(state)
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn remaining(&self) -> impl Iterator<Item = &TargetState> {
        self.targets.iter().filter(|t| !t.recovered)
    }

    pub fn all_recovered(&self) -> bool {
        self.recovered_count == self.targets.len()
    }

    fn in_window(&self, p: GridPos) -> bool {
        let h = self.config.sense_half_width;
        p.row.abs_diff(self.agent.row) <= h && p.col.abs_diff(self.agent.col) <= h
    }

    fn mark_seen(&mut self) {
        for i in 0..self.targets.len() {
            if self.in_window(self.targets[i].pos) {
                self.targets[i].seen = true;
            }
        }
    }

    fn recover_at_agent(&mut self) -> usize {
        let mut n = 0;
        for t in self.targets.iter_mut() {
            if !t.recovered && t.pos == self.agent {
                t.recovered = true;
                t.seen = true;
                n += 1;
            }
        }
        self.recovered_count += n;
        n
    }

    /// Window of unrecovered targets around the agent; out-of-grid cells read 0.
    pub fn sense(&self) -> SensoryMap {
        let side = self.config.sense_side();
        let half = self.config.sense_half_width as isize;
        let mut map = SensoryMap::empty(side);
        for t in self.remaining() {
            let r = t.pos.row as isize - self.agent.row as isize + half;
            let c = t.pos.col as isize - self.agent.col as isize + half;
            if (0..side as isize).contains(&r) && (0..side as isize).contains(&c) {
                map.set(r as usize, c as usize, true);
            }
        }
        map
    }

    /// Actions keeping the agent inside the grid.
    pub fn legal_actions(&self) -> ActionSet {
        Action::ALL
            .into_iter()
            .filter(|a| self.agent.step(*a, self.config.width, self.config.height).is_some())
            .collect()
    }

    /// Moves the agent, recovers co-located targets, then advances target
    /// motion. Targets that wander onto the agent's cell are recovered too.
    pub fn apply(&mut self, action: Action) -> Result<StepOutcome> {
        let from = self.agent;
        let to = from
            .step(action, self.config.width, self.config.height)
            .ok_or_else(|| {
                Error::Contract(format!("action {action} from {from} leaves the grid"))
            })?;
        self.agent = to;
        self.step_count += 1;
        let mut recoveries = self.recover_at_agent();
        self.advance_targets();
        recoveries += self.recover_at_agent();
        self.mark_seen();
        Ok(StepOutcome {
            from,
            to,
            recoveries,
        })
    }

    fn advance_targets(&mut self) {
        let MotionModel::RandomWalk { p_move } = self.config.motion else {
            return;
        };
        let (w, h) = (self.config.width, self.config.height);
        for t in self.targets.iter_mut().filter(|t| !t.recovered) {
            // Draws happen even at p_move = 0 so the stream position only
            // depends on the step count.
            let moves = self.motion_rng.gen::<f64>() < p_move;
            let choice = self.motion_rng.gen_range(0..5usize);
            if moves && choice < 4 {
                if let Some(next) = t.pos.step(Action::ALL[choice], w, h) {
                    t.pos = next;
                }
            }
        }
    }
}

pub fn spawn_episode(config: &EpisodeConfig) -> Result<EpisodeState> {
    EpisodeState::spawn(config)
}

pub fn apply_action(state: &EpisodeState, action: Action) -> Result<EpisodeState> {
    let mut next = state.clone();
    next.apply(action)?;
    Ok(next)
}

/// Planes of the long-term memory map.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Plane {
    Visited = 0,
    Seen = 1,
    TargetSeen = 2,
    TargetRecovered = 3,
    AgentCurrent = 4,
    AgentStart = 5,
}

impl Plane {
    pub const COUNT: usize = 6;
    pub const ALL: [Plane; 6] = [
        Plane::Visited,
        Plane::Seen,
        Plane::TargetSeen,
        Plane::TargetRecovered,
        Plane::AgentCurrent,
        Plane::AgentStart,
    ];
}

/// Multi-plane W×H exploration history, stored as one plane-major bitset.
/// Bit index = plane·W·H + row·W + col.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MemoryMap {
    width: usize,
    height: usize,
    bits: Vec<u64>,
    resets: usize,
}

impl MemoryMap {
    /// Fresh map with the start cell marked as visited, seen, current and start.
    pub fn new(width: usize, height: usize, start: GridPos) -> Self {
        let n = width * height * Plane::COUNT;
        let mut map = MemoryMap {
            width,
            height,
            bits: vec![0; n.div_ceil(64)],
            resets: 0,
        };
        map.set(Plane::AgentStart, start, true);
        map.set(Plane::AgentCurrent, start, true);
        map.set(Plane::Visited, start, true);
        map.set(Plane::Seen, start, true);
        map
    }

    pub fn for_config(config: &EpisodeConfig) -> Self {
        MemoryMap::new(config.width, config.height, config.start)
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<u64>) -> Result<Self> {
        if bits.len() != (width * height * Plane::COUNT).div_ceil(64) {
            return Err(Error::Contract(format!(
                "memory bitset length {} does not fit {width}x{height}",
                bits.len()
            )));
        }
        Ok(MemoryMap {
            width,
            height,
            bits,
            resets: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u64] {
        &self.bits
    }

    /// Number of resets performed so far.
    pub fn resets(&self) -> usize {
        self.resets
    }

    fn index(&self, plane: Plane, p: GridPos) -> usize {
        (plane as usize) * self.width * self.height + p.row * self.width + p.col
    }

    pub fn get(&self, plane: Plane, p: GridPos) -> bool {
        let i = self.index(plane, p);
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, plane: Plane, p: GridPos, value: bool) {
        let i = self.index(plane, p);
        if value {
            self.bits[i / 64] |= 1 << (i % 64);
        } else {
            self.bits[i / 64] &= !(1 << (i % 64));
        }
    }

    fn clear_plane(&mut self, plane: Plane) {
        for p in self.cells() {
            self.set(plane, p, false);
        }
    }

    fn cells(&self) -> impl Iterator<Item = GridPos> {
        let (w, h) = (self.width, self.height);
        (0..h).flat_map(move |r| (0..w).map(move |c| GridPos::new(r, c)))
    }

    pub fn plane_cells(&self, plane: Plane) -> Vec<GridPos> {
        self.cells().filter(|p| self.get(plane, *p)).collect()
    }

    pub fn count(&self, plane: Plane) -> usize {
        self.cells().filter(|p| self.get(plane, *p)).count()
    }

    /// Indices of set bits across all planes, in flattening order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        let total = self.width * self.height * Plane::COUNT;
        self.bits.iter().enumerate().flat_map(move |(w, &word)| {
            let mut word = word;
            std::iter::from_fn(move || {
                if word == 0 {
                    return None;
                }
                let b = word.trailing_zeros() as usize;
                word &= word - 1;
                Some(w * 64 + b)
            })
            .filter(move |&i| i < total)
        })
    }

    /// Records the agent's current cell and field of view. Sensed target
    /// cells overwrite the target-seen plane, so a cell reads 1 exactly when
    /// its latest observation contained an unrecovered target. Once the
    /// visited fraction reaches the reset threshold, the visited, seen and
    /// target-seen planes are cleared and the current cell is re-marked.
    pub fn update(&mut self, state: &EpisodeState, sensed: &SensoryMap) -> Result<()> {
        if state.config.width != self.width || state.config.height != self.height {
            return Err(Error::Contract(format!(
                "memory is {}x{}, state is {}x{}",
                self.width, self.height, state.config.width, state.config.height
            )));
        }
        if sensed.side() != state.config.sense_side() {
            return Err(Error::Contract(format!(
                "sensory map side {} does not match window side {}",
                sensed.side(),
                state.config.sense_side()
            )));
        }
        self.clear_plane(Plane::AgentCurrent);
        self.mark_here(state.agent);
        for r in 0..sensed.side() {
            for c in 0..sensed.side() {
                if let Some(cell) = sensed.world_cell(state.agent, r, c, self.width, self.height) {
                    self.set(Plane::Seen, cell, true);
                    self.set(Plane::TargetSeen, cell, sensed.get(r, c));
                }
            }
        }
        for t in state.targets.iter().filter(|t| t.recovered) {
            self.set(Plane::TargetRecovered, t.pos, true);
            self.set(Plane::TargetSeen, t.pos, false);
        }
        let visited = self.count(Plane::Visited) as f64;
        if visited / (self.width * self.height) as f64 >= state.config.reset_fraction {
            self.clear_plane(Plane::Visited);
            self.clear_plane(Plane::Seen);
            self.clear_plane(Plane::TargetSeen);
            self.mark_here(state.agent);
            self.resets += 1;
        }
        Ok(())
    }

    fn mark_here(&mut self, agent: GridPos) {
        self.set(Plane::AgentCurrent, agent, true);
        self.set(Plane::Visited, agent, true);
        self.set(Plane::Seen, agent, true);
    }
}

pub fn update_memory(
    mut memory: MemoryMap,
    state: &EpisodeState,
    sensed: &SensoryMap,
) -> Result<MemoryMap> {
    memory.update(state, sensed)?;
    Ok(memory)
}

/// One line of an episode replay log.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LoggedStep {
    pub step: usize,
    pub agent: GridPos,
    pub action: Action,
    pub recoveries: usize,
}

const EPISODE_LOG_MAGIC: &str = "# herdsearch-episode v1";

/// Writes `config` and the steps as a replayable log: a header line, then
/// `step<TAB>row,col<TAB>action<TAB>recoveries` per step.
pub fn write_episode_log<W: Write>(
    mut out: W,
    config: &EpisodeConfig,
    steps: &[LoggedStep],
) -> Result<()> {
    writeln!(out, "{EPISODE_LOG_MAGIC} {}", config.to_kv_line())?;
    for s in steps {
        writeln!(out, "{}\t{}\t{}\t{}", s.step, s.agent, s.action, s.recoveries)?;
    }
    Ok(())
}

pub fn read_episode_log<R: BufRead>(input: R) -> Result<(EpisodeConfig, Vec<LoggedStep>)> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Dataset("empty episode log".into()))??;
    let kv = header
        .strip_prefix(EPISODE_LOG_MAGIC)
        .ok_or_else(|| Error::Dataset("missing episode log header".into()))?;
    let config = EpisodeConfig::from_kv_line(kv)?;
    let mut steps = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::Dataset(format!("malformed episode log line `{line}`")));
        }
        let bad = || Error::Dataset(format!("malformed episode log line `{line}`"));
        steps.push(LoggedStep {
            step: f[0].parse().map_err(|_| bad())?,
            agent: f[1].parse().map_err(|_| bad())?,
            action: f[2].parse().map_err(|_| bad())?,
            recoveries: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok((config, steps))
}

/// Re-executes a logged episode, checking every logged position and
/// recovery count against the simulation.
pub fn replay(config: &EpisodeConfig, steps: &[LoggedStep]) -> Result<EpisodeState> {
    let mut state = EpisodeState::spawn(config)?;
    for (i, s) in steps.iter().enumerate() {
        if s.step != i || s.agent != state.agent {
            return Err(Error::Dataset(format!(
                "replay diverged at step {i}: log has {} at step {}, simulation has {}",
                s.agent, s.step, state.agent
            )));
        }
        let out = state.apply(s.action)?;
        if out.recoveries != s.recoveries {
            return Err(Error::Dataset(format!(
                "replay diverged at step {i}: {} recoveries logged, {} simulated",
                s.recoveries, out.recoveries
            )));
        }
    }
    Ok(state)
}
