//! Exact navigation teacher.
//!
//! Optimal open-path TSP over the target cells under the Manhattan metric,
//! solved with a Held–Karp table, and the labelled (S; M; V) dataset walked
//! along optimal trajectories.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gridworld::{
    Action, ActionSet, EpisodeConfig, EpisodeState, GridPos, MemoryMap, Plane, SensoryMap,
};
use crate::rng;

/// Largest city count the exact solver accepts.
pub const EXACT_LIMIT: usize = 17;

pub fn manhattan(a: GridPos, b: GridPos) -> usize {
    a.row.abs_diff(b.row) + a.col.abs_diff(b.col)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TspInstance {
    pub start: GridPos,
    pub cities: Vec<GridPos>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tour {
    /// City indices in visiting order.
    pub order: Vec<usize>,
    pub length: usize,
}

impl TspInstance {
    /// Length of the open path start → cities in `order`.
    pub fn path_length(&self, order: &[usize]) -> usize {
        let mut at = self.start;
        let mut total = 0;
        for &i in order {
            total += manhattan(at, self.cities[i]);
            at = self.cities[i];
        }
        total
    }
}

/// Held–Karp suffix table over a fixed city list: `best[mask][j]` is the
/// length of the shortest path that starts at city `j` and visits every city
/// in `mask` (with `j` in `mask`). The table does not depend on the start
/// cell, so one table answers every (position, remaining subset) query.
#[derive(Clone, Debug)]
pub struct HeldKarp {
    cities: Vec<GridPos>,
    best: Vec<u32>,
}

impl HeldKarp {
    pub fn new(cities: &[GridPos]) -> Result<Self> {
        Self::with_limit(cities, EXACT_LIMIT)
    }

    pub fn with_limit(cities: &[GridPos], limit: usize) -> Result<Self> {
        let n = cities.len();
        if n > limit {
            return Err(Error::Capacity { cities: n, limit });
        }
        let dist: Vec<u32> = cities
            .iter()
            .flat_map(|a| cities.iter().map(move |b| manhattan(*a, *b) as u32))
            .collect();
        let mut best = vec![u32::MAX; (1usize << n) * n];
        for mask in 1usize..(1 << n) {
            let mut js = mask;
            while js != 0 {
                let j = js.trailing_zeros() as usize;
                js &= js - 1;
                let rest = mask & !(1 << j);
                let value = if rest == 0 {
                    0
                } else {
                    let mut m = u32::MAX;
                    let mut ks = rest;
                    let row = &dist[j * n..(j + 1) * n];
                    let sub = &best[rest * n..(rest + 1) * n];
                    while ks != 0 {
                        let k = ks.trailing_zeros() as usize;
                        ks &= ks - 1;
                        m = m.min(row[k] + sub[k]);
                    }
                    m
                };
                best[mask * n + j] = value;
            }
        }
        Ok(HeldKarp {
            cities: cities.to_vec(),
            best,
        })
    }

    pub fn cities(&self) -> &[GridPos] {
        &self.cities
    }

    pub fn full_mask(&self) -> u32 {
        ((1u64 << self.cities.len()) - 1) as u32
    }

    /// Cities of `mask` located at `pos`.
    pub fn mask_at(&self, pos: GridPos, mask: u32) -> u32 {
        self.cities
            .iter()
            .enumerate()
            .filter(|(i, c)| mask >> i & 1 == 1 && **c == pos)
            .fold(0, |m, (i, _)| m | 1 << i)
    }

    /// Shortest open path from `pos` through every city in `mask`.
    pub fn optimum_from(&self, pos: GridPos, mask: u32) -> usize {
        let n = self.cities.len();
        let mask = mask as usize;
        if mask == 0 {
            return 0;
        }
        (0..n)
            .filter(|j| mask >> j & 1 == 1)
            .map(|j| manhattan(pos, self.cities[j]) + self.best[mask * n + j] as usize)
            .min()
            .unwrap_or(0)
    }

    /// Lexicographically smallest optimal visiting order.
    pub fn tour_from(&self, pos: GridPos, mask: u32) -> Tour {
        let n = self.cities.len();
        let length = self.optimum_from(pos, mask);
        let mut order = Vec::with_capacity(mask.count_ones() as usize);
        let mut remaining = mask as usize;
        let mut need = length;
        let mut at = pos;
        while remaining != 0 {
            let j = (0..n)
                .filter(|j| remaining >> j & 1 == 1)
                .find(|&j| manhattan(at, self.cities[j]) + self.best[remaining * n + j] as usize == need)
                .expect("Held-Karp table is self-consistent");
            need -= manhattan(at, self.cities[j]);
            at = self.cities[j];
            order.push(j);
            remaining &= !(1 << j);
        }
        Tour { order, length }
    }

    /// Moves from `pos` that lie on some minimum-length open tour over
    /// `mask`. Stepping onto a city removes it from the remaining set.
    pub fn optimal_moves(&self, pos: GridPos, mask: u32, legal: ActionSet, width: usize, height: usize) -> ActionSet {
        if mask == 0 {
            return ActionSet::EMPTY;
        }
        let opt = self.optimum_from(pos, mask);
        legal
            .iter()
            .filter(|a| {
                let Some(next) = pos.step(*a, width, height) else {
                    return false;
                };
                let rest = mask & !self.mask_at(next, mask);
                1 + self.optimum_from(next, rest) == opt
            })
            .collect()
    }
}

/// Exact open-path TSP from `instance.start`.
pub fn solve_open_tsp(instance: &TspInstance) -> Result<Tour> {
    solve_open_tsp_with_limit(instance, EXACT_LIMIT)
}

pub fn solve_open_tsp_with_limit(instance: &TspInstance, limit: usize) -> Result<Tour> {
    let hk = HeldKarp::with_limit(&instance.cities, limit)?;
    Ok(hk.tour_from(instance.start, hk.full_mask()))
}

/// Which targets the teacher plans over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Teacher {
    /// Every unrecovered target, whether or not the agent has seen it.
    #[default]
    Omniscient,
    /// Only unrecovered targets the agent has already sighted; with none
    /// known, the label heads for the nearest never-seen cell.
    Discovered,
}

impl fmt::Display for Teacher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Teacher::Omniscient => write!(f, "omniscient"),
            Teacher::Discovered => write!(f, "discovered"),
        }
    }
}

impl FromStr for Teacher {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omniscient" => Ok(Teacher::Omniscient),
            "discovered" | "seen" => Ok(Teacher::Discovered),
            other => Err(Error::Config(format!("unknown teacher `{other}`"))),
        }
    }
}

/// Unique unrecovered target cells the teacher plans over, sorted.
fn planning_cities(state: &EpisodeState, teacher: Teacher) -> Vec<GridPos> {
    let mut cells: Vec<GridPos> = state
        .remaining()
        .filter(|t| teacher == Teacher::Omniscient || t.seen)
        .map(|t| t.pos)
        .collect();
    cells.sort_unstable();
    cells.dedup();
    cells
}

/// First moves along some optimal open tour over all unrecovered targets.
/// Empty once every target is recovered.
pub fn optimal_first_actions(state: &EpisodeState) -> Result<ActionSet> {
    let cities = planning_cities(state, Teacher::Omniscient);
    let hk = HeldKarp::new(&cities)?;
    Ok(hk.optimal_moves(
        state.agent,
        hk.full_mask(),
        state.legal_actions(),
        state.width(),
        state.height(),
    ))
}

/// Caches the Held–Karp table across steps while the planned city set
/// only shrinks by recoveries.
#[derive(Debug, Default)]
pub struct Planner {
    teacher: Teacher,
    table: Option<HeldKarp>,
}

impl Planner {
    pub fn new(teacher: Teacher) -> Self {
        Planner {
            teacher,
            table: None,
        }
    }

    pub fn teacher(&self) -> Teacher {
        self.teacher
    }

    /// Optimal first moves for `state`; `memory` drives the exploration
    /// fallback of the discovered-targets teacher.
    pub fn optimal_actions(&mut self, state: &EpisodeState, memory: &MemoryMap) -> Result<ActionSet> {
        let cities = planning_cities(state, self.teacher);
        if cities.is_empty() {
            if self.teacher == Teacher::Discovered && !state.all_recovered() {
                return Ok(explore_moves(state, memory));
            }
            return Ok(ActionSet::EMPTY);
        }
        let reusable = self
            .table
            .as_ref()
            .is_some_and(|hk| cities.iter().all(|c| hk.cities().contains(c)));
        if !reusable {
            self.table = Some(HeldKarp::new(&cities)?);
        }
        let hk = self.table.as_ref().expect("table built above");
        let mask = hk
            .cities()
            .iter()
            .enumerate()
            .filter(|(_, c)| cities.binary_search(c).is_ok())
            .fold(0u32, |m, (i, _)| m | 1 << i);
        Ok(hk.optimal_moves(
            state.agent,
            mask,
            state.legal_actions(),
            state.width(),
            state.height(),
        ))
    }
}

/// Moves that shorten the distance to the nearest cell not on the seen plane.
fn explore_moves(state: &EpisodeState, memory: &MemoryMap) -> ActionSet {
    let (w, h) = (state.width(), state.height());
    let unseen: Vec<GridPos> = (0..h)
        .flat_map(|r| (0..w).map(move |c| GridPos::new(r, c)))
        .filter(|p| !memory.get(Plane::Seen, *p))
        .collect();
    let Some(nearest) = unseen.iter().map(|p| manhattan(state.agent, *p)).min() else {
        return state.legal_actions();
    };
    state
        .legal_actions()
        .iter()
        .filter(|a| {
            let next = state.agent.step(*a, w, h).expect("legal action");
            unseen
                .iter()
                .filter(|p| manhattan(state.agent, **p) == nearest)
                .any(|p| manhattan(next, *p) < nearest)
        })
        .collect()
}

/// One supervised (S; M; V) triple.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSample {
    pub episode: u32,
    pub step: u32,
    pub sensory: SensoryMap,
    pub memory: MemoryMap,
    pub label: Action,
}

impl LabeledSample {
    pub fn one_hot(&self) -> [f64; 4] {
        let mut v = [0.0; 4];
        v[self.label.index()] = 1.0;
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: EpisodeConfig,
    pub teacher: Teacher,
    pub episodes: usize,
    pub samples: Vec<LabeledSample>,
}

/// Seed of episode `index` under the master seed in `config`.
pub fn episode_config(config: &EpisodeConfig, index: usize) -> EpisodeConfig {
    EpisodeConfig {
        seed: rng::derive_seed(config.seed, index as u64),
        ..config.clone()
    }
}

/// Walks one episode along teacher trajectories, emitting a sample at every
/// grid step. Labels are the highest-priority optimal move (N > W > S > E).
pub fn label_episode(config: &EpisodeConfig, episode: usize, teacher: Teacher) -> Result<Vec<LabeledSample>> {
    let mut state = EpisodeState::spawn(config)?;
    let mut memory = MemoryMap::for_config(config);
    let mut planner = Planner::new(teacher);
    let cap = 4 * config.cells();
    let mut samples = Vec::new();
    for step in 0..cap {
        let sensed = state.sense();
        memory.update(&state, &sensed)?;
        if state.all_recovered() {
            break;
        }
        let Some(label) = planner.optimal_actions(&state, &memory)?.first() else {
            break;
        };
        samples.push(LabeledSample {
            episode: episode as u32,
            step: step as u32,
            sensory: sensed,
            memory: memory.clone(),
            label,
        });
        state.apply(label)?;
    }
    Ok(samples)
}

/// Labels `num_episodes` independent episodes. Episode `i` uses the seed
/// derived from (`config.seed`, `i`); output is ordered by (episode, step)
/// regardless of worker scheduling.
pub fn generate_dataset(config: &EpisodeConfig, num_episodes: usize, teacher: Teacher) -> Result<Dataset> {
    config.validate()?;
    let per_episode: Vec<Vec<LabeledSample>> = (0..num_episodes)
        .into_par_iter()
        .map(|i| label_episode(&episode_config(config, i), i, teacher))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        config: config.clone(),
        teacher,
        episodes: num_episodes,
        samples: per_episode.into_iter().flatten().collect(),
    })
}

const DATASET_MAGIC: &str = "# herdsearch-dataset v1";

fn encode_bits(bits: impl Iterator<Item = bool>) -> String {
    let bits: Vec<bool> = bits.collect();
    bits.chunks(4)
        .map(|chunk| {
            let v = chunk
                .iter()
                .enumerate()
                .fold(0u32, |acc, (i, b)| acc | (u32::from(*b) << (3 - i)));
            char::from_digit(v, 16).expect("nibble")
        })
        .collect()
}

fn decode_bits(hex: &str, count: usize) -> Result<Vec<bool>> {
    if hex.len() != count.div_ceil(4) {
        return Err(Error::Dataset(format!(
            "memory field has {} digits, expected {}",
            hex.len(),
            count.div_ceil(4)
        )));
    }
    let mut out = Vec::with_capacity(count);
    for ch in hex.chars() {
        let v = ch
            .to_digit(16)
            .ok_or_else(|| Error::Dataset(format!("bad hex digit `{ch}`")))?;
        for i in 0..4 {
            out.push(v >> (3 - i) & 1 == 1);
        }
    }
    out.truncate(count);
    Ok(out)
}

/// Writes the dataset as a header line followed by one record per sample:
/// `episode<TAB>step<TAB>S<TAB>M<TAB>V`. S is the row-major window as 0/1
/// digits, M the plane-major flattened memory planes packed four values per
/// hex digit (first value in the high bit), V the one-hot label as 0/1 digits.
pub fn write_dataset<W: Write>(mut out: W, dataset: &Dataset) -> Result<()> {
    writeln!(
        out,
        "{DATASET_MAGIC} teacher={} episodes={} {}",
        dataset.teacher,
        dataset.episodes,
        dataset.config.to_kv_line()
    )?;
    let planes = dataset.config.cells() * Plane::COUNT;
    for s in &dataset.samples {
        let sensory: String = s.sensory.cells().iter().map(|b| if *b { '1' } else { '0' }).collect();
        let mut ones = s.memory.ones().peekable();
        let memory = encode_bits((0..planes).map(|i| {
            if ones.peek() == Some(&i) {
                ones.next();
                true
            } else {
                false
            }
        }));
        let label: String = s.one_hot().iter().map(|v| if *v == 1.0 { '1' } else { '0' }).collect();
        writeln!(out, "{}\t{}\t{sensory}\t{memory}\t{label}", s.episode, s.step)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Dataset("empty dataset file".into()))??;
    let rest = header
        .strip_prefix(DATASET_MAGIC)
        .ok_or_else(|| Error::Dataset("missing or unsupported dataset header".into()))?;
    let mut teacher = Teacher::Omniscient;
    let mut episodes = 0;
    let mut config = EpisodeConfig::default();
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Dataset(format!("bad header token `{tok}`")))?;
        match k {
            "teacher" => teacher = v.parse()?,
            "episodes" => {
                episodes = v
                    .parse()
                    .map_err(|_| Error::Dataset(format!("bad episode count `{v}`")))?
            }
            _ => config.set(k, v)?,
        }
    }
    let side = config.sense_side();
    let planes = config.cells() * Plane::COUNT;
    let mut samples = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = |what: &str| Error::Dataset(format!("{what} in record `{}`", &line[..line.len().min(40)]));
        if f.len() != 5 {
            return Err(bad("wrong field count"));
        }
        let episode = f[0].parse().map_err(|_| bad("bad episode index"))?;
        let step = f[1].parse().map_err(|_| bad("bad step index"))?;
        if f[2].len() != side * side || f[2].chars().any(|c| c != '0' && c != '1') {
            return Err(bad("bad sensory field"));
        }
        let sensory = SensoryMap::from_cells(side, f[2].chars().map(|c| c == '1').collect())?;
        let flat = decode_bits(f[3], planes)?;
        let mut bits = vec![0u64; planes.div_ceil(64)];
        for (i, b) in flat.into_iter().enumerate() {
            if b {
                bits[i / 64] |= 1 << (i % 64);
            }
        }
        let memory = MemoryMap::from_bits(config.width, config.height, bits)?;
        if f[4].len() != 4 || f[4].chars().filter(|c| *c == '1').count() != 1 || f[4].chars().any(|c| c != '0' && c != '1') {
            return Err(bad("label is not one-hot"));
        }
        let label = Action::from_index(f[4].find('1').expect("checked")).expect("index < 4");
        samples.push(LabeledSample {
            episode,
            step,
            sensory,
            memory,
            label,
        });
    }
    Ok(Dataset {
        config,
        teacher,
        episodes,
        samples,
    })
}
