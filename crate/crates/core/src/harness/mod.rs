//! Mission loop, baselines, metrics, rendering and the command-line front end.

pub mod cli;
pub mod metrics;
pub mod render;

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{Action, EpisodeConfig, EpisodeState, GridPos, MemoryMap, Plane, SensoryMap};
use crate::oracle;
use crate::perception::{self, Frame};
use crate::policynet::{self, ActionScores, NetworkParams};
use crate::rng::{self, SimRng};

pub use metrics::{aggregate, compute_metrics, write_metrics_csv, Aggregate, Metrics, Spread};
pub use render::{render, RenderFormat, RenderSpec};

/// Simulated seconds per grid iteration.
pub const ITERATION_SECONDS: f64 = 6.35;

/// Navigation policy driving a mission.
#[derive(Clone, Debug)]
pub enum Policy {
    Network(Box<NetworkParams>),
    /// Several networks voting with their mean action scores.
    Ensemble(Vec<NetworkParams>),
    Lawnmower,
    Random,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Network(_) => "network",
            Policy::Ensemble(_) => "ensemble",
            Policy::Lawnmower => "lawnmower",
            Policy::Random => "random",
        }
    }
}

/// Policy choice without attached parameters, as named on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    Network,
    Lawnmower,
    Random,
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "network" | "net" => Ok(PolicyKind::Network),
            "lawnmower" => Ok(PolicyKind::Lawnmower),
            "random" => Ok(PolicyKind::Random),
            _ => Err(Error::Usage(format!("unknown policy `{s}`"))),
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PolicyKind::Network => "network",
            PolicyKind::Lawnmower => "lawnmower",
            PolicyKind::Random => "random",
        })
    }
}

/// When a mission ends. At least one limit must be set; with both, the
/// tighter one applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StopRule {
    pub max_iterations: Option<usize>,
    pub battery_seconds: Option<f64>,
}

impl StopRule {
    pub fn iterations(n: usize) -> Self {
        StopRule {
            max_iterations: Some(n),
            battery_seconds: None,
        }
    }

    pub fn battery(seconds: f64) -> Self {
        StopRule {
            max_iterations: None,
            battery_seconds: Some(seconds),
        }
    }

    /// Iterations that fit the rule at `iteration_seconds` each.
    pub fn budget(&self, iteration_seconds: f64) -> Result<usize> {
        let from_battery = match self.battery_seconds {
            Some(b) => {
                if !(b >= 0.0 && b.is_finite()) {
                    return Err(Error::Config(format!("battery budget {b} s is not a finite non-negative time")));
                }
                if !(iteration_seconds > 0.0 && iteration_seconds.is_finite()) {
                    return Err(Error::Config(format!("iteration time {iteration_seconds} s must be positive")));
                }
                Some(((b + 1e-9) / iteration_seconds).floor() as usize)
            }
            None => None,
        };
        match (self.max_iterations, from_battery) {
            (Some(a), Some(b)) => Ok(a.min(b)),
            (Some(a), None) => Ok(a),
            (None, Some(b)) => Ok(b),
            (None, None) => Err(Error::Config("mission needs an iteration or battery limit".into())),
        }
    }
}

/// One loop iteration: the agent at `agent` sensed `sensed`, scored the
/// moves, took `action`, and recovered `recoveries` targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionStep {
    pub step: usize,
    pub agent: GridPos,
    #[serde(with = "sensory_bits")]
    pub sensed: SensoryMap,
    pub scores: ActionScores,
    pub action: Action,
    pub recoveries: usize,
    pub clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionHeader {
    pub policy: String,
    pub config: String,
    pub iteration_seconds: f64,
    pub stop: StopRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionSummary {
    pub iterations: usize,
    pub finish: GridPos,
    pub recovered: usize,
    pub targets: usize,
    pub clock_s: f64,
    /// Distinct cells the agent has stood on, row-major.
    pub visited: Vec<GridPos>,
    /// Distinct cells that were ever inside the field of view, row-major.
    pub seen: Vec<GridPos>,
    /// Targets that entered the field of view, at their last known cell.
    pub discovered_targets: Vec<GridPos>,
    pub memory_resets: usize,
    /// Visited-plane count of the final memory map.
    pub memory_visited: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MissionRecord {
    pub header: MissionHeader,
    pub config: EpisodeConfig,
    pub steps: Vec<MissionStep>,
    pub summary: MissionSummary,
}

mod sensory_bits {
    use super::SensoryMap;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &SensoryMap, s: S) -> Result<S::Ok, S::Error> {
        let text: String = m.cells().iter().map(|c| if *c { '1' } else { '0' }).collect();
        s.serialize_str(&text)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SensoryMap, D::Error> {
        let text = String::deserialize(d)?;
        let side = (text.len() as f64).sqrt() as usize;
        let cells = text
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                _ => Err(serde::de::Error::custom(format!("bad sensory cell `{c}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        SensoryMap::from_cells(side, cells).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum MissionLine {
    Header(MissionHeader),
    Step(MissionStep),
    Summary(MissionSummary),
}

/// Next move of the boustrophedon sweep: along the current row in the
/// sweep direction, one row over at the row end, bouncing off the top and
/// bottom edges.
struct Sweep {
    east: bool,
    south: bool,
}

impl Sweep {
    fn new() -> Self {
        Sweep { east: true, south: true }
    }

    fn next(&mut self, at: GridPos, width: usize, height: usize) -> Option<Action> {
        let along = if self.east { Action::E } else { Action::W };
        if at.step(along, width, height).is_some() {
            return Some(along);
        }
        self.east = !self.east;
        let mut over = if self.south { Action::S } else { Action::N };
        if at.step(over, width, height).is_none() {
            self.south = !self.south;
            over = over.opposite();
        }
        if at.step(over, width, height).is_some() {
            return Some(over);
        }
        // Single-row grid: turn around in place.
        let back = if self.east { Action::E } else { Action::W };
        at.step(back, width, height).map(|_| back)
    }
}

fn one_hot(a: Action) -> ActionScores {
    let mut s = [0.0; 4];
    s[a.index()] = 1.0;
    ActionScores(s)
}

/// Field of view through the perception path: synthetic detections for the
/// current window abstracted back onto the grid.
fn perceive(state: &EpisodeState, frame_index: usize, rng: &mut SimRng) -> SensoryMap {
    let frame = Frame::new(frame_index, state.agent);
    let detections = perception::render_detections(state, &frame, 12.0, rng);
    perception::abstract_to_bins(&detections, &frame, state.config.sense_side())
}

/// Flies one mission with `policy` until the stop rule's iteration budget is
/// spent; the lawnmower also stops once every cell has been visited.
pub fn run_mission(policy: &Policy, config: &EpisodeConfig, stop: &StopRule) -> Result<MissionRecord> {
    run_mission_timed(policy, config, stop, ITERATION_SECONDS)
}

pub fn run_mission_timed(
    policy: &Policy,
    config: &EpisodeConfig,
    stop: &StopRule,
    iteration_seconds: f64,
) -> Result<MissionRecord> {
    config.validate()?;
    let budget = stop.budget(iteration_seconds)?;
    match policy {
        Policy::Network(p) => p.check_inputs(config.sense_side(), config.width, config.height)?,
        Policy::Ensemble(members) => {
            if members.is_empty() {
                return Err(Error::Config("ensemble has no members".into()));
            }
            for p in members {
                p.check_inputs(config.sense_side(), config.width, config.height)?;
            }
        }
        _ => {}
    }
    let (w, h) = (config.width, config.height);
    let mut state = EpisodeState::spawn(config)?;
    let mut memory = MemoryMap::for_config(config);
    let mut frame_rng = rng::stream(config.seed, 0xf0);
    let mut choice_rng = rng::stream(config.seed, 0x5a);
    let mut sweep = Sweep::new();
    let mut visited = BTreeSet::from([state.agent]);
    let mut seen = BTreeSet::new();
    let mut sensed = perceive(&state, 0, &mut frame_rng);
    memory.update(&state, &sensed)?;
    mark_window(&mut seen, &state, &sensed);
    let mut steps = Vec::with_capacity(budget.min(4096));
    for k in 0..budget {
        if matches!(policy, Policy::Lawnmower) && visited.len() == config.cells() {
            break;
        }
        let legal = state.legal_actions();
        let (scores, action) = match policy {
            Policy::Network(p) => {
                let scores = policynet::forward(p, &sensed, &memory)?;
                (scores, policynet::select_action(&scores, legal)?)
            }
            Policy::Ensemble(members) => {
                let mut sum = [0.0; 4];
                for p in members {
                    let s = policynet::forward(p, &sensed, &memory)?;
                    sum.iter_mut().zip(s.0).for_each(|(a, b)| *a += b);
                }
                let scores = ActionScores(sum.map(|v| v / members.len() as f64));
                (scores, policynet::select_action(&scores, legal)?)
            }
            Policy::Lawnmower => {
                let Some(a) = sweep.next(state.agent, w, h) else { break };
                (one_hot(a), a)
            }
            Policy::Random => {
                let options: Vec<Action> = legal.iter().collect();
                if options.is_empty() {
                    break;
                }
                let a = options[choice_rng.gen_range(0..options.len())];
                (ActionScores::uniform(), a)
            }
        };
        let agent = state.agent;
        let outcome = state.apply(action)?;
        steps.push(MissionStep {
            step: k,
            agent,
            sensed,
            scores,
            action,
            recoveries: outcome.recoveries,
            clock_s: (k + 1) as f64 * iteration_seconds,
        });
        visited.insert(state.agent);
        sensed = perceive(&state, k + 1, &mut frame_rng);
        memory.update(&state, &sensed)?;
        mark_window(&mut seen, &state, &sensed);
    }
    let summary = MissionSummary {
        iterations: steps.len(),
        finish: state.agent,
        recovered: state.recovered_count,
        targets: state.targets.len(),
        clock_s: steps.len() as f64 * iteration_seconds,
        visited: visited.into_iter().collect(),
        seen: seen.into_iter().collect(),
        discovered_targets: state.targets.iter().filter(|t| t.seen).map(|t| t.pos).collect(),
        memory_resets: memory.resets(),
        memory_visited: memory.count(Plane::Visited),
    };
    Ok(MissionRecord {
        header: MissionHeader {
            policy: policy.name().to_string(),
            config: config.to_kv_line(),
            iteration_seconds,
            stop: *stop,
        },
        config: config.clone(),
        steps,
        summary,
    })
}

fn mark_window(seen: &mut BTreeSet<GridPos>, state: &EpisodeState, sensed: &SensoryMap) {
    let side = sensed.side();
    for r in 0..side {
        for c in 0..side {
            if let Some(p) = sensed.world_cell(state.agent, r, c, state.config.width, state.config.height) {
                seen.insert(p);
            }
        }
    }
}

/// Boustrophedon sweep baseline.
pub fn run_lawnmower(config: &EpisodeConfig, stop: &StopRule) -> Result<MissionRecord> {
    run_mission(&Policy::Lawnmower, config, stop)
}

/// Flies `episodes` missions on per-episode seeds derived from
/// `config.seed`, offset by `first_episode`. Output is in episode order.
pub fn run_missions(
    policy: &Policy,
    config: &EpisodeConfig,
    stop: &StopRule,
    first_episode: usize,
    episodes: usize,
) -> Result<Vec<MissionRecord>> {
    (first_episode..first_episode + episodes)
        .into_par_iter()
        .map(|i| run_mission(policy, &oracle::episode_config(config, i), stop))
        .collect()
}

pub fn write_mission_record<W: Write>(mut out: W, record: &MissionRecord) -> Result<()> {
    let mut line = |l: &MissionLine| -> Result<()> {
        let text = serde_json::to_string(l).map_err(|e| Error::Persistence(e.to_string()))?;
        writeln!(out, "{text}")?;
        Ok(())
    };
    line(&MissionLine::Header(record.header.clone()))?;
    for s in &record.steps {
        line(&MissionLine::Step(s.clone()))?;
    }
    line(&MissionLine::Summary(record.summary.clone()))?;
    Ok(())
}

/// Reads one or more concatenated mission records.
pub fn read_mission_records<R: BufRead>(input: R) -> Result<Vec<MissionRecord>> {
    let mut out = Vec::new();
    let mut open: Option<(MissionHeader, EpisodeConfig, Vec<MissionStep>)> = None;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Dataset(format!("mission record line {}: {m}", i + 1));
        let parsed: MissionLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        match parsed {
            MissionLine::Header(h) => {
                if open.is_some() {
                    return Err(bad("header before the previous summary".into()));
                }
                let config = EpisodeConfig::from_kv_line(&h.config)?;
                open = Some((h, config, Vec::new()));
            }
            MissionLine::Step(s) => {
                let (_, _, steps) = open.as_mut().ok_or_else(|| bad("step outside a record".into()))?;
                if s.step != steps.len() {
                    return Err(bad(format!("step {} out of sequence", s.step)));
                }
                steps.push(s);
            }
            MissionLine::Summary(summary) => {
                let (header, config, steps) = open.take().ok_or_else(|| bad("summary without header".into()))?;
                if summary.iterations != steps.len() {
                    return Err(bad("summary iteration count disagrees with steps".into()));
                }
                out.push(MissionRecord {
                    header,
                    config,
                    steps,
                    summary,
                });
            }
        }
    }
    if open.is_some() {
        return Err(Error::Dataset("mission record truncated before its summary".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policynet::NetworkShape;

    #[test]
    fn battery_budget_arithmetic() {
        assert_eq!(StopRule::battery(489.0).budget(ITERATION_SECONDS).unwrap(), 77);
        assert_eq!(StopRule::battery(6.35 * 77.0).budget(ITERATION_SECONDS).unwrap(), 77);
        assert_eq!(StopRule::battery(6.34).budget(ITERATION_SECONDS).unwrap(), 0);
        assert!(StopRule::default().budget(ITERATION_SECONDS).is_err());
        let both = StopRule {
            max_iterations: Some(10),
            battery_seconds: Some(489.0),
        };
        assert_eq!(both.budget(ITERATION_SECONDS).unwrap(), 10);
    }

    #[test]
    fn empty_mission() {
        let r = run_lawnmower(&EpisodeConfig::default(), &StopRule::iterations(0)).unwrap();
        assert!(r.steps.is_empty());
        assert_eq!(r.summary.visited, vec![GridPos::new(0, 0)]);
        assert_eq!(compute_metrics(&r).coverage_fraction, 1.0 / 400.0);
    }

    #[test]
    fn lawnmower_covers_grid_in_399_moves() {
        let cfg = EpisodeConfig {
            seed: 7,
            ..EpisodeConfig::default()
        };
        let r = run_lawnmower(&cfg, &StopRule::iterations(10_000)).unwrap();
        assert_eq!(r.steps.len(), 399);
        assert_eq!(r.summary.visited.len(), 400);
        assert_eq!(r.summary.recovered, 17);
    }

    #[test]
    fn lawnmower_two_by_two() {
        let cfg = EpisodeConfig {
            width: 2,
            height: 2,
            num_targets: 1,
            sense_half_width: 0,
            ..EpisodeConfig::default()
        };
        let r = run_lawnmower(&cfg, &StopRule::iterations(100)).unwrap();
        let path: Vec<GridPos> = r.steps.iter().map(|s| s.agent).chain([r.summary.finish]).collect();
        assert_eq!(
            path,
            vec![GridPos::new(0, 0), GridPos::new(0, 1), GridPos::new(1, 1), GridPos::new(1, 0)]
        );
    }

    #[test]
    fn clock_and_steps_are_contiguous() {
        let r = run_mission(&Policy::Random, &EpisodeConfig::default(), &StopRule::battery(489.0)).unwrap();
        assert_eq!(r.steps.len(), 77);
        for (i, s) in r.steps.iter().enumerate() {
            assert_eq!(s.step, i);
            assert!((s.clock_s - (i + 1) as f64 * ITERATION_SECONDS).abs() < 1e-9);
        }
        assert!(r.summary.clock_s <= 489.0);
    }

    #[test]
    fn network_shape_mismatch_is_a_contract_error() {
        let p = NetworkParams::new(NetworkShape::for_grid(10, 10, 5), 1).unwrap();
        let err = run_mission(&Policy::Network(Box::new(p)), &EpisodeConfig::default(), &StopRule::iterations(3));
        assert!(err.is_err());
    }

    #[test]
    fn targetless_network_missions_repeat() {
        let cfg = EpisodeConfig {
            num_targets: 0,
            ..EpisodeConfig::default()
        };
        let p = NetworkParams::new(NetworkShape::for_grid(20, 20, 5), 3).unwrap();
        let policy = Policy::Network(Box::new(p));
        let a = run_mission(&policy, &cfg, &StopRule::iterations(60)).unwrap();
        let b = run_mission(&policy, &cfg, &StopRule::iterations(60)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ensemble_of_copies_flies_like_its_member() {
        let p = NetworkParams::new(NetworkShape::for_grid(20, 20, 5), 4).unwrap();
        let stop = StopRule::iterations(40);
        let cfg = EpisodeConfig::default();
        let single = run_mission(&Policy::Network(Box::new(p.clone())), &cfg, &stop).unwrap();
        let double = run_mission(&Policy::Ensemble(vec![p.clone(), p]), &cfg, &stop).unwrap();
        let moves = |r: &MissionRecord| r.steps.iter().map(|s| s.action).collect::<Vec<_>>();
        assert_eq!(moves(&single), moves(&double));
        assert!(run_mission(&Policy::Ensemble(Vec::new()), &cfg, &stop).is_err());
    }

    #[test]
    fn record_round_trip() {
        let r = run_mission(&Policy::Random, &EpisodeConfig::default(), &StopRule::iterations(12)).unwrap();
        let mut buf = Vec::new();
        write_mission_record(&mut buf, &r).unwrap();
        write_mission_record(&mut buf, &r).unwrap();
        let back = read_mission_records(buf.as_slice()).unwrap();
        assert_eq!(back, vec![r.clone(), r]);
        assert!(read_mission_records(&buf[..buf.len() / 3]).is_err());
    }
}
