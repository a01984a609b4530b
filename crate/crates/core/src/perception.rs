//! Detection post-processing: per-frame boxes to the occupancy window,
//! short-term tracklets, IoU scoring, and multi-frame identity fusion over a
//! parametric stand-in for the per-frame identity classifier.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{EpisodeState, GridPos, SensoryMap};
use crate::rng::{self, SimRng};

/// Side of the square camera frame in pixels.
pub const FRAME_SIDE: f64 = 720.0;
/// Frames per tracklet window.
pub const WINDOW: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub width: f64,
    pub height: f64,
    pub index: usize,
    pub capture_cell: GridPos,
}

impl Frame {
    pub fn new(index: usize, capture_cell: GridPos) -> Self {
        Frame {
            width: FRAME_SIDE,
            height: FRAME_SIDE,
            index,
            capture_cell,
        }
    }
}

/// Axis-aligned box, top-left corner plus size, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn centred(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn centre(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    /// Ground-truth identity, only known for synthetic streams.
    pub identity: Option<usize>,
}

/// Subdivision cell of the frame containing `(x, y)`; bins are half-open so
/// a point on an internal boundary belongs to the higher-index bin.
fn bin_of(x: f64, y: f64, frame: &Frame, bins: usize) -> (usize, usize) {
    let clamp = |v: f64, side: f64| ((v / side * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    (clamp(y, frame.height), clamp(x, frame.width))
}

/// Occupancy over a 5×5 subdivision of the frame: a cell is set when at
/// least one detection centre falls in it.
pub fn abstract_to_grid(detections: &[Detection], frame: &Frame) -> SensoryMap {
    abstract_to_bins(detections, frame, 5)
}

pub fn abstract_to_bins(detections: &[Detection], frame: &Frame, bins: usize) -> SensoryMap {
    let mut map = SensoryMap::empty(bins);
    for d in detections {
        let (cx, cy) = d.bbox.centre();
        let (r, c) = bin_of(cx, cy, frame, bins);
        map.set(r, c, true);
    }
    map
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackletConfig {
    /// Subdivision of the frame into `bins`×`bins` candidate areas.
    pub bins: usize,
    pub window: usize,
    /// Frames (out of `window`) a bin must be occupied in.
    pub presence_threshold: usize,
}

impl Default for TrackletConfig {
    fn default() -> Self {
        TrackletConfig {
            bins: 5,
            window: WINDOW,
            presence_threshold: 3,
        }
    }
}

/// Detections of one bin across a window, ordered by frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub cell: (usize, usize),
    /// (frame position within the window, detection)
    pub detections: Vec<(usize, Detection)>,
}

impl Tracklet {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    /// Ground-truth identities present, deduplicated.
    pub fn identities(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.detections.iter().filter_map(|(_, d)| d.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Groups detections that stay in the same frame bin across a window. Every
/// bin occupied in at least `presence_threshold` frames yields one tracklet
/// holding, per frame, the most confident detection in that bin. Tracklets
/// come out in row-major bin order.
pub fn accumulate_tracklets(frames: &[Vec<Detection>], frame: &Frame, cfg: &TrackletConfig) -> Result<Vec<Tracklet>> {
    if frames.len() != cfg.window {
        return Err(Error::Contract(format!(
            "tracklet window needs {} frames, got {}",
            cfg.window,
            frames.len()
        )));
    }
    let bins = cfg.bins;
    let mut per_bin: Vec<Vec<(usize, Detection)>> = vec![Vec::new(); bins * bins];
    for (fi, dets) in frames.iter().enumerate() {
        let mut best: Vec<Option<Detection>> = vec![None; bins * bins];
        for d in dets {
            let (cx, cy) = d.bbox.centre();
            let (r, c) = bin_of(cx, cy, frame, bins);
            let slot = &mut best[r * bins + c];
            if slot.is_none_or(|b| d.confidence > b.confidence) {
                *slot = Some(*d);
            }
        }
        for (i, d) in best.into_iter().enumerate() {
            if let Some(d) = d {
                per_bin[i].push((fi, d));
            }
        }
    }
    Ok(per_bin
        .into_iter()
        .enumerate()
        .filter(|(_, dets)| dets.len() >= cfg.presence_threshold.max(1))
        .map(|(i, detections)| Tracklet {
            cell: (i / bins, i % bins),
            detections,
        })
        .collect())
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Detection counts under one-to-one matching.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    /// TP / (TP + FP + FN); 1 when there is nothing to detect or predict.
    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.fp + self.fn_;
        if total == 0 {
            1.0
        } else {
            self.tp as f64 / total as f64
        }
    }
}

impl std::ops::Add for MatchCounts {
    type Output = MatchCounts;

    fn add(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for MatchCounts {
    fn sum<I: Iterator<Item = MatchCounts>>(iter: I) -> Self {
        iter.fold(MatchCounts::default(), |a, b| a + b)
    }
}

/// Greedy one-to-one matching by descending IoU. Pairs at or above
/// `threshold` are true positives; leftovers are false positives
/// (predictions) and misses (truths).
pub fn match_and_score(truth: &[BBox], predicted: &[BBox], threshold: f64) -> MatchCounts {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, p) in predicted.iter().enumerate() {
            let o = iou(t, p);
            if o >= threshold {
                pairs.push((o, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut truth_used = vec![false; truth.len()];
    let mut pred_used = vec![false; predicted.len()];
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !truth_used[i] && !pred_used[j] {
            truth_used[i] = true;
            pred_used[j] = true;
            tp += 1;
        }
    }
    MatchCounts {
        tp,
        fp: predicted.len() - tp,
        fn_: truth.len() - tp,
    }
}

/// Ground truth and predictions of one evaluated frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredFrame {
    pub truth: Vec<BBox>,
    pub predicted: Vec<BBox>,
}

pub fn score_frames(frames: &[ScoredFrame], threshold: f64) -> MatchCounts {
    frames
        .iter()
        .map(|f| match_and_score(&f.truth, &f.predicted, threshold))
        .sum()
}

/// Synthetic detector replay: `instances` animals spread over frames of at
/// most two animals, with `misses` of them dropped and `nested` spurious
/// boxes drawn inside detected animals. Correct predictions are jittered
/// copies of the truth with IoU well above 0.5.
pub fn synthetic_detection_mission(instances: usize, misses: usize, nested: usize, seed: u64) -> Result<Vec<ScoredFrame>> {
    if misses + nested > instances {
        return Err(Error::Config(format!(
            "cannot inject {misses} misses and {nested} nested boxes into {instances} instances"
        )));
    }
    let mut rng = rng::stream(seed, 0xde7);
    let mut frames = Vec::new();
    let mut placed = 0;
    while placed < instances {
        let n = if instances - placed >= 2 && rng.gen_bool(0.15) { 2 } else { 1 };
        let truth: Vec<BBox> = (0..n)
            .map(|k| {
                let cx = 180.0 + 360.0 * k as f64 + rng.gen_range(-40.0..40.0);
                let cy = rng.gen_range(200.0..520.0);
                BBox::centred(cx, cy, rng.gen_range(120.0..170.0), rng.gen_range(120.0..170.0))
            })
            .collect();
        placed += n;
        frames.push(ScoredFrame {
            predicted: truth
                .iter()
                .map(|t| BBox::new(t.x + rng.gen_range(-5.0..5.0), t.y + rng.gen_range(-5.0..5.0), t.w, t.h))
                .collect(),
            truth,
        });
    }
    // Drop the first `misses` predictions in frame order, then nest spurious
    // boxes inside the following detected animals.
    let mut slots: Vec<(usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(f, fr)| (0..fr.truth.len()).map(move |k| (f, k)))
        .collect();
    let missed: Vec<(usize, usize)> = slots.drain(..misses).collect();
    for &(f, k) in missed.iter().rev() {
        frames[f].predicted.remove(k);
    }
    for &(f, k) in slots.iter().take(nested) {
        let t = frames[f].truth[k];
        let (cx, cy) = t.centre();
        frames[f].predicted.push(BBox::centred(cx, cy, t.w * 0.5, t.h * 0.5));
    }
    Ok(frames)
}

/// Synthetic detector output for the agent's current field of view: one box
/// per unrecovered target, centred in the target's subdivision cell with a
/// small seeded jitter that never crosses into a neighbouring cell.
pub fn render_detections(state: &EpisodeState, frame: &Frame, jitter: f64, rng: &mut SimRng) -> Vec<Detection> {
    let side = state.config.sense_side();
    let half = state.config.sense_half_width as isize;
    let cell = frame.width / side as f64;
    let box_side = cell * 0.7;
    let max_jitter = jitter.min((cell - box_side) / 2.0 - 1e-6).max(0.0);
    let mut out = Vec::new();
    for (id, t) in state.targets.iter().enumerate() {
        if t.recovered {
            continue;
        }
        let r = t.pos.row as isize - state.agent.row as isize + half;
        let c = t.pos.col as isize - state.agent.col as isize + half;
        if !(0..side as isize).contains(&r) || !(0..side as isize).contains(&c) {
            continue;
        }
        let mut offset = || {
            if max_jitter > 0.0 {
                rng.gen_range(-max_jitter..max_jitter)
            } else {
                0.0
            }
        };
        let cx = (c as f64 + 0.5) * cell + offset();
        let cy = (r as f64 + 0.5) * cell + offset();
        out.push(Detection {
            bbox: BBox::centred(cx, cy, box_side, box_side),
            confidence: 0.9,
            identity: Some(id),
        });
    }
    out
}

/// One frame of a serialised detection stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: Frame,
    pub detections: Vec<Detection>,
}

/// Writes one JSON object per frame.
pub fn write_detection_stream<W: Write>(mut out: W, frames: &[FrameRecord]) -> Result<()> {
    for f in frames {
        let line = serde_json::to_string(f).map_err(|e| Error::Dataset(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_detection_stream<R: BufRead>(input: R) -> Result<Vec<FrameRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Dataset(format!("detection stream line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

/// How an identity classifier's mistakes spread over the wrong classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConfusionSpread {
    Uniform,
    /// Wrong-class weight decays geometrically with cyclic class distance.
    Neighbour { decay: f64 },
}

/// Parametric per-frame identity classifier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub classes: usize,
    /// Probability that a frame's top score is the true class.
    pub accuracy: f64,
    pub spread: ConfusionSpread,
    pub seed: u64,
}

impl Default for ObservationModel {
    fn default() -> Self {
        ObservationModel {
            classes: 17,
            accuracy: 0.936,
            spread: ConfusionSpread::Uniform,
            seed: 0,
        }
    }
}

impl ObservationModel {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("identity model needs at least two classes".into()));
        }
        if !(self.accuracy > 0.0 && self.accuracy <= 1.0) {
            return Err(Error::Config(format!("accuracy {} not in (0, 1]", self.accuracy)));
        }
        if let ConfusionSpread::Neighbour { decay } = self.spread {
            if !(decay > 0.0 && decay.is_finite()) {
                return Err(Error::Config(format!("neighbour decay {decay} must be positive")));
            }
        }
        Ok(())
    }

    fn wrong_weights(&self, truth: usize) -> Vec<f64> {
        let k = self.classes;
        (0..k)
            .map(|j| {
                if j == truth {
                    return 0.0;
                }
                match self.spread {
                    ConfusionSpread::Uniform => 1.0,
                    ConfusionSpread::Neighbour { decay } => {
                        let d = (j + k - truth) % k;
                        decay.powi(d.min(k - d) as i32 - 1)
                    }
                }
            })
            .collect()
    }

    /// Row `t` holds the probability of each top-scoring class given truth `t`.
    pub fn confusion_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.classes)
            .map(|t| {
                let w = self.wrong_weights(t);
                let total: f64 = w.iter().sum();
                (0..self.classes)
                    .map(|j| {
                        if j == t {
                            self.accuracy
                        } else {
                            (1.0 - self.accuracy) * w[j] / total
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn observer(&self) -> Result<IdentityObserver> {
        self.validate()?;
        Ok(IdentityObserver {
            model: *self,
            rng: rng::stream(self.seed, 0x1d),
        })
    }
}

/// Seeded sampler of per-frame identity score vectors.
#[derive(Clone, Debug)]
pub struct IdentityObserver {
    model: ObservationModel,
    rng: SimRng,
}

impl IdentityObserver {
    /// Score vector (summing to 1) whose argmax is `true_class` with
    /// probability equal to the model accuracy. Logits of non-winning
    /// classes are standard normal; the winner leads by 0.25 + Exp(1).
    pub fn observe(&mut self, true_class: usize) -> Result<Vec<f64>> {
        let m = &self.model;
        if true_class >= m.classes {
            return Err(Error::Contract(format!(
                "class {true_class} outside {} identities",
                m.classes
            )));
        }
        let top = if self.rng.gen::<f64>() < m.accuracy {
            true_class
        } else {
            let w = m.wrong_weights(true_class);
            let total: f64 = w.iter().sum();
            let mut u = self.rng.gen::<f64>() * total;
            let mut pick = if true_class == 0 { 1 } else { 0 };
            for (j, wj) in w.iter().enumerate() {
                if *wj == 0.0 {
                    continue;
                }
                pick = j;
                if u < *wj {
                    break;
                }
                u -= wj;
            }
            pick
        };
        let mut logits: Vec<f64> = (0..m.classes).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        let gap = 0.25 + Exp::new(1.0).expect("positive rate").sample(&mut self.rng);
        let rival = logits
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != top)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        logits[top] = rival + gap;
        Ok(softmax(&logits))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / sum).collect()
}

/// Probability vector over identities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityBelief(pub Vec<f64>);

impl IdentityBelief {
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Smallest score admitted into the log-domain sum.
const SCORE_FLOOR: f64 = 1e-300;

/// Fuses per-frame identity scores under a uniform prior by summing log
/// scores and renormalising. Returns the running belief after each frame;
/// the last entry is the fused identity.
pub fn fuse_identity(scores: &[Vec<f64>]) -> Result<Vec<IdentityBelief>> {
    let Some(first) = scores.first() else {
        return Err(Error::Observation("no frames to fuse".into()));
    };
    let k = first.len();
    if k == 0 {
        return Err(Error::Observation("empty score vector".into()));
    }
    let mut acc = vec![0.0; k];
    let mut out = Vec::with_capacity(scores.len());
    for (i, frame) in scores.iter().enumerate() {
        if frame.len() != k {
            return Err(Error::Observation(format!(
                "frame {i} has {} scores, expected {k}",
                frame.len()
            )));
        }
        if frame.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Observation(format!("frame {i} has a non-finite or negative score")));
        }
        let total: f64 = frame.iter().sum();
        if total <= 0.0 {
            return Err(Error::Observation(format!("frame {i} scores are all zero")));
        }
        for (a, v) in acc.iter_mut().zip(frame) {
            *a += (v / total).max(SCORE_FLOOR).ln();
        }
        out.push(IdentityBelief(softmax(&acc)));
    }
    Ok(out)
}

/// Outcome of a simulated identification run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionStats {
    pub tracklets: usize,
    pub frames: usize,
    /// Fraction of individual frames whose top score is the true identity.
    pub single_frame_accuracy: f64,
    /// Fraction of tracklets whose fused identity is the true one.
    pub fused_accuracy: f64,
}

/// Simulates `tracklets` tracklets of `frames` frames each; tracklet `i`
/// shows identity `i mod classes`. The belief trajectories of the first
/// `keep` tracklets are returned with their true class.
pub fn simulate_fusion(
    model: &ObservationModel,
    tracklets: usize,
    frames: usize,
    keep: usize,
) -> Result<(FusionStats, Vec<(usize, Vec<IdentityBelief>)>)> {
    if tracklets == 0 || frames == 0 {
        return Err(Error::Config("need at least one tracklet and one frame".into()));
    }
    let mut observer = model.observer()?;
    let mut single_hits = 0usize;
    let mut fused_hits = 0usize;
    let mut kept = Vec::new();
    for i in 0..tracklets {
        let truth = i % model.classes;
        let scores = (0..frames).map(|_| observer.observe(truth)).collect::<Result<Vec<_>>>()?;
        single_hits += scores.iter().filter(|s| IdentityBelief((*s).clone()).argmax() == truth).count();
        let beliefs = fuse_identity(&scores)?;
        if beliefs.last().map(IdentityBelief::argmax) == Some(truth) {
            fused_hits += 1;
        }
        if i < keep {
            kept.push((truth, beliefs));
        }
    }
    Ok((
        FusionStats {
            tracklets,
            frames,
            single_frame_accuracy: single_hits as f64 / (tracklets * frames) as f64,
            fused_accuracy: fused_hits as f64 / tracklets as f64,
        },
        kept,
    ))
}

/// Writes belief trajectories as CSV: one row per (tracklet, frame) with
/// the true class, current fused argmax, belief in the true class and the
/// full distribution.
pub fn write_belief_csv<W: Write>(mut out: W, trajectories: &[(usize, Vec<IdentityBelief>)]) -> Result<()> {
    let k = trajectories
        .iter()
        .flat_map(|(_, t)| t.first())
        .map(|b| b.0.len())
        .next()
        .unwrap_or(0);
    let classes: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
    writeln!(out, "tracklet,frame,true_class,argmax,p_true,{}", classes.join(","))?;
    for (tid, (truth, traj)) in trajectories.iter().enumerate() {
        for (f, b) in traj.iter().enumerate() {
            let probs: Vec<String> = b.0.iter().map(|p| format!("{p:.6}")).collect();
            writeln!(
                out,
                "{tid},{f},{truth},{},{:.6},{}",
                b.argmax(),
                b.0.get(*truth).copied().unwrap_or(0.0),
                probs.join(",")
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::EpisodeConfig;

    fn det(cx: f64, cy: f64) -> Detection {
        Detection {
            bbox: BBox::centred(cx, cy, 100.0, 100.0),
            confidence: 0.8,
            identity: None,
        }
    }

    fn frame() -> Frame {
        Frame::new(0, GridPos::new(0, 0))
    }

    #[test]
    fn grid_abstraction_examples() {
        let m = abstract_to_grid(&[det(360.0, 360.0)], &frame());
        assert!(m.get(2, 2));
        assert_eq!(m.count(), 1);
        assert!(abstract_to_grid(&[], &frame()).is_empty());
        let m = abstract_to_grid(&[det(144.0, 10.0)], &frame());
        assert!(m.get(0, 1));
        let m = abstract_to_grid(&[det(720.0, 720.0)], &frame());
        assert!(m.get(4, 4));
    }

    #[test]
    fn tracklet_threshold() {
        let cfg = TrackletConfig::default();
        let all: Vec<Vec<Detection>> = (0..5).map(|_| vec![det(70.0, 70.0)]).collect();
        let t = accumulate_tracklets(&all, &frame(), &cfg).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].len(), 5);
        assert_eq!(t[0].cell, (0, 0));

        let sparse: Vec<Vec<Detection>> = (0..5).map(|i| if i < 2 { vec![det(70.0, 70.0)] } else { vec![] }).collect();
        assert!(accumulate_tracklets(&sparse, &frame(), &cfg).unwrap().is_empty());

        let two: Vec<Vec<Detection>> = (0..5).map(|_| vec![det(70.0, 70.0), det(500.0, 600.0)]).collect();
        let t = accumulate_tracklets(&two, &frame(), &cfg).unwrap();
        assert_eq!(t.len(), 2);
        assert!(t.len() <= cfg.window);

        assert!(accumulate_tracklets(&two[..3], &frame(), &cfg).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &BBox::new(1.0, 0.0, 2.0, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn matching_examples() {
        let truth = vec![BBox::new(0.0, 0.0, 100.0, 100.0), BBox::new(300.0, 300.0, 100.0, 100.0)];
        let s = match_and_score(&truth, &truth, 0.5);
        assert_eq!(s, MatchCounts { tp: 2, fp: 0, fn_: 0 });
        assert_eq!(s.accuracy(), 1.0);
        let mut with_nested = truth.clone();
        with_nested.extend(truth.iter().map(|t| BBox::new(t.x + 25.0, t.y + 25.0, 50.0, 50.0)));
        let s = match_and_score(&truth, &with_nested, 0.5);
        assert_eq!(s, MatchCounts { tp: 2, fp: 2, fn_: 0 });
    }

    #[test]
    fn nested_box_cannot_steal_a_match() {
        let truth = vec![BBox::new(0.0, 0.0, 100.0, 100.0)];
        let preds = vec![BBox::new(10.0, 10.0, 80.0, 80.0), BBox::new(2.0, 2.0, 100.0, 100.0)];
        let s = match_and_score(&truth, &preds, 0.5);
        assert_eq!(s, MatchCounts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn confusion_rows_sum_to_one() {
        for spread in [ConfusionSpread::Uniform, ConfusionSpread::Neighbour { decay: 0.5 }] {
            let m = ObservationModel {
                spread,
                ..ObservationModel::default()
            };
            for row in m.confusion_matrix() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perfect_classifier_is_always_right() {
        let mut obs = ObservationModel {
            accuracy: 1.0,
            ..ObservationModel::default()
        }
        .observer()
        .unwrap();
        for i in 0..1000 {
            let s = obs.observe(i % 17).unwrap();
            assert_eq!(IdentityBelief(s.clone()).argmax(), i % 17);
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(obs.observe(17).is_err());
    }

    #[test]
    fn single_frame_fusion_is_identity() {
        let s = vec![0.2, 0.5, 0.3];
        let b = fuse_identity(&[s.clone()]).unwrap();
        for (a, e) in b[0].0.iter().zip(&s) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_rejects_bad_frames() {
        assert!(matches!(fuse_identity(&[]), Err(Error::Observation(_))));
        assert!(matches!(fuse_identity(&[vec![0.0, 0.0]]), Err(Error::Observation(_))));
        assert!(matches!(fuse_identity(&[vec![f64::NAN, 1.0]]), Err(Error::Observation(_))));
    }

    #[test]
    fn rendered_detections_agree_with_sensing() {
        let cfg = EpisodeConfig::default();
        let cells = [GridPos::new(3, 3), GridPos::new(5, 6), GridPos::new(1, 2), GridPos::new(10, 10)];
        let s = EpisodeState::with_targets(&cfg, GridPos::new(3, 4), &cells).unwrap();
        let f = Frame::new(0, s.agent);
        let mut rng = rng::seeded(1);
        let dets = render_detections(&s, &f, 20.0, &mut rng);
        assert_eq!(abstract_to_grid(&dets, &f), s.sense());
    }

    #[test]
    fn detection_stream_round_trip() {
        let frames = vec![FrameRecord {
            frame: Frame::new(3, GridPos::new(1, 2)),
            detections: vec![det(100.0, 200.0)],
        }];
        let mut buf = Vec::new();
        write_detection_stream(&mut buf, &frames).unwrap();
        assert_eq!(read_detection_stream(buf.as_slice()).unwrap(), frames);
    }
}
