use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::layers::{relu_inplace, relu_mask, Conv3x3, Dense};
use crate::error::{Error, Result};
use crate::gridworld::{MemoryMap, Plane, SensoryMap};
use crate::oracle::LabeledSample;
use crate::rng;

pub const ACTIONS: usize = 4;

/// Layer sizes of the dual-stream network.
///
/// Tactical stream: dense layers over the flattened sensory window.
/// Strategic stream: one 3×3 convolution over the memory planes, then dense
/// layers over the flattened feature maps. Head: dense layers over the
/// concatenated stream outputs, ending in four logits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub grid_width: usize,
    pub grid_height: usize,
    pub sense_side: usize,
    pub planes: usize,
    pub tactical: Vec<usize>,
    pub conv_maps: usize,
    pub strategic: Vec<usize>,
    pub head: Vec<usize>,
}

impl NetworkShape {
    /// Default sizes: 25→64→32 tactical, conv 6→8 then 8·W·H→64 strategic,
    /// 96→64→4 head.
    pub fn for_grid(width: usize, height: usize, sense_side: usize) -> Self {
        NetworkShape {
            grid_width: width,
            grid_height: height,
            sense_side,
            planes: Plane::COUNT,
            tactical: vec![64, 32],
            conv_maps: 8,
            strategic: vec![64],
            head: vec![64],
        }
    }

    pub fn area(&self) -> usize {
        self.grid_width * self.grid_height
    }

    pub fn validate(&self) -> Result<()> {
        let zero = |v: &[usize]| v.is_empty() || v.contains(&0);
        if self.area() == 0 || self.sense_side == 0 || self.planes == 0 || self.conv_maps == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        if zero(&self.tactical) || zero(&self.strategic) || self.head.contains(&0) {
            return Err(Error::Config(
                "each stream needs at least one non-empty dense layer".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layers {
    pub tactical: Vec<Dense>,
    pub conv: Conv3x3,
    pub strategic: Vec<Dense>,
    pub head: Vec<Dense>,
}

fn dense_stack(input: usize, sizes: &[usize], mut make: impl FnMut(usize, usize, bool) -> Dense) -> Vec<Dense> {
    let mut prev = input;
    let last = sizes.len().saturating_sub(1);
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let d = make(prev, n, i == last);
            prev = n;
            d
        })
        .collect()
}

type NamedTensor<'a> = (String, Vec<usize>, &'a [f64]);

fn push_dense<'a>(out: &mut Vec<NamedTensor<'a>>, prefix: &str, layers: &'a [Dense]) {
    for (i, d) in layers.iter().enumerate() {
        out.push((format!("{prefix}.{i}.weight"), d.weight.shape().to_vec(), d.weight.as_slice().expect("standard layout")));
        out.push((format!("{prefix}.{i}.bias"), d.bias.shape().to_vec(), d.bias.as_slice().expect("standard layout")));
    }
}

impl Layers {
    fn build(shape: &NetworkShape, mut dense: impl FnMut(usize, usize, bool) -> Dense, conv: Conv3x3) -> Self {
        let tactical = dense_stack(shape.sense_side * shape.sense_side, &shape.tactical, |i, o, _| dense(i, o, false));
        let strategic = dense_stack(shape.conv_maps * shape.area(), &shape.strategic, |i, o, _| dense(i, o, false));
        let concat = shape.tactical.last().copied().unwrap_or(0) + shape.strategic.last().copied().unwrap_or(0);
        let mut head_sizes = shape.head.clone();
        head_sizes.push(ACTIONS);
        let head = dense_stack(concat, &head_sizes, &mut dense);
        Layers {
            tactical,
            conv,
            strategic,
            head,
        }
    }

    pub fn zeros(shape: &NetworkShape) -> Self {
        Layers::build(shape, |i, o, _| Dense::zeros(i, o), Conv3x3::zeros(shape.planes, shape.conv_maps))
    }

    /// Seeded fan-in-scaled uniform initialisation, zero biases.
    pub fn init(shape: &NetworkShape, seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0x6e6e);
        let he = 6f64.sqrt();
        let conv = Conv3x3::init(shape.planes, shape.conv_maps, he, &mut rng);
        Layers::build(
            shape,
            |i, o, output| Dense::init(i, o, if output { 1.0 } else { he }, &mut rng),
            conv,
        )
    }

    /// Named tensors with their shapes, in a fixed order.
    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        let mut out = Vec::new();
        push_dense(&mut out, "tactical", &self.tactical);
        out.push(("strategic.conv.weight".into(), self.conv.weight.shape().to_vec(), self.conv.weight.as_slice().expect("standard layout")));
        out.push(("strategic.conv.bias".into(), self.conv.bias.shape().to_vec(), self.conv.bias.as_slice().expect("standard layout")));
        push_dense(&mut out, "strategic", &self.strategic);
        push_dense(&mut out, "head", &self.head);
        out
    }

    /// Mutable views in the same order as [`Layers::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for d in self.tactical.iter_mut() {
            out.push(d.weight.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.conv.weight.as_slice_mut().expect("standard layout"));
        out.push(self.conv.bias.as_slice_mut().expect("standard layout"));
        for d in self.strategic.iter_mut().chain(self.head.iter_mut()) {
            out.push(d.weight.as_slice_mut().expect("standard layout"));
            out.push(d.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }
}

/// Trainable weights plus the momentum velocity carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub shape: NetworkShape,
    pub weights: Layers,
    pub velocity: Layers,
}

/// Network inputs for a batch: flattened sensory windows and the set cells
/// of each memory map as flat plane-major indices.
#[derive(Clone, Debug)]
pub struct Batch {
    pub sensory: Array2<f64>,
    pub memory: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.memory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.memory.is_empty()
    }

    pub fn from_samples(samples: &[&LabeledSample]) -> Self {
        let side2 = samples.first().map_or(0, |s| s.sensory.cells().len());
        let mut sensory = Array2::zeros((samples.len(), side2));
        for (i, s) in samples.iter().enumerate() {
            for (j, b) in s.sensory.cells().iter().enumerate() {
                sensory[[i, j]] = f64::from(u8::from(*b));
            }
        }
        Batch {
            sensory,
            memory: samples.iter().map(|s| memory_ones(&s.memory)).collect(),
            labels: samples.iter().map(|s| s.label.index()).collect(),
        }
    }

    pub fn single(sensory: &SensoryMap, memory: &MemoryMap) -> Self {
        let cells = sensory.cells();
        Batch {
            sensory: Array2::from_shape_fn((1, cells.len()), |(_, j)| f64::from(u8::from(cells[j]))),
            memory: vec![memory_ones(memory)],
            labels: vec![],
        }
    }
}

pub fn memory_ones(memory: &MemoryMap) -> Vec<u32> {
    memory.ones().map(|i| i as u32).collect()
}

/// Activations kept for back-propagation.
struct Trace {
    /// Input followed by each layer's post-ReLU output.
    tactical: Vec<Array2<f64>>,
    conv: Array2<f64>,
    strategic: Vec<Array2<f64>>,
    /// Concatenated input followed by each hidden layer's output.
    head: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

impl NetworkParams {
    pub fn new(shape: NetworkShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        Ok(NetworkParams {
            weights: Layers::init(&shape, seed),
            velocity: Layers::zeros(&shape),
            shape,
        })
    }

    pub fn zeros(shape: NetworkShape) -> Result<Self> {
        shape.validate()?;
        Ok(NetworkParams {
            weights: Layers::zeros(&shape),
            velocity: Layers::zeros(&shape),
            shape,
        })
    }

    pub fn check_inputs(&self, sensory_side: usize, width: usize, height: usize) -> Result<()> {
        if sensory_side != self.shape.sense_side || width != self.shape.grid_width || height != self.shape.grid_height {
            return Err(Error::Contract(format!(
                "network expects a {s}x{s} window over a {}x{} grid, got {sensory_side}x{sensory_side} over {width}x{height}",
                self.shape.grid_width,
                self.shape.grid_height,
                s = self.shape.sense_side
            )));
        }
        Ok(())
    }

    fn run(&self, batch: &Batch) -> Trace {
        let relu_stack = |layers: &[Dense], input: Array2<f64>| {
            let mut acts = vec![input];
            for d in layers {
                let mut y = d.forward(acts.last().expect("non-empty").view());
                relu_inplace(&mut y);
                acts.push(y);
            }
            acts
        };
        let tactical = relu_stack(&self.weights.tactical, batch.sensory.clone());

        let (h, w) = (self.shape.grid_height, self.shape.grid_width);
        let width = self.shape.conv_maps * h * w;
        let mut conv = Array2::zeros((batch.len(), width));
        for (b, ones) in batch.memory.iter().enumerate() {
            let mut row = conv.row_mut(b);
            let out = row.as_slice_mut().expect("contiguous row");
            self.weights.conv.forward_into(ones, h, w, out);
        }
        relu_inplace(&mut conv);
        let strategic = relu_stack(&self.weights.strategic, conv.clone());

        let t = tactical.last().expect("non-empty");
        let st = strategic.last().expect("non-empty");
        let concat = ndarray::concatenate(Axis(1), &[t.view(), st.view()]).expect("same batch size");
        let (hidden, output) = self.weights.head.split_at(self.weights.head.len() - 1);
        let head = relu_stack(hidden, concat);
        let logits = output[0].forward(head.last().expect("non-empty").view());
        Trace {
            tactical,
            conv,
            strategic,
            head,
            logits,
        }
    }

    /// Pre-softmax scores, (batch, 4).
    pub fn logits(&self, batch: &Batch) -> Array2<f64> {
        self.run(batch).logits
    }

    /// Softmax action likelihoods, (batch, 4).
    pub fn predict(&self, batch: &Batch) -> Array2<f64> {
        softmax_rows(&self.logits(batch))
    }

    /// Mean cross-entropy against `batch.labels`.
    pub fn loss(&self, batch: &Batch) -> f64 {
        cross_entropy(&self.predict(batch), &batch.labels)
    }

    /// Mean cross-entropy and its gradient with respect to every weight.
    pub fn gradients(&self, batch: &Batch) -> Result<(f64, Layers)> {
        if batch.is_empty() || batch.labels.len() != batch.len() {
            return Err(Error::Contract("gradient needs a non-empty labelled batch".into()));
        }
        let trace = self.run(batch);
        let probs = softmax_rows(&trace.logits);
        let loss = cross_entropy(&probs, &batch.labels);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {loss}")));
        }
        let n = batch.len() as f64;
        let mut delta = probs;
        for (i, &l) in batch.labels.iter().enumerate() {
            delta[[i, l]] -= 1.0;
        }
        delta /= n;

        let mut grad = Layers::zeros(&self.shape);
        let w = &self.weights;

        let last = w.head.len() - 1;
        let mut d = w.head[last]
            .backward(trace.head[last].view(), delta.view(), &mut grad.head[last], true)
            .expect("requested");
        for i in (0..last).rev() {
            relu_mask(&mut d, &trace.head[i + 1]);
            d = w.head[i]
                .backward(trace.head[i].view(), d.view(), &mut grad.head[i], true)
                .expect("requested");
        }
        let tw = trace.tactical.last().expect("non-empty").ncols();
        let d_tactical = d.slice(s![.., ..tw]).to_owned();
        let d_strategic = d.slice(s![.., tw..]).to_owned();

        backprop_stack(&w.tactical, &trace.tactical, d_tactical, &mut grad.tactical, false);
        let mut d_conv = backprop_stack(&w.strategic, &trace.strategic, d_strategic, &mut grad.strategic, true)
            .expect("requested");
        relu_mask(&mut d_conv, &trace.conv);
        let (h, wd) = (self.shape.grid_height, self.shape.grid_width);
        for (b, ones) in batch.memory.iter().enumerate() {
            let row = d_conv.row(b);
            w.conv.backward_into(ones, h, wd, row.as_slice().expect("contiguous row"), &mut grad.conv);
        }
        Ok((loss, grad))
    }
}

/// Back-propagates through a ReLU dense stack whose recorded activations are
/// `acts` (input first). Returns ∂L/∂input when requested.
fn backprop_stack(
    layers: &[Dense],
    acts: &[Array2<f64>],
    mut d: Array2<f64>,
    grads: &mut [Dense],
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    for i in (0..layers.len()).rev() {
        relu_mask(&mut d, &acts[i + 1]);
        let want = i > 0 || need_input_grad;
        match layers[i].backward(acts[i].view(), d.view(), &mut grads[i], want) {
            Some(next) => d = next,
            None => return None,
        }
    }
    Some(d)
}

pub fn cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len().max(1) as f64;
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| -probs[[i, l]].ln())
        .sum::<f64>()
        / n
}
