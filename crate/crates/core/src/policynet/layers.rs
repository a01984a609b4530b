//! The two layer types the navigation network needs: a dense layer and a
//! 3×3 same-padded convolution over binary planes.

use ndarray::{Array1, Array2, Array4, ArrayView2, Axis};
use rand::Rng;

use crate::rng::SimRng;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// (out, in)
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform weights in ±`gain`/√fan_in, zero bias.
    pub fn init(inputs: usize, outputs: usize, gain: f64, rng: &mut SimRng) -> Self {
        let limit = gain / (inputs as f64).sqrt();
        Dense {
            weight: Array2::from_shape_fn((outputs, inputs), |_| rng.gen_range(-limit..limit)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    /// (batch, in) → (batch, out)
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns ∂L/∂x unless
    /// `need_input_grad` is false.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut Dense,
        need_input_grad: bool,
    ) -> Option<Array2<f64>> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        need_input_grad.then(|| dy.dot(&self.weight))
    }
}

/// 3×3 convolution, stride 1, zero padding, over binary input planes given
/// as the flat indices of their set cells. It is always an input layer, so
/// it never propagates gradients further down.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv3x3 {
    /// (out_maps, in_planes, 3, 3)
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

impl Conv3x3 {
    pub fn zeros(in_planes: usize, out_maps: usize) -> Self {
        Conv3x3 {
            weight: Array4::zeros((out_maps, in_planes, 3, 3)),
            bias: Array1::zeros(out_maps),
        }
    }

    pub fn init(in_planes: usize, out_maps: usize, gain: f64, rng: &mut SimRng) -> Self {
        let limit = gain / ((in_planes * 9) as f64).sqrt();
        Conv3x3 {
            weight: Array4::from_shape_fn((out_maps, in_planes, 3, 3), |_| {
                rng.gen_range(-limit..limit)
            }),
            bias: Array1::zeros(out_maps),
        }
    }

    pub fn in_planes(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_maps(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Writes pre-activations for one sample into `out`, laid out as
    /// (map, row, col) flattened. `ones` holds flat (plane, row, col) indices.
    pub fn forward_into(&self, ones: &[u32], height: usize, width: usize, out: &mut [f64]) {
        let maps = self.out_maps();
        let area = height * width;
        debug_assert_eq!(out.len(), maps * area);
        for (o, chunk) in out.chunks_mut(area).enumerate() {
            chunk.fill(self.bias[o]);
        }
        let w = self.weight.as_slice().expect("standard layout");
        let planes = self.in_planes();
        for &idx in ones {
            let idx = idx as usize;
            let (c, y, x) = (idx / area, idx % area / width, idx % width);
            for ky in 0..3 {
                let Some(i) = (y + 1).checked_sub(ky).filter(|i| *i < height) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(j) = (x + 1).checked_sub(kx).filter(|j| *j < width) else {
                        continue;
                    };
                    let cell = i * width + j;
                    for o in 0..maps {
                        out[o * area + cell] += w[((o * planes + c) * 3 + ky) * 3 + kx];
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients for one sample given ∂L/∂out.
    pub fn backward_into(&self, ones: &[u32], height: usize, width: usize, dout: &[f64], grad: &mut Conv3x3) {
        let maps = self.out_maps();
        let planes = self.in_planes();
        let area = height * width;
        for o in 0..maps {
            grad.bias[o] += dout[o * area..(o + 1) * area].iter().sum::<f64>();
        }
        let gw = grad.weight.as_slice_mut().expect("standard layout");
        for &idx in ones {
            let idx = idx as usize;
            let (c, y, x) = (idx / area, idx % area / width, idx % width);
            for ky in 0..3 {
                let Some(i) = (y + 1).checked_sub(ky).filter(|i| *i < height) else {
                    continue;
                };
                for kx in 0..3 {
                    let Some(j) = (x + 1).checked_sub(kx).filter(|j| *j < width) else {
                        continue;
                    };
                    let cell = i * width + j;
                    for o in 0..maps {
                        gw[((o * planes + c) * 3 + ky) * 3 + kx] += dout[o * area + cell];
                    }
                }
            }
        }
    }
}

pub fn relu_inplace(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes gradient entries where the forward activation was clamped.
pub fn relu_mask(dy: &mut Array2<f64>, activation: &Array2<f64>) {
    ndarray::Zip::from(dy).and(activation).for_each(|d, &a| {
        if a <= 0.0 {
            *d = 0.0;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense reference convolution over a 0/1 input volume.
    fn conv_reference(conv: &Conv3x3, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (maps, planes) = (conv.out_maps(), conv.in_planes());
        let mut out = vec![0.0; maps * h * w];
        for o in 0..maps {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = conv.bias[o];
                    for c in 0..planes {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (y, x) = (i as isize + ky as isize - 1, j as isize + kx as isize - 1);
                                if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                    acc += conv.weight[[o, c, ky, kx]] * input[(c * h + y as usize) * w + x as usize];
                                }
                            }
                        }
                    }
                    out[(o * h + i) * w + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn sparse_conv_matches_dense_reference() {
        let mut rng = crate::rng::seeded(3);
        let mut conv = Conv3x3::init(2, 3, 1.0, &mut rng);
        conv.bias = Array1::from(vec![0.1, -0.2, 0.3]);
        let (h, w) = (4, 5);
        let input: Vec<f64> = (0..2 * h * w).map(|_| f64::from(rng.gen_bool(0.3))).collect();
        let ones: Vec<u32> = input.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i as u32).collect();
        let mut out = vec![0.0; 3 * h * w];
        conv.forward_into(&ones, h, w, &mut out);
        let expect = conv_reference(&conv, &input, h, w);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
