//! Small convolutional noise predictor with hand-written gradients.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ops::{self, Shape};
use super::Denoiser;
use crate::diffusion::LossNorm;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::volume::{Boundary, Plane, Slice2D};

/// How the noise level enters the network as constant input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaEmbedding {
    /// One channel holding `gamma`.
    #[default]
    Scalar,
    /// `gamma`, `sqrt(gamma)`, `sqrt(1 - gamma)` and a scaled log-SNR.
    Features,
}

impl GammaEmbedding {
    pub fn channels(self) -> usize {
        match self {
            GammaEmbedding::Scalar => 1,
            GammaEmbedding::Features => 4,
        }
    }

    pub fn features(self, gamma: f64) -> Vec<f64> {
        match self {
            GammaEmbedding::Scalar => vec![gamma],
            GammaEmbedding::Features => {
                let g = gamma.clamp(1e-12, 1.0 - 1e-12);
                vec![
                    gamma,
                    gamma.sqrt(),
                    (1.0 - gamma).max(0.0).sqrt(),
                    (g / (1.0 - g)).ln() / 8.0,
                ]
            }
        }
    }
}

/// What the last layer's output `F` stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Parameterization {
    /// `eps_hat = F`.
    #[default]
    Epsilon,
    /// `eps_hat = sqrt(1 - gamma) y_t + sqrt(gamma) F`, i.e. `F` predicts
    /// `v = sqrt(gamma) eps - sqrt(1 - gamma) y0`.
    Velocity,
}

impl Parameterization {
    /// `(skip, scale)` with `eps_hat = skip * y_t + scale * F`.
    #[inline]
    fn coefficients(self, gamma: f64) -> (f64, f64) {
        match self {
            Parameterization::Epsilon => (0.0, 1.0),
            Parameterization::Velocity => ((1.0 - gamma).max(0.0).sqrt(), gamma.sqrt()),
        }
    }
}

/// Architecture of a [`ConvDenoiser`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerSpec {
    /// Number of convolution layers (at least one).
    pub depth: usize,
    /// Channels of every hidden layer.
    pub hidden: usize,
    /// Odd square kernel size.
    pub kernel: usize,
    pub padding: Boundary,
    pub gamma_embedding: GammaEmbedding,
    pub parameterization: Parameterization,
}

impl Default for LayerSpec {
    fn default() -> Self {
        LayerSpec {
            depth: 4,
            hidden: 8,
            kernel: 3,
            padding: Boundary::Replicate,
            gamma_embedding: GammaEmbedding::Scalar,
            parameterization: Parameterization::Epsilon,
        }
    }
}

impl LayerSpec {
    /// Default layers with feature embedding and the velocity output,
    /// which converge within a small training budget.
    pub fn desk() -> Self {
        LayerSpec {
            gamma_embedding: GammaEmbedding::Features,
            parameterization: Parameterization::Velocity,
            ..LayerSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.hidden == 0 || self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "layer spec needs depth >= 1, hidden >= 1 and an odd kernel: {self:?}"
            )));
        }
        Ok(())
    }

    /// Input channels: the condition, the noisy image, then the noise level.
    pub fn input_channels(&self) -> usize {
        2 + self.gamma_embedding.channels()
    }

    /// `(in, out)` channels per layer.
    pub fn layer_channels(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let cin = if l == 0 { self.input_channels() } else { self.hidden };
                let cout = if l + 1 == self.depth { 1 } else { self.hidden };
                (cin, cout)
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_channels()
            .iter()
            .map(|&(i, o)| o * i * self.kernel * self.kernel + o)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    cin: usize,
    cout: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Convolutional noise predictor: `depth` same-size convolutions with SiLU
/// between them. The condition and noisy image are stacked as input
/// channels together with constant noise-level channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvDenoiser {
    spec: LayerSpec,
    plane: Plane,
    layers: Vec<Layer>,
}

/// Values kept from the forward pass for backpropagation.
struct Trace {
    shape: (usize, usize),
    /// Padded input of every layer.
    padded: Vec<Vec<f64>>,
    /// Pre-activations of every hidden layer.
    pre: Vec<Vec<f64>>,
    scale: f64,
}

impl ConvDenoiser {
    /// Randomly initialised network (scaled normal weights, zero biases).
    /// The last layer starts at zero.
    pub fn new(spec: LayerSpec, plane: Plane, seed: u64) -> Result<Self> {
        spec.validate()?;
        let root = RngStream::new(seed).derive(crate::rng::tags::WEIGHTS);
        let k2 = spec.kernel * spec.kernel;
        let layers = spec
            .layer_channels()
            .into_iter()
            .enumerate()
            .map(|(l, (cin, cout))| {
                let std = if l + 1 == spec.depth {
                    0.0
                } else {
                    (2.0 / (cin * k2) as f64).sqrt()
                };
                let mut rng = root.derive(l as u64).rng();
                let weights = (0..cout * cin * k2)
                    .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .collect();
                Layer {
                    cin,
                    cout,
                    weights,
                    bias: vec![0.0; cout],
                }
            })
            .collect();
        Ok(ConvDenoiser { spec, plane, layers })
    }

    /// Rebuild from a flat parameter vector (see [`ConvDenoiser::parameters`]).
    pub fn from_parameters(spec: LayerSpec, plane: Plane, params: &[f64]) -> Result<Self> {
        let mut net = ConvDenoiser::new(spec, plane, 0)?;
        net.set_parameters(params)?;
        Ok(net)
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn trained_plane(&self) -> Plane {
        self.plane
    }

    pub fn parameter_count(&self) -> usize {
        self.spec.parameter_count()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a network of {}",
                params.len(),
                self.parameter_count()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameter".into()));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Apply `f` to every parameter together with its matching gradient entry.
    pub fn update_parameters(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut i = 0;
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                f(i, w);
                i += 1;
            }
        }
    }

    /// Zero the weights and bias of the output layer.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias.fill(0.0);
    }

    fn input_stack(&self, x: &Slice2D, y_t: &Slice2D, gamma: f64) -> Vec<f64> {
        let n = x.len();
        let feats = self.spec.gamma_embedding.features(gamma);
        let mut input = Vec::with_capacity(n * (2 + feats.len()));
        input.extend_from_slice(&x.data);
        input.extend_from_slice(&y_t.data);
        for f in feats {
            input.extend(std::iter::repeat_n(f, n));
        }
        input
    }

    fn run(&self, x: &Slice2D, y_t: &Slice2D, gamma: f64, keep: bool) -> Result<(Vec<f64>, Option<Trace>)> {
        x.check_shape(y_t)?;
        let (w, h) = x.shape();
        let k = self.spec.kernel;
        let r = k / 2;
        let mut act = self.input_stack(x, y_t, gamma);
        let mut padded_all = Vec::new();
        let mut pre_all = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let shape = Shape {
                channels: layer.cin,
                height: h,
                width: w,
            };
            let padded = ops::pad(&act, shape, r, self.spec.padding);
            let z = ops::conv_forward(&padded, shape, &layer.weights, &layer.bias, layer.cout, k);
            if keep {
                padded_all.push(padded);
            }
            if l + 1 < self.layers.len() {
                act = z.iter().map(|&v| ops::silu(v)).collect();
                if keep {
                    pre_all.push(z);
                }
            } else {
                act = z;
            }
        }
        let (skip, scale) = self.spec.parameterization.coefficients(gamma);
        let out: Vec<f64> = act.iter().zip(&y_t.data).map(|(&f, &y)| skip * y + scale * f).collect();
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network output at pixel {i}")));
        }
        let trace = keep.then(|| Trace {
            shape: (w, h),
            padded: padded_all,
            pre: pre_all,
            scale,
        });
        Ok((out, trace))
    }

    /// Forward pass for one slice.
    pub fn forward(&self, x: &Slice2D, y_t: &Slice2D, gamma: f64) -> Result<Slice2D> {
        let (out, _) = self.run(x, y_t, gamma, false)?;
        Ok(y_t.with_data(out))
    }

    /// Backpropagate `d loss / d eps_hat` through a recorded forward pass.
    fn backward(&self, trace: &Trace, grad_out: &[f64]) -> Vec<f64> {
        let (w, h) = trace.shape;
        let k = self.spec.kernel;
        let r = k / 2;
        let mut grad: Vec<f64> = grad_out.iter().map(|g| g * trace.scale).collect();
        let mut per_layer: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let shape = Shape {
                channels: layer.cin,
                height: h,
                width: w,
            };
            let need_input = l > 0;
            let (d_pad, d_w, d_b) = ops::conv_backward(
                &trace.padded[l],
                shape,
                &layer.weights,
                &grad,
                layer.cout,
                k,
                need_input,
            );
            per_layer.push((d_w, d_b));
            if need_input {
                let d_act = ops::unpad(&d_pad, shape, r, self.spec.padding);
                grad = d_act
                    .iter()
                    .zip(&trace.pre[l - 1])
                    .map(|(&g, &z)| g * ops::silu_grad(z))
                    .collect();
            }
        }
        per_layer.reverse();
        let mut flat = Vec::with_capacity(self.parameter_count());
        for (d_w, d_b) in per_layer {
            flat.extend(d_w);
            flat.extend(d_b);
        }
        flat
    }

    /// Mean per-pixel `|eps_hat - eps|^l` and its gradient w.r.t. every
    /// parameter (layout of [`ConvDenoiser::parameters`]).
    pub fn loss_and_gradient(
        &self,
        x: &Slice2D,
        y_t: &Slice2D,
        gamma: f64,
        eps: &Slice2D,
        loss: LossNorm,
    ) -> Result<(f64, Vec<f64>)> {
        eps.check_shape(y_t)?;
        let (out, trace) = self.run(x, y_t, gamma, true)?;
        let n = out.len() as f64;
        let mut total = 0.0;
        let grad_out: Vec<f64> = out
            .iter()
            .zip(&eps.data)
            .map(|(&p, &e)| {
                let (v, s) = loss.value_and_slope(p - e);
                total += v;
                s / n
            })
            .collect();
        let grad = self.backward(&trace.unwrap(), &grad_out);
        Ok((total / n, grad))
    }
}

impl Denoiser for ConvDenoiser {
    fn predict(&self, x: &Slice2D, y_t: &Slice2D, gamma: f64) -> Result<Slice2D> {
        self.forward(x, y_t, gamma)
    }

    fn plane(&self) -> Option<Plane> {
        Some(self.plane)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Axis;

    fn slice(w: usize, h: usize, seed: u64) -> Slice2D {
        Slice2D::new(w, h, RngStream::new(seed).normals(w * h), Axis::Axial, 0).unwrap()
    }

    fn randomized(spec: LayerSpec, seed: u64) -> ConvDenoiser {
        let mut net = ConvDenoiser::new(spec, Plane::InPlane, seed).unwrap();
        let p: Vec<f64> = RngStream::new(seed + 100)
            .normals(net.parameter_count())
            .into_iter()
            .map(|v| 0.4 * v)
            .collect();
        net.set_parameters(&p).unwrap();
        net
    }

    #[test]
    fn parameter_count_formula() {
        let spec = LayerSpec::default();
        // 3 -> 8 -> 8 -> 8 -> 1 with 3x3 kernels
        let expected = (8 * 3 * 9 + 8) + 2 * (8 * 8 * 9 + 8) + (8 * 9 + 1);
        assert_eq!(spec.parameter_count(), expected);
        let net = ConvDenoiser::new(spec, Plane::InPlane, 1).unwrap();
        assert_eq!(net.parameters().len(), expected);
    }

    #[test]
    fn rejects_bad_spec_and_shapes() {
        let bad = LayerSpec {
            kernel: 2,
            ..LayerSpec::default()
        };
        assert!(ConvDenoiser::new(bad, Plane::InPlane, 0).is_err());
        let mut net = ConvDenoiser::new(LayerSpec::default(), Plane::InPlane, 0).unwrap();
        assert!(net.forward(&slice(4, 4, 1), &slice(4, 5, 2), 0.5).is_err());
        assert!(net.set_parameters(&[0.0; 3]).is_err());
    }

    #[test]
    fn zero_output_layer_gives_zero() {
        let mut net = randomized(LayerSpec::default(), 3);
        net.zero_output_layer();
        let out = net.forward(&slice(6, 5, 1), &slice(6, 5, 2), 0.3).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let net = randomized(LayerSpec::default(), 4);
        let (x, y) = (slice(7, 6, 1), slice(7, 6, 2));
        assert_eq!(net.forward(&x, &y, 0.6).unwrap(), net.forward(&x, &y, 0.6).unwrap());
    }

    #[test]
    fn periodic_padding_is_translation_equivariant() {
        let spec = LayerSpec {
            padding: Boundary::Periodic,
            gamma_embedding: GammaEmbedding::Features,
            ..LayerSpec::default()
        };
        let net = randomized(spec, 5);
        let (w, h) = (8, 6);
        let (x, y) = (slice(w, h, 1), slice(w, h, 2));
        let shift = |s: &Slice2D, du: usize, dv: usize| {
            let mut d = vec![0.0; w * h];
            for v in 0..h {
                for u in 0..w {
                    d[(u + du) % w + w * ((v + dv) % h)] = s.get(u, v);
                }
            }
            s.with_data(d)
        };
        let a = shift(&net.forward(&x, &y, 0.4).unwrap(), 3, 2);
        let b = net.forward(&shift(&x, 3, 2), &shift(&y, 3, 2), 0.4).unwrap();
        for (p, q) in a.data.iter().zip(&b.data) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn single_layer_matches_hand_convolution() {
        // One 3x3 layer, zero padding, gamma channel weights zero.
        let spec = LayerSpec {
            depth: 1,
            hidden: 1,
            kernel: 3,
            padding: Boundary::Zero,
            gamma_embedding: GammaEmbedding::Scalar,
            parameterization: Parameterization::Epsilon,
        };
        // x-kernel: centre 1, right neighbour 2. y-kernel: top-left 1. bias 0.5
        let mut params = vec![0.0; spec.parameter_count()];
        params[4] = 1.0;
        params[5] = 2.0;
        params[9] = 1.0;
        params[27] = 0.5;
        let net = ConvDenoiser::from_parameters(spec, Plane::InPlane, &params).unwrap();
        let x = Slice2D::new(3, 3, (1..=9).map(|v| v as f64).collect(), Axis::Axial, 0).unwrap();
        let y = Slice2D::new(
            3,
            3,
            vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0],
            Axis::Axial,
            0,
        )
        .unwrap();
        let out = net.forward(&x, &y, 0.7).unwrap();
        // out(u,v) = x(u,v) + 2 x(u+1,v) + y(u-1,v-1) + 0.5, zero outside
        let expected = [
            5.5, 8.5, 3.5, //
            14.5, 27.5, 26.5, //
            23.5, 66.5, 59.5,
        ];
        assert_eq!(out.data, expected);
    }

    fn gradient_check(spec: LayerSpec, loss: LossNorm, tol: f64) {
        let net = randomized(spec, 7);
        let (x, y, e) = (slice(8, 8, 11), slice(8, 8, 12), slice(8, 8, 13));
        let g = 0.37;
        let (_, grad) = net.loss_and_gradient(&x, &y, g, &e, loss).unwrap();
        let base = net.parameters();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            let plus = ConvDenoiser::from_parameters(spec, Plane::InPlane, &p).unwrap();
            p[i] -= 2.0 * h;
            let minus = ConvDenoiser::from_parameters(spec, Plane::InPlane, &p).unwrap();
            let lp = plus.loss_and_gradient(&x, &y, g, &e, loss).unwrap().0;
            let lm = minus.loss_and_gradient(&x, &y, g, &e, loss).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < tol, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradients_match_finite_differences_l2() {
        for padding in [Boundary::Zero, Boundary::Periodic, Boundary::Replicate] {
            for parameterization in [Parameterization::Epsilon, Parameterization::Velocity] {
                let spec = LayerSpec {
                    depth: 3,
                    hidden: 3,
                    padding,
                    gamma_embedding: GammaEmbedding::Features,
                    parameterization,
                    ..LayerSpec::default()
                };
                gradient_check(spec, LossNorm::L2, 1e-4);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_l1() {
        gradient_check(
            LayerSpec {
                depth: 3,
                hidden: 3,
                ..LayerSpec::default()
            },
            LossNorm::L1,
            1e-3,
        );
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let net = randomized(
            LayerSpec {
                depth: 2,
                hidden: 3,
                ..LayerSpec::default()
            },
            9,
        );
        let (x, y) = (slice(5, 5, 1), slice(5, 5, 2));
        let target = net.forward(&x, &y, 0.5).unwrap();
        for loss in [LossNorm::L1, LossNorm::L2] {
            let (l, g) = net.loss_and_gradient(&x, &y, 0.5, &target, loss).unwrap();
            assert_eq!(l, 0.0);
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }
}
