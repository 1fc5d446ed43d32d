//! The seasonally conditioned UNet.
//!
//! ```text
//! x0 = [baseline ‖ enc]                        (C+E, S)
//! x1 = dconv(x0)                                (w0,  S)
//! x2 = dconv(pool(x1))                          (w1,  S/2)
//! x3 = dconv(pool(x2))                          (w2,  S/4)
//! x4 = dconv([up(x3) ‖ x2 ‖ enc])               (w1,  S/2)
//! x5 = dconv([up(x4) ‖ x1 ‖ enc])               (w0,  S)
//! y  = conv1x1([x5 ‖ x0])                       (C,   S)
//! ```
//!
//! `dconv` is two 3×3 stride-1 zero-padded convolutions, each followed by GELU.
//! `pool` is 2×2 max pooling, `up` is 2× bilinear upsampling with half-pixel centres.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{self, ConvShape, ConvTrace, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub enc_channels: usize,
    pub widths: [usize; 3],
    pub patch: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 10,
            enc_channels: 4,
            widths: [32, 64, 128],
            patch: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::InvalidArgument("in_channels must be at least 1".into()));
        }
        if self.widths.contains(&0) || self.widths.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::InvalidArgument(format!(
                "widths {:?} must be positive and non-decreasing",
                self.widths
            )));
        }
        if self.patch == 0 || self.patch % 4 != 0 {
            return Err(Error::InvalidArgument(format!(
                "patch size {} must be a positive multiple of 4",
                self.patch
            )));
        }
        Ok(())
    }

    /// `(cin, cout, kernel)` of every convolution in parameter order.
    pub fn conv_specs(&self) -> Vec<(usize, usize, usize)> {
        let (c, e) = (self.in_channels, self.enc_channels);
        let [w0, w1, w2] = self.widths;
        vec![
            (c + e, w0, 3),
            (w0, w0, 3),
            (w0, w1, 3),
            (w1, w1, 3),
            (w1, w2, 3),
            (w2, w2, 3),
            (w2 + w1 + e, w1, 3),
            (w1, w1, 3),
            (w1 + w0 + e, w0, 3),
            (w0, w0, 3),
            (w0 + c + e, c, 1),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.conv_specs()
            .iter()
            .map(|&(ci, co, k)| k * k * ci * co + co)
            .sum()
    }
}

/// Channel composition of each concatenation, recorded in checkpoint manifests.
pub const SKIP_ORDER: &str = "upsampled | encoder_residual | encodings";
pub const HEAD_INPUT_ORDER: &str = "last_decoder_features | input (baseline | encodings)";
pub const INIT_SCHEME: &str =
    "weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), ChaCha8 stream seeded per model";

#[derive(Debug, Clone, PartialEq)]
pub struct SeasonalUNet<T> {
    config: ModelConfig,
    layers: Vec<ConvShape>,
    params: Vec<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardTrace<T> {
    convs: Vec<ConvTrace<T>>,
    /// GELU gate values for every activated convolution.
    cdfs: Vec<Vec<T>>,
    pool1: Vec<u32>,
    pool2: Vec<u32>,
    pub output: Vec<T>,
}

fn layout(config: &ModelConfig) -> (Vec<ConvShape>, usize) {
    let mut off = 0;
    let layers = config
        .conv_specs()
        .into_iter()
        .map(|(cin, cout, kernel)| {
            let w_off = off;
            let b_off = w_off + cout * cin * kernel * kernel;
            off = b_off + cout;
            ConvShape {
                cin,
                cout,
                kernel,
                w_off,
                b_off,
            }
        })
        .collect();
    (layers, off)
}

fn push_constant_planes<T: Real>(buf: &mut Vec<T>, values: &[T], hw: usize) {
    for &v in values {
        buf.extend(std::iter::repeat_n(v, hw));
    }
}

impl<T: Real> SeasonalUNet<T> {
    /// Builds a model with uniform `±1/sqrt(fan_in)` initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layers, total) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); total];
        for l in &layers {
            let bound = 1.0 / (l.fan_in() as f64).sqrt();
            for p in &mut params[l.w_off..l.b_off + l.cout] {
                *p = T::from_f(rng.random_range(-bound..bound));
            }
        }
        Ok(SeasonalUNet {
            config,
            layers,
            params,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let (layers, total) = layout(&config);
        if params.len() != total {
            return Err(Error::Checkpoint(format!(
                "expected {total} parameters, found {}",
                params.len()
            )));
        }
        Ok(SeasonalUNet {
            config,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn count_parameters(&self) -> usize {
        self.params.len()
    }

    /// Converts parameters to another precision.
    pub fn cast<U: Real>(&self) -> SeasonalUNet<U> {
        SeasonalUNet {
            config: self.config,
            layers: self.layers.clone(),
            params: self.params.iter().map(|p| U::from_f(p.to_f())).collect(),
        }
    }

    fn check_inputs(&self, baseline: &[T], enc: &[T], size: usize) -> Result<()> {
        let c = self.config.in_channels;
        if size == 0 || size % 4 != 0 {
            return Err(Error::Shape(format!("patch size {size} is not a multiple of 4")));
        }
        if baseline.len() != c * size * size {
            return Err(Error::Shape(format!(
                "baseline patch has {} values, expected {c}x{size}x{size}",
                baseline.len()
            )));
        }
        if enc.len() != self.config.enc_channels {
            return Err(Error::Shape(format!(
                "{} encoding values, model expects {}",
                enc.len(),
                self.config.enc_channels
            )));
        }
        Ok(())
    }

    /// Prediction for a `C × size × size` baseline patch and encoding values.
    pub fn forward(&self, baseline: &[T], enc: &[T], size: usize) -> Result<Vec<T>> {
        Ok(self.forward_trace(baseline, enc, size)?.output)
    }

    pub fn forward_trace(&self, baseline: &[T], enc: &[T], size: usize) -> Result<ForwardTrace<T>> {
        self.check_inputs(baseline, enc, size)?;
        let [w0, w1, _] = self.config.widths;
        let p = &self.params;
        let l = &self.layers;
        let (s0, s1, s2) = (size, size / 2, size / 4);
        let hw0 = s0 * s0;

        let mut x0 = Vec::with_capacity((baseline.len() / hw0 + enc.len()) * hw0);
        x0.extend_from_slice(baseline);
        push_constant_planes(&mut x0, enc, hw0);

        let mut convs = Vec::with_capacity(l.len());
        let mut cdfs = Vec::with_capacity(l.len() - 1);
        let mut run = |i: usize, x: Vec<T>, s: usize, convs: &mut Vec<ConvTrace<T>>| -> Vec<T> {
            let t = layers::conv_forward(&l[i], p, x, s, s);
            let (y, cdf) = layers::gelu_with_cdf(&t.z);
            convs.push(t);
            cdfs.push(cdf);
            y
        };

        let a = run(0, x0.clone(), s0, &mut convs);
        let x1 = run(1, a, s0, &mut convs);

        let (pooled, pool1) = layers::maxpool2(&x1, w0, s0, s0);
        let a = run(2, pooled, s1, &mut convs);
        let x2 = run(3, a, s1, &mut convs);

        let (pooled, pool2) = layers::maxpool2(&x2, w1, s1, s1);
        let a = run(4, pooled, s2, &mut convs);
        let x3 = run(5, a, s2, &mut convs);

        let mut cat = layers::upsample2(&x3, l[5].cout, s2, s2);
        cat.extend_from_slice(&x2);
        push_constant_planes(&mut cat, enc, s1 * s1);
        let a = run(6, cat, s1, &mut convs);
        let x4 = run(7, a, s1, &mut convs);

        let mut cat = layers::upsample2(&x4, w1, s1, s1);
        cat.extend_from_slice(&x1);
        push_constant_planes(&mut cat, enc, hw0);
        let a = run(8, cat, s0, &mut convs);
        let mut head_in = run(9, a, s0, &mut convs);

        head_in.extend_from_slice(&x0);
        let t = layers::conv_forward(&l[10], p, head_in, s0, s0);
        let output = t.z.clone();
        convs.push(t);

        Ok(ForwardTrace {
            convs,
            cdfs,
            pool1,
            pool2,
            output,
        })
    }

    /// Accumulates `∂loss/∂params` into `grads` given `∂loss/∂output`.
    pub fn backward(&self, trace: &ForwardTrace<T>, d_out: &[T], size: usize, grads: &mut [T]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let [w0, w1, w2] = self.config.widths;
        let p = &self.params;
        let l = &self.layers;
        let tr = &trace.convs;
        let (s0, s1, s2) = (size, size / 2, size / 4);
        let (hw0, hw1) = (s0 * s0, s1 * s1);

        let conv_back = |i: usize, dz: &[T], s: usize, grads: &mut [T]| -> Vec<T> {
            layers::conv_backward(&l[i], p, &tr[i], dz, s, s, grads, true)
                .expect("input gradient requested")
        };
        // Backward through gelu(conv_i); `dy` is the gradient w.r.t. the activation.
        let act_back = |i: usize, dy: Vec<T>, s: usize, grads: &mut [T]| -> Vec<T> {
            let dz = layers::gelu_backward(&tr[i].z, &trace.cdfs[i], dy);
            conv_back(i, &dz, s, grads)
        };

        let d_head = conv_back(10, d_out, s0, grads);
        let dx5 = d_head[..w0 * hw0].to_vec();

        let da = act_back(9, dx5, s0, grads);
        let dcat = act_back(8, da, s0, grads);
        let du2 = &dcat[..w1 * hw0];
        let mut dx1 = dcat[w1 * hw0..(w1 + w0) * hw0].to_vec();
        let dx4 = layers::upsample2_backward(du2, w1, s1, s1);

        let da = act_back(7, dx4, s1, grads);
        let dcat = act_back(6, da, s1, grads);
        let du1 = &dcat[..w2 * hw1];
        let mut dx2 = dcat[w2 * hw1..(w2 + w1) * hw1].to_vec();
        let dx3 = layers::upsample2_backward(du1, w2, s2, s2);

        let da = act_back(5, dx3, s2, grads);
        let dpool2 = act_back(4, da, s2, grads);
        layers::maxpool2_backward(&dpool2, &trace.pool2, &mut dx2);

        let da = act_back(3, dx2, s1, grads);
        let dpool1 = act_back(2, da, s1, grads);
        layers::maxpool2_backward(&dpool1, &trace.pool1, &mut dx1);

        let da = act_back(1, dx1, s0, grads);
        let dz0 = layers::gelu_backward(&tr[0].z, &trace.cdfs[0], da);
        layers::conv_backward(&l[0], p, &tr[0], &dz0, s0, s0, grads, false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Layer-by-layer closed form: k²·c_in·c_out + c_out per convolution.
    fn oracle_count(c: usize, e: usize, w: [usize; 3]) -> usize {
        let conv = |k: usize, ci: usize, co: usize| k * k * ci * co + co;
        let dconv = |ci: usize, co: usize| conv(3, ci, co) + conv(3, co, co);
        dconv(c + e, w[0])
            + dconv(w[0], w[1])
            + dconv(w[1], w[2])
            + dconv(w[2] + w[1] + e, w[1])
            + dconv(w[1] + w[0] + e, w[0])
            + conv(1, w[0] + c + e, c)
    }

    #[test]
    fn default_parameter_count_is_near_473k() {
        let m = SeasonalUNet::<f32>::new(ModelConfig::default(), 0).unwrap();
        let n = m.count_parameters();
        assert_eq!(n, 478_614);
        assert_eq!(n, oracle_count(10, 4, [32, 64, 128]));
        let rel = (n as f64 - 473_000.0).abs() / 473_000.0;
        assert!(rel <= 0.05, "{n} is {rel:.4} away from 473K");
    }

    #[test]
    fn unit_width_count_matches_oracle() {
        let cfg = ModelConfig {
            in_channels: 1,
            enc_channels: 4,
            widths: [1, 1, 1],
            patch: 32,
        };
        assert_eq!(cfg.param_count(), oracle_count(1, 4, [1, 1, 1]));
        assert_eq!(
            SeasonalUNet::<f64>::new(cfg, 0).unwrap().count_parameters(),
            oracle_count(1, 4, [1, 1, 1])
        );
    }

    #[test]
    fn doubling_widths_roughly_quadruples_count() {
        let base = ModelConfig::default();
        let doubled = ModelConfig {
            widths: [64, 128, 256],
            ..base
        };
        let ratio = doubled.param_count() as f64 / base.param_count() as f64;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn output_shape_and_determinism() {
        let cfg = ModelConfig::default();
        let a = SeasonalUNet::<f32>::new(cfg, 42).unwrap();
        let b = SeasonalUNet::<f32>::new(cfg, 42).unwrap();
        let x: Vec<f32> = (0..10 * 32 * 32).map(|i| (i % 97) as f32 / 97.0).collect();
        let enc = [0.3f32, -0.9, 0.5, 0.25];
        let ya = a.forward(&x, &enc, 32).unwrap();
        let yb = b.forward(&x, &enc, 32).unwrap();
        assert_eq!(ya.len(), 10 * 32 * 32);
        assert!(ya.iter().all(|v| v.is_finite()));
        assert_eq!(ya, yb);
        assert_eq!(ya, a.forward(&x, &enc, 32).unwrap());
    }

    #[test]
    fn shape_preserved_for_other_multiples_of_four() {
        let cfg = ModelConfig {
            in_channels: 2,
            enc_channels: 4,
            widths: [2, 3, 4],
            patch: 12,
        };
        let m = SeasonalUNet::<f64>::new(cfg, 1).unwrap();
        for s in [4usize, 8, 12, 20] {
            let y = m.forward(&vec![0.5; 2 * s * s], &[0.0, 1.0, 0.0, 0.0], s).unwrap();
            assert_eq!(y.len(), 2 * s * s);
        }
        assert!(m.forward(&vec![0.5; 2 * 36], &[0.0; 4], 6).is_err());
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let m = SeasonalUNet::<f32>::new(ModelConfig::default(), 0).unwrap();
        assert!(m.forward(&vec![0.0; 9 * 32 * 32], &[0.0; 4], 32).is_err());
        assert!(m.forward(&vec![0.0; 10 * 32 * 32], &[0.0; 3], 32).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = ModelConfig::default();
        cfg.widths = [64, 32, 128];
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::default();
        cfg.in_channels = 0;
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::default();
        cfg.patch = 30;
        assert!(cfg.validate().is_err());
    }
}
