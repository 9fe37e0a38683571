//! The keypoint network: a 3D spectral-spatial encoder, multi-scale feature
//! aggregation, a 2D head producing score and descriptor maps, and
//! differentiable keypoint detection.

mod checkpoint;
mod config;
mod dkd;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::HyKeyConfig;
pub use dkd::{detect_eval, detect_train, refine_window, Keypoints, TrainKeypoints};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::hsidata::HsiCube;
use crate::tensor::{Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unsupported input: {0}")]
    UnsupportedInput(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
}

/// Parameter indices in [`HyKeyNetwork::params`].
const HEAD_CONV1: usize = 12;
const HEAD_BN: usize = 14;
const HEAD_CONV2: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct HyKeyNetwork {
    config: HyKeyConfig,
    params: Vec<Parameter>,
    running_mean: Vec<f32>,
    running_var: Vec<f32>,
}

/// Dense outputs of one image on a tape.
#[derive(Clone, Copy, Debug)]
pub struct DenseMaps {
    /// `[1, H, W]`, values in (0, 1).
    pub score: Var,
    /// `[D, H, W]`, unit norm along D.
    pub descriptors: Var,
}

/// Plain-data result of an inference pass.
#[derive(Clone, Debug)]
pub struct NetworkOutput {
    /// `[H, W]`.
    pub score_map: Tensor,
    /// `[D, H, W]`.
    pub descriptor_map: Tensor,
    pub keypoints: Vec<[f32; 2]>,
    pub scores: Vec<f32>,
    /// `[N, D]`.
    pub descriptors: Tensor,
}

fn kaiming_uniform<R: Rng>(rng: &mut R, shape: Vec<usize>) -> Tensor {
    let fan_in: usize = shape[1..].iter().product();
    let bound = (6.0 / fan_in as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Reflect-pads the spatial axes of `[S, H, W]` up to multiples of 8.
fn pad_to_multiple_of_8(t: &Tensor) -> Tensor {
    let [s, h, w] = [t.shape()[0], t.shape()[1], t.shape()[2]];
    let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
    if (ph, pw) == (h, w) {
        return t.clone();
    }
    let reflect = |i: usize, n: usize| {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n - 1);
        let m = i % period;
        if m < n {
            m
        } else {
            period - m
        }
    };
    let src = t.data();
    Tensor::from_fn([s, ph, pw], |k| {
        let (b, y, x) = (k / (ph * pw), (k / pw) % ph, k % pw);
        src[(b * h + reflect(y, h)) * w + reflect(x, w)]
    })
}

impl HyKeyNetwork {
    /// Kaiming-uniform convolution weights, zero biases, unit batch-norm gain.
    pub fn new(config: HyKeyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut push = |name: String, value: Tensor| params.push(Parameter { name, value });
        let mut c_in = 1;
        for (i, &c) in config.channels.iter().enumerate() {
            for j in 0..2 {
                let ci = if j == 0 { c_in } else { c };
                push(
                    format!("encoder.{i}.conv{j}.weight"),
                    kaiming_uniform(&mut rng, vec![c, ci, 3, 3, 3]),
                );
                push(format!("encoder.{i}.conv{j}.bias"), Tensor::zeros([c]));
            }
            c_in = c;
        }
        let (agg, d) = (config.aggregated_channels(), config.descriptor_dim);
        push(
            "head.conv1.weight".into(),
            kaiming_uniform(&mut rng, vec![d, agg, 3, 3]),
        );
        push("head.conv1.bias".into(), Tensor::zeros([d]));
        push("head.bn.weight".into(), Tensor::full([d], 1.0));
        push("head.bn.bias".into(), Tensor::zeros([d]));
        push(
            "head.conv2.weight".into(),
            kaiming_uniform(&mut rng, vec![d + 1, d, 3, 3]),
        );
        push("head.conv2.bias".into(), Tensor::zeros([d + 1]));
        Ok(Self {
            config,
            params,
            running_mean: vec![0.0; d],
            running_var: vec![1.0; d],
        })
    }

    pub fn config(&self) -> &HyKeyConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn running_stats(&self) -> (&[f32], &[f32]) {
        (&self.running_mean, &self.running_var)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter on `tape`: as trainable leaves when
    /// `trainable`, else as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.leaf(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Exponential update of the batch-norm running estimates.
    pub fn update_running_stats(&mut self, batch_mean: &[f32], batch_var: &[f32]) {
        let m = self.config.bn_momentum;
        for (r, &b) in self.running_mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.iter_mut().zip(batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }

    pub(crate) fn set_running_stats(&mut self, mean: Vec<f32>, var: Vec<f32>) {
        self.running_mean = mean;
        self.running_var = var;
    }

    fn check_input(&self, cube: &Tensor) -> Result<()> {
        if cube.ndim() != 3 {
            return Err(ModelError::UnsupportedInput(format!(
                "expected [bands, H, W], got {:?}",
                cube.shape()
            )));
        }
        if cube.shape()[0] < 4 {
            return Err(ModelError::UnsupportedInput(format!(
                "{} bands, at least 4 required",
                cube.shape()[0]
            )));
        }
        if cube.shape()[1] < 2 || cube.shape()[2] < 2 {
            return Err(ModelError::UnsupportedInput(format!(
                "spatial size {:?} too small",
                &cube.shape()[1..]
            )));
        }
        Ok(())
    }

    /// The three encoder blocks on a `[bands, H, W]` cube whose spatial size
    /// is a multiple of 8. Each output is `[c_i, S_i, H / 2^i, W / 2^i]`.
    pub fn encoder_forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        cube: &Tensor,
    ) -> Result<[Var; 3]> {
        self.check_input(cube)?;
        let [s, h, w] = [cube.shape()[0], cube.shape()[1], cube.shape()[2]];
        if h % 8 != 0 || w % 8 != 0 {
            return Err(ModelError::UnsupportedInput(format!(
                "{h}x{w} is not a multiple of 8"
            )));
        }
        let mut x = tape.constant(cube.clone().reshape([1, s, h, w])?);
        let mut out = Vec::with_capacity(3);
        for i in 0..3 {
            for j in 0..2 {
                let k = 4 * i + 2 * j;
                let c = tape.conv3d(x, vars[k], vars[k + 1], [2, 1, 1])?;
                x = tape.relu(c)?;
            }
            x = tape.maxpool3d_spatial(x)?;
            out.push(x);
        }
        Ok([out[0], out[1], out[2]])
    }

    /// Spectral mean, bilinear upsampling to `(h, w)` and channel concat.
    pub fn aggregate(&self, tape: &mut Tape, blocks: &[Var; 3], h: usize, w: usize) -> Result<Var> {
        let mut parts = Vec::with_capacity(3);
        for &b in blocks {
            let m = tape.spectral_mean(b)?;
            parts.push(tape.upsample_bilinear(m, h, w)?);
        }
        Ok(tape.concat(&parts, 0)?)
    }

    /// Dense score and descriptor maps for a batch of `[bands, H, W]` cubes
    /// of equal size. Batch normalisation runs jointly over the batch: with
    /// batch statistics (returned) when `train`, else the running estimates.
    pub fn forward_dense(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        cubes: &[&Tensor],
        train: bool,
    ) -> Result<(Vec<DenseMaps>, Option<(Vec<f32>, Vec<f32>)>)> {
        let Some(first) = cubes.first() else {
            return Ok((vec![], None));
        };
        for c in cubes {
            self.check_input(c)?;
            if c.shape() != first.shape() {
                return Err(ModelError::UnsupportedInput(format!(
                    "batch mixes shapes {:?} and {:?}",
                    first.shape(),
                    c.shape()
                )));
            }
        }
        let (h, w) = (first.shape()[1], first.shape()[2]);
        let d = self.config.descriptor_dim;
        let mut hidden = Vec::with_capacity(cubes.len());
        let mut padded_size = (h, w);
        for cube in cubes {
            let padded = pad_to_multiple_of_8(cube);
            let (ph, pw) = (padded.shape()[1], padded.shape()[2]);
            padded_size = (ph, pw);
            let blocks = self.encoder_forward(tape, vars, &padded)?;
            let agg = self.aggregate(tape, &blocks, ph, pw)?;
            hidden.push(tape.conv2d(agg, vars[HEAD_CONV1], vars[HEAD_CONV1 + 1])?);
        }
        let batch = tape.stack(&hidden)?;
        let (normed, stats) = tape.batchnorm2d(
            batch,
            vars[HEAD_BN],
            vars[HEAD_BN + 1],
            (&self.running_mean, &self.running_var),
            train,
            self.config.bn_eps,
        )?;
        let act = tape.relu(normed)?;
        let mut out = Vec::with_capacity(cubes.len());
        for i in 0..cubes.len() {
            let hi = tape.select(act, i)?;
            let mut y = tape.conv2d(hi, vars[HEAD_CONV2], vars[HEAD_CONV2 + 1])?;
            if padded_size != (h, w) {
                let cropped = tape.narrow(y, 1, 0, h)?;
                y = tape.narrow(cropped, 2, 0, w)?;
            }
            let logits = tape.narrow(y, 0, 0, 1)?;
            let score = tape.sigmoid(logits)?;
            let raw = tape.narrow(y, 0, 1, d)?;
            let descriptors = tape.l2_normalize(raw, 0)?;
            out.push(DenseMaps { score, descriptors });
        }
        Ok((out, stats))
    }

    /// Evaluation-mode forward: dense maps, up to `max_keypoints` detections
    /// and their descriptors.
    pub fn infer(&self, cube: &HsiCube, max_keypoints: usize) -> Result<NetworkOutput> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape, false);
        let input = cube.to_tensor();
        let (maps, _) = self.forward_dense(&mut tape, &vars, &[&input], false)?;
        let maps = maps[0];
        let (h, w) = (cube.height(), cube.width());
        let score_map = tape.value(maps.score).clone().reshape([h, w])?;
        let kp = detect_eval(&score_map, &self.config, max_keypoints)?;
        let pts = Tensor::new(
            [kp.points.len(), 2],
            kp.points.iter().flatten().copied().collect(),
        )?;
        let descriptors = if kp.points.is_empty() {
            Tensor::zeros([0, self.config.descriptor_dim])
        } else {
            let p = tape.constant(pts);
            let s = tape.grid_sample2d(maps.descriptors, p)?;
            let n = tape.l2_normalize(s, 1)?;
            tape.value(n).clone()
        };
        Ok(NetworkOutput {
            score_map,
            descriptor_map: tape.value(maps.descriptors).clone(),
            keypoints: kp.points,
            scores: kp.scores,
            descriptors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hsidata::synthetic_cube;

    fn toy_config() -> HyKeyConfig {
        HyKeyConfig {
            channels: [4, 8, 8],
            descriptor_dim: 8,
            ..Default::default()
        }
    }

    #[test]
    fn toy_shapes() {
        let net = HyKeyNetwork::new(HyKeyConfig::default(), 0).unwrap();
        let mut tape = Tape::inference();
        let vars = net.bind(&mut tape, false);
        let cube = Tensor::full([16, 32, 32], 0.5);
        let blocks = net.encoder_forward(&mut tape, &vars, &cube).unwrap();
        assert_eq!(tape.shape(blocks[0]), &[32, 4, 16, 16]);
        assert_eq!(tape.shape(blocks[1]), &[64, 1, 8, 8]);
        assert_eq!(tape.shape(blocks[2]), &[128, 1, 4, 4]);
        let agg = net.aggregate(&mut tape, &blocks, 32, 32).unwrap();
        assert_eq!(tape.shape(agg), &[224, 32, 32]);
    }

    #[test]
    fn zero_input_zero_features() {
        let net = HyKeyNetwork::new(toy_config(), 1).unwrap();
        let mut tape = Tape::inference();
        let vars = net.bind(&mut tape, false);
        let blocks = net
            .encoder_forward(&mut tape, &vars, &Tensor::zeros([16, 16, 16]))
            .unwrap();
        for b in blocks {
            assert!(tape.value(b).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_blocks_aggregate_to_constant() {
        let net = HyKeyNetwork::new(toy_config(), 1).unwrap();
        let mut tape = Tape::inference();
        let blocks = [
            tape.constant(Tensor::full([4, 4, 8, 8], 2.0)),
            tape.constant(Tensor::full([8, 1, 4, 4], 3.0)),
            tape.constant(Tensor::full([8, 1, 2, 2], 5.0)),
        ];
        let agg = net.aggregate(&mut tape, &blocks, 16, 16).unwrap();
        let v = tape.value(agg);
        assert_eq!(v.shape(), &[20, 16, 16]);
        for (ch, expect) in [(0, 2.0), (4, 3.0), (12, 5.0)] {
            assert!(v.data()[ch * 256..(ch + 1) * 256]
                .iter()
                .all(|&x| (x - expect).abs() < 1e-6));
        }
    }

    #[test]
    fn head_contract() {
        let net = HyKeyNetwork::new(toy_config(), 2).unwrap();
        let cube = synthetic_cube(16, 24, 24, 3);
        let out = net.infer(&cube, 1024).unwrap();
        assert_eq!(out.score_map.shape(), &[24, 24]);
        assert_eq!(out.descriptor_map.shape(), &[8, 24, 24]);
        assert!(out.score_map.data().iter().all(|&s| s > 0.0 && s < 1.0));
        for p in 0..24 * 24 {
            let n: f32 = (0..8)
                .map(|c| out.descriptor_map.data()[c * 576 + p].powi(2))
                .sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-5);
        }
        for row in out.descriptors.data().chunks(8) {
            let n: f32 = row.iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-5);
        }
        assert!(out.keypoints.len() <= 1024);
        let again = net.infer(&cube, 1024).unwrap();
        assert_eq!(again.score_map, out.score_map);
        assert_eq!(again.keypoints, out.keypoints);
    }

    #[test]
    fn rejects_too_few_bands() {
        let net = HyKeyNetwork::new(toy_config(), 0).unwrap();
        let mut tape = Tape::inference();
        let vars = net.bind(&mut tape, false);
        let r = net.forward_dense(&mut tape, &vars, &[&Tensor::zeros([3, 16, 16])], false);
        assert!(matches!(r, Err(ModelError::UnsupportedInput(_))));
    }

    #[test]
    fn reflect_padding() {
        let t = Tensor::from_fn([1, 3, 5], |i| i as f32);
        let p = pad_to_multiple_of_8(&t);
        assert_eq!(p.shape(), &[1, 8, 8]);
        // row 3 reflects to row 1, column 5 to column 3
        assert_eq!(p.data()[3 * 8 + 5], t.data()[5 + 3]);
    }

    #[test]
    fn config_validation() {
        let c = HyKeyConfig {
            descriptor_dim: 4,
            ..Default::default()
        };
        assert!(HyKeyNetwork::new(c, 0).is_err());
        let c = HyKeyConfig {
            dkd_temperature: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
