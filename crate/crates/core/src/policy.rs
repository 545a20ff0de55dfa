//! Fully connected policy networks with a clipped Gaussian action head.
//!
//! Every layer, the output included, is leaky-ReLU activated. Actions are
//! drawn around the network output with a fixed per-resource exploration
//! stddev, and the pre-clamp draw is what the log-density and its score
//! gradient are evaluated on; the environment only ever sees the clamp.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::io::{BufWriter, Write};
use std::path::Path;

/// Value and derivative in one pass; the derivative at zero is the slope,
/// which keeps dead units trainable.
pub fn leaky_relu(x: f64, slope: f64) -> (f64, f64) {
    if x > 0.0 {
        (x, 1.0)
    } else {
        (slope * x, slope)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// weights[out][in]
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl Layer {
    fn out_dim(&self) -> usize {
        self.bias.len()
    }

    fn in_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

/// One action draw: the raw Gaussian sample, its non-negative clamp, and
/// the log-density of the raw sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub preclamp: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
}

/// Per-parameter values in the network's own shape, used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    layers: Vec<Layer>,
}

impl ParamGrads {
    pub fn zeros_like(net: &PolicyNet) -> ParamGrads {
        ParamGrads {
            layers: net
                .layers
                .iter()
                .map(|l| Layer {
                    weights: vec![vec![0.0; l.in_dim()]; l.out_dim()],
                    bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &ParamGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (ar, br) in a.weights.iter_mut().zip(&b.weights) {
                for (av, bv) in ar.iter_mut().zip(br) {
                    *av += c * bv;
                }
            }
            for (av, bv) in a.bias.iter_mut().zip(&b.bias) {
                *av += c * bv;
            }
        }
    }

    /// Same ordering as [`PolicyNet::flat_params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for row in &layer.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&layer.bias);
        }
        out
    }
}

/// A multilayer perceptron with leaky-ReLU activations throughout and a
/// fixed-stddev Gaussian head. The action mean is the network output times
/// `output_gain`, which maps the unit-scale net into resource units so a
/// fresh network already proposes allocations of a useful magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    layers: Vec<Layer>,
    pub leaky_slope: f64,
    pub explore_std: f64,
    pub output_gain: f64,
}

impl PolicyNet {
    /// He-style init scaled for the leaky slope: weights are drawn
    /// N(0, 2 / (fan_in * (1 + slope^2))), biases start at zero. The draw
    /// order (layer, row, column) is fixed so a seed pins the network.
    pub fn init(sizes: &[usize], leaky_slope: f64, explore_std: f64, seed: u64) -> Result<PolicyNet> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArg(
                "a network needs an input and an output size".into(),
            ));
        }
        if sizes.iter().any(|s| *s == 0) {
            return Err(Error::InvalidArg("layer sizes must be positive".into()));
        }
        if !(leaky_slope >= 0.0 && leaky_slope.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "leaky slope must be non-negative, got {leaky_slope}"
            )));
        }
        if !(explore_std > 0.0 && explore_std.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "exploration stddev must be positive, got {explore_std}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / (fan_in as f64 * (1.0 + leaky_slope * leaky_slope))).sqrt();
            let dist = Normal::new(0.0, std).expect("std is positive and finite");
            let weights = (0..fan_out)
                .map(|_| (0..fan_in).map(|_| dist.sample(&mut rng)).collect())
                .collect();
            layers.push(Layer {
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(PolicyNet {
            layers,
            leaky_slope,
            explore_std,
            output_gain: 1.0,
        })
    }

    /// Sets the action-unit scale of the head.
    pub fn with_output_gain(mut self, gain: f64) -> Result<PolicyNet> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::InvalidArg(format!(
                "output gain must be positive, got {gain}"
            )));
        }
        self.output_gain = gain;
        Ok(self)
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim() * (l.in_dim() + 1))
            .sum()
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "expected {} input features, got {}",
                self.in_dim(),
                features.len()
            )));
        }
        Ok(())
    }

    /// The raw network output: activations all the way through, output
    /// included, before the head's gain.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        let (acts, _) = self.forward_full(features);
        Ok(acts.last().expect("at least one layer").clone())
    }

    /// The Gaussian head's mean in action units.
    pub fn action_mean(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.forward(features)?;
        for v in &mut out {
            *v *= self.output_gain;
        }
        Ok(out)
    }

    /// Activations (input first) and pre-activations per layer.
    fn forward_full(&self, features: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut preacts = Vec::with_capacity(self.layers.len());
        acts.push(features.to_vec());
        for layer in &self.layers {
            let x = acts.last().expect("input pushed above");
            let mut pre = layer.bias.clone();
            for (j, row) in layer.weights.iter().enumerate() {
                let mut acc = 0.0;
                for (w, xi) in row.iter().zip(x) {
                    acc += w * xi;
                }
                pre[j] += acc;
            }
            let act = pre
                .iter()
                .map(|p| leaky_relu(*p, self.leaky_slope).0)
                .collect();
            preacts.push(pre);
            acts.push(act);
        }
        (acts, preacts)
    }

    /// Draws a Gaussian action around the mean. Normal variates are
    /// consumed one per output index, in order.
    pub fn sample_action(&self, features: &[f64], rng: &mut ChaCha8Rng) -> Result<ActionSample> {
        let mean = self.action_mean(features)?;
        let preclamp: Vec<f64> = mean
            .iter()
            .map(|m| m + self.explore_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let log_prob = self.log_prob_given_mean(&mean, &preclamp);
        Ok(ActionSample {
            action: preclamp.iter().map(|p| p.max(0.0)).collect(),
            preclamp,
            log_prob,
        })
    }

    /// The deterministic action used for evaluation: the clamped mean.
    pub fn mean_action(&self, features: &[f64]) -> Result<ActionSample> {
        let mean = self.action_mean(features)?;
        let log_prob = self.log_prob_given_mean(&mean, &mean);
        Ok(ActionSample {
            action: mean.iter().map(|m| m.max(0.0)).collect(),
            preclamp: mean,
            log_prob,
        })
    }

    /// Log-density of a raw (pre-clamp) draw under the current parameters.
    pub fn action_log_prob(&self, features: &[f64], preclamp: &[f64]) -> Result<f64> {
        if preclamp.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "expected {} action components, got {}",
                self.out_dim(),
                preclamp.len()
            )));
        }
        let mean = self.action_mean(features)?;
        Ok(self.log_prob_given_mean(&mean, preclamp))
    }

    fn log_prob_given_mean(&self, mean: &[f64], preclamp: &[f64]) -> f64 {
        let s2 = self.explore_std * self.explore_std;
        let k = mean.len() as f64;
        let quad: f64 = mean
            .iter()
            .zip(preclamp)
            .map(|(m, p)| {
                let d = p - m;
                d * d
            })
            .sum();
        -0.5 * quad / s2 - 0.5 * k * (2.0 * std::f64::consts::PI * s2).ln()
    }

    /// Backpropagates `upstream` (a cotangent on the mean output) to every
    /// parameter.
    pub fn backprop_mean(&self, features: &[f64], upstream: &[f64]) -> Result<ParamGrads> {
        self.check_input(features)?;
        if upstream.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream has {} components, output has {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        let (acts, preacts) = self.forward_full(features);
        let mut grads = ParamGrads::zeros_like(self);
        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = upstream
            .iter()
            .zip(&preacts[last])
            .map(|(u, p)| u * leaky_relu(*p, self.leaky_slope).1)
            .collect();
        for l in (0..self.layers.len()).rev() {
            let input = &acts[l];
            for (j, d) in delta.iter().enumerate() {
                let row = &mut grads.layers[l].weights[j];
                for (g, xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
                grads.layers[l].bias[j] += d;
            }
            if l > 0 {
                let mut prev = vec![0.0; self.layers[l].in_dim()];
                for (j, d) in delta.iter().enumerate() {
                    for (p, w) in prev.iter_mut().zip(&self.layers[l].weights[j]) {
                        *p += w * d;
                    }
                }
                for (p, pre) in prev.iter_mut().zip(&preacts[l - 1]) {
                    *p *= leaky_relu(*pre, self.leaky_slope).1;
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    /// Score-function gradient of the sample's log-density with respect to
    /// every parameter: the mean cotangent is (preclamp - mean) / std^2,
    /// scaled by the head gain on its way into the network.
    pub fn grad_log_prob(&self, features: &[f64], preclamp: &[f64]) -> Result<ParamGrads> {
        if preclamp.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "expected {} action components, got {}",
                self.out_dim(),
                preclamp.len()
            )));
        }
        let mean = self.action_mean(features)?;
        let s2 = self.explore_std * self.explore_std;
        let upstream: Vec<f64> = preclamp
            .iter()
            .zip(&mean)
            .map(|(p, m)| (p - m) / s2 * self.output_gain)
            .collect();
        self.backprop_mean(features, &upstream)
    }

    /// All parameters, layer by layer, each layer's weight rows then its
    /// bias row.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            for row in &layer.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, network has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for row in &mut layer.weights {
                for w in row.iter_mut() {
                    *w = *it.next().expect("length checked");
                }
            }
            for b in layer.bias.iter_mut() {
                *b = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// Writes a plain-text checkpoint. Values use the shortest decimal form
    /// that parses back to the same bits.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        writeln!(w, "slicesim-policy v1")?;
        write!(w, "layers {}", self.in_dim())?;
        for layer in &self.layers {
            write!(w, " {}", layer.out_dim())?;
        }
        writeln!(w)?;
        writeln!(w, "leaky_slope {}", self.leaky_slope)?;
        writeln!(w, "explore_std {}", self.explore_std)?;
        writeln!(w, "output_gain {}", self.output_gain)?;
        for (i, layer) in self.layers.iter().enumerate() {
            writeln!(w, "layer {i}")?;
            for row in &layer.weights {
                let cells: Vec<String> = row.iter().map(f64::to_string).collect();
                writeln!(w, "{}", cells.join(" "))?;
            }
            let cells: Vec<String> = layer.bias.iter().map(f64::to_string).collect();
            writeln!(w, "{}", cells.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PolicyNet> {
        let text = std::fs::read_to_string(path)?;
        let mut reader = CheckpointReader {
            path: path.display().to_string(),
            lines: text.lines().collect(),
            at: 0,
        };

        let (n, header) = reader.next_line("the header")?;
        if header.trim() != "slicesim-policy v1" {
            return Err(reader.err(n, format!("unrecognized header {header:?}")));
        }
        let (n, sizes_line) = reader.next_line("the layer sizes")?;
        let sizes: Vec<usize> = sizes_line
            .strip_prefix("layers ")
            .ok_or_else(|| reader.err(n, "expected `layers ...`".into()))?
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| reader.err(n, format!("bad layer size: {e}")))?;
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(reader.err(n, "need at least two positive layer sizes".into()));
        }

        let leaky_slope = reader.scalar("leaky_slope")?;
        let explore_std = reader.scalar("explore_std")?;
        let output_gain = reader.scalar("output_gain")?;

        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (l, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let (n, tag) = reader.next_line("a layer tag")?;
            if tag.trim() != format!("layer {l}") {
                return Err(reader.err(n, format!("expected `layer {l}`, got {tag:?}")));
            }
            let weights = (0..fan_out)
                .map(|_| reader.row(fan_in, "weight row"))
                .collect::<Result<Vec<_>>>()?;
            let bias = reader.row(fan_out, "bias row")?;
            layers.push(Layer { weights, bias });
        }

        if !(explore_std > 0.0 && explore_std.is_finite()) {
            return Err(reader.err(0, format!("bad exploration stddev {explore_std}")));
        }
        if !(output_gain > 0.0 && output_gain.is_finite()) {
            return Err(reader.err(0, format!("bad output gain {output_gain}")));
        }
        Ok(PolicyNet {
            layers,
            leaky_slope,
            explore_std,
            output_gain,
        })
    }
}

struct CheckpointReader<'a> {
    path: String,
    lines: Vec<&'a str>,
    at: usize,
}

impl<'a> CheckpointReader<'a> {
    fn err(&self, line: usize, msg: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg,
        }
    }

    /// Returns the 1-based line number alongside the line.
    fn next_line(&mut self, expect: &str) -> Result<(usize, &'a str)> {
        match self.lines.get(self.at) {
            Some(line) => {
                self.at += 1;
                Ok((self.at, line))
            }
            None => Err(self.err(self.lines.len(), format!("file ended before {expect}"))),
        }
    }

    fn scalar(&mut self, name: &str) -> Result<f64> {
        let (n, line) = self.next_line(name)?;
        line.strip_prefix(name)
            .and_then(|rest| rest.trim().parse::<f64>().ok())
            .ok_or_else(|| self.err(n, format!("expected `{name} <value>`")))
    }

    fn row(&mut self, width: usize, what: &str) -> Result<Vec<f64>> {
        let (n, line) = self.next_line(what)?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| self.err(n, format!("bad value in {what}: {e}")))?;
        if vals.len() != width {
            return Err(self.err(n, format!("{what} has {} values, expected {width}", vals.len())));
        }
        Ok(vals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn leaky_relu_value_and_slope() {
        assert_eq!(leaky_relu(2.0, 0.01), (2.0, 1.0));
        assert_eq!(leaky_relu(-1.0, 0.01), (-0.01, 0.01));
        assert_eq!(leaky_relu(0.0, 0.01), (0.0, 0.01));
    }

    #[test]
    fn init_zeroes_biases_and_scales_weight_variance() {
        let net = PolicyNet::init(&[100, 400, 2], 0.01, 1.0, 7).unwrap();
        let flat = net.flat_params();
        // First layer: 100*400 weights then 400 biases.
        let weights = &flat[0..40_000];
        let biases = &flat[40_000..40_400];
        assert!(biases.iter().all(|b| *b == 0.0));
        let var = weights.iter().map(|w| w * w).sum::<f64>() / weights.len() as f64;
        let expected = 2.0 / (100.0 * (1.0 + 0.01f64 * 0.01));
        assert!((var - expected).abs() < 0.15 * expected, "var {var} vs {expected}");
    }

    #[test]
    fn same_seed_same_network() {
        let a = PolicyNet::init(&[4, 8, 2], 0.01, 1.0, 42).unwrap();
        let b = PolicyNet::init(&[4, 8, 2], 0.01, 1.0, 42).unwrap();
        let c = PolicyNet::init(&[4, 8, 2], 0.01, 1.0, 43).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    fn sampled_actions_are_clamped_non_negative() {
        use rand::SeedableRng;
        let net = PolicyNet::init(&[3, 8, 2], 0.01, 5.0, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let s = net.sample_action(&[0.1, -0.2, 0.3], &mut rng).unwrap();
            assert!(s.action.iter().all(|a| *a >= 0.0));
            assert!(s.log_prob.is_finite());
            for (a, p) in s.action.iter().zip(&s.preclamp) {
                assert_eq!(*a, p.max(0.0));
            }
        }
    }

    #[test]
    fn mean_action_is_deterministic_and_matches_forward() {
        let net = PolicyNet::init(&[3, 8, 2], 0.01, 5.0, 1).unwrap();
        let feats = [0.4, 0.5, 0.6];
        let mean = net.forward(&feats).unwrap();
        let act = net.mean_action(&feats).unwrap();
        assert_eq!(act.preclamp, mean);
        for (a, m) in act.action.iter().zip(&mean) {
            assert_eq!(*a, m.max(0.0));
        }
    }

    #[test]
    fn score_gradient_scales_inversely_with_variance() {
        let mut net = PolicyNet::init(&[2, 4, 2], 0.01, 2.0, 3).unwrap();
        let feats = [0.3, -0.4];
        let preclamp = [1.0, 0.5];
        let g1 = net.grad_log_prob(&feats, &preclamp).unwrap().to_flat();
        net.explore_std = 4.0;
        let g2 = net.grad_log_prob(&feats, &preclamp).unwrap().to_flat();
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(*b, a * 0.25);
        }
    }

    #[test]
    fn grad_accumulator_axpy_adds_scaled_grads() {
        let net = PolicyNet::init(&[2, 3, 1], 0.01, 1.0, 5).unwrap();
        let g = net.grad_log_prob(&[0.5, 0.25], &[2.0]).unwrap();
        let mut acc = ParamGrads::zeros_like(&net);
        acc.axpy(2.0, &g);
        acc.axpy(-0.5, &g);
        let flat = acc.to_flat();
        let base = g.to_flat();
        for (a, b) in flat.iter().zip(&base) {
            assert!((a - 1.5 * b).abs() <= 1e-15 * b.abs());
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("policy.txt");
        let net = PolicyNet::init(&[5, 16, 3], 0.01, 11.25, 99)
            .unwrap()
            .with_output_gain(225.0)
            .unwrap();
        net.save(&path).unwrap();
        let back = PolicyNet::load(&path).unwrap();
        assert_eq!(back.leaky_slope, net.leaky_slope);
        assert_eq!(back.explore_std, net.explore_std);
        assert_eq!(back.output_gain, net.output_gain);
        let a = net.flat_params();
        let b = back.flat_params();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn output_gain_scales_the_head_but_not_forward() {
        let net = PolicyNet::init(&[4, 6, 2], 0.01, 1.0, 3)
            .unwrap()
            .with_output_gain(150.0)
            .unwrap();
        let x = [0.3, -1.2, 0.7, 0.1];
        let raw = net.forward(&x).unwrap();
        let mean = net.action_mean(&x).unwrap();
        for (r, m) in raw.iter().zip(&mean) {
            assert_eq!(m.to_bits(), (150.0 * r).to_bits());
        }
        let act = net.mean_action(&x).unwrap();
        for (m, a) in mean.iter().zip(&act.action) {
            assert_eq!(*a, m.max(0.0));
        }
        assert!(PolicyNet::init(&[2, 1], 0.01, 1.0, 0)
            .unwrap()
            .with_output_gain(0.0)
            .is_err());
    }

    #[test]
    fn load_rejects_malformed_checkpoints() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "not a checkpoint\n").unwrap();
        assert!(PolicyNet::load(&path).is_err());
        std::fs::write(&path, "slicesim-policy v1\nlayers 2 1\nleaky_slope 0.01\n").unwrap();
        assert!(PolicyNet::load(&path).is_err());
    }

    #[test]
    fn dimension_mismatches_are_rejected() {
        let mut net = PolicyNet::init(&[3, 4, 2], 0.01, 1.0, 0).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
        assert!(net.action_log_prob(&[1.0, 2.0, 3.0], &[0.5]).is_err());
        assert!(net.backprop_mean(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(net.set_flat_params(&[0.0; 3]).is_err());
        assert!(PolicyNet::init(&[3], 0.01, 1.0, 0).is_err());
        assert!(PolicyNet::init(&[3, 0, 2], 0.01, 1.0, 0).is_err());
        assert!(PolicyNet::init(&[3, 2], 0.01, 0.0, 0).is_err());
    }
}
