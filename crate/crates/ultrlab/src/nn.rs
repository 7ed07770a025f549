//! The neural scoring function f(x): a fixed 24-64-32-16-8-1 MLP with ELU
//! hidden activations, plus softmax utilities, the AdamW optimizer, central
//! finite differences for gradient verification, and checkpoint I/O.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{self, NUM_FEATURES};
use crate::error::{Error, Result};

/// (fan_in, fan_out) of each layer; the last layer is the linear output head.
pub const LAYER_SHAPES: [(usize, usize); 5] = [(24, 64), (64, 32), (32, 16), (16, 8), (8, 1)];

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn elu_deriv(pre: f64) -> f64 {
    if pre > 0.0 {
        1.0
    } else {
        pre.exp()
    }
}

/// Parameters of the ranking MLP. Weight matrices are stored row-major as
/// `weights[layer][out * fan_in + in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl RankerParams {
    pub fn zeros() -> Self {
        RankerParams {
            weights: LAYER_SHAPES.iter().map(|&(i, o)| vec![0.0; i * o]).collect(),
            biases: LAYER_SHAPES.iter().map(|&(_, o)| vec![0.0; o]).collect(),
        }
    }

    /// Glorot-uniform initialization: each layer uniform in
    /// +-sqrt(6 / (fan_in + fan_out)).
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros();
        for (l, &(fan_in, fan_out)) in LAYER_SHAPES.iter().enumerate() {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in params.weights[l].iter_mut() {
                *w = rng.gen_range(-bound..bound);
            }
        }
        params
    }

    pub fn n_params() -> usize {
        LAYER_SHAPES.iter().map(|&(i, o)| i * o + o).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::n_params());
        for l in 0..LAYER_SHAPES.len() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != Self::n_params() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                Self::n_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for l in 0..LAYER_SHAPES.len() {
            let nw = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros();
        p.set_flat(flat)?;
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.biases.iter()).all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Cached forward pass: pre-activations and activations per layer.
pub struct ForwardCache {
    /// input plus the post-activation output of each layer
    activations: Vec<Vec<f64>>,
    /// pre-activation values of each layer
    pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> f64 {
        self.activations.last().expect("nonempty")[0]
    }
}

pub fn forward(params: &RankerParams, x: &[f64]) -> Result<ForwardCache> {
    if x.len() != NUM_FEATURES {
        return Err(Error::ShapeMismatch(format!(
            "expected {} input features, got {}",
            NUM_FEATURES,
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite input feature".into()));
    }
    let n_layers = LAYER_SHAPES.len();
    let mut activations = Vec::with_capacity(n_layers + 1);
    let mut pre = Vec::with_capacity(n_layers);
    activations.push(x.to_vec());
    for (l, &(fan_in, fan_out)) in LAYER_SHAPES.iter().enumerate() {
        let input = &activations[l];
        let mut z = params.biases[l].clone();
        for o in 0..fan_out {
            let row = &params.weights[l][o * fan_in..(o + 1) * fan_in];
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(input.iter()) {
                acc += w * v;
            }
            z[o] += acc;
        }
        let act = if l + 1 == n_layers {
            z.clone() // linear output head
        } else {
            z.iter().map(|&v| elu(v)).collect()
        };
        pre.push(z);
        activations.push(act);
    }
    Ok(ForwardCache { activations, pre })
}

/// Score a single feature vector.
pub fn score(params: &RankerParams, x: &[f64]) -> Result<f64> {
    Ok(forward(params, x)?.output())
}

/// Backpropagate `d_out` (dL/d score) through a cached forward pass,
/// accumulating parameter gradients into `grads`.
pub fn backward(params: &RankerParams, cache: &ForwardCache, d_out: f64, grads: &mut RankerParams) {
    let n_layers = LAYER_SHAPES.len();
    let mut delta = vec![d_out];
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out) = LAYER_SHAPES[l];
        // delta currently holds dL/d activation of layer l's output
        let dpre: Vec<f64> = if l + 1 == n_layers {
            delta.clone()
        } else {
            delta
                .iter()
                .zip(cache.pre[l].iter())
                .map(|(d, &p)| d * elu_deriv(p))
                .collect()
        };
        let input = &cache.activations[l];
        for o in 0..fan_out {
            grads.biases[l][o] += dpre[o];
            let row = &mut grads.weights[l][o * fan_in..(o + 1) * fan_in];
            for (g, v) in row.iter_mut().zip(input.iter()) {
                *g += dpre[o] * v;
            }
        }
        if l > 0 {
            let mut next = vec![0.0; fan_in];
            for o in 0..fan_out {
                let row = &params.weights[l][o * fan_in..(o + 1) * fan_in];
                for (n, w) in next.iter_mut().zip(row.iter()) {
                    *n += dpre[o] * w;
                }
            }
            delta = next;
        }
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax_probs(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("softmax of empty list".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("non-finite score in softmax".into()));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// AdamW optimizer state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(n_params: usize, lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Decoupled weight decay is applied before the Adam step.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} params, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            params[i] -= self.lr * self.weight_decay * params[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Central finite differences of `loss_fn` at `params`.
pub fn numeric_gradient<F>(loss_fn: F, params: &RankerParams, h: f64) -> RankerParams
where
    F: Fn(&RankerParams) -> f64,
{
    let mut flat = params.flat();
    let mut grad = vec![0.0; flat.len()];
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + h;
        let plus = loss_fn(&RankerParams::from_flat(&flat).expect("shape"));
        flat[i] = orig - h;
        let minus = loss_fn(&RankerParams::from_flat(&flat).expect("shape"));
        flat[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    RankerParams::from_flat(&grad).expect("shape")
}

/// Central finite differences over an arbitrary flat vector.
pub fn numeric_gradient_flat<F>(loss_fn: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut grad = vec![0.0; work.len()];
    for i in 0..work.len() {
        let orig = work[i];
        work[i] = orig + h;
        let plus = loss_fn(&work);
        work[i] = orig - h;
        let minus = loss_fn(&work);
        work[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Per-dimension affine input normalization, fitted on the training split.
/// Raw feature magnitudes (log-probabilities near -15 next to fractions)
/// otherwise blow up the initial score scale and make the softmax weight
/// ratios degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNorm {
    pub fn identity(dim: usize) -> Self {
        FeatureNorm {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fit mean and standard deviation per dimension; constant dimensions
    /// get std 1 so they map to 0.
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut n = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        for row in rows.clone() {
            if mean.is_empty() {
                mean = vec![0.0; row.len()];
            } else if row.len() != mean.len() {
                return Err(Error::ShapeMismatch("feature rows of differing widths".into()));
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidArgument("cannot fit normalization to zero rows".into()));
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut var = vec![0.0; mean.len()];
        for row in rows {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(row) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 1e-9 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(FeatureNorm { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.mean.len() {
            return Err(Error::ShapeMismatch(format!(
                "normalizing {} dims with a {}-dim norm",
                x.len(),
                self.mean.len()
            )));
        }
        Ok(x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

const CHECKPOINT_MAGIC: &str = "ultrlab-checkpoint v1";

/// A trained model on disk: ranker weights plus, for dual-trained models,
/// the 10 per-position propensity logits, plus the input normalization the
/// ranker was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub ranker: RankerParams,
    pub propensity: Option<Vec<f64>>,
    pub norm: Option<FeatureNorm>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "{}", CHECKPOINT_MAGIC).unwrap();
        writeln!(out, "layers {}", LAYER_SHAPES.len()).unwrap();
        for (l, &(fan_in, fan_out)) in LAYER_SHAPES.iter().enumerate() {
            writeln!(out, "layer {} {} {}", l, fan_out, fan_in).unwrap();
            writeln!(out, "{}", join_floats(&self.ranker.weights[l])).unwrap();
            writeln!(out, "{}", join_floats(&self.ranker.biases[l])).unwrap();
        }
        match &self.propensity {
            Some(p) => {
                writeln!(out, "propensity {}", p.len()).unwrap();
                writeln!(out, "{}", join_floats(p)).unwrap();
            }
            None => writeln!(out, "propensity 0").unwrap(),
        }
        match &self.norm {
            Some(n) => {
                writeln!(out, "norm {}", n.mean.len()).unwrap();
                writeln!(out, "{}", join_floats(&n.mean)).unwrap();
                writeln!(out, "{}", join_floats(&n.std)).unwrap();
            }
            None => writeln!(out, "norm 0").unwrap(),
        }
        corpus::write_atomic(path, &out)
    }

    /// Score raw features, applying the stored normalization when present.
    pub fn score(&self, features: &[f64]) -> Result<f64> {
        match &self.norm {
            Some(n) => score(&self.ranker, &n.apply(features)?),
            None => score(&self.ranker, features),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = content.lines();
        let bad = |msg: &str| Error::Checkpoint(format!("{}: {}", path.display(), msg));
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("bad magic header"));
        }
        let n_layers: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("layers "))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing layer count"))?;
        if n_layers != LAYER_SHAPES.len() {
            return Err(bad("layer count mismatch"));
        }
        let mut ranker = RankerParams::zeros();
        for (l, &(fan_in, fan_out)) in LAYER_SHAPES.iter().enumerate() {
            let header = lines.next().ok_or_else(|| bad("truncated"))?;
            if header != format!("layer {} {} {}", l, fan_out, fan_in) {
                return Err(bad(&format!("unexpected layer header `{}`", header)));
            }
            ranker.weights[l] = parse_floats(lines.next().ok_or_else(|| bad("truncated"))?, fan_in * fan_out)
                .map_err(|m| bad(&m))?;
            ranker.biases[l] =
                parse_floats(lines.next().ok_or_else(|| bad("truncated"))?, fan_out).map_err(|m| bad(&m))?;
        }
        let prop_header = lines.next().ok_or_else(|| bad("missing propensity section"))?;
        let n_prop: usize = prop_header
            .strip_prefix("propensity ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad propensity header"))?;
        let propensity = if n_prop == 0 {
            None
        } else {
            Some(parse_floats(lines.next().ok_or_else(|| bad("truncated"))?, n_prop).map_err(|m| bad(&m))?)
        };
        let norm_header = lines.next().ok_or_else(|| bad("missing norm section"))?;
        let n_norm: usize = norm_header
            .strip_prefix("norm ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad norm header"))?;
        let norm = if n_norm == 0 {
            None
        } else {
            Some(FeatureNorm {
                mean: parse_floats(lines.next().ok_or_else(|| bad("truncated"))?, n_norm)
                    .map_err(|m| bad(&m))?,
                std: parse_floats(lines.next().ok_or_else(|| bad("truncated"))?, n_norm)
                    .map_err(|m| bad(&m))?,
            })
        };
        Ok(Checkpoint {
            ranker,
            propensity,
            norm,
        })
    }
}

fn join_floats(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        // Rust's shortest-roundtrip float formatting: parses back bit-exact
        write!(s, "{}", v).unwrap();
    }
    s
}

fn parse_floats(line: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let values: std::result::Result<Vec<f64>, _> =
        line.split_whitespace().map(|t| t.parse::<f64>()).collect();
    let values = values.map_err(|e| format!("bad float: {}", e))?;
    if values.len() != expected {
        return Err(format!("expected {} values, got {}", expected, values.len()));
    }
    Ok(values)
}
