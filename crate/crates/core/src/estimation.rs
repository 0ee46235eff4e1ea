//! Relevance estimation from position-biased clicks.
//!
//! [`IpsEstimator`] keeps the running inverse-propensity-weighted click
//! average per document, an unbiased estimate of the document's expected
//! relevance over users. [`NaiveCounter`] keeps raw click counts, the
//! biased baseline. [`MlpRanker`] is a one-hidden-layer cardinal ranking
//! model trained online with a least-squares loss, either against true
//! relevance (skyline) or against IPS-weighted clicks.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::InteractionRecord;

fn check_propensities(record: &InteractionRecord) -> Result<()> {
    match record
        .propensities
        .iter()
        .enumerate()
        .find(|(_, &p)| !(p > 0.0))
    {
        Some((doc, &value)) => Err(Error::NonPositivePropensity { doc, value }),
        None => Ok(()),
    }
}

/// Running `(1/τ) Σ_t c_t(d) / p_t(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IpsEstimator {
    weighted_click_sum: Vec<f64>,
    steps: usize,
}

impl IpsEstimator {
    pub fn new(num_docs: usize) -> Self {
        Self {
            weighted_click_sum: vec![0.0; num_docs],
            steps: 0,
        }
    }

    pub fn update(&mut self, record: &InteractionRecord) -> Result<()> {
        if record.len() != self.weighted_click_sum.len() {
            return Err(Error::LengthMismatch {
                what: "interaction record",
                expected: self.weighted_click_sum.len(),
                got: record.len(),
            });
        }
        check_propensities(record)?;
        for ((sum, &click), &p) in self
            .weighted_click_sum
            .iter_mut()
            .zip(&record.clicks)
            .zip(&record.propensities)
        {
            if click {
                *sum += 1.0 / p;
            }
        }
        self.steps += 1;
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn weighted_click_sum(&self) -> &[f64] {
        &self.weighted_click_sum
    }

    pub fn estimate(&self, doc: usize) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.weighted_click_sum[doc] / self.steps as f64
        }
    }

    /// Estimates for every document; all zero before the first update.
    pub fn estimates(&self) -> Vec<f64> {
        (0..self.weighted_click_sum.len())
            .map(|d| self.estimate(d))
            .collect()
    }
}

/// Raw click totals per document.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveCounter {
    click_sum: Vec<f64>,
    steps: usize,
}

impl NaiveCounter {
    pub fn new(num_docs: usize) -> Self {
        Self {
            click_sum: vec![0.0; num_docs],
            steps: 0,
        }
    }

    pub fn update(&mut self, record: &InteractionRecord) -> Result<()> {
        if record.len() != self.click_sum.len() {
            return Err(Error::LengthMismatch {
                what: "interaction record",
                expected: self.click_sum.len(),
                got: record.len(),
            });
        }
        for (sum, &click) in self.click_sum.iter_mut().zip(&record.clicks) {
            if click {
                *sum += 1.0;
            }
        }
        self.steps += 1;
        Ok(())
    }

    pub fn click_sum(&self) -> &[f64] {
        &self.click_sum
    }

    /// Click-through rate per document, the naive relevance estimate.
    pub fn estimates(&self) -> Vec<f64> {
        let tau = self.steps.max(1) as f64;
        self.click_sum.iter().map(|c| c / tau).collect()
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

/// `sigmoid(W2ᵀ relu(W1ᵀ x + b1) + b2)` with row-major weights:
/// `w1[i * hidden + j]` connects input `i` to hidden unit `j`, and
/// `w2[j * outputs + d]` connects hidden unit `j` to output `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpRanker {
    inputs: usize,
    hidden: usize,
    outputs: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Gradient with the same layout as [`MlpRanker`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpGradient {
    pub fn zeros_like(model: &MlpRanker) -> Self {
        Self {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: vec![0.0; model.b2.len()],
        }
    }

    /// All components in parameter order (w1, b1, w2, b2).
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn len(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl MlpRanker {
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            inputs,
            hidden,
            outputs,
            w1: vec![0.0; inputs * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * outputs],
            b2: vec![0.0; outputs],
        }
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(inputs, hidden, outputs);
        let a1 = 1.0 / (inputs.max(1) as f64).sqrt();
        let a2 = 1.0 / (hidden.max(1) as f64).sqrt();
        for w in m.w1.iter_mut().chain(&mut m.b1) {
            *w = rng.random_range(-a1..=a1);
        }
        for w in m.w2.iter_mut().chain(&mut m.b2) {
            *w = rng.random_range(-a2..=a2);
        }
        m
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .chain(&mut self.b1)
            .chain(&mut self.w2)
            .chain(&mut self.b2)
    }

    pub fn num_parameters(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn activations(&self, features: &[f64]) -> Result<Activations> {
        if features.len() != self.inputs {
            return Err(Error::LengthMismatch {
                what: "user features",
                expected: self.inputs,
                got: features.len(),
            });
        }
        let h = self.hidden;
        let mut hidden_pre = self.b1.clone();
        for (i, &x) in features.iter().enumerate() {
            if x != 0.0 {
                let row = &self.w1[i * h..(i + 1) * h];
                for (acc, w) in hidden_pre.iter_mut().zip(row) {
                    *acc += x * w;
                }
            }
        }
        let hidden: Vec<f64> = hidden_pre.iter().map(|&z| z.max(0.0)).collect();
        let n = self.outputs;
        let mut logits = self.b2.clone();
        for (j, &a) in hidden.iter().enumerate() {
            if a != 0.0 {
                let row = &self.w2[j * n..(j + 1) * n];
                for (acc, w) in logits.iter_mut().zip(row) {
                    *acc += a * w;
                }
            }
        }
        let output = logits.into_iter().map(sigmoid).collect();
        Ok(Activations {
            hidden_pre,
            hidden,
            output,
        })
    }

    /// Predicted relevance probability of every document for one user.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.activations(features)?.output)
    }

    /// Backpropagates `dL/dR_d` (one entry per output) to all parameters.
    fn backward(&self, features: &[f64], act: &Activations, d_output: &[f64]) -> MlpGradient {
        let (h, n) = (self.hidden, self.outputs);
        let mut grad = MlpGradient::zeros_like(self);
        let delta: Vec<f64> = d_output
            .iter()
            .zip(&act.output)
            .map(|(g, r)| g * r * (1.0 - r))
            .collect();
        grad.b2.copy_from_slice(&delta);
        let mut d_hidden = vec![0.0; h];
        for j in 0..h {
            let row = &self.w2[j * n..(j + 1) * n];
            if act.hidden_pre[j] > 0.0 {
                d_hidden[j] = row.iter().zip(&delta).map(|(w, e)| w * e).sum();
            }
            let a = act.hidden[j];
            if a != 0.0 {
                for (g, e) in grad.w2[j * n..(j + 1) * n].iter_mut().zip(&delta) {
                    *g = a * e;
                }
            }
        }
        grad.b1.copy_from_slice(&d_hidden);
        for (i, &x) in features.iter().enumerate() {
            if x != 0.0 {
                for (g, dh) in grad.w1[i * h..(i + 1) * h].iter_mut().zip(&d_hidden) {
                    *g = x * dh;
                }
            }
        }
        grad
    }

    /// Gradient of `Σ_d (R_θ(d|x) − y_d)²`.
    pub fn squared_error_gradient(&self, features: &[f64], targets: &[f64]) -> Result<MlpGradient> {
        if targets.len() != self.outputs {
            return Err(Error::LengthMismatch {
                what: "targets",
                expected: self.outputs,
                got: targets.len(),
            });
        }
        let act = self.activations(features)?;
        let d_output: Vec<f64> = act
            .output
            .iter()
            .zip(targets)
            .map(|(r, y)| 2.0 * (r - y))
            .collect();
        Ok(self.backward(features, &act, &d_output))
    }

    /// `Σ_d (R_θ(d|x)² − 2·y_d·R_θ(d|x))`, the least-squares loss with the
    /// target-only constant dropped.
    pub fn expanded_loss(&self, features: &[f64], targets: &[f64]) -> Result<f64> {
        if targets.len() != self.outputs {
            return Err(Error::LengthMismatch {
                what: "targets",
                expected: self.outputs,
                got: targets.len(),
            });
        }
        let out = self.forward(features)?;
        Ok(out.iter().zip(targets).map(|(r, y)| r * r - 2.0 * y * r).sum())
    }
}

/// IPS pseudo-targets `c(d) / p(d)`.
pub fn ips_targets(record: &InteractionRecord) -> Result<Vec<f64>> {
    check_propensities(record)?;
    Ok(record
        .clicks
        .iter()
        .zip(&record.propensities)
        .map(|(&c, &p)| if c { 1.0 / p } else { 0.0 })
        .collect())
}

fn bool_targets(relevance: &[bool]) -> Vec<f64> {
    relevance.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect()
}

/// IPS-weighted loss on one interaction, in expanded form.
pub fn ips_loss(model: &MlpRanker, record: &InteractionRecord, features: &[f64]) -> Result<f64> {
    model.expanded_loss(features, &ips_targets(record)?)
}

/// Least-squares loss against the true relevance realizations, in expanded form.
pub fn skyline_loss(model: &MlpRanker, relevance: &[bool], features: &[f64]) -> Result<f64> {
    model.expanded_loss(features, &bool_targets(relevance))
}

/// Gradient of the IPS loss. The residual form `(R − c/p)²` used here differs
/// from the expanded form only by a parameter-free constant.
pub fn ips_loss_gradient(
    model: &MlpRanker,
    record: &InteractionRecord,
    features: &[f64],
) -> Result<MlpGradient> {
    model.squared_error_gradient(features, &ips_targets(record)?)
}

pub fn skyline_loss_gradient(
    model: &MlpRanker,
    relevance: &[bool],
    features: &[f64],
) -> Result<MlpGradient> {
    model.squared_error_gradient(features, &bool_targets(relevance))
}

/// `θ ← θ − lr·∇θ`. A non-finite gradient is reported as divergence and the
/// model is left untouched.
pub fn sgd_step(model: &mut MlpRanker, gradient: &MlpGradient, learning_rate: f64) -> Result<()> {
    if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
        return Err(Error::Config(format!(
            "learning rate must be finite and non-negative, got {learning_rate}"
        )));
    }
    if gradient.len() != model.num_parameters() {
        return Err(Error::LengthMismatch {
            what: "gradient",
            expected: model.num_parameters(),
            got: gradient.len(),
        });
    }
    if !gradient.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient (training diverged)".into(),
        });
    }
    for (w, g) in model.parameters_mut().zip(gradient.iter()) {
        *w -= learning_rate * g;
    }
    Ok(())
}

/// Writes the model as text: a shape header followed by one comma-separated
/// line per parameter block (w1, b1, w2, b2).
pub fn save_checkpoint(model: &MlpRanker, path: &Path) -> Result<()> {
    let mut out = format!(
        "# mlp inputs={} hidden={} outputs={}\n",
        model.inputs, model.hidden, model.outputs
    );
    for (name, block) in [
        ("w1", &model.w1),
        ("b1", &model.b1),
        ("w2", &model.w2),
        ("b2", &model.b2),
    ] {
        out.push_str(name);
        for v in block.iter() {
            // `{:?}` round-trips f64 exactly.
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpRanker> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let parse_err = |row: usize, msg: String| Error::Parse {
        file: file.clone(),
        row,
        msg,
    };
    let header = lines.next().ok_or_else(|| parse_err(0, "empty file".into()))?;
    let mut dims = [0usize; 3];
    let rest = header
        .strip_prefix("# mlp ")
        .ok_or_else(|| parse_err(0, "missing '# mlp' header".into()))?;
    for (slot, (key, field)) in dims
        .iter_mut()
        .zip(["inputs", "hidden", "outputs"].iter().zip(rest.split_whitespace()))
    {
        let value = field
            .strip_prefix(key)
            .and_then(|s| s.strip_prefix('='))
            .ok_or_else(|| parse_err(0, format!("expected {key}=<n>, found {field:?}")))?;
        *slot = value
            .parse()
            .map_err(|e| parse_err(0, format!("{key}: {e}")))?;
    }
    let mut model = MlpRanker::zeros(dims[0], dims[1], dims[2]);
    for (row, name) in ["w1", "b1", "w2", "b2"].iter().enumerate() {
        let line = lines
            .next()
            .ok_or_else(|| parse_err(row + 1, format!("missing block {name}")))?;
        let mut fields = line.split(',');
        if fields.next() != Some(*name) {
            return Err(parse_err(row + 1, format!("expected block {name}")));
        }
        let values = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(row + 1, e.to_string()))?;
        let target = match row {
            0 => &mut model.w1,
            1 => &mut model.b1,
            2 => &mut model.w2,
            _ => &mut model.b2,
        };
        if values.len() != target.len() {
            return Err(parse_err(
                row + 1,
                format!("block {name} has {} values, expected {}", values.len(), target.len()),
            ));
        }
        target.copy_from_slice(&values);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PropensityCurve, Ranking};
    use crate::sim::sample_clicks;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(order: Vec<usize>, clicks: Vec<bool>) -> InteractionRecord {
        let ranking = Ranking::new(order, 1).unwrap();
        let positions = ranking.positions();
        InteractionRecord {
            timestep: 1,
            relevance: clicks.clone(),
            propensities: positions
                .iter()
                .map(|&p| PropensityCurve::LogDiscount.propensity_at(p).unwrap())
                .collect(),
            clicks,
            ranking,
        }
    }

    #[test]
    fn ips_zero_without_clicks() {
        let mut est = IpsEstimator::new(3);
        assert_eq!(est.estimates(), vec![0.0; 3]);
        for _ in 0..10 {
            est.update(&record(vec![0, 1, 2], vec![false; 3])).unwrap();
        }
        assert_eq!(est.estimates(), vec![0.0; 3]);
    }

    #[test]
    fn ips_top_doc_always_clicked() {
        let mut est = IpsEstimator::new(2);
        for _ in 0..25 {
            est.update(&record(vec![1, 0], vec![false, true])).unwrap();
        }
        assert_eq!(est.estimate(1), 1.0);
    }

    #[test]
    fn ips_recovers_relevance_at_rank_three() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ranking = Ranking::new(vec![1, 2, 0], 1).unwrap();
        let mut est = IpsEstimator::new(3);
        for _ in 0..100_000 {
            let rel = [rng.random::<f64>() < 0.6, false, false];
            let rec = sample_clicks(&ranking, &rel, PropensityCurve::LogDiscount, &mut rng).unwrap();
            est.update(&rec).unwrap();
        }
        assert!((est.estimate(0) - 0.6).abs() <= 0.01, "{}", est.estimate(0));
    }

    #[test]
    fn ips_rejects_zero_propensity() {
        let mut rec = record(vec![0, 1], vec![true, false]);
        rec.propensities[1] = 0.0;
        let mut est = IpsEstimator::new(2);
        assert!(matches!(
            est.update(&rec),
            Err(Error::NonPositivePropensity { doc: 1, .. })
        ));
        assert_eq!(est.steps(), 0);
        let model = MlpRanker::zeros(1, 1, 2);
        assert!(ips_loss_gradient(&model, &rec, &[1.0]).is_err());
    }

    #[test]
    fn naive_counts_clicks() {
        let mut c = NaiveCounter::new(3);
        c.update(&record(vec![0, 1, 2], vec![true, false, true])).unwrap();
        c.update(&record(vec![0, 1, 2], vec![true, false, false])).unwrap();
        assert_eq!(c.click_sum(), &[2.0, 0.0, 1.0]);
        assert_eq!(c.estimates(), vec![1.0, 0.0, 0.5]);
    }

    #[test]
    fn zero_model_outputs_half() {
        let m = MlpRanker::zeros(50, 64, 100);
        let out = m.forward(&[0.3; 50]).unwrap();
        assert!(out.iter().all(|&r| r == 0.5));
        assert!(m.forward(&[0.3; 49]).is_err());
    }

    #[test]
    fn hand_computed_forward() {
        // x = (1, 2); hidden pre = (0.5·1 − 1·2 + 0.1, 1·1 + 0.25·2 − 0.2) = (−1.4, 1.3)
        // relu → (0, 1.3); logits = (0.4 + 1.3·(−0.5), −0.3 + 1.3·2) = (−0.25, 2.3)
        let mut m = MlpRanker::zeros(2, 2, 2);
        m.w1 = vec![0.5, 1.0, -1.0, 0.25];
        m.b1 = vec![0.1, -0.2];
        m.w2 = vec![3.0, 7.0, -0.5, 2.0];
        m.b2 = vec![0.4, -0.3];
        let out = m.forward(&[1.0, 2.0]).unwrap();
        let expect = [1.0 / (1.0 + 0.25f64.exp()), 1.0 / (1.0 + (-2.3f64).exp())];
        for (a, b) in out.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_vanishes_at_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = MlpRanker::init(3, 4, 5, &mut rng);
        let x = [0.2, -0.4, 0.9];
        let out = m.forward(&x).unwrap();
        let g = m.squared_error_gradient(&x, &out).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        let rel = [true; 5];
        let mut sat = MlpRanker::zeros(3, 4, 5);
        sat.b2 = vec![800.0; 5];
        let g = skyline_loss_gradient(&sat, &rel, &x).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn no_clicks_push_outputs_down() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut m = MlpRanker::init(3, 4, 5, &mut rng);
        let rec = record(vec![0, 1, 2, 3, 4], vec![false; 5]);
        let x = [0.5, 0.1, -0.3];
        let before = m.forward(&x).unwrap();
        let g = ips_loss_gradient(&m, &rec, &x).unwrap();
        assert!(g.b2.iter().all(|&v| v > 0.0));
        sgd_step(&mut m, &g, 0.1).unwrap();
        let after = m.forward(&x).unwrap();
        assert!(after.iter().sum::<f64>() < before.iter().sum::<f64>());
    }

    #[test]
    fn sgd_no_ops_and_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let m0 = MlpRanker::init(2, 3, 2, &mut rng);
        let mut m = m0.clone();
        sgd_step(&mut m, &MlpGradient::zeros_like(&m0), 0.5).unwrap();
        assert_eq!(m, m0);
        let g = m.squared_error_gradient(&[1.0, 1.0], &[0.0, 1.0]).unwrap();
        sgd_step(&mut m, &g, 0.0).unwrap();
        assert_eq!(m, m0);
        let mut bad = g.clone();
        bad.b2[0] = f64::NAN;
        assert!(matches!(sgd_step(&mut m, &bad, 0.1), Err(Error::NonFinite { .. })));
        assert_eq!(m, m0);
    }

    #[test]
    fn sgd_decreases_one_parameter_quadratic() {
        // Single output with only a bias: loss (σ(b) − 1)², b starts at 0.
        let mut m = MlpRanker::zeros(1, 1, 1);
        let loss = |m: &MlpRanker| (m.forward(&[0.0]).unwrap()[0] - 1.0).powi(2);
        let before = loss(&m);
        let g = m.squared_error_gradient(&[0.0], &[1.0]).unwrap();
        sgd_step(&mut m, &g, 0.1).unwrap();
        assert!(loss(&m) < before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let m = MlpRanker::init(4, 3, 6, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
        std::fs::write(&path, "# mlp inputs=1 hidden=1 outputs=1\nw1,1\nb1,1\nw2,1,2\nb2,0\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
