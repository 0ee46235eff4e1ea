//! Browser front end for the simulator.
//!
//! Each exported function runs a small News simulation in the page's thread
//! and returns JSON for `www/index.html` to draw. The same functions are
//! callable from Rust through the `*_json` variants.

use mmf_core::experiment::{run_experiment, ExperimentConfig, NewsParams, PolicyKind, Summary};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Upper bounds that keep a single call responsive in the browser.
const MAX_STEPS: usize = 20_000;
const MAX_TRIALS: usize = 20;
const MERIT_SAMPLES: usize = 20_000;

fn news_config(policy: &str, lambda: f64, steps: usize, trials: usize, seed: u64) -> Result<ExperimentConfig, String> {
    if steps == 0 || steps > MAX_STEPS {
        return Err(format!("steps must lie in 1..={MAX_STEPS}"));
    }
    if trials == 0 || trials > MAX_TRIALS {
        return Err(format!("trials must lie in 1..={MAX_TRIALS}"));
    }
    let cfg = ExperimentConfig {
        policy: policy.parse::<PolicyKind>().map_err(|e| e.to_string())?,
        lambda,
        steps,
        trials,
        seed,
        metric_cadence: (steps / 60).max(1),
        final_window: (steps / 6).max(1),
        parallel: false,
        news: NewsParams {
            merit_samples: MERIT_SAMPLES,
            ..NewsParams::default()
        },
        ..ExperimentConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
pub struct Curve {
    pub steps: Vec<usize>,
    pub ndcg10: Vec<f64>,
    pub unfairness10: Vec<f64>,
    pub ips_error: Vec<f64>,
}

/// Trial-averaged NDCG@10, Unfairness@10 and estimator error over time.
pub fn convergence_json(policy: &str, lambda: f64, steps: usize, trials: usize, seed: u64) -> Result<String, String> {
    let cfg = news_config(policy, lambda, steps, trials, seed)?;
    let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let col = out.log.ks.iter().position(|&k| k == 10).ok_or("no k = 10 column")?;
    let first = &out.trials[0].rows;
    let mut curve = Curve {
        steps: first.iter().map(|r| r.step).collect(),
        ndcg10: vec![0.0; first.len()],
        unfairness10: vec![0.0; first.len()],
        ips_error: vec![0.0; first.len()],
    };
    for t in &out.trials {
        for (i, r) in t.rows.iter().enumerate() {
            curve.ndcg10[i] += r.ndcg[col] / trials as f64;
            curve.unfairness10[i] += r.unfairness[col] / trials as f64;
            curve.ips_error[i] += r.ips_error / trials as f64;
        }
    }
    serde_json::to_string(&curve).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub ndcg10: f64,
    pub unfairness10: f64,
    pub unfairness10_std: f64,
}

/// Final MMF metrics for each λ in `lambdas`.
pub fn lambda_sweep_json(lambdas: &[f64], steps: usize, trials: usize, seed: u64) -> Result<String, String> {
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let cfg = news_config("mmf", lambda, steps, trials, seed)?;
        let s = run_experiment(&cfg).map_err(|e| e.to_string())?.summary;
        let unf = &s.metrics["unfairness@10"];
        points.push(SweepPoint {
            lambda,
            ndcg10: s.metrics["ndcg@10"].mean,
            unfairness10: unf.mean,
            unfairness10_std: unf.std,
        });
    }
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct PrefixProfile {
    pub ks: Vec<usize>,
    pub ndcg: Vec<f64>,
    pub unfairness: Vec<f64>,
}

fn profile(s: &Summary, ks: &[usize]) -> PrefixProfile {
    PrefixProfile {
        ks: ks.to_vec(),
        ndcg: ks.iter().map(|k| s.metrics[&format!("ndcg@{k}")].mean).collect(),
        unfairness: ks.iter().map(|k| s.metrics[&format!("unfairness@{k}")].mean).collect(),
    }
}

/// Final NDCG@k and Unfairness@k against the prefix length k.
pub fn prefix_profile_json(policy: &str, lambda: f64, steps: usize, trials: usize, seed: u64) -> Result<String, String> {
    let mut cfg = news_config(policy, lambda, steps, trials, seed)?;
    let ks: Vec<usize> = (1..=cfg.news.num_docs).collect();
    cfg.tracked_ks = Some(ks.clone());
    let out = run_experiment(&cfg).map_err(|e| e.to_string())?;
    serde_json::to_string(&profile(&out.summary, &ks)).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn convergence(policy: &str, lambda: f64, steps: usize, trials: usize, seed: u32) -> Result<String, JsValue> {
    convergence_json(policy, lambda, steps, trials, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn lambda_sweep(lambdas: Vec<f64>, steps: usize, trials: usize, seed: u32) -> Result<String, JsValue> {
    lambda_sweep_json(&lambdas, steps, trials, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn prefix_profile(policy: &str, lambda: f64, steps: usize, trials: usize, seed: u32) -> Result<String, JsValue> {
    prefix_profile_json(policy, lambda, steps, trials, seed.into()).map_err(|e| JsValue::from_str(&e))
}
