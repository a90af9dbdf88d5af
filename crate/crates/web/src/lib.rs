//! WebAssembly bindings behind the static demo page in `www/`.
//!
//! Each export takes plain strings and numbers and returns a JSON string. The
//! `*_value` functions hold the logic and are tested natively.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use searchlab::config::NasSpace;
use searchlab::metrics::{decompose_all, read_run_table_from};
use searchlab::stats::{bootstrap_ci, cohens_d, mann_whitney_u, welch_t};
use searchlab::ArchConfig;

/// Numbers separated by commas, semicolons or whitespace.
pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: `{s}`")))
        .collect()
}

/// Decomposition per track from `track,condition,run,auc_oc,best_bpb` CSV.
pub fn decompose_value(csv: &str) -> Result<Value, String> {
    let rows = read_run_table_from(csv.as_bytes()).map_err(|e| e.to_string())?;
    if rows.is_empty() {
        return Err("no rows".into());
    }
    let out = decompose_all(&rows)
        .into_iter()
        .map(|(track, res)| match res {
            Ok(d) => serde_json::to_value(d).unwrap_or(Value::Null),
            Err(e) => json!({ "track": track, "error": e.to_string() }),
        })
        .collect();
    Ok(Value::Array(out))
}

/// Welch, Mann-Whitney, Cohen's d and a bootstrap CI for two groups.
pub fn compare_value(a: &str, b: &str, resamples: usize, seed: u64) -> Result<Value, String> {
    let (a, b) = (parse_numbers(a)?, parse_numbers(b)?);
    let err = |e: searchlab::stats::StatsError| e.to_string();
    let welch = welch_t(&a, &b).map_err(err)?;
    let mw = mann_whitney_u(&a, &b).map_err(err)?;
    let boot = bootstrap_ci(&a, &b, resamples.clamp(1, 100_000), seed).map_err(err)?;
    Ok(json!({
        "n_a": a.len(),
        "n_b": b.len(),
        "mean_diff": boot.statistic,
        "cohens_d": cohens_d(&a, &b).ok(),
        "welch_t": welch.statistic,
        "welch_p": welch.raw_p,
        "mann_whitney_u": mw.statistic,
        "mann_whitney_p": mw.raw_p,
        "ci_low": boot.ci_low,
        "ci_high": boot.ci_high,
    }))
}

/// `n` random-NAS architectures from the desk or full-scale space.
pub fn sample_value(n: usize, seed: u64, full_scale: bool) -> Value {
    let (space, base) = if full_scale {
        (NasSpace::full_scale(), ArchConfig::baseline(256))
    } else {
        (NasSpace::desk(), ArchConfig::desk(64))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = |a: &ArchConfig| searchlab::model::param_count_for(a, 37);
    Value::Array(
        (0..n.min(1000))
            .map(|_| {
                let a = space.sample(&base, &mut rng);
                json!({
                    "depth": a.depth,
                    "width": a.width,
                    "heads": a.heads,
                    "activation": a.activation.as_str(),
                    "attention_pattern": a.attention_pattern.as_str(),
                    "params_vocab37": params(&a),
                })
            })
            .collect(),
    )
}

fn js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn decompose(csv: &str) -> Result<String, JsError> {
    js(decompose_value(csv))
}

#[wasm_bindgen]
pub fn compare(a: &str, b: &str, resamples: u32, seed: u32) -> Result<String, JsError> {
    js(compare_value(a, b, resamples as usize, seed as u64))
}

#[wasm_bindgen(js_name = sampleNas)]
pub fn sample_nas(n: u32, seed: u32, full_scale: bool) -> String {
    sample_value(n as usize, seed as u64, full_scale).to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposes_csv() {
        let csv = "track,condition,run,auc_oc,best_bpb\n\
                   t,fixed_default,1,100,1.0\n\
                   t,hp_only,1,95,0.9\n\
                   t,agent,1,90,0.8\n";
        let v = decompose_value(csv).unwrap();
        assert!((v[0]["hp_pct"].as_f64().unwrap() - 50.0).abs() < 1e-9);
        assert!(decompose_value("track,condition,run,auc_oc,best_bpb\n").is_err());
        let partial = decompose_value("track,condition,run,auc_oc,best_bpb\nt,agent,1,1,1\n").unwrap();
        assert!(partial[0]["error"].is_string());
    }

    #[test]
    fn compares_groups() {
        let v = compare_value("1 2 3 4", "5,6,7,8", 500, 1).unwrap();
        assert_eq!(v["mann_whitney_u"], 0.0);
        assert!(v["welch_p"].as_f64().unwrap() < 0.01);
        assert!(v["ci_high"].as_f64().unwrap() < 0.0);
        assert!(compare_value("1 x", "2 3", 10, 0).is_err());
        assert!(compare_value("1", "2 3", 10, 0).is_err());
    }

    #[test]
    fn samples_in_space() {
        let v = sample_value(20, 4, false);
        let space = NasSpace::desk();
        for a in v.as_array().unwrap() {
            assert!(space.widths.contains(&(a["width"].as_u64().unwrap() as usize)));
        }
        assert_eq!(v, sample_value(20, 4, false));
    }
}
