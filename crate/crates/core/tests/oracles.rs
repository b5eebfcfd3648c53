//! Analytic results checked against Monte Carlo.

use ssta::distributions::max2_correlated_pdf;
use ssta::gate_delay::{gate_moments, GateCdf};
use ssta::monte_carlo::{ks_distance, mc_gate, mc_graph, sample_correlated_pair};
use ssta::timing_graph::load_graph;
use ssta::timing_graph::propagate::{gakeda_run, PropagationConfig};
use ssta::{CorrelatedPair, GateInputs, GaussianParams, McConfig, McResult, PdfForm};

fn n(mu: f64, sigma: f64) -> GaussianParams {
    GaussianParams::new(mu, sigma).unwrap()
}

#[test]
fn correlated_max_density_matches_histogram() {
    let pair = CorrelatedPair::new(n(1.0, 0.75), n(2.0, 3.0), 0.5).unwrap();
    let s = sample_correlated_pair(&pair, &McConfig::new(1_000_000, 5).unwrap()).unwrap();
    let r = McResult::from_samples(s.iter().map(|p| p.0.max(p.1)).collect()).unwrap();
    let h = &r.histogram;
    let n_total = r.n as f64;
    for k in (0..h.counts.len()).step_by(7) {
        let x = 0.5 * (h.edges[k] + h.edges[k + 1]);
        let f = max2_correlated_pdf(x, &pair).unwrap();
        let p = f * h.bin_width(k);
        let se = (p * (1.0 - p) / n_total).sqrt() / h.bin_width(k);
        // bin-averaging bias is second order in the width
        assert!((h.density(k) - f).abs() < 5.0 * se + 2e-3 * f + 1e-4, "x = {x}");
    }
}

#[test]
fn gate_moments_match_simulation() {
    let g = GateInputs::new(n(1.0, 0.75), n(2.0, 3.0), n(0.0, 1.0), 0.5).unwrap();
    let a = gate_moments(&g).unwrap();
    let r = mc_gate(&g, &McConfig::new(2_000_000, 42).unwrap()).unwrap();
    assert!((a.mean - r.mean).abs() < 4.0 * r.se_mean);
    assert!((a.std - r.std).abs() < 4.0 * r.se_std);
    assert!((a.skewness - r.skewness).abs() < 4.0 * r.se_skewness);
    assert!((a.kurtosis - r.kurtosis).abs() < 4.0 * r.se_kurtosis);
}

#[test]
fn dominated_gate_simulation() {
    let g = GateInputs::independent(n(10.0, 0.5), n(0.0, 0.5), n(1.0, 0.2)).unwrap();
    let r = mc_gate(&g, &McConfig::new(200_000, 1).unwrap()).unwrap();
    assert!((r.mean - 11.0).abs() < 4.0 * r.se_mean);
}

#[test]
fn weak_corr_fits_better_with_wider_operation_time() {
    let cfg = McConfig::new(1_000_000, 42).unwrap();
    let ks = |sd0: f64| {
        let g = GateInputs::new(n(1.0, 0.5), n(3.0, 1.9), n(3.0, sd0), 0.6).unwrap();
        let r = mc_gate(&g, &cfg).unwrap();
        let cdf = GateCdf::new(&g, PdfForm::WeakCorr, 4000).unwrap();
        ks_distance(r.sorted_samples(), |x| cdf.eval(x)).unwrap()
    };
    let (narrow, wide) = (ks(0.5), ks(1.0));
    assert!(wide < narrow, "wide {wide} narrow {narrow}");
}

#[test]
fn exact_cdf_passes_ks_at_reference_parameters() {
    let g = GateInputs::new(n(1.0, 0.75), n(2.0, 3.0), n(0.0, 1.0), 0.5).unwrap();
    let r = mc_gate(&g, &McConfig::new(1_000_000, 9).unwrap()).unwrap();
    let cdf = GateCdf::new(&g, PdfForm::Exact, 4000).unwrap();
    let d = ks_distance(r.sorted_samples(), |x| cdf.eval(x)).unwrap();
    assert!(d < 1.95 / (r.n as f64).sqrt(), "{d}");
}

#[test]
fn two_level_graph_matches_simulation() {
    let text = r#"{
      "nodes": [
        {"id": "g1", "kind": "gate", "op_time": {"mu": 1.0, "sigma": 0.4}, "inputs": ["a", "b"]},
        {"id": "g2", "kind": "gate", "op_time": {"mu": 0.8, "sigma": 0.3}, "inputs": ["g1", "c"]},
        {"id": "g3", "kind": "gate", "op_time": {"mu": 0.5, "sigma": 0.6}, "inputs": ["g2", "d", "e"]},
        {"id": "out", "kind": "sink", "inputs": ["g3"]}
      ],
      "sources": [
        {"id": "a", "arrival": {"mu": 0.0, "sigma": 1.0}},
        {"id": "b", "arrival": {"mu": 0.4, "sigma": 0.7}},
        {"id": "c", "arrival": {"mu": 2.0, "sigma": 0.9}},
        {"id": "d", "arrival": {"mu": 2.5, "sigma": 0.5}},
        {"id": "e", "arrival": {"mu": 1.0, "sigma": 2.0}}
      ]
    }"#;
    let g = load_graph(text).unwrap();
    let a = gakeda_run(&g, &PropagationConfig::default()).unwrap();
    let mc = mc_graph(&g, &McConfig::new(1_000_000, 42).unwrap()).unwrap();
    let r = &mc["out"];
    let m = a.get("out").unwrap().moments;
    assert!((m.mean - r.mean).abs() <= (3.0 * r.se_mean).max(5e-3 * r.mean.abs()));
    assert!(((m.std - r.std) / r.std).abs() < 0.02);
}

#[test]
fn correlated_sources_match_simulation() {
    let text = r#"{
      "nodes": [
        {"id": "g", "kind": "gate", "op_time": {"mu": 0.0, "sigma": 1.0}, "inputs": ["a", "b"], "input_rho": 0.5}
      ],
      "sources": [
        {"id": "a", "arrival": {"mu": 1.0, "sigma": 0.75}},
        {"id": "b", "arrival": {"mu": 2.0, "sigma": 3.0}}
      ]
    }"#;
    let g = load_graph(text).unwrap();
    let a = gakeda_run(&g, &PropagationConfig::default()).unwrap();
    let r = &mc_graph(&g, &McConfig::new(1_000_000, 42).unwrap()).unwrap()["g"];
    let m = a.get("g").unwrap().moments;
    assert!((m.mean - r.mean).abs() < 1e-3 * r.mean);
    assert!(((m.std - r.std) / r.std).abs() < 0.01);
}
