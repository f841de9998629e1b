#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pivotlogit::estimate::{AlternativeAttributes, ChoiceObservation, ModelSpec};
use pivotlogit::Purpose;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pivotlogit"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn write(dir: &Path, name: &str, content: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, content).unwrap();
    p
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub const ALTS: [&str; 3] = ["rh", "auto", "transit"];

/// True coefficients for the synthetic stated-preference data.
pub struct Truth {
    pub asc_auto: f64,
    pub asc_transit: f64,
    pub beta_time: f64,
    pub beta_cost_low: f64,
    pub beta_cost_high: f64,
}

pub const TRUTH: Truth = Truth {
    asc_auto: 0.3,
    asc_transit: 0.5,
    beta_time: -0.05,
    beta_cost_low: -0.4,
    beta_cost_high: -0.2,
};

/// Reference alternative `rh`; cost coefficient split by the `low_income` / `high_income` dummies.
pub fn segmented_spec() -> ModelSpec {
    serde_json::from_str(SEGMENTED_SPEC_JSON).unwrap()
}

pub const SEGMENTED_SPEC_JSON: &str = r#"{
  "schema_version": 1,
  "alternatives": ["rh", "auto", "transit"],
  "reference": "rh",
  "terms": [
    {"name": "asc_auto", "alternatives": ["auto"], "source": "constant"},
    {"name": "asc_transit", "alternatives": ["transit"], "source": "constant"},
    {"name": "beta_time", "alternatives": ["rh", "auto", "transit"], "source": "attribute", "attribute": "time"},
    {"name": "beta_cost_low", "alternatives": ["rh", "auto", "transit"], "source": "attribute", "attribute": "cost", "interact": "low_income"},
    {"name": "beta_cost_high", "alternatives": ["rh", "auto", "transit"], "source": "attribute", "attribute": "cost", "interact": "high_income"}
  ]
}"#;

/// Respondents answer `per_respondent` scenarios; purposes alternate HBW / HBO by respondent.
pub fn simulate_observations(
    seed: u64,
    respondents: usize,
    per_respondent: usize,
    t: &Truth,
) -> Vec<ChoiceObservation<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(respondents * per_respondent);
    for r in 0..respondents {
        let low = if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 };
        let purpose = if r % 2 == 0 {
            Purpose::HBW
        } else {
            Purpose::HBO
        };
        for s in 0..per_respondent {
            let mut alternatives = BTreeMap::new();
            let mut best = (f64::NEG_INFINITY, "");
            for alt in ALTS {
                let time = rng.random_range(10.0..60.0);
                let cost = rng.random_range(1.0..15.0);
                let asc = match alt {
                    "auto" => t.asc_auto,
                    "transit" => t.asc_transit,
                    _ => 0.0,
                };
                let bc = low * t.beta_cost_low + (1.0 - low) * t.beta_cost_high;
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                let total = asc + t.beta_time * time + bc * cost - (-u.ln()).ln();
                if total > best.0 {
                    best = (total, alt);
                }
                alternatives.insert(
                    alt.to_string(),
                    AlternativeAttributes {
                        available: true,
                        values: BTreeMap::from([
                            ("time".to_string(), time),
                            ("cost".to_string(), cost),
                        ]),
                    },
                );
            }
            out.push(ChoiceObservation {
                respondent_id: format!("r{r:05}"),
                purpose,
                scenario_id: format!("s{s}"),
                alternatives,
                sociodemographics: BTreeMap::from([
                    ("low_income".to_string(), low),
                    ("high_income".to_string(), 1.0 - low),
                ]),
                chosen: best.1.to_string(),
                weight: 1.0,
            });
        }
    }
    out
}

pub fn observations_csv(obs: &[ChoiceObservation<f64>]) -> String {
    let mut s = String::from("respondent_id,purpose,scenario_id,chosen,low_income,high_income");
    for alt in ALTS {
        write!(s, ",time_{alt},cost_{alt}").unwrap();
    }
    s.push('\n');
    for o in obs {
        write!(
            s,
            "{},{},{},{},{},{}",
            o.respondent_id,
            o.purpose,
            o.scenario_id,
            o.chosen,
            o.sociodemographics["low_income"],
            o.sociodemographics["high_income"]
        )
        .unwrap();
        for alt in ALTS {
            let v = &o.alternatives[alt].values;
            write!(s, ",{},{}", v["time"], v["cost"]).unwrap();
        }
        s.push('\n');
    }
    s
}

pub const MODEL_JSON: &str = r#"{
  "schema_version": 1,
  "modes": ["walk", "bicycle", "autoDriver", "autoPassenger", "bus", "metro", "train"],
  "nests": [
    {"name": "walk", "nc": 1.0, "members": ["walk"]},
    {"name": "bicycle", "nc": 1.0, "members": ["bicycle"]},
    {"name": "auto", "nc": 0.6, "members": ["autoDriver", "autoPassenger"]},
    {"name": "transit", "nc": 0.5, "members": ["bus", "metro", "train"]}
  ],
  "coefficients": {"beta_gc_metro": -0.04},
  "reference_mode": "metro"
}"#;

/// Run config over seeded synthetic trips; writes `model.json` and `run.json` into `dir`.
pub fn synthetic_run(dir: &Path, count: usize, variant: &str) -> PathBuf {
    write(dir, "model.json", MODEL_JSON);
    let cfg = format!(
        r#"{{
  "schema_version": 1,
  "model": "model.json",
  "synthetic_trips": {{"count": {count}}},
  "seed": 20200101,
  "output_dir": "out",
  "new_mode": {{"time_ratio": 1.2}},
  "vot": {{
    "rh": {{"lt1500": {{"HBW": 13.48, "HBO": 10.47}}, "ge1500": {{"HBW": 15.92, "HBO": 18.35}}}},
    "income_group_map": {{"low": "lt1500", "mid": "ge1500", "high": "ge1500"}},
    "purpose_map": {{"HBE": "HBO", "HBS": "HBO", "NHBW": "HBW", "NHBO": "HBO"}}
  }},
  "grid": {{"preset": "paper-grid"}},
  "variant": "{variant}"
}}"#
    );
    write(dir, "run.json", &cfg)
}
