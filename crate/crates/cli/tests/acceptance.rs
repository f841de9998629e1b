//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero if any fails.
//! Tolerances and sizes are pinned here.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use pivotlogit::choice::{scaled_logsum, ModeId, NestSpec, NestedLogitModel, UtilityVector};
use pivotlogit::estimate::{fit, log_likelihood, FitOptions, ModelSpec};
use pivotlogit::newmode::{
    inject_rh, prob_transit_new, vot, NewModeParams, TripContext, Variant, VotTable,
};
use pivotlogit::scenario::{
    generate_synthetic_trips, sweep, Aggregation, Application, SyntheticTripConfig,
};
use pivotlogit::weighting::{ipf, weighted_shares, IpfOptions, MarginTable, RespondentRecord};
use pivotlogit::Purpose;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

const ORACLE_INSTANCES: usize = 250;
const ORACLE_TOL: f64 = 1e-10;
const ORACLE_BUDGET: Duration = Duration::from_secs(1);
const FIXED_POINT_BASES: usize = 1000;
const VOT_SCALING_TOL: f64 = 1e-12;
const BINARY_TOL: f64 = 1e-6;
const RECOVERY_N: usize = 10_000;
const RECOVERY_SE: f64 = 3.0;
const FD_STEP: f64 = 1e-5;
const FD_DRAWS: usize = 20;
const FD_REL_TOL: f64 = 1e-6;
const ESTIMATION_BUDGET: Duration = Duration::from_secs(30);
const IPF_INSTANCES: usize = 50;
const IPF_TOL: f64 = 1e-6;
const IPF_MAX_SWEEPS: usize = 1000;
const GENDER_WEIGHT: f64 = 48.92 / 45.00;
const GENDER_TOL: f64 = 0.01;
const SWEEP_TRIPS: usize = 10_000;
const SWEEP_BUDGET: Duration = Duration::from_secs(10);
const CONSERVATION_TOL: f64 = 1e-9;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("oracle equivalence of the incremental injection", c1_oracle),
        ("transit pivot fixed point", c2_fixed_point),
        ("value-of-time arithmetic", c3_vot),
        ("maximum-likelihood correctness", c4_mle),
        ("iterative proportional fitting", c5_ipf),
        ("scenario sweep behaviour", c6_sweep),
        ("probability conservation", c7_conservation),
        ("sweep determinism", c8_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.into_iter().enumerate() {
        let verdict = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match verdict {
            Ok(d) => println!("PASS {}: {name} ({d})", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {}: {name} ({d})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------------------------

/// Textbook two-level nested logit, written independently of the library.
fn direct_nested(nests: &[(f64, Vec<(&str, f64)>)]) -> BTreeMap<String, f64> {
    let logsums: Vec<f64> = nests
        .iter()
        .map(|(nc, ms)| nc * ms.iter().map(|(_, u)| (u / nc).exp()).sum::<f64>().ln())
        .collect();
    let top: f64 = logsums.iter().map(|l| l.exp()).sum();
    let mut out = BTreeMap::new();
    for ((nc, ms), l) in nests.iter().zip(&logsums) {
        let inner: f64 = ms.iter().map(|(_, u)| (u / nc).exp()).sum();
        for (m, u) in ms {
            out.insert(m.to_string(), l.exp() / top * (u / nc).exp() / inner);
        }
    }
    out
}

fn single_group_vots(vot_eur_hr: f64, purpose: Purpose) -> VotTable<f64> {
    VotTable {
        rh: BTreeMap::from([("g".to_string(), BTreeMap::from([(purpose, vot_eur_hr)]))]),
        income_group_map: BTreeMap::from([("g".to_string(), "g".to_string())]),
        purpose_map: BTreeMap::new(),
        base: BTreeMap::new(),
    }
}

fn c1_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..ORACLE_INSTANCES {
        let nc = rng.random_range(0.15..=1.0);
        let with_train = rng.random_bool(0.5);
        let mut transit = vec!["bus", "metro"];
        if with_train {
            transit.push("train");
        }
        let mut modes = vec!["walk", "autoDriver"];
        modes.extend(&transit);
        let ids: Vec<ModeId> = modes.iter().map(|m| ModeId::from(*m)).collect();
        let model = NestedLogitModel::new(
            ids.clone(),
            vec![
                NestSpec {
                    name: "walk".into(),
                    nc: 1.0,
                    members: vec![ids[0].clone()],
                },
                NestSpec {
                    name: "auto".into(),
                    nc: 1.0,
                    members: vec![ids[1].clone()],
                },
                NestSpec {
                    name: "transit".into(),
                    nc,
                    members: ids[2..].to_vec(),
                },
            ],
            BTreeMap::new(),
            ModeId::from("metro"),
        )
        .unwrap();
        let us: Vec<f64> = modes.iter().map(|_| rng.random_range(-3.0..3.0)).collect();
        let base = UtilityVector::from_pairs(modes.iter().copied().zip(us.iter().copied()));

        let ratio = rng.random_range(1.0..1.5);
        let fare = rng.random_range(0.5..6.0);
        let beta = rng.random_range(-0.1..-0.01);
        let vot_eur_hr = rng.random_range(5.0..25.0);
        let rh_time = rng.random_range(5.0..60.0);
        let distance = rng.random_range(1.0..20.0);
        let metro_gc = rng.random_range(10.0..60.0);
        let params = NewModeParams {
            time_ratio: ratio,
            fare_per_km: fare,
            beta_gc_metro: beta,
            variant: Variant::Normalized,
        };
        let trip = TripContext {
            purpose: Purpose::HBW,
            income_group: "g".into(),
            rh_time_min: rh_time,
            distance_km: distance,
            metro_gc_min: metro_gc,
            in_service_area: true,
        };
        let got = inject_rh(
            &model,
            &base,
            &trip,
            &params,
            &single_group_vots(vot_eur_hr, Purpose::HBW),
        )
        .unwrap();

        let gc_rh = ratio * rh_time + distance * fare / (vot_eur_hr / 60.0);
        let u_rh = us[3] + beta * (gc_rh - metro_gc);
        let mut transit_members: Vec<(&str, f64)> = transit
            .iter()
            .copied()
            .zip(us[2..].iter().copied())
            .collect();
        transit_members.push(("rideHailing", u_rh));
        let expected = direct_nested(&[
            (1.0, vec![("walk", us[0])]),
            (1.0, vec![("autoDriver", us[1])]),
            (nc, transit_members),
        ]);
        for (m, p) in &expected {
            let g = got.probabilities[&ModeId::from(m.as_str())];
            worst = worst.max((g - p).abs());
        }
    }
    let elapsed = started.elapsed();
    check(
        worst <= ORACLE_TOL && elapsed < ORACLE_BUDGET,
        format!(
            "{ORACLE_INSTANCES} instances, max |Δp| = {worst:.2e}, {:.3} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn c2_fixed_point() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..FIXED_POINT_BASES {
        let nc = rng.random_range(0.1..=1.0);
        let members: Vec<f64> = (0..rng.random_range(1..5))
            .map(|_| rng.random_range(-8.0..8.0))
            .collect();
        let others: Vec<f64> = (0..rng.random_range(1..4))
            .map(|_| rng.random_range(-8.0..8.0))
            .collect();
        let base_ls = scaled_logsum(&members, nc);
        let p_t = base_ls.exp() / (base_ls.exp() + others.iter().map(|l| l.exp()).sum::<f64>());
        // recomputed from the same inputs, as the injection does for an unchanged nest
        let new_ls = scaled_logsum(&members, nc);
        let p_new = prob_transit_new(new_ls, base_ls, &others, p_t).unwrap();
        if p_new.to_bits() != p_t.to_bits() {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0,
        format!("{FIXED_POINT_BASES} bases, {mismatches} bitwise mismatches"),
    )
}

fn c3_vot() -> Verdict {
    let exact = vot(-0.2, -0.8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let bt = rng.random_range(-1.0..-1e-3);
        let bc = rng.random_range(-2.0..-1e-2);
        let k = 10f64.powf(rng.random_range(-3.0..3.0));
        worst = worst.max((vot(k * bt, k * bc).unwrap() - vot(bt, bc).unwrap()).abs());
    }
    check(
        exact == 15.0 && worst <= VOT_SCALING_TOL,
        format!("vot(-0.2,-0.8) = {exact}, max scaling drift {worst:.1e}"),
    )
}

fn binary_spec() -> ModelSpec {
    serde_json::from_str(
        r#"{"alternatives": ["yes", "no"], "reference": "no",
            "terms": [{"name": "asc_yes", "alternatives": ["yes"], "source": "constant"}]}"#,
    )
    .unwrap()
}

fn pooled_spec() -> ModelSpec {
    serde_json::from_str(
        r#"{"alternatives": ["rh", "auto", "transit"], "reference": "rh", "terms": [
            {"name": "asc_auto", "alternatives": ["auto"], "source": "constant"},
            {"name": "asc_transit", "alternatives": ["transit"], "source": "constant"},
            {"name": "beta_time", "alternatives": ["rh", "auto", "transit"], "source": "attribute", "attribute": "time"},
            {"name": "beta_cost", "alternatives": ["rh", "auto", "transit"], "source": "attribute", "attribute": "cost"}]}"#,
    )
    .unwrap()
}

fn c4_mle() -> Verdict {
    let started = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;

    // constant-only binary model on 70 / 100
    let binary: Vec<_> = (0..100)
        .map(|i| {
            let alt = |a: &str| {
                (
                    a.to_string(),
                    pivotlogit::estimate::AlternativeAttributes {
                        available: true,
                        values: BTreeMap::new(),
                    },
                )
            };
            pivotlogit::estimate::ChoiceObservation {
                respondent_id: format!("b{i}"),
                purpose: Purpose::HBW,
                scenario_id: "s".into(),
                alternatives: BTreeMap::from([alt("yes"), alt("no")]),
                sociodemographics: BTreeMap::new(),
                chosen: if i < 70 { "yes" } else { "no" }.into(),
                weight: 1.0,
            }
        })
        .collect();
    let b = fit(&binary, &binary_spec(), &FitOptions::default()).unwrap();
    let err = (b.coefficient("asc_yes").unwrap() - (7.0f64 / 3.0).ln()).abs();
    ok &= err <= BINARY_TOL;
    notes.push(format!("ln(7/3) error {err:.1e}"));

    // recovery on N = 10,000
    let truth = Truth {
        asc_auto: 0.3,
        asc_transit: 0.5,
        beta_time: -0.05,
        beta_cost_low: -0.4,
        beta_cost_high: -0.4,
    };
    let data = simulate_observations(4, RECOVERY_N / 4, 4, &truth);
    let spec = pooled_spec();
    let r = fit(&data, &spec, &FitOptions::default()).unwrap();
    let truth_of = [
        ("asc_auto", 0.3),
        ("asc_transit", 0.5),
        ("beta_time", -0.05),
        ("beta_cost", -0.4),
    ];
    let worst_z = truth_of
        .iter()
        .map(|(n, t)| ((r.coefficient(n).unwrap() - t) / r.std_error(n).unwrap()).abs())
        .fold(0.0, f64::max);
    ok &= r.ensure_converged().is_ok() && worst_z <= RECOVERY_SE;
    notes.push(format!("N={} max |z| {worst_z:.2}", data.len()));

    // analytic vs central-difference gradient
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..FD_DRAWS {
        let beta: Vec<f64> = truth_of
            .iter()
            .map(|(_, t)| t + rng.random_range(-0.5..0.5) * t.abs().max(0.1))
            .collect();
        let (_, g) = log_likelihood(&data, &spec, &beta).unwrap();
        for k in 0..beta.len() {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[k] += FD_STEP;
            dn[k] -= FD_STEP;
            let fd = (log_likelihood(&data, &spec, &up).unwrap().0
                - log_likelihood(&data, &spec, &dn).unwrap().0)
                / (2.0 * FD_STEP);
            worst_rel = worst_rel.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        }
    }
    ok &= worst_rel <= FD_REL_TOL;
    notes.push(format!("gradient rel err {worst_rel:.1e}"));

    let elapsed = started.elapsed();
    ok &= elapsed < ESTIMATION_BUDGET;
    notes.push(format!("{:.2} s", elapsed.as_secs_f64()));
    check(ok, notes.join(", "))
}

/// Three control variables with targets from a hidden positive weighting, so margins are feasible.
fn feasible_instance(rng: &mut ChaCha8Rng) -> (Vec<RespondentRecord>, MarginTable<f64>) {
    let vars = [("gender", 2usize), ("age", 5), ("household", 4)];
    let n = rng.random_range(60..400);
    let mut records = Vec::with_capacity(n);
    let mut hidden = Vec::with_capacity(n);
    for i in 0..n {
        let cats: Vec<(String, String)> = vars
            .iter()
            .map(|(v, k)| {
                let c = if i < *k { i } else { rng.random_range(0..*k) };
                (v.to_string(), format!("c{c}"))
            })
            .collect();
        records.push(RespondentRecord {
            id: format!("r{i}"),
            categories: cats.into_iter().collect(),
        });
        hidden.push(rng.random_range(0.1..10.0));
    }
    let total: f64 = hidden.iter().sum();
    let margins = vars
        .iter()
        .map(|(v, k)| {
            let shares = (0..*k)
                .map(|c| {
                    let cat = format!("c{c}");
                    let s: f64 = records
                        .iter()
                        .zip(&hidden)
                        .filter(|(r, _)| r.categories[*v] == cat)
                        .map(|(_, h)| h)
                        .sum();
                    (cat, s / total)
                })
                .collect();
            (v.to_string(), shares)
        })
        .collect();
    (records, MarginTable::new(margins).unwrap())
}

fn c5_ipf() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut max_sweeps = 0;
    let mut all_converged = true;
    for _ in 0..IPF_INSTANCES {
        let (records, margins) = feasible_instance(&mut rng);
        let opts = IpfOptions {
            tol: IPF_TOL,
            max_iter: IPF_MAX_SWEEPS,
            ..IpfOptions::default()
        };
        let out = ipf(&records, &margins, &opts).unwrap();
        all_converged &= out.report.converged;
        max_sweeps = max_sweeps.max(out.report.iterations);
        // residual recomputed from the returned weights
        let total: f64 = out.weights.values().iter().sum();
        for v in margins.variables() {
            for (cat, target) in margins.shares(v).unwrap() {
                let s: f64 = records
                    .iter()
                    .filter(|r| r.categories[v] == *cat)
                    .map(|r| out.weights.get(&r.id).unwrap())
                    .sum();
                worst = worst.max((s / total - target).abs());
            }
        }
    }

    let records: Vec<RespondentRecord> = (0..100)
        .map(|i| {
            RespondentRecord::new(
                format!("g{i}"),
                [("gender", if i < 45 { "male" } else { "female" })],
            )
        })
        .collect();
    let margins = MarginTable::new(vec![(
        "gender".to_string(),
        vec![("male".to_string(), 0.4892), ("female".to_string(), 0.5108)],
    )])
    .unwrap();
    let out = ipf(&records, &margins, &IpfOptions::default()).unwrap();
    let male = out.weights.get("g0").unwrap();
    let shares = weighted_shares(&records, &out.weights, "gender").unwrap();

    check(
        all_converged
            && worst <= IPF_TOL
            && max_sweeps <= IPF_MAX_SWEEPS
            && (male - GENDER_WEIGHT).abs() <= GENDER_TOL
            && (male - 1.09).abs() <= GENDER_TOL
            && (shares["male"] - 0.4892).abs() <= IPF_TOL,
        format!(
            "{IPF_INSTANCES} instances, max residual {worst:.1e}, max {max_sweeps} sweeps; male weight {male:.4} (target 1.087, reported 1.09)"
        ),
    )
}

struct SweepFixture {
    model: NestedLogitModel<f64>,
    params: NewModeParams<f64>,
    vots: VotTable<f64>,
}

fn sweep_fixture(variant: Variant) -> SweepFixture {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_run(dir.path(), SWEEP_TRIPS, &variant.to_string());
    let run = pivotlogit::io::load_run(&cfg, None, None).unwrap();
    SweepFixture {
        model: run.model,
        params: run.params,
        vots: run.config.vot,
    }
}

fn c6_sweep() -> Verdict {
    let fx = sweep_fixture(Variant::Normalized);
    let started = Instant::now();
    let trips =
        generate_synthetic_trips::<f64>(20200101, SWEEP_TRIPS, &SyntheticTripConfig::default())
            .unwrap();
    let app = Application {
        model: &fx.model,
        params: &fx.params,
        vots: &fx.vots,
        aggregation: Aggregation::Expected,
    };
    let grid = pivotlogit::io::grid_from_preset("paper-grid").unwrap();
    let table = sweep(&trips, &app, &grid).unwrap();
    let elapsed = started.elapsed();

    let tts = [1.0, 1.1, 1.2, 1.5];
    let fares = [0.75, 1.5, 3.0, 6.0];
    let mut violations = Vec::new();
    let mut extremes_ok = true;
    for purpose in Purpose::ALL {
        let at = |t: f64, f: f64| table.rh_share_at(t, f, purpose).unwrap();
        for &t in &tts {
            for w in fares.windows(2) {
                if at(t, w[1]) > at(t, w[0]) {
                    violations.push(format!("{purpose} tt {t} fare {}→{}", w[0], w[1]));
                }
            }
        }
        for &f in &fares {
            for w in tts.windows(2) {
                if at(w[1], f) > at(w[0], f) {
                    violations.push(format!("{purpose} fare {f} tt {}→{}", w[0], w[1]));
                }
            }
        }
        let cells: Vec<(f64, f64, f64)> = tts
            .iter()
            .flat_map(|&t| fares.iter().map(move |&f| (t, f, 0.0)))
            .collect();
        let shares: Vec<(f64, f64, f64)> =
            cells.iter().map(|&(t, f, _)| (t, f, at(t, f))).collect();
        let max = shares
            .iter()
            .copied()
            .fold(
                (0.0, 0.0, f64::NEG_INFINITY),
                |a, b| if b.2 > a.2 { b } else { a },
            );
        let min =
            shares.iter().copied().fold(
                (0.0, 0.0, f64::INFINITY),
                |a, b| if b.2 < a.2 { b } else { a },
            );
        extremes_ok &= (max.0, max.1) == (1.0, 0.75) && (min.0, min.1) == (1.5, 6.0);
    }
    let hbw_base = table.rh_share_at(1.0, 3.0, Purpose::HBW).unwrap();
    check(
        violations.is_empty() && extremes_ok && elapsed < SWEEP_BUDGET && table.rows.len() == 17,
        format!(
            "{SWEEP_TRIPS} trips, {} scenarios, {} monotonicity violations, extremes {}, HBW base share {:.2}%, {:.2} s{}",
            table.rows.len(),
            violations.len(),
            if extremes_ok { "at (1.0, 0.75) / (1.5, 6.0)" } else { "misplaced" },
            hbw_base * 100.0,
            elapsed.as_secs_f64(),
            violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
        ),
    )
}

fn c7_conservation() -> Verdict {
    let trips = generate_synthetic_trips::<f64>(7, 3000, &SyntheticTripConfig::default()).unwrap();
    let grid = pivotlogit::io::grid_from_preset("paper-grid").unwrap();
    let mut worst: f64 = 0.0;
    let fx = sweep_fixture(Variant::Normalized);
    let app = Application {
        model: &fx.model,
        params: &fx.params,
        vots: &fx.vots,
        aggregation: Aggregation::Expected,
    };
    for row in &sweep(&trips, &app, &grid).unwrap().rows {
        for split in row.split.by_purpose.values() {
            worst = worst.max((split.shares.values().sum::<f64>() - 1.0).abs());
        }
    }

    let fx = sweep_fixture(Variant::AsPrinted);
    let app = Application {
        model: &fx.model,
        params: &fx.params,
        vots: &fx.vots,
        aggregation: Aggregation::Expected,
    };
    let printed = sweep(&trips, &app, &grid).unwrap();
    let mut dev_mismatch: f64 = 0.0;
    let mut max_dev: f64 = 0.0;
    for row in &printed.rows {
        for split in row.split.by_purpose.values() {
            let mass = split.shares.values().sum::<f64>() - 1.0;
            dev_mismatch = dev_mismatch.max((mass - split.mass_deviation).abs());
            max_dev = max_dev.max(split.mass_deviation.abs());
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summary.csv");
    pivotlogit::io::write_summary(&path, &printed, true).unwrap();
    let has_column = fs::read_to_string(&path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .ends_with("mass_deviation");
    check(
        worst <= CONSERVATION_TOL && has_column && dev_mismatch <= CONSERVATION_TOL && max_dev > 0.0,
        format!(
            "normalized max |Σp−1| {worst:.1e}; as-printed deviation reported up to {max_dev:.2e}, column present: {has_column}"
        ),
    )
}

fn c8_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_run(dir.path(), 2000, "normalized");
    let mut outputs = Vec::new();
    for name in ["first", "second"] {
        let out = dir.path().join(name);
        let o = run(&["sweep", "--config", p(&cfg), "--out-dir", p(&out)]);
        if o.status.code() != Some(0) {
            return Err(format!(
                "sweep failed: {}",
                String::from_utf8_lossy(&o.stderr)
            ));
        }
        outputs.push((
            fs::read(out.join("results.csv")).unwrap(),
            fs::read(out.join("summary.csv")).unwrap(),
        ));
    }
    let same = outputs[0] == outputs[1];
    check(
        same,
        format!(
            "results.csv {} bytes, identical: {same}",
            outputs[0].0.len()
        ),
    )
}
