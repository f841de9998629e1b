//! Ride-hailing scenarios over a trip population.
//!
//! A scenario fixes the congestion factor applied to the base auto time, the waiting time added
//! to it, and the fare per km. Shares are the mean of per-trip choice probabilities, grouped by
//! trip purpose.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choice::{
    modes, nested_probabilities, ModeId, NestSpec, NestedLogitModel, Probabilities, UtilityVector,
};
use crate::newmode::{inject_rh, NewModeError, NewModeParams, TripContext, VotTable};
use crate::purpose::Purpose;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("trip `{trip_id}`: {source}")]
    Trip {
        trip_id: String,
        #[source]
        source: NewModeError,
    },
    #[error("trip `{trip_id}` is invalid: {reason}")]
    InvalidTrip { trip_id: String, reason: String },
    #[error("scenario `{label}` is invalid: {reason}")]
    InvalidScenario { label: String, reason: String },
    #[error("no trips to evaluate")]
    NoTrips,
    #[error("scenario grid is empty")]
    EmptyGrid,
    #[error("invalid synthetic trip configuration: {0}")]
    InvalidConfig(String),
}

/// One trip of the application population.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip<T> {
    pub id: String,
    pub purpose: Purpose,
    /// Base auto travel time, minutes; the RH in-vehicle time before congestion scaling.
    pub auto_time_min: T,
    pub distance_km: T,
    pub income_group: String,
    pub in_service_area: bool,
    /// Generalized cost of metro for this trip, minutes.
    pub metro_gc_min: T,
    /// Base-model utilities of the existing modes.
    pub utilities: UtilityVector<T>,
}

impl<T: Scalar> Trip<T> {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |reason: &str| ScenarioError::InvalidTrip {
            trip_id: self.id.clone(),
            reason: reason.to_string(),
        };
        if !(self.auto_time_min > T::zero() && self.auto_time_min.is_finite()) {
            return Err(bad("auto time must be positive"));
        }
        if !(self.distance_km > T::zero() && self.distance_km.is_finite()) {
            return Err(bad("distance must be positive"));
        }
        if !(self.metro_gc_min >= T::zero() && self.metro_gc_min.is_finite()) {
            return Err(bad("metro generalized cost must be non-negative"));
        }
        Ok(())
    }
}

/// Ride-hailing service levels of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhLevels<T> {
    pub tt_factor: T,
    pub wait_min: T,
    pub fare_per_km: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario<T> {
    pub label: String,
    /// `None` for the baseline without ride-hailing.
    pub rh: Option<RhLevels<T>>,
}

impl<T: Scalar> Scenario<T> {
    pub fn baseline() -> Self {
        Self {
            label: "no-rh".into(),
            rh: None,
        }
    }

    pub fn with_levels(tt_factor: T, wait_min: T, fare_per_km: T) -> Self {
        Self {
            label: format!(
                "tt{:.1}_wait{}_fare{:.2}",
                tt_factor.to_f64_lossy(),
                wait_min.to_f64_lossy(),
                fare_per_km.to_f64_lossy()
            ),
            rh: Some(RhLevels {
                tt_factor,
                wait_min,
                fare_per_km,
            }),
        }
    }

    /// Travel time as auto time, no wait, €3.0/km.
    pub fn base_preset() -> Self {
        Self {
            label: "base".into(),
            ..Self::with_levels(T::one(), T::zero(), T::lit(3.0))
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if let Some(l) = &self.rh {
            let bad = |reason: &str| ScenarioError::InvalidScenario {
                label: self.label.clone(),
                reason: reason.to_string(),
            };
            if !(l.tt_factor >= T::one() && l.tt_factor.is_finite()) {
                return Err(bad("travel-time factor must be >= 1"));
            }
            if !(l.wait_min >= T::zero() && l.wait_min.is_finite()) {
                return Err(bad("waiting time must be >= 0"));
            }
            if !(l.fare_per_km >= T::zero()) {
                return Err(bad("fare must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Congestion factors with their paired waiting times (minutes).
pub const GRID_TIME_LEVELS: [(f64, f64); 4] = [(1.0, 0.0), (1.1, 4.0), (1.2, 8.0), (1.5, 18.0)];
/// Fares in €/km.
pub const GRID_FARES: [f64; 4] = [0.75, 1.5, 3.0, 6.0];

/// Baseline followed by the 4 × 4 travel-time × fare grid.
pub fn default_grid<T: Scalar>() -> Vec<Scenario<T>> {
    let mut grid = vec![Scenario::baseline()];
    for (tt, wait) in GRID_TIME_LEVELS {
        for fare in GRID_FARES {
            grid.push(Scenario::with_levels(
                T::lit(tt),
                T::lit(wait),
                T::lit(fare),
            ));
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PurposeSplit<T> {
    pub shares: BTreeMap<ModeId, T>,
    pub n_trips: usize,
    /// Mean per-trip `Σ p − 1`.
    pub mass_deviation: T,
}

/// Mode shares per purpose. Every split lists every mode, ride-hailing included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalSplit<T> {
    pub by_purpose: BTreeMap<Purpose, PurposeSplit<T>>,
}

impl<T: Scalar> ModalSplit<T> {
    pub fn share(&self, purpose: Purpose, mode: &ModeId) -> Option<T> {
        self.by_purpose.get(&purpose)?.shares.get(mode).copied()
    }

    pub fn rh_share(&self, purpose: Purpose) -> Option<T> {
        self.share(purpose, &ModeId::ride_hailing())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Mean of choice probabilities.
    #[default]
    Expected,
    /// One simulated choice per trip, drawn in trip order from a seeded stream.
    Sampled { seed: u64 },
}

/// Everything a scenario run needs besides the trips and the scenario itself.
#[derive(Debug, Clone)]
pub struct Application<'a, T> {
    pub model: &'a NestedLogitModel<T>,
    pub params: &'a NewModeParams<T>,
    pub vots: &'a VotTable<T>,
    pub aggregation: Aggregation,
}

struct TripOutcome<T> {
    probabilities: Probabilities<T>,
    deviation: T,
}

fn evaluate_trip<T: Scalar>(
    trip: &Trip<T>,
    app: &Application<'_, T>,
    scenario: &Scenario<T>,
) -> Result<TripOutcome<T>, ScenarioError> {
    let wrap = |source: NewModeError| ScenarioError::Trip {
        trip_id: trip.id.clone(),
        source,
    };
    match &scenario.rh {
        None => {
            let mut p =
                nested_probabilities(app.model, &trip.utilities).map_err(|e| wrap(e.into()))?;
            p.insert(ModeId::ride_hailing(), T::zero());
            Ok(TripOutcome {
                probabilities: p,
                deviation: T::zero(),
            })
        }
        Some(levels) => {
            let ctx = TripContext {
                purpose: trip.purpose,
                income_group: trip.income_group.clone(),
                rh_time_min: levels.tt_factor * trip.auto_time_min + levels.wait_min,
                distance_km: trip.distance_km,
                metro_gc_min: trip.metro_gc_min,
                in_service_area: trip.in_service_area,
            };
            let params = app.params.with_fare(levels.fare_per_km);
            let inj =
                inject_rh(app.model, &trip.utilities, &ctx, &params, app.vots).map_err(wrap)?;
            Ok(TripOutcome {
                probabilities: inj.probabilities,
                deviation: inj.mass_deviation,
            })
        }
    }
}

/// Evaluates every trip under `scenario` and aggregates shares by purpose.
///
/// Trips are evaluated in parallel; results are merged in input order, so the output does not
/// depend on thread scheduling.
pub fn run_scenario<T: Scalar>(
    trips: &[Trip<T>],
    app: &Application<'_, T>,
    scenario: &Scenario<T>,
) -> Result<ModalSplit<T>, ScenarioError> {
    if trips.is_empty() {
        return Err(ScenarioError::NoTrips);
    }
    scenario.validate()?;
    let outcomes: Vec<TripOutcome<T>> = trips
        .par_iter()
        .map(|t| evaluate_trip(t, app, scenario))
        .collect::<Result<_, _>>()?;

    let mut modes: Vec<ModeId> = app.model.modes().to_vec();
    modes.push(ModeId::ride_hailing());
    let mut acc: BTreeMap<Purpose, (BTreeMap<ModeId, T>, usize, T)> = BTreeMap::new();
    let mut rng = match app.aggregation {
        Aggregation::Sampled { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Aggregation::Expected => None,
    };
    for (trip, out) in trips.iter().zip(&outcomes) {
        let entry = acc.entry(trip.purpose).or_insert_with(|| {
            (
                modes.iter().map(|m| (m.clone(), T::zero())).collect(),
                0,
                T::zero(),
            )
        });
        match rng.as_mut() {
            None => {
                for (m, p) in &out.probabilities {
                    let slot = entry.0.get_mut(m).expect("mode listed in model");
                    *slot = *slot + *p;
                }
            }
            Some(rng) => {
                let total: T = out.probabilities.values().copied().sum();
                let draw = T::lit(rng.random::<f64>()) * total;
                let mut cum = T::zero();
                let mut picked = None;
                for (m, p) in &out.probabilities {
                    cum = cum + *p;
                    if draw < cum {
                        picked = Some(m);
                        break;
                    }
                }
                let m = picked.unwrap_or_else(|| {
                    out.probabilities
                        .iter()
                        .rev()
                        .find(|(_, p)| **p > T::zero())
                        .map(|(m, _)| m)
                        .expect("some mode has positive probability")
                });
                let slot = entry.0.get_mut(m).expect("mode listed in model");
                *slot = *slot + T::one();
            }
        }
        entry.1 += 1;
        entry.2 = entry.2 + out.deviation;
    }

    let by_purpose = acc
        .into_iter()
        .map(|(purpose, (sums, n, dev))| {
            let nt = T::from_usize(n).expect("trip count fits scalar");
            let shares = sums.into_iter().map(|(m, s)| (m, s / nt)).collect();
            (
                purpose,
                PurposeSplit {
                    shares,
                    n_trips: n,
                    mass_deviation: dev / nt,
                },
            )
        })
        .collect();
    Ok(ModalSplit { by_purpose })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow<T> {
    pub scenario: Scenario<T>,
    pub split: ModalSplit<T>,
}

/// One modal split per scenario, in grid order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable<T> {
    pub rows: Vec<SweepRow<T>>,
}

impl<T: Scalar> SweepTable<T> {
    pub fn get(&self, label: &str) -> Option<&ModalSplit<T>> {
        self.rows
            .iter()
            .find(|r| r.scenario.label == label)
            .map(|r| &r.split)
    }

    /// Ride-hailing share for the scenario with the given levels.
    pub fn rh_share_at(&self, tt_factor: f64, fare: f64, purpose: Purpose) -> Option<T> {
        self.rows
            .iter()
            .find(|r| {
                r.scenario.rh.is_some_and(|l| {
                    (l.tt_factor.to_f64_lossy() - tt_factor).abs() < 1e-12
                        && (l.fare_per_km.to_f64_lossy() - fare).abs() < 1e-12
                })
            })
            .and_then(|r| r.split.rh_share(purpose))
    }
}

/// Runs every scenario of `grid` over the same trips.
pub fn sweep<T: Scalar>(
    trips: &[Trip<T>],
    app: &Application<'_, T>,
    grid: &[Scenario<T>],
) -> Result<SweepTable<T>, ScenarioError> {
    if grid.is_empty() {
        return Err(ScenarioError::EmptyGrid);
    }
    for s in grid {
        s.validate()?;
    }
    for t in trips {
        t.validate()?;
    }
    let rows = grid
        .iter()
        .map(|s| {
            run_scenario(trips, app, s).map(|split| SweepRow {
                scenario: s.clone(),
                split,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(SweepTable { rows })
}

/// Two-level structure with walk, bicycle, an auto nest and a transit nest (bus, metro, train).
pub fn reference_model<T: Scalar>(
    auto_nc: T,
    transit_nc: T,
) -> Result<NestedLogitModel<T>, crate::choice::ChoiceError> {
    let m = |s: &str| ModeId::new(s);
    NestedLogitModel::new(
        vec![
            m(modes::WALK),
            m(modes::BICYCLE),
            m(modes::AUTO_DRIVER),
            m(modes::AUTO_PASSENGER),
            m(modes::BUS),
            m(modes::METRO),
            m(modes::TRAIN),
        ],
        vec![
            NestSpec {
                name: "walk".into(),
                nc: T::one(),
                members: vec![m(modes::WALK)],
            },
            NestSpec {
                name: "bicycle".into(),
                nc: T::one(),
                members: vec![m(modes::BICYCLE)],
            },
            NestSpec {
                name: "auto".into(),
                nc: auto_nc,
                members: vec![m(modes::AUTO_DRIVER), m(modes::AUTO_PASSENGER)],
            },
            NestSpec {
                name: "transit".into(),
                nc: transit_nc,
                members: vec![m(modes::BUS), m(modes::METRO), m(modes::TRAIN)],
            },
        ],
        BTreeMap::new(),
        m(modes::METRO),
    )
}

/// Per-mode level-of-service assumptions used to derive base utilities for synthetic trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeProfile {
    pub asc: f64,
    /// Door-to-door speed, km/h.
    pub speed_kmh: f64,
    /// Access, egress and waiting minutes added to the running time.
    #[serde(default)]
    pub access_min: f64,
    /// Longest distance at which the mode is offered; unlimited when absent.
    #[serde(default)]
    pub max_distance_km: Option<f64>,
    /// Probability the mode is offered at all for a trip.
    #[serde(default = "one")]
    pub availability: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTripConfig {
    pub purpose_mix: BTreeMap<Purpose, f64>,
    pub income_mix: BTreeMap<String, f64>,
    pub service_area_fraction: f64,
    /// Median trip distance, km (log-normal).
    pub distance_median_km: f64,
    pub distance_sigma: f64,
    /// Log-scale spread of the congestion noise on auto time.
    pub auto_time_noise_sigma: f64,
    /// Utility per minute for every mode except metro.
    pub beta_time: f64,
    /// Utility per generalized-cost minute for metro.
    pub beta_gc_metro: f64,
    /// Metro fare, €.
    pub metro_fare_eur: f64,
    /// VOT used to convert the metro fare to minutes, €/hr.
    pub metro_vot_eur_per_hr: f64,
    pub modes: BTreeMap<String, ModeProfile>,
}

impl Default for SyntheticTripConfig {
    fn default() -> Self {
        let profile = |asc, speed_kmh, access_min, max_distance_km, availability| ModeProfile {
            asc,
            speed_kmh,
            access_min,
            max_distance_km,
            availability,
        };
        Self {
            purpose_mix: BTreeMap::from([
                (Purpose::HBW, 0.22),
                (Purpose::HBE, 0.08),
                (Purpose::HBS, 0.18),
                (Purpose::HBO, 0.27),
                (Purpose::NHBW, 0.10),
                (Purpose::NHBO, 0.15),
            ]),
            income_mix: BTreeMap::from([
                ("low".to_string(), 0.3),
                ("mid".to_string(), 0.55),
                ("high".to_string(), 0.15),
            ]),
            service_area_fraction: 0.6,
            distance_median_km: 6.0,
            distance_sigma: 0.8,
            auto_time_noise_sigma: 0.2,
            beta_time: -0.05,
            beta_gc_metro: -0.04,
            metro_fare_eur: 2.9,
            metro_vot_eur_per_hr: 9.0,
            modes: BTreeMap::from([
                (
                    modes::WALK.to_string(),
                    profile(1.2, 4.8, 0.0, Some(5.0), 1.0),
                ),
                (
                    modes::BICYCLE.to_string(),
                    profile(-0.4, 14.0, 2.0, Some(15.0), 0.9),
                ),
                (
                    modes::AUTO_DRIVER.to_string(),
                    profile(0.6, 28.0, 3.0, None, 0.85),
                ),
                (
                    modes::AUTO_PASSENGER.to_string(),
                    profile(-0.9, 28.0, 3.0, None, 1.0),
                ),
                (
                    modes::BUS.to_string(),
                    profile(-0.3, 16.0, 9.0, Some(30.0), 0.9),
                ),
                (modes::METRO.to_string(), profile(0.2, 30.0, 8.0, None, 1.0)),
                (
                    modes::TRAIN.to_string(),
                    profile(-0.1, 45.0, 12.0, None, 0.5),
                ),
            ]),
        }
    }
}

fn check_mix<K: std::fmt::Debug>(name: &str, mix: &BTreeMap<K, f64>) -> Result<(), ScenarioError> {
    if mix.is_empty() {
        return Err(ScenarioError::InvalidConfig(format!("{name} is empty")));
    }
    if let Some((k, v)) = mix.iter().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(ScenarioError::InvalidConfig(format!(
            "{name}: share of {k:?} is {v}"
        )));
    }
    let total: f64 = mix.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(ScenarioError::InvalidConfig(format!(
            "{name} sums to {total}, not 1"
        )));
    }
    Ok(())
}

impl SyntheticTripConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        check_mix("purpose_mix", &self.purpose_mix)?;
        check_mix("income_mix", &self.income_mix)?;
        let bad = |m: String| Err(ScenarioError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.service_area_fraction) {
            return bad(format!(
                "service_area_fraction {} outside [0, 1]",
                self.service_area_fraction
            ));
        }
        if !(self.distance_median_km > 0.0
            && self.distance_sigma >= 0.0
            && self.auto_time_noise_sigma >= 0.0)
        {
            return bad("distance median must be positive and spreads non-negative".into());
        }
        if !(self.beta_time < 0.0 && self.beta_gc_metro < 0.0) {
            return bad("time and generalized-cost coefficients must be negative".into());
        }
        if !(self.metro_fare_eur >= 0.0 && self.metro_vot_eur_per_hr > 0.0) {
            return bad("metro fare must be >= 0 and metro VOT > 0".into());
        }
        for required in [modes::AUTO_DRIVER, modes::METRO] {
            if !self.modes.contains_key(required) {
                return bad(format!("mode profile `{required}` is required"));
            }
        }
        for (m, p) in &self.modes {
            if !(p.speed_kmh > 0.0 && p.access_min >= 0.0 && (0.0..=1.0).contains(&p.availability))
            {
                return bad(format!(
                    "mode profile `{m}` has invalid speed, access time or availability"
                ));
            }
        }
        Ok(())
    }
}

fn pick<K>(mix: &BTreeMap<K, f64>, u: f64) -> &K {
    let mut cum = 0.0;
    for (k, p) in mix {
        cum += p;
        if u < cum {
            return k;
        }
    }
    mix.iter()
        .rev()
        .find(|(_, p)| **p > 0.0)
        .map(|(k, _)| k)
        .expect("mix has a positive share")
}

/// Reproducible synthetic trip population; the same seed yields identical trips.
///
/// Distances are log-normal; auto time is distance over auto speed plus access, with
/// multiplicative log-normal congestion noise. Metro and auto are always offered, so every
/// trip is eligible for the metro-referenced ride-hailing pivot.
pub fn generate_synthetic_trips<T: Scalar>(
    seed: u64,
    count: usize,
    config: &SyntheticTripConfig,
) -> Result<Vec<Trip<T>>, ScenarioError> {
    if count == 0 {
        return Err(ScenarioError::InvalidConfig(
            "trip count must be positive".into(),
        ));
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let distance = LogNormal::new(config.distance_median_km.ln(), config.distance_sigma)
        .map_err(|e| ScenarioError::InvalidConfig(e.to_string()))?;
    let noise = Normal::new(0.0, config.auto_time_noise_sigma)
        .map_err(|e| ScenarioError::InvalidConfig(e.to_string()))?;
    let width = count.to_string().len();

    let mut trips = Vec::with_capacity(count);
    for i in 0..count {
        let purpose = *pick(&config.purpose_mix, rng.random::<f64>());
        let income_group = pick(&config.income_mix, rng.random::<f64>()).clone();
        let in_service_area = rng.random::<f64>() < config.service_area_fraction;
        let d = distance.sample(&mut rng).clamp(0.3, 120.0);
        let congestion = noise.sample(&mut rng).exp();

        let mut utilities = UtilityVector::new();
        let mut auto_time = 0.0;
        let mut metro_gc = 0.0;
        for (name, p) in &config.modes {
            let offered_draw = rng.random::<f64>();
            let running = d / p.speed_kmh * 60.0;
            let time = if name == modes::AUTO_DRIVER || name == modes::AUTO_PASSENGER {
                running * congestion + p.access_min
            } else {
                running + p.access_min
            };
            if name == modes::AUTO_DRIVER {
                auto_time = time;
            }
            let always = name == modes::AUTO_DRIVER || name == modes::METRO;
            let within = p.max_distance_km.is_none_or(|m| d <= m);
            if !always && (!within || offered_draw >= p.availability) {
                utilities.set_unavailable(name.as_str());
                continue;
            }
            let u = if name == modes::METRO {
                metro_gc = time + config.metro_fare_eur / (config.metro_vot_eur_per_hr / 60.0);
                p.asc + config.beta_gc_metro * metro_gc
            } else {
                p.asc + config.beta_time * time
            };
            utilities.set(name.as_str(), T::lit(u));
        }
        trips.push(Trip {
            id: format!("t{i:0width$}"),
            purpose,
            auto_time_min: T::lit(auto_time),
            distance_km: T::lit(d),
            income_group,
            in_service_area,
            metro_gc_min: T::lit(metro_gc),
            utilities,
        });
    }
    Ok(trips)
}
