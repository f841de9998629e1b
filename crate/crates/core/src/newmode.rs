//! Value of time and incremental-logit injection of ride-hailing into the transit nest.
//!
//! Ride-hailing is priced relative to the reference mode (metro): its utility is the metro
//! utility shifted by the generalized-cost difference, scaled with the metro generalized-cost
//! coefficient. The transit nest's composite utility is recomputed with ride-hailing as an extra
//! member, the transit probability is pivoted from its base value, and every mode outside the
//! transit nest is rescaled proportionally so the distribution keeps summing to one.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::choice::{
    scaled_logsum, ChoiceError, ModeId, NestedLogitModel, Probabilities, UtilityVector,
};
use crate::purpose::Purpose;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NewModeError {
    #[error("cost coefficient is zero; value of time undefined")]
    ZeroCostCoefficient,
    #[error("value of time must be positive, got {0}")]
    NonpositiveVot(f64),
    #[error("{name} must be non-negative and finite, got {value}")]
    NegativeInput { name: &'static str, value: f64 },
    #[error("invalid new-mode parameters: {0}")]
    InvalidParams(String),
    #[error("base transit probability {0} is not strictly between 0 and 1")]
    DegenerateBase(f64),
    #[error("reference mode `{0}` is unavailable for this trip")]
    ReferenceModeUnavailable(ModeId),
    #[error("no ride-hailing value of time for income group `{group}` and purpose {purpose}")]
    MissingVot { group: String, purpose: Purpose },
    #[error("base model already contains `{0}`")]
    ModeAlreadyPresent(ModeId),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
}

/// How the within-nest ride-hailing share is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Ride-hailing is part of its own denominator; within-nest shares sum to one.
    #[default]
    Normalized,
    /// Denominator over the existing transit members only; total mass may exceed one.
    AsPrinted,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Normalized => "normalized",
            Variant::AsPrinted => "as-printed",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normalized" => Ok(Variant::Normalized),
            "as-printed" => Ok(Variant::AsPrinted),
            other => Err(format!(
                "unknown variant `{other}` (expected normalized or as-printed)"
            )),
        }
    }
}

/// Value of time in €/hr from utility-per-minute and utility-per-euro coefficients.
pub fn vot<T: Scalar>(beta_time: T, beta_cost: T) -> Result<T, NewModeError> {
    if beta_cost == T::zero() {
        return Err(NewModeError::ZeroCostCoefficient);
    }
    Ok(beta_time / beta_cost * T::lit(60.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewModeParams<T> {
    /// Ride-hailing time coefficient over the transit time coefficient.
    pub time_ratio: T,
    /// €/km.
    pub fare_per_km: T,
    /// Utility per generalized-cost minute of the reference mode; negative.
    pub beta_gc_metro: T,
    #[serde(default)]
    pub variant: Variant,
}

impl<T: Scalar> NewModeParams<T> {
    pub fn validate(&self) -> Result<(), NewModeError> {
        if !(self.fare_per_km >= T::zero() && self.fare_per_km.is_finite()) {
            return Err(NewModeError::InvalidParams(format!(
                "fare per km must be >= 0, got {}",
                self.fare_per_km
            )));
        }
        if !(self.time_ratio > T::zero() && self.time_ratio.is_finite()) {
            return Err(NewModeError::InvalidParams(format!(
                "time ratio must be > 0, got {}",
                self.time_ratio
            )));
        }
        if !(self.beta_gc_metro < T::zero() && self.beta_gc_metro.is_finite()) {
            return Err(NewModeError::InvalidParams(format!(
                "generalized-cost coefficient must be < 0, got {}",
                self.beta_gc_metro
            )));
        }
        Ok(())
    }

    pub fn with_fare(&self, fare_per_km: T) -> Self {
        Self {
            fare_per_km,
            ..self.clone()
        }
    }
}

/// Generalized cost in equivalent in-vehicle minutes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedCost<T> {
    pub time_part: T,
    pub money_part: T,
}

impl<T: Scalar> GeneralizedCost<T> {
    pub fn value(&self) -> T {
        self.time_part + self.money_part
    }
}

/// `time_ratio · time + distance · fare / (vot / 60)`; money is converted at the per-minute VOT.
pub fn generalized_cost_rh<T: Scalar>(
    time_min: T,
    distance_km: T,
    params: &NewModeParams<T>,
    vot_per_hour: T,
) -> Result<GeneralizedCost<T>, NewModeError> {
    if !(vot_per_hour > T::zero()) {
        return Err(NewModeError::NonpositiveVot(vot_per_hour.to_f64_lossy()));
    }
    for (name, v) in [("time", time_min), ("distance", distance_km)] {
        if !(v >= T::zero() && v.is_finite()) {
            return Err(NewModeError::NegativeInput {
                name,
                value: v.to_f64_lossy(),
            });
        }
    }
    let per_minute = vot_per_hour / T::lit(60.0);
    Ok(GeneralizedCost {
        time_part: params.time_ratio * time_min,
        money_part: distance_km * params.fare_per_km / per_minute,
    })
}

/// `U_metro + β_gC · (gC_RH − gC_metro)`.
pub fn utility_rh<T: Scalar>(u_metro: T, beta_gc_metro: T, gc_rh: T, gc_metro: T) -> T {
    u_metro + beta_gc_metro * (gc_rh - gc_metro)
}

/// Within-nest shares relative to the reference mode.
struct TransitShares<T> {
    rh: T,
    reference: T,
    others: Vec<T>,
}

fn transit_shares<T: Scalar>(
    u_rh: T,
    u_metro: T,
    other_transit: &[T],
    nc: T,
    variant: Variant,
) -> TransitShares<T> {
    let rel = |u: T| (u - u_metro) / nc;
    let r_rh = rel(u_rh);
    let r_others: Vec<T> = other_transit.iter().map(|&u| rel(u)).collect();
    let mut shift = r_others.iter().copied().fold(T::zero(), T::max);
    if variant == Variant::Normalized {
        shift = shift.max(r_rh);
    }
    let e_ref = (-shift).exp();
    let e_others: Vec<T> = r_others.iter().map(|&r| (r - shift).exp()).collect();
    let e_rh = (r_rh - shift).exp();
    let mut den = e_ref + e_others.iter().copied().sum::<T>();
    if variant == Variant::Normalized {
        den = den + e_rh;
    }
    TransitShares {
        rh: e_rh / den,
        reference: e_ref / den,
        others: e_others.into_iter().map(|e| e / den).collect(),
    }
}

/// Ride-hailing share inside the transit nest. `other_transit` holds the utilities of the
/// available transit members other than the reference mode (e.g. bus and train).
pub fn prob_rh_within_transit<T: Scalar>(
    u_rh: T,
    u_metro: T,
    other_transit: &[T],
    nc: T,
    variant: Variant,
) -> T {
    transit_shares(u_rh, u_metro, other_transit, nc, variant).rh
}

/// Pivoted transit probability `q / (q + 1 − P_T)` with
/// `q = exp(LS'_T) / (Σ_{M ≠ T} exp(U_M) + exp(LS_T))`.
///
/// `other_top` are the composite utilities of the non-transit top-level alternatives. When the
/// new logsum equals the base logsum the base probability is returned unchanged.
pub fn prob_transit_new<T: Scalar>(
    new_transit_logsum: T,
    base_transit_logsum: T,
    other_top: &[T],
    p_transit_base: T,
) -> Result<T, NewModeError> {
    if !(p_transit_base > T::zero() && p_transit_base < T::one()) {
        return Err(NewModeError::DegenerateBase(p_transit_base.to_f64_lossy()));
    }
    if new_transit_logsum == base_transit_logsum {
        return Ok(p_transit_base);
    }
    if new_transit_logsum == T::infinity() {
        return Ok(T::one());
    }
    let mut all: Vec<T> = other_top.to_vec();
    all.push(base_transit_logsum);
    let shift = all.iter().copied().fold(new_transit_logsum, T::max);
    let den: T = all.iter().map(|&u| (u - shift).exp()).sum();
    let num = (new_transit_logsum - shift).exp();
    // q / (q + 1 - P_T) written as 1 / (1 + (1 - P_T) / q) so that q overflowing stays finite
    Ok(T::one() / (T::one() + (T::one() - p_transit_base) * den / num))
}

/// Values of time used to price ride-hailing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotTable<T> {
    /// Ride-hailing VOT in €/hr by RH income group and purpose.
    pub rh: BTreeMap<String, BTreeMap<Purpose, T>>,
    /// Trip income group → RH income group. Must be stated explicitly.
    pub income_group_map: BTreeMap<String, String>,
    /// Optional purpose substitution for purposes without their own VOT (e.g. HBE → HBO).
    #[serde(default)]
    pub purpose_map: BTreeMap<Purpose, Purpose>,
    /// Base-model VOTs by income group, mode and purpose, kept for reporting.
    #[serde(default)]
    pub base: BTreeMap<String, BTreeMap<String, BTreeMap<Purpose, T>>>,
}

impl<T: Scalar> VotTable<T> {
    pub fn validate(&self) -> Result<(), NewModeError> {
        for (group, by_purpose) in &self.rh {
            for (purpose, v) in by_purpose {
                if !(*v > T::zero() && v.is_finite()) {
                    return Err(NewModeError::InvalidParams(format!(
                        "VOT for {group}/{purpose} must be positive, got {v}"
                    )));
                }
            }
        }
        for (group, by_mode) in &self.base {
            for (mode, by_purpose) in by_mode {
                for (purpose, v) in by_purpose {
                    if !(*v > T::zero() && v.is_finite()) {
                        return Err(NewModeError::InvalidParams(format!(
                            "base VOT for {group}/{mode}/{purpose} must be positive, got {v}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// RH value of time for a trip's income group and purpose, after the configured mappings.
    pub fn rh_vot(&self, trip_group: &str, purpose: Purpose) -> Result<T, NewModeError> {
        let missing = || NewModeError::MissingVot {
            group: trip_group.to_string(),
            purpose,
        };
        let group = self.income_group_map.get(trip_group).ok_or_else(missing)?;
        let purpose_key = self.purpose_map.get(&purpose).copied().unwrap_or(purpose);
        self.rh
            .get(group)
            .and_then(|m| m.get(&purpose_key))
            .copied()
            .ok_or_else(missing)
    }
}

/// Per-trip inputs the injection needs beyond the base utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct TripContext<T> {
    pub purpose: Purpose,
    pub income_group: String,
    /// Total RH time: in-vehicle plus waiting, minutes.
    pub rh_time_min: T,
    pub distance_km: T,
    /// Generalized cost of the reference mode, minutes.
    pub metro_gc_min: T,
    pub in_service_area: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Injection<T> {
    /// Post-injection distribution over the base modes plus ride-hailing.
    pub probabilities: Probabilities<T>,
    pub p_transit_base: T,
    pub p_transit_new: T,
    pub u_rh: Option<T>,
    /// `Σ probabilities − 1`; zero up to rounding for the normalized variant.
    pub mass_deviation: T,
}

/// Adds ride-hailing to the transit nest of `model` by pivoting from the base probabilities.
pub fn inject_rh<T: Scalar>(
    model: &NestedLogitModel<T>,
    base_utilities: &UtilityVector<T>,
    trip: &TripContext<T>,
    params: &NewModeParams<T>,
    vots: &VotTable<T>,
) -> Result<Injection<T>, NewModeError> {
    let rh = ModeId::ride_hailing();
    if model.contains(&rh) {
        return Err(NewModeError::ModeAlreadyPresent(rh));
    }
    let states = model.decompose(base_utilities)?;
    let reference = model.reference_mode();
    let (transit_idx, transit) = model
        .nest_of(reference)
        .expect("reference mode is in the model");

    let mut base: Probabilities<T> = model
        .modes()
        .iter()
        .map(|m| (m.clone(), T::zero()))
        .collect();
    for s in &states {
        for (m, c) in &s.conditionals {
            base.insert(m.clone(), s.probability * *c);
        }
    }
    let p_transit = states[transit_idx].probability;

    if !trip.in_service_area {
        base.insert(rh, T::zero());
        return Ok(Injection {
            probabilities: base,
            p_transit_base: p_transit,
            p_transit_new: p_transit,
            u_rh: None,
            mass_deviation: T::zero(),
        });
    }

    let u_metro = base_utilities
        .available_value(reference)
        .ok_or_else(|| NewModeError::ReferenceModeUnavailable(reference.clone()))?;
    let vot = vots.rh_vot(&trip.income_group, trip.purpose)?;
    let gc = generalized_cost_rh(trip.rh_time_min, trip.distance_km, params, vot)?;
    let u_rh = utility_rh(u_metro, params.beta_gc_metro, gc.value(), trip.metro_gc_min);

    let nc = transit.nc;
    let members: Vec<(ModeId, T)> = transit
        .members
        .iter()
        .filter_map(|m| base_utilities.available_value(m).map(|u| (m.clone(), u)))
        .collect();
    let others: Vec<(ModeId, T)> = members
        .iter()
        .filter(|(m, _)| m != reference)
        .cloned()
        .collect();
    let other_u: Vec<T> = others.iter().map(|(_, u)| *u).collect();

    let base_logsum = states[transit_idx]
        .logsum
        .expect("reference mode available");
    let mut with_rh: Vec<T> = members.iter().map(|(_, u)| *u).collect();
    with_rh.push(u_rh);
    let new_logsum = scaled_logsum(&with_rh, nc);
    let other_top: Vec<T> = states
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != transit_idx)
        .filter_map(|(_, s)| s.logsum)
        .collect();
    let p_transit_new = prob_transit_new(new_logsum, base_logsum, &other_top, p_transit)?;

    let shares = transit_shares(u_rh, u_metro, &other_u, nc, params.variant);
    let scale = (T::one() - p_transit_new) / (T::one() - p_transit);
    let mut out: Probabilities<T> = base
        .iter()
        .map(|(m, p)| {
            let in_transit = model.nest_of(m).is_some_and(|(i, _)| i == transit_idx);
            (m.clone(), if in_transit { T::zero() } else { *p * scale })
        })
        .collect();
    out.insert(reference.clone(), shares.reference * p_transit_new);
    for ((m, _), s) in others.iter().zip(&shares.others) {
        out.insert(m.clone(), *s * p_transit_new);
    }
    out.insert(rh, shares.rh * p_transit_new);
    let mass_deviation = out.values().copied().sum::<T>() - T::one();

    Ok(Injection {
        probabilities: out,
        p_transit_base: p_transit,
        p_transit_new,
        u_rh: Some(u_rh),
        mass_deviation,
    })
}
