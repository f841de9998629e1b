//! Multinomial and two-level nested logit probabilities.
//!
//! Unavailable alternatives are excluded from both numerator and denominator. Every
//! exponentiation goes through max-subtraction, so utilities of several hundred in magnitude
//! stay finite.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{log_sum_exp, softmax, Scalar};

pub mod modes {
    pub const WALK: &str = "walk";
    pub const BICYCLE: &str = "bicycle";
    pub const AUTO_DRIVER: &str = "autoDriver";
    pub const AUTO_PASSENGER: &str = "autoPassenger";
    pub const BUS: &str = "bus";
    pub const METRO: &str = "metro";
    pub const TRAIN: &str = "train";
    pub const RIDE_HAILING: &str = "rideHailing";
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChoiceError {
    #[error("no available mode in choice set")]
    NoAvailableMode,
    #[error("nest `{0}` has no available member")]
    EmptyNest(String),
    #[error("utility of mode `{0}` is not finite")]
    NonFiniteUtility(ModeId),
    #[error("nest `{nest}`: nesting coefficient {value} outside (0, 1]")]
    InvalidNestCoefficient { nest: String, value: f64 },
    #[error("mode `{0}` declared more than once")]
    DuplicateMode(ModeId),
    #[error("mode `{0}` is not assigned to any nest")]
    UnassignedMode(ModeId),
    #[error("mode `{0}` belongs to more than one nest")]
    ModeInMultipleNests(ModeId),
    #[error("nest `{0}` contains another nest; only two-level trees are supported")]
    NestTooDeep(String),
    #[error("mode `{0}` is not part of the model")]
    UnknownMode(ModeId),
    #[error("duplicate nest name `{0}`")]
    DuplicateNest(String),
}

/// Symbolic mode identifier, e.g. `metro` or `rideHailing`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeId(String);

impl ModeId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn ride_hailing() -> Self {
        Self::new(modes::RIDE_HAILING)
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModeId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// Systematic utility of one alternative, or an explicit marker that it is not in the choice set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Utility<T> {
    Available(T),
    Unavailable,
}

impl<T: Copy> Utility<T> {
    pub fn value(self) -> Option<T> {
        match self {
            Utility::Available(v) => Some(v),
            Utility::Unavailable => None,
        }
    }
}

/// Map from mode to systematic utility.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityVector<T> {
    entries: BTreeMap<ModeId, Utility<T>>,
}

impl<T> Default for UtilityVector<T> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> UtilityVector<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, T)>) -> Self {
        let mut u = Self::new();
        for (m, v) in pairs {
            u.set(m, v);
        }
        u
    }

    pub fn with(mut self, mode: impl Into<ModeId>, utility: T) -> Self {
        self.set(mode, utility);
        self
    }

    pub fn set(&mut self, mode: impl Into<ModeId>, utility: T) {
        self.entries
            .insert(mode.into(), Utility::Available(utility));
    }

    pub fn set_unavailable(&mut self, mode: impl Into<ModeId>) {
        self.entries.insert(mode.into(), Utility::Unavailable);
    }

    pub fn get(&self, mode: &ModeId) -> Option<Utility<T>> {
        self.entries.get(mode).copied()
    }

    /// Utility of `mode` if it is present and available.
    pub fn available_value(&self, mode: &ModeId) -> Option<T> {
        self.get(mode).and_then(Utility::value)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ModeId, Utility<T>)> {
        self.entries.iter().map(|(m, u)| (m, *u))
    }

    pub fn available(&self) -> impl Iterator<Item = (&ModeId, T)> {
        self.entries
            .iter()
            .filter_map(|(m, u)| u.value().map(|v| (m, v)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds `k` to every available utility.
    pub fn shifted(&self, k: T) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(m, u)| {
                let shifted = match *u {
                    Utility::Available(v) => Utility::Available(v + k),
                    Utility::Unavailable => Utility::Unavailable,
                };
                (m.clone(), shifted)
            })
            .collect();
        Self { entries }
    }

    fn check_finite(&self) -> Result<(), ChoiceError> {
        match self.available().find(|(_, v)| !v.is_finite()) {
            Some((m, _)) => Err(ChoiceError::NonFiniteUtility(m.clone())),
            None => Ok(()),
        }
    }
}

/// Choice probabilities keyed by mode. Unavailable modes appear with probability zero.
pub type Probabilities<T> = BTreeMap<ModeId, T>;

/// Multinomial logit probabilities over the available modes of `u`.
pub fn mnl_probabilities<T: Scalar>(u: &UtilityVector<T>) -> Result<Probabilities<T>, ChoiceError> {
    u.check_finite()?;
    let (modes, values): (Vec<&ModeId>, Vec<T>) = u.available().unzip();
    if values.is_empty() {
        return Err(ChoiceError::NoAvailableMode);
    }
    let p = softmax(&values);
    let mut out: Probabilities<T> = u.iter().map(|(m, _)| (m.clone(), T::zero())).collect();
    for (m, pm) in modes.into_iter().zip(p) {
        out.insert(m.clone(), pm);
    }
    Ok(out)
}

/// Composite utility `nc · ln Σ exp(U_m / nc)` over the available members.
pub fn nest_logsum<T: Scalar>(members: &UtilityVector<T>, nc: T) -> Result<T, ChoiceError> {
    members.check_finite()?;
    let values: Vec<T> = members.available().map(|(_, v)| v).collect();
    if values.is_empty() {
        return Err(ChoiceError::EmptyNest(String::new()));
    }
    Ok(scaled_logsum(&values, nc))
}

/// `nc · ln Σ exp(v / nc)` over a slice; `-inf` for an empty slice.
pub fn scaled_logsum<T: Scalar>(values: &[T], nc: T) -> T {
    let scaled: Vec<T> = values.iter().map(|&v| v / nc).collect();
    nc * log_sum_exp(&scaled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestSpec<T> {
    pub name: String,
    pub nc: T,
    pub members: Vec<ModeId>,
}

/// Two-level nested logit structure with its calibrated coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedLogitModel<T> {
    modes: Vec<ModeId>,
    nests: Vec<NestSpec<T>>,
    coefficients: BTreeMap<String, T>,
    reference_mode: ModeId,
    nest_index: BTreeMap<ModeId, usize>,
}

impl<T: Scalar> NestedLogitModel<T> {
    pub fn new(
        modes: Vec<ModeId>,
        nests: Vec<NestSpec<T>>,
        coefficients: BTreeMap<String, T>,
        reference_mode: ModeId,
    ) -> Result<Self, ChoiceError> {
        let mut seen = BTreeSet::new();
        for m in &modes {
            if !seen.insert(m.clone()) {
                return Err(ChoiceError::DuplicateMode(m.clone()));
            }
        }
        let nest_names: BTreeSet<&str> = nests.iter().map(|n| n.name.as_str()).collect();
        if nest_names.len() != nests.len() {
            let mut names = BTreeSet::new();
            for n in &nests {
                if !names.insert(n.name.as_str()) {
                    return Err(ChoiceError::DuplicateNest(n.name.clone()));
                }
            }
        }
        let mut nest_index = BTreeMap::new();
        for (i, nest) in nests.iter().enumerate() {
            if !(nest.nc > T::zero() && nest.nc <= T::one()) {
                return Err(ChoiceError::InvalidNestCoefficient {
                    nest: nest.name.clone(),
                    value: nest.nc.to_f64_lossy(),
                });
            }
            if nest.members.is_empty() {
                return Err(ChoiceError::EmptyNest(nest.name.clone()));
            }
            for m in &nest.members {
                if nest_names.contains(m.as_str()) && !seen.contains(m) {
                    return Err(ChoiceError::NestTooDeep(nest.name.clone()));
                }
                if !seen.contains(m) {
                    return Err(ChoiceError::UnknownMode(m.clone()));
                }
                if nest_index.insert(m.clone(), i).is_some() {
                    return Err(ChoiceError::ModeInMultipleNests(m.clone()));
                }
            }
        }
        if let Some(m) = modes.iter().find(|m| !nest_index.contains_key(*m)) {
            return Err(ChoiceError::UnassignedMode(m.clone()));
        }
        if !seen.contains(&reference_mode) {
            return Err(ChoiceError::UnknownMode(reference_mode));
        }
        Ok(Self {
            modes,
            nests,
            coefficients,
            reference_mode,
            nest_index,
        })
    }

    /// Every mode in its own nest with `nc = 1`, which is plain multinomial logit.
    pub fn degenerate(modes: Vec<ModeId>, reference_mode: ModeId) -> Result<Self, ChoiceError> {
        let nests = modes
            .iter()
            .map(|m| NestSpec {
                name: m.to_string(),
                nc: T::one(),
                members: vec![m.clone()],
            })
            .collect();
        Self::new(modes, nests, BTreeMap::new(), reference_mode)
    }

    pub fn modes(&self) -> &[ModeId] {
        &self.modes
    }

    pub fn nests(&self) -> &[NestSpec<T>] {
        &self.nests
    }

    pub fn coefficients(&self) -> &BTreeMap<String, T> {
        &self.coefficients
    }

    pub fn coefficient(&self, name: &str) -> Option<T> {
        self.coefficients.get(name).copied()
    }

    pub fn reference_mode(&self) -> &ModeId {
        &self.reference_mode
    }

    pub fn contains(&self, mode: &ModeId) -> bool {
        self.nest_index.contains_key(mode)
    }

    pub fn nest_of(&self, mode: &ModeId) -> Option<(usize, &NestSpec<T>)> {
        self.nest_index.get(mode).map(|&i| (i, &self.nests[i]))
    }

    /// Per-nest logsums, nest probabilities and within-nest conditional probabilities.
    pub fn decompose(&self, u: &UtilityVector<T>) -> Result<Vec<NestState<T>>, ChoiceError> {
        u.check_finite()?;
        for (m, _) in u.iter() {
            if !self.contains(m) {
                return Err(ChoiceError::UnknownMode(m.clone()));
            }
        }
        let mut states: Vec<NestState<T>> = Vec::with_capacity(self.nests.len());
        for nest in &self.nests {
            let members: Vec<(ModeId, T)> = nest
                .members
                .iter()
                .filter_map(|m| u.available_value(m).map(|v| (m.clone(), v)))
                .collect();
            if members.is_empty() {
                states.push(NestState {
                    logsum: None,
                    probability: T::zero(),
                    conditionals: Vec::new(),
                });
                continue;
            }
            let values: Vec<T> = members.iter().map(|(_, v)| *v).collect();
            let scaled: Vec<T> = values.iter().map(|&v| v / nest.nc).collect();
            let cond = softmax(&scaled);
            states.push(NestState {
                logsum: Some(scaled_logsum(&values, nest.nc)),
                probability: T::zero(),
                conditionals: members.into_iter().map(|(m, _)| m).zip(cond).collect(),
            });
        }
        let logsums: Vec<T> = states.iter().filter_map(|s| s.logsum).collect();
        if logsums.is_empty() {
            return Err(ChoiceError::NoAvailableMode);
        }
        let top = softmax(&logsums);
        let mut it = top.into_iter();
        for s in states.iter_mut().filter(|s| s.logsum.is_some()) {
            s.probability = it.next().expect("one probability per active nest");
        }
        Ok(states)
    }
}

/// Decomposed state of one nest for a given utility vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NestState<T> {
    /// `None` when no member is available.
    pub logsum: Option<T>,
    pub probability: T,
    pub conditionals: Vec<(ModeId, T)>,
}

/// Two-level nested logit probabilities `P(nest) · P(mode | nest)`.
pub fn nested_probabilities<T: Scalar>(
    model: &NestedLogitModel<T>,
    u: &UtilityVector<T>,
) -> Result<Probabilities<T>, ChoiceError> {
    let states = model.decompose(u)?;
    let mut out: Probabilities<T> = model
        .modes()
        .iter()
        .map(|m| (m.clone(), T::zero()))
        .collect();
    for s in &states {
        for (m, c) in &s.conditionals {
            out.insert(m.clone(), s.probability * *c);
        }
    }
    Ok(out)
}
