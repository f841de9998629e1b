//! Weighted maximum-likelihood estimation of multinomial logit models.
//!
//! The weighted log-likelihood is `Σ_n w_n ln P_n(chosen)`. It is globally concave in the
//! coefficients, so Newton-Raphson with step halving converges from `β = 0`; when the
//! information matrix is not numerically positive definite the step falls back to the gradient.
//! Standard errors come from the inverse of the observed information at the optimum.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Cholesky;
use crate::purpose::Purpose;
use crate::scalar::{log_sum_exp, softmax, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("missing attribute column `{0}`")]
    MissingAttribute(String),
    #[error("coefficient `{coefficient}` is not identified: {reason}")]
    Nonidentifiable { coefficient: String, reason: String },
    #[error("estimation did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },
    #[error("null log-likelihood must be negative, got {0}")]
    InvalidNull(f64),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("observation {index} (respondent `{respondent}`): {reason}")]
    InvalidObservation {
        index: usize,
        respondent: String,
        reason: String,
    },
    #[error("no observations to estimate from")]
    NoObservations,
    #[error("coefficient vector has {got} entries, specification has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Attributes of one alternative in one choice situation.
#[derive(Debug, Clone, PartialEq)]
pub struct AlternativeAttributes<T> {
    pub available: bool,
    /// Attribute name (e.g. `time`, `cost`) → value.
    pub values: BTreeMap<String, T>,
}

/// One respondent × scenario stated-preference record.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceObservation<T> {
    pub respondent_id: String,
    pub purpose: Purpose,
    pub scenario_id: String,
    pub alternatives: BTreeMap<String, AlternativeAttributes<T>>,
    pub sociodemographics: BTreeMap<String, T>,
    pub chosen: String,
    pub weight: T,
}

impl<T: Scalar> ChoiceObservation<T> {
    fn check(&self, index: usize) -> Result<(), EstimateError> {
        let bad = |reason: String| EstimateError::InvalidObservation {
            index,
            respondent: self.respondent_id.clone(),
            reason,
        };
        match self.alternatives.get(&self.chosen) {
            None => {
                return Err(bad(format!(
                    "chosen alternative `{}` not in the choice set",
                    self.chosen
                )))
            }
            Some(a) if !a.available => {
                return Err(bad(format!(
                    "chosen alternative `{}` is unavailable",
                    self.chosen
                )))
            }
            _ => {}
        }
        if !(self.weight > T::zero() && self.weight.is_finite()) {
            return Err(bad(format!("weight {} is not positive", self.weight)));
        }
        for (alt, attrs) in &self.alternatives {
            for (k, v) in &attrs.values {
                if !(v.is_finite() && *v >= T::zero()) {
                    return Err(bad(format!(
                        "{k}_{alt} = {v} must be finite and non-negative"
                    )));
                }
            }
        }
        if let Some((k, _)) = self.sociodemographics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(bad(format!("sociodemographic `{k}` is not finite")));
        }
        Ok(())
    }
}

/// Where a coefficient's regressor comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TermSource {
    /// Alternative-specific constant.
    Constant,
    /// Alternative attribute, optionally multiplied by a sociodemographic column
    /// (e.g. cost × low-income dummy for a segment-specific cost coefficient).
    Attribute {
        attribute: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        interact: Option<String>,
    },
    /// Sociodemographic variable entering the listed alternatives' utilities.
    Sociodemographic { variable: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub alternatives: Vec<String>,
    #[serde(flatten)]
    pub source: TermSource,
}

/// Linear-in-parameters utility specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub alternatives: Vec<String>,
    /// Alternative whose constant is fixed at zero.
    pub reference: String,
    pub terms: Vec<Term>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), EstimateError> {
        let invalid = |m: String| EstimateError::InvalidSpec(m);
        let alts: BTreeSet<&str> = self.alternatives.iter().map(String::as_str).collect();
        if alts.len() != self.alternatives.len() {
            return Err(invalid("duplicate alternative".into()));
        }
        if alts.len() < 2 {
            return Err(invalid("at least two alternatives are required".into()));
        }
        if !alts.contains(self.reference.as_str()) {
            return Err(invalid(format!(
                "reference `{}` is not an alternative",
                self.reference
            )));
        }
        let mut names = BTreeSet::new();
        for t in &self.terms {
            if !names.insert(t.name.as_str()) {
                return Err(invalid(format!("duplicate coefficient `{}`", t.name)));
            }
            if t.alternatives.is_empty() {
                return Err(invalid(format!(
                    "coefficient `{}` applies to no alternative",
                    t.name
                )));
            }
            if let Some(a) = t.alternatives.iter().find(|a| !alts.contains(a.as_str())) {
                return Err(invalid(format!(
                    "coefficient `{}` names unknown alternative `{a}`",
                    t.name
                )));
            }
            if t.source == TermSource::Constant {
                if t.alternatives.len() != 1 {
                    return Err(invalid(format!(
                        "constant `{}` must apply to exactly one alternative",
                        t.name
                    )));
                }
                if t.alternatives[0] == self.reference {
                    return Err(invalid(format!(
                        "constant `{}` is on the reference alternative, whose constant is fixed at 0",
                        t.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.name.clone()).collect()
    }

    /// The same specification restricted to its alternative-specific constants.
    pub fn constants_only(&self) -> Self {
        Self {
            alternatives: self.alternatives.clone(),
            reference: self.reference.clone(),
            terms: self
                .terms
                .iter()
                .filter(|t| t.source == TermSource::Constant)
                .cloned()
                .collect(),
        }
    }
}

/// Dense design: `x[(n * J + j) * K + k]` is regressor `k` of alternative `j` in observation `n`.
struct Design<T> {
    n_obs: usize,
    n_alt: usize,
    n_coef: usize,
    x: Vec<T>,
    available: Vec<bool>,
    chosen: Vec<usize>,
    weights: Vec<T>,
}

impl<T: Scalar> Design<T> {
    fn build(data: &[ChoiceObservation<T>], spec: &ModelSpec) -> Result<Self, EstimateError> {
        spec.validate()?;
        let n_alt = spec.alternatives.len();
        let n_coef = spec.terms.len();
        let mut x = vec![T::zero(); data.len() * n_alt * n_coef];
        let mut available = vec![false; data.len() * n_alt];
        let mut chosen = Vec::with_capacity(data.len());
        let mut weights = Vec::with_capacity(data.len());
        for (n, obs) in data.iter().enumerate() {
            obs.check(n)?;
            let c = spec
                .alternatives
                .iter()
                .position(|a| *a == obs.chosen)
                .ok_or_else(|| EstimateError::InvalidObservation {
                    index: n,
                    respondent: obs.respondent_id.clone(),
                    reason: format!("chosen `{}` is not a modelled alternative", obs.chosen),
                })?;
            chosen.push(c);
            weights.push(obs.weight);
            for (j, alt) in spec.alternatives.iter().enumerate() {
                let attrs = obs.alternatives.get(alt);
                let avail = attrs.is_some_and(|a| a.available);
                available[n * n_alt + j] = avail;
                for (k, term) in spec.terms.iter().enumerate() {
                    if !term.alternatives.iter().any(|a| a == alt) {
                        continue;
                    }
                    let socio = |var: &str| {
                        obs.sociodemographics
                            .get(var)
                            .copied()
                            .ok_or_else(|| EstimateError::MissingAttribute(var.to_string()))
                    };
                    let value = match &term.source {
                        TermSource::Constant => T::one(),
                        TermSource::Sociodemographic { variable } => socio(variable)?,
                        TermSource::Attribute {
                            attribute,
                            interact,
                        } => {
                            let column = format!("{attribute}_{alt}");
                            let base = match attrs.and_then(|a| a.values.get(attribute)) {
                                Some(v) => *v,
                                None if !avail => T::zero(),
                                None => return Err(EstimateError::MissingAttribute(column)),
                            };
                            match interact {
                                Some(var) => base * socio(var)?,
                                None => base,
                            }
                        }
                    };
                    x[(n * n_alt + j) * n_coef + k] = value;
                }
            }
        }
        Ok(Self {
            n_obs: data.len(),
            n_alt,
            n_coef,
            x,
            available,
            chosen,
            weights,
        })
    }

    fn row(&self, n: usize, j: usize) -> &[T] {
        let start = (n * self.n_alt + j) * self.n_coef;
        &self.x[start..start + self.n_coef]
    }

    /// Log-likelihood, score, and (optionally) the observed information `-∇²LL`.
    fn evaluate(&self, beta: &[T], with_information: bool) -> Evaluation<T> {
        let k = self.n_coef;
        let mut ll = T::zero();
        let mut grad = vec![T::zero(); k];
        let mut info = if with_information {
            vec![T::zero(); k * k]
        } else {
            Vec::new()
        };
        let mut alts: Vec<usize> = Vec::with_capacity(self.n_alt);
        let mut util: Vec<T> = Vec::with_capacity(self.n_alt);
        let mut xbar = vec![T::zero(); k];
        let mut dev = vec![T::zero(); k];
        for n in 0..self.n_obs {
            alts.clear();
            util.clear();
            for j in 0..self.n_alt {
                if self.available[n * self.n_alt + j] {
                    alts.push(j);
                    util.push(dot(self.row(n, j), beta));
                }
            }
            let w = self.weights[n];
            let lse = log_sum_exp(&util);
            let c = self.chosen[n];
            let uc = dot(self.row(n, c), beta);
            ll = ll + w * (uc - lse);
            let p = softmax(&util);
            xbar.iter_mut().for_each(|v| *v = T::zero());
            for (&j, &pj) in alts.iter().zip(&p) {
                for (xb, xv) in xbar.iter_mut().zip(self.row(n, j)) {
                    *xb = *xb + pj * *xv;
                }
            }
            for ((g, xc), xb) in grad.iter_mut().zip(self.row(n, c)).zip(&xbar) {
                *g = *g + w * (*xc - *xb);
            }
            if with_information {
                for (&j, &pj) in alts.iter().zip(&p) {
                    for ((d, xv), xb) in dev.iter_mut().zip(self.row(n, j)).zip(&xbar) {
                        *d = *xv - *xb;
                    }
                    let s = w * pj;
                    for a in 0..k {
                        if dev[a] == T::zero() {
                            continue;
                        }
                        let sa = s * dev[a];
                        for b in a..k {
                            info[a * k + b] = info[a * k + b] + sa * dev[b];
                        }
                    }
                }
            }
        }
        if with_information {
            for a in 0..k {
                for b in 0..a {
                    info[a * k + b] = info[b * k + a];
                }
            }
        }
        Evaluation { ll, grad, info }
    }

    fn null_log_likelihood(&self) -> T {
        (0..self.n_obs)
            .map(|n| {
                let avail = (0..self.n_alt)
                    .filter(|&j| self.available[n * self.n_alt + j])
                    .count();
                let j = T::from_usize(avail).expect("alternative count fits scalar");
                -self.weights[n] * j.ln()
            })
            .sum()
    }
}

struct Evaluation<T> {
    ll: T,
    grad: Vec<T>,
    info: Vec<T>,
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, x| acc.max(x.abs()))
}

/// Weighted log-likelihood and its analytic gradient at `beta` (ordered as `spec.terms`).
pub fn log_likelihood<T: Scalar>(
    data: &[ChoiceObservation<T>],
    spec: &ModelSpec,
    beta: &[T],
) -> Result<(T, Vec<T>), EstimateError> {
    if beta.len() != spec.terms.len() {
        return Err(EstimateError::DimensionMismatch {
            expected: spec.terms.len(),
            got: beta.len(),
        });
    }
    let design = Design::build(data, spec)?;
    let e = design.evaluate(beta, false);
    Ok((e.ll, e.grad))
}

/// `1 − LL/LL0`.
pub fn mcfadden_r2<T: Scalar>(ll: T, ll0: T) -> Result<T, EstimateError> {
    if !(ll0 < T::zero()) {
        return Err(EstimateError::InvalidNull(ll0.to_f64_lossy()));
    }
    Ok(T::one() - ll / ll0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullModel {
    /// All coefficients zero: equal shares over the available alternatives.
    #[default]
    Zero,
    /// Constants-only model fitted to the same data.
    ConstantsOnly,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub max_iter: usize,
    pub null_model: NullModel,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            null_model: NullModel::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// Iteration limit reached with the gradient above tolerance.
    MaxIterations,
    /// No step improved the likelihood; the returned point is the best found.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientEstimate<T> {
    pub name: String,
    pub estimate: T,
    pub std_error: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult<T> {
    pub coefficients: Vec<CoefficientEstimate<T>>,
    pub log_likelihood: T,
    pub null_log_likelihood: T,
    pub null_model: NullModel,
    pub mcfadden_r2: T,
    pub status: FitStatus,
    pub iterations: usize,
    /// Max-norm of the score at the returned coefficients.
    pub gradient_norm: T,
    pub n_observations: usize,
    pub weight_total: T,
}

impl<T: Scalar> EstimationResult<T> {
    pub fn coefficient(&self, name: &str) -> Option<T> {
        self.coefficients
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.estimate)
    }

    pub fn std_error(&self, name: &str) -> Option<T> {
        self.coefficients
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.std_error)
    }

    pub fn estimates(&self) -> Vec<T> {
        self.coefficients.iter().map(|c| c.estimate).collect()
    }

    pub fn ensure_converged(&self) -> Result<&Self, EstimateError> {
        match self.status {
            FitStatus::Converged => Ok(self),
            _ => Err(EstimateError::NotConverged {
                iterations: self.iterations,
                gradient_norm: self.gradient_norm.to_f64_lossy(),
            }),
        }
    }
}

fn identifiability<T: Scalar>(design: &Design<T>, spec: &ModelSpec) -> Result<(), EstimateError> {
    for (k, term) in spec.terms.iter().enumerate() {
        if term.source != TermSource::Constant {
            continue;
        }
        let j = spec
            .alternatives
            .iter()
            .position(|a| *a == term.alternatives[0])
            .expect("validated alternative");
        if !design.chosen.contains(&j) {
            return Err(EstimateError::Nonidentifiable {
                coefficient: spec.terms[k].name.clone(),
                reason: format!("alternative `{}` is never chosen", spec.alternatives[j]),
            });
        }
    }
    if design.n_coef == 0 {
        return Ok(());
    }
    let at_zero = design.evaluate(&vec![T::zero(); design.n_coef], true);
    if let Err(e) = Cholesky::factor(&at_zero.info, design.n_coef, T::lit(1e-10)) {
        return Err(EstimateError::Nonidentifiable {
            coefficient: spec.terms[e.0].name.clone(),
            reason: "regressor is a linear combination of earlier ones (rank-deficient design)"
                .into(),
        });
    }
    Ok(())
}

/// Maximizes the weighted log-likelihood by damped Newton-Raphson starting from zero.
///
/// Non-convergence is reported through [`EstimationResult::status`]; use
/// [`EstimationResult::ensure_converged`] to turn it into an error.
pub fn fit<T: Scalar>(
    data: &[ChoiceObservation<T>],
    spec: &ModelSpec,
    opts: &FitOptions,
) -> Result<EstimationResult<T>, EstimateError> {
    if data.is_empty() {
        return Err(EstimateError::NoObservations);
    }
    let design = Design::build(data, spec)?;
    identifiability(&design, spec)?;
    let k = design.n_coef;

    let mut beta = vec![T::zero(); k];
    let mut current = design.evaluate(&beta, true);
    let mut iterations = 0;
    let status = loop {
        let tol = T::lit(1e-8) * T::one().max(current.ll.abs());
        if max_abs(&current.grad) <= tol {
            break FitStatus::Converged;
        }
        if iterations >= opts.max_iter {
            break FitStatus::MaxIterations;
        }
        iterations += 1;
        let direction = match Cholesky::factor(&current.info, k, T::lit(1e-14)) {
            Ok(chol) => chol.solve(&current.grad),
            Err(_) => current.grad.clone(),
        };
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<T> = beta
                .iter()
                .zip(&direction)
                .map(|(b, d)| *b + step * *d)
                .collect();
            let e = design.evaluate(&trial, true);
            if e.ll.is_finite() && e.ll >= current.ll {
                accepted = Some((trial, e));
                break;
            }
            step = step / T::lit(2.0);
        }
        match accepted {
            Some((b, e)) => {
                let stalled = e.ll == current.ll;
                beta = b;
                current = e;
                if stalled {
                    let tol = T::lit(1e-8) * T::one().max(current.ll.abs());
                    if max_abs(&current.grad) > tol {
                        break FitStatus::LineSearchFailed;
                    }
                }
            }
            None => break FitStatus::LineSearchFailed,
        }
    };

    let std_errors = match Cholesky::factor(&current.info, k, T::lit(1e-14)) {
        Ok(chol) => chol
            .inverse_diagonal()
            .into_iter()
            .map(|v| v.sqrt())
            .collect(),
        Err(_) => vec![T::nan(); k],
    };

    let null_ll = match opts.null_model {
        NullModel::Zero => design.null_log_likelihood(),
        NullModel::ConstantsOnly => {
            let restricted = spec.constants_only();
            let inner = FitOptions {
                null_model: NullModel::Zero,
                ..opts.clone()
            };
            fit(data, &restricted, &inner)?.log_likelihood
        }
    };
    let r2 = mcfadden_r2(current.ll, null_ll)?;

    Ok(EstimationResult {
        coefficients: spec
            .terms
            .iter()
            .zip(beta.iter().zip(&std_errors))
            .map(|(t, (b, se))| CoefficientEstimate {
                name: t.name.clone(),
                estimate: *b,
                std_error: *se,
            })
            .collect(),
        log_likelihood: current.ll,
        null_log_likelihood: null_ll,
        null_model: opts.null_model,
        mcfadden_r2: r2,
        status,
        iterations,
        gradient_norm: max_abs(&current.grad),
        n_observations: design.n_obs,
        weight_total: design.weights.iter().copied().sum(),
    })
}

/// Sets each observation's weight to its respondent's weight (every response of a respondent
/// carries the same weight). Respondents without a weight are reported by id.
pub fn apply_respondent_weights<'a, T: Scalar>(
    data: &mut [ChoiceObservation<T>],
    weight_of: impl Fn(&str) -> Option<T> + 'a,
) -> Result<(), String> {
    for obs in data.iter_mut() {
        obs.weight = weight_of(&obs.respondent_id).ok_or_else(|| obs.respondent_id.clone())?;
    }
    Ok(())
}
