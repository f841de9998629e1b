//! Raking of respondent weights to marginal target shares (iterative proportional fitting).
//!
//! Each sweep visits the control variables round-robin and multiplies the weights of every
//! respondent in a category by `target · N / current_total`. After every sweep the weights are
//! rescaled so they sum to the sample size `N`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightingError {
    #[error("no respondents to weight")]
    NoRespondents,
    #[error("category `{category}` of `{variable}` has a positive target but no respondents")]
    EmptyCell { variable: String, category: String },
    #[error("category `{category}` of `{variable}` has respondents but a zero target share")]
    ZeroTargetOccupied { variable: String, category: String },
    #[error("invalid margins for `{variable}`: {reason}")]
    InvalidMargins { variable: String, reason: String },
    #[error("respondent `{respondent}` has no admissible category for `{variable}`")]
    MissingCategory {
        respondent: String,
        variable: String,
    },
    #[error("unknown control variable `{0}`")]
    UnknownVariable(String),
    #[error("weights cover {weights} respondents but {records} records were given")]
    WeightsMismatch { weights: usize, records: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("weight cap must exceed 1, got {0}")]
    InvalidCap(f64),
    #[error("raking order must name every control variable exactly once")]
    InvalidOrder,
    #[error("raking did not converge after {iterations} sweeps (max residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("share vectors do not cover the same categories: {0}")]
    CategoryMismatch(String),
    #[error("correlation undefined: one of the share vectors is constant")]
    DegenerateVariance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RespondentRecord {
    pub id: String,
    /// Control variable → category label.
    pub categories: BTreeMap<String, String>,
}

impl RespondentRecord {
    pub fn new<'a>(
        id: impl Into<String>,
        cats: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Self {
        Self {
            id: id.into(),
            categories: cats
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

/// Target shares per control variable, kept in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginTable<T> {
    variables: Vec<(String, Vec<(String, T)>)>,
}

impl<T: Scalar> MarginTable<T> {
    /// Validates that each variable's shares are non-negative and sum to one within 1e-9.
    pub fn new(variables: Vec<(String, Vec<(String, T)>)>) -> Result<Self, WeightingError> {
        let mut names = BTreeSet::new();
        for (var, cats) in &variables {
            let invalid = |reason: &str| WeightingError::InvalidMargins {
                variable: var.clone(),
                reason: reason.to_string(),
            };
            if !names.insert(var.as_str()) {
                return Err(invalid("variable listed twice"));
            }
            if cats.is_empty() {
                return Err(invalid("no categories"));
            }
            let mut seen = BTreeSet::new();
            for (c, s) in cats {
                if !seen.insert(c.as_str()) {
                    return Err(invalid(&format!("category `{c}` listed twice")));
                }
                if !(s.is_finite() && *s >= T::zero()) {
                    return Err(invalid(&format!(
                        "share of `{c}` is negative or not finite"
                    )));
                }
            }
            let total: T = cats.iter().map(|(_, s)| *s).sum();
            if (total - T::one()).abs() > T::lit(1e-9) {
                return Err(invalid(&format!("shares sum to {total}, not 1")));
            }
        }
        Ok(Self { variables })
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.variables.iter().map(|(v, _)| v.as_str())
    }

    pub fn shares(&self, variable: &str) -> Option<&[(String, T)]> {
        self.variables
            .iter()
            .find(|(v, _)| v == variable)
            .map(|(_, c)| c.as_slice())
    }

    pub fn target(&self, variable: &str, category: &str) -> Option<T> {
        self.shares(variable)?
            .iter()
            .find(|(c, _)| c == category)
            .map(|(_, s)| *s)
    }

    /// Splits records into those with an in-universe category for every variable and the rest.
    pub fn admit(&self, records: Vec<RespondentRecord>) -> (Vec<RespondentRecord>, usize) {
        let before = records.len();
        let kept: Vec<RespondentRecord> = records
            .into_iter()
            .filter(|r| {
                self.variables.iter().all(|(var, cats)| {
                    r.categories
                        .get(var)
                        .is_some_and(|c| cats.iter().any(|(k, _)| k == c))
                })
            })
            .collect();
        let dropped = before - kept.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} respondents with categories outside the margin universe");
        }
        (kept, dropped)
    }
}

/// Respondent weights aligned with the record order they were computed for.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector<T> {
    ids: Vec<String>,
    weights: Vec<T>,
}

impl<T: Scalar> WeightVector<T> {
    pub fn uniform(records: &[RespondentRecord]) -> Self {
        Self {
            ids: records.iter().map(|r| r.id.clone()).collect(),
            weights: vec![T::one(); records.len()],
        }
    }

    pub fn from_parts(ids: Vec<String>, weights: Vec<T>) -> Self {
        assert_eq!(ids.len(), weights.len(), "one weight per id");
        Self { ids, weights }
    }

    pub fn get(&self, id: &str) -> Option<T> {
        self.ids
            .iter()
            .position(|i| i == id)
            .map(|k| self.weights[k])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, T)> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.weights.iter().copied())
    }

    pub fn values(&self) -> &[T] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> T {
        self.weights.iter().copied().sum()
    }
}

#[derive(Debug, Clone)]
pub struct IpfOptions<T> {
    /// Maximum absolute share residual accepted as converged.
    pub tol: T,
    /// Maximum number of full sweeps.
    pub max_iter: usize,
    /// Optional upper bound on any single weight.
    pub cap: Option<T>,
    /// Raking order; declaration order of the margin table when `None`.
    pub order: Option<Vec<String>>,
}

impl<T: Scalar> Default for IpfOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-6),
            max_iter: 1000,
            cap: None,
            order: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport<T> {
    pub converged: bool,
    /// Full sweeps performed.
    pub iterations: usize,
    pub max_residual: T,
    /// Max residual before the first sweep and after each sweep.
    pub residual_history: Vec<T>,
    pub tolerance: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpfOutcome<T> {
    pub weights: WeightVector<T>,
    pub report: ConvergenceReport<T>,
}

impl<T: Scalar> IpfOutcome<T> {
    /// `Err(NotConverged)` when the residual is still above tolerance.
    pub fn ensure_converged(&self) -> Result<&Self, WeightingError> {
        if self.report.converged {
            Ok(self)
        } else {
            Err(WeightingError::NotConverged {
                iterations: self.report.iterations,
                residual: self.report.max_residual.to_f64_lossy(),
            })
        }
    }
}

struct Layout<T> {
    /// Per variable (in raking order): targets per category index.
    targets: Vec<Vec<T>>,
    /// Per variable (in raking order): category index for each record.
    membership: Vec<Vec<usize>>,
}

fn layout<T: Scalar>(
    records: &[RespondentRecord],
    margins: &MarginTable<T>,
    order: &[String],
) -> Result<Layout<T>, WeightingError> {
    let mut targets = Vec::new();
    let mut membership = Vec::new();
    for var in order {
        let cats = margins
            .shares(var)
            .ok_or_else(|| WeightingError::UnknownVariable(var.clone()))?;
        let mut counts = vec![0usize; cats.len()];
        let mut member = Vec::with_capacity(records.len());
        for r in records {
            let idx = r
                .categories
                .get(var)
                .and_then(|c| cats.iter().position(|(k, _)| k == c))
                .ok_or_else(|| WeightingError::MissingCategory {
                    respondent: r.id.clone(),
                    variable: var.clone(),
                })?;
            counts[idx] += 1;
            member.push(idx);
        }
        for ((cat, share), n) in cats.iter().zip(&counts) {
            if *share > T::zero() && *n == 0 {
                return Err(WeightingError::EmptyCell {
                    variable: var.clone(),
                    category: cat.clone(),
                });
            }
            if *share == T::zero() && *n > 0 {
                return Err(WeightingError::ZeroTargetOccupied {
                    variable: var.clone(),
                    category: cat.clone(),
                });
            }
        }
        targets.push(cats.iter().map(|(_, s)| *s).collect());
        membership.push(member);
    }
    Ok(Layout {
        targets,
        membership,
    })
}

fn category_totals<T: Scalar>(weights: &[T], member: &[usize], n_cats: usize) -> Vec<T> {
    let mut totals = vec![T::zero(); n_cats];
    for (w, &c) in weights.iter().zip(member) {
        totals[c] = totals[c] + *w;
    }
    totals
}

fn max_residual<T: Scalar>(weights: &[T], layout: &Layout<T>) -> T {
    let total: T = weights.iter().copied().sum();
    let mut worst = T::zero();
    for (targets, member) in layout.targets.iter().zip(&layout.membership) {
        let totals = category_totals(weights, member, targets.len());
        for (t, s) in totals.iter().zip(targets) {
            worst = worst.max((*t / total - *s).abs());
        }
    }
    worst
}

fn rescale<T: Scalar>(weights: &mut [T], n: T) {
    let total: T = weights.iter().copied().sum();
    let f = n / total;
    for w in weights.iter_mut() {
        *w = *w * f;
    }
}

fn apply_cap<T: Scalar>(weights: &mut [T], cap: T, n: T) {
    for _ in 0..100 {
        let mut clipped = false;
        for w in weights.iter_mut() {
            if *w > cap {
                *w = cap;
                clipped = true;
            }
        }
        rescale(weights, n);
        if !clipped {
            break;
        }
    }
}

/// Rakes unit starting weights until every marginal share is within `opts.tol` of its target.
///
/// Non-convergence is not an error here: the returned report carries `converged = false` and
/// the best weights found, see [`IpfOutcome::ensure_converged`].
pub fn ipf<T: Scalar>(
    records: &[RespondentRecord],
    margins: &MarginTable<T>,
    opts: &IpfOptions<T>,
) -> Result<IpfOutcome<T>, WeightingError> {
    let start = vec![T::one(); records.len()];
    rake_from(records, margins, opts, start)
}

/// Same as [`ipf`], starting from the given weights instead of ones.
pub fn ipf_from<T: Scalar>(
    records: &[RespondentRecord],
    margins: &MarginTable<T>,
    opts: &IpfOptions<T>,
    initial: &WeightVector<T>,
) -> Result<IpfOutcome<T>, WeightingError> {
    if initial.len() != records.len() {
        return Err(WeightingError::WeightsMismatch {
            weights: initial.len(),
            records: records.len(),
        });
    }
    rake_from(records, margins, opts, initial.values().to_vec())
}

fn rake_from<T: Scalar>(
    records: &[RespondentRecord],
    margins: &MarginTable<T>,
    opts: &IpfOptions<T>,
    mut weights: Vec<T>,
) -> Result<IpfOutcome<T>, WeightingError> {
    if records.is_empty() {
        return Err(WeightingError::NoRespondents);
    }
    if !(opts.tol > T::zero()) {
        return Err(WeightingError::InvalidTolerance(opts.tol.to_f64_lossy()));
    }
    if let Some(cap) = opts.cap {
        if !(cap > T::one()) {
            return Err(WeightingError::InvalidCap(cap.to_f64_lossy()));
        }
    }
    let declared: Vec<String> = margins.variables().map(str::to_string).collect();
    let order = match &opts.order {
        Some(o) => {
            let a: BTreeSet<&String> = o.iter().collect();
            let b: BTreeSet<&String> = declared.iter().collect();
            if a != b || o.len() != declared.len() {
                return Err(WeightingError::InvalidOrder);
            }
            o.clone()
        }
        None => declared,
    };
    let layout = layout(records, margins, &order)?;
    let n = T::from_usize(records.len()).expect("record count fits scalar");
    rescale(&mut weights, n);

    let mut residual = max_residual(&weights, &layout);
    let mut history = vec![residual];
    let mut iterations = 0;
    while residual > opts.tol && iterations < opts.max_iter {
        for (targets, member) in layout.targets.iter().zip(&layout.membership) {
            let totals = category_totals(&weights, member, targets.len());
            let factors: Vec<T> = targets
                .iter()
                .zip(&totals)
                .map(|(t, tot)| {
                    if *tot > T::zero() {
                        *t * n / *tot
                    } else {
                        T::one()
                    }
                })
                .collect();
            for (w, &c) in weights.iter_mut().zip(member) {
                *w = *w * factors[c];
            }
        }
        rescale(&mut weights, n);
        if let Some(cap) = opts.cap {
            apply_cap(&mut weights, cap, n);
        }
        iterations += 1;
        residual = max_residual(&weights, &layout);
        history.push(residual);
    }

    Ok(IpfOutcome {
        weights: WeightVector {
            ids: records.iter().map(|r| r.id.clone()).collect(),
            weights,
        },
        report: ConvergenceReport {
            converged: residual <= opts.tol,
            iterations,
            max_residual: residual,
            residual_history: history,
            tolerance: opts.tol,
        },
    })
}

/// Weighted share of each observed category of `variable`.
pub fn weighted_shares<T: Scalar>(
    records: &[RespondentRecord],
    weights: &WeightVector<T>,
    variable: &str,
) -> Result<BTreeMap<String, T>, WeightingError> {
    if weights.len() != records.len() {
        return Err(WeightingError::WeightsMismatch {
            weights: weights.len(),
            records: records.len(),
        });
    }
    if !records.iter().any(|r| r.categories.contains_key(variable)) {
        return Err(WeightingError::UnknownVariable(variable.to_string()));
    }
    let mut totals: BTreeMap<String, T> = BTreeMap::new();
    for (r, w) in records.iter().zip(weights.values()) {
        let cat = r
            .categories
            .get(variable)
            .ok_or_else(|| WeightingError::MissingCategory {
                respondent: r.id.clone(),
                variable: variable.to_string(),
            })?;
        let e = totals.entry(cat.clone()).or_insert_with(T::zero);
        *e = *e + *w;
    }
    let total: T = totals.values().copied().sum();
    Ok(totals.into_iter().map(|(c, t)| (c, t / total)).collect())
}

/// Weighted shares of every variable in `margins`, over the full margin category universe
/// (categories without respondents get share zero).
pub fn weighted_shares_all<T: Scalar>(
    records: &[RespondentRecord],
    weights: &WeightVector<T>,
    margins: &MarginTable<T>,
) -> Result<BTreeMap<String, BTreeMap<String, T>>, WeightingError> {
    let mut out = BTreeMap::new();
    for var in margins.variables() {
        let observed = weighted_shares(records, weights, var)?;
        let cats = margins.shares(var).expect("variable from margins");
        let mut full = BTreeMap::new();
        for (c, _) in cats {
            full.insert(c.clone(), observed.get(c).copied().unwrap_or_else(T::zero));
        }
        if let Some(extra) = observed.keys().find(|c| !full.contains_key(*c)) {
            return Err(WeightingError::CategoryMismatch(format!("{var}/{extra}")));
        }
        out.insert(var.to_string(), full);
    }
    Ok(out)
}

/// Pearson correlation between the stacked weighted shares and stacked target shares.
pub fn margin_correlation<T: Scalar>(
    shares: &BTreeMap<String, BTreeMap<String, T>>,
    margins: &MarginTable<T>,
) -> Result<T, WeightingError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut seen_vars = 0;
    for var in margins.variables() {
        let observed = shares
            .get(var)
            .ok_or_else(|| WeightingError::CategoryMismatch(format!("missing variable {var}")))?;
        seen_vars += 1;
        let cats = margins.shares(var).expect("variable from margins");
        if observed.len() != cats.len() {
            return Err(WeightingError::CategoryMismatch(format!(
                "{var} has {} categories, margins have {}",
                observed.len(),
                cats.len()
            )));
        }
        for (c, target) in cats {
            let s = observed
                .get(c)
                .ok_or_else(|| WeightingError::CategoryMismatch(format!("{var}/{c}")))?;
            xs.push(*s);
            ys.push(*target);
        }
    }
    if seen_vars != shares.len() {
        return Err(WeightingError::CategoryMismatch(
            "shares name variables absent from margins".into(),
        ));
    }
    pearson(&xs, &ys)
}

fn pearson<T: Scalar>(xs: &[T], ys: &[T]) -> Result<T, WeightingError> {
    let n = T::from_usize(xs.len()).expect("length fits scalar");
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (x, y) in xs.iter().zip(ys) {
        let dx = *x - mx;
        let dy = *y - my;
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Err(WeightingError::DegenerateVariance);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}
