use thiserror::Error;

use crate::choice::ChoiceError;
use crate::estimate::EstimateError;
use crate::io::IoError;
use crate::newmode::NewModeError;
use crate::scenario::ScenarioError;
use crate::weighting::WeightingError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Choice(#[from] ChoiceError),
    #[error(transparent)]
    Weighting(#[from] WeightingError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    NewMode(#[from] NewModeError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl Error {
    /// True for numerical non-convergence, as opposed to bad input.
    pub fn is_non_convergence(&self) -> bool {
        matches!(
            self,
            Error::Weighting(WeightingError::NotConverged { .. })
                | Error::Estimate(EstimateError::NotConverged { .. })
        )
    }
}
