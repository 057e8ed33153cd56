//! Additive-increase / multiplicative-decrease control of teaching pace.
//!
//! `pace` is how many banked questions a session delivers. Quiz accuracy
//! drives it the way acknowledgements and losses drive a congestion window:
//! slow start doubles it up to `ssthresh`, steady state adds `alpha` per good
//! quiz, and a poor quiz cuts it by `beta`. A dead-band between the two
//! accuracy thresholds leaves pace alone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vetting::DifficultyBand;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacingParams {
    pub alpha: f64,
    pub beta: f64,
    pub theta_hi: f64,
    pub theta_lo: f64,
    /// EWMA smoothing weight given to the newest accuracy.
    pub lambda: f64,
    pub pace_min: f64,
    pub initial_ssthresh: f64,
    pub initial_comprehension: f64,
}

impl Default for PacingParams {
    fn default() -> Self {
        PacingParams {
            alpha: 1.0,
            beta: 0.5,
            theta_hi: 0.7,
            theta_lo: 0.5,
            lambda: 0.5,
            pace_min: 1.0,
            initial_ssthresh: 8.0,
            initial_comprehension: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacingError {
    #[error("bad pacing parameters: {0}")]
    BadParams(&'static str),
    #[error("accuracy must lie in [0, 1]")]
    OutOfRange,
    #[error("no approved questions to recommend")]
    EmptyBank,
}

impl PacingParams {
    pub fn validate(&self) -> Result<(), PacingError> {
        let finite = [
            self.alpha,
            self.beta,
            self.theta_hi,
            self.theta_lo,
            self.lambda,
            self.pace_min,
            self.initial_ssthresh,
            self.initial_comprehension,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(PacingError::BadParams("parameters must be finite"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(PacingError::BadParams("beta must lie in (0, 1)"));
        }
        if self.alpha <= 0.0 {
            return Err(PacingError::BadParams("alpha must be positive"));
        }
        if !(0.0 <= self.theta_lo && self.theta_lo < self.theta_hi && self.theta_hi <= 1.0) {
            return Err(PacingError::BadParams("need 0 <= theta_lo < theta_hi <= 1"));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(PacingError::BadParams("lambda must lie in (0, 1]"));
        }
        if self.pace_min <= 0.0 {
            return Err(PacingError::BadParams("pace_min must be positive"));
        }
        if self.initial_ssthresh < self.pace_min {
            return Err(PacingError::BadParams("ssthresh must be at least pace_min"));
        }
        if !(0.0..=1.0).contains(&self.initial_comprehension) {
            return Err(PacingError::BadParams("initial comprehension must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PacingMode {
    SlowStart,
    Steady,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacingState {
    pub pace: f64,
    pub comprehension: f64,
    pub mode: PacingMode,
    pub ssthresh: f64,
    pub params: PacingParams,
}

pub fn init_pacing(params: PacingParams) -> Result<PacingState, PacingError> {
    params.validate()?;
    Ok(PacingState {
        pace: params.pace_min,
        comprehension: params.initial_comprehension,
        mode: PacingMode::SlowStart,
        ssthresh: params.initial_ssthresh,
        params,
    })
}

/// One comprehension EWMA step.
pub fn ewma_step(previous: f64, accuracy: f64, lambda: f64) -> f64 {
    (1.0 - lambda) * previous + lambda * accuracy
}

pub fn observe_quiz_outcome(state: &PacingState, accuracy: f64) -> Result<PacingState, PacingError> {
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(PacingError::OutOfRange);
    }
    let p = state.params;
    let mut next = *state;
    next.comprehension = ewma_step(state.comprehension, accuracy, p.lambda);
    if accuracy >= p.theta_hi {
        match state.mode {
            PacingMode::SlowStart => {
                next.pace = (2.0 * state.pace).min(state.ssthresh);
                if next.pace == state.ssthresh {
                    next.mode = PacingMode::Steady;
                }
            }
            PacingMode::Steady => next.pace = state.pace + p.alpha,
        }
    } else if accuracy < p.theta_lo {
        next.pace = p.pace_min.max(p.beta * state.pace);
        next.ssthresh = p.pace_min.max(next.pace);
        next.mode = PacingMode::Steady;
    }
    Ok(next)
}

/// Re-enters slow start for unfamiliar material, remembering half the old pace.
pub fn start_new_topic(state: &PacingState) -> PacingState {
    let p = state.params;
    PacingState {
        ssthresh: p.pace_min.max(state.pace / 2.0),
        pace: p.pace_min,
        mode: PacingMode::SlowStart,
        ..*state
    }
}

pub const COMFORTABLE_BAND: DifficultyBand = DifficultyBand::new(1.0, 5.0);
pub const STRETCH_BAND: DifficultyBand = DifficultyBand::new(4.0, 8.0);
pub const CHALLENGE_BAND: DifficultyBand = DifficultyBand::new(6.0, 10.0);
pub const CHALLENGE_COMPREHENSION: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub item_count: usize,
    pub band: DifficultyBand,
    /// Present when the bank had nothing to offer.
    #[serde(default)]
    pub advisory: Option<String>,
}

/// `available` is the number of approved entries the course can draw on.
pub fn recommend_next(state: &PacingState, available: usize) -> Recommendation {
    let band = if state.comprehension < state.params.theta_hi {
        COMFORTABLE_BAND
    } else if state.comprehension < CHALLENGE_COMPREHENSION {
        STRETCH_BAND
    } else {
        CHALLENGE_BAND
    };
    let wanted = state.pace.round().max(0.0) as usize;
    Recommendation {
        item_count: wanted.min(available),
        band,
        advisory: (available == 0).then(|| PacingError::EmptyBank.to_string()),
    }
}
