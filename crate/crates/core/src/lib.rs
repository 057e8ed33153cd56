//! Flipped-classroom question pipeline: MCQ parsing, flipped-interaction
//! prompting, in-class routines, vetting, pacing, analytics and the event log
//! that records all of it.

pub mod analytics;
pub mod classroom;
pub mod domain;
pub mod fip;
pub mod mcq;
pub mod pacing;
pub mod routine;
pub mod samples;
pub mod store;
pub mod vetting;

pub use classroom::{ClassState, Classroom, Command, EngineConfig, EngineError, Event, Reply};
pub use domain::{ActorRef, Grade, Label, LabelSet, McqQuestion, QuestionKind, Role, RootQuestion, Timestamp};
pub use mcq::{parse_mcq, render_mcq, ParseFailure, ParseReport};
pub use pacing::{PacingMode, PacingParams, PacingState};
pub use store::{canonical_json, EventEnvelope, EventLog, StoreError};
