//! Preference-data synthesis by prefix continuation, with reward scoring,
//! consistency weighting, pair construction and preference optimization
//! on an exactly differentiable tabular language model.

pub mod consistency;
pub mod error;
pub mod io;
pub mod objectives;
pub mod pairing;
pub mod policy;
pub mod reward;
pub mod synthesis;
pub mod types;

pub use error::{Error, Result};
pub use policy::{PolicyHandle, RemoteModel, TabularLM};
pub use types::{
    response_id, validate_response, Instruction, PreferencePair, Prompt, Response, SampleSet, SamplingConfig,
    Segment, Source, Strategy, TokenId, Violation, Vocabulary,
};
