//! Behavior-based human-likeness evaluation for conversational robots.
//!
//! The pipeline reads annotated dialogue corpora ([`corpus`]), cuts them
//! into one-minute samples and aggregates third-party human/system verdicts
//! into human-likeness scores ([`sampling`]), extracts seventeen user
//! behavior features per dialogue ([`features`]), relates features and
//! questionnaire items to the scores ([`stats`]) and predicts scores with
//! epsilon-SVR under leave-one-out cross-validation ([`regression`]).
//! [`synth`] generates corpora with a planted latent human-likeness for
//! end-to-end checks, and [`pipeline`] strings the stages together.

pub mod corpus;
pub mod features;
pub mod pipeline;
pub mod regression;
pub mod sampling;
pub mod stats;
pub mod synth;
