//! Estimating emotion regulation difficulty (DERS subscale scores) from
//! per-item audio and video features, and MDD/PTSD severity from those
//! estimates or straight from the features.
//!
//! The numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the common choices.

pub mod cli;
pub mod cohort;
pub mod eval;
pub mod features;
pub mod instrument;
pub mod models;
pub mod pipeline;
pub mod scalar;
pub mod synth;

pub type CohortF32 = cohort::Cohort<f32>;
pub type CohortF64 = cohort::Cohort<f64>;
pub type FeatureTableF32 = features::FeatureTable<f32>;
pub type FeatureTableF64 = features::FeatureTable<f64>;
pub type ForestModelF32 = models::ForestModel<f32>;
pub type ForestModelF64 = models::ForestModel<f64>;
pub type SvmModelF32 = models::SvmModel<f32>;
pub type SvmModelF64 = models::SvmModel<f64>;
pub type CascadeModelF32 = pipeline::CascadeModel<f32>;
pub type CascadeModelF64 = pipeline::CascadeModel<f64>;
