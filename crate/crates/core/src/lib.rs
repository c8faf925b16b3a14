//! Age-stratified evaluation of organ segmentations, rehearsal training
//! plans for adapting an adult-trained segmenter to children, and a
//! synthetic phantom testbed on which the whole pipeline runs end to end.

pub mod cohort;
pub mod error;
pub mod experiment;
pub mod io;
pub mod labelmap;
pub mod metrics;
pub mod phantom;
pub mod report;
pub mod resample;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
