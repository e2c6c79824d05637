//! Counterfactual data curation for meta-action driving policies.

pub mod clients;
pub mod codec;
pub mod metaction;
pub mod par;
pub mod pipeline;
pub mod records;
pub mod scenelab;
pub mod seed;
pub mod trajgeo;
