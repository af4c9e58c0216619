pub mod bvn;
pub mod cli;
pub mod counterfactual;
pub mod data;
pub mod estimate;
pub mod identify;
pub mod inference;
mod linalg;
pub mod model;
pub mod simulate;
