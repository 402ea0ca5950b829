pub mod backbone;
pub mod corpus;
pub mod ensemble;
pub mod metrics;
pub mod overlay;
pub mod pipeline;
pub mod seed;
pub mod synth;
