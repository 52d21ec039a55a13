//! File-based pipeline: detector corrections, I/O, configuration, ROI
//! statistics and the end-to-end runs behind the command line.

pub mod bundle;
pub mod config;
pub mod correction;
pub mod io;
pub mod roi;
pub mod run;

pub use bundle::Bundle;
pub use config::{AutoOr, RunConfig, SynthPattern};
pub use run::{
    choose_parameters, retrieve_images, retrieve_with_parameters, run_hsv, run_period,
    run_retrieve, run_roi_stats, run_synth, with_workers, ChosenParameters, ParamSource, Retrieval,
    RetrieveOptions,
};
