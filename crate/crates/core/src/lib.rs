//! Disentangled decoding decomposition for multichannel EEG.
//!
//! A grouped-subnetwork decomposer maps a short multichannel window onto `C`
//! independent latent components. It is pretrained with a weakly supervised
//! task: predict which time bin of its trial a window came from, through a
//! per-dataset sequence mapping. The crate also carries the preprocessing
//! chain, the interpretation and consistency metrics, frozen-feature probes,
//! and a synthetic ground-truth benchmark.
//!
//! Module map:
//!
//! * [`io`]: EDF/EDF+ parsing and the neutral trial store.
//! * [`dsp`]: filtering, resampling, standardization and window sampling.
//! * [`filterbank`]: trainable generalized-Gaussian spectral filters.
//! * [`model`]: the grouped decomposer, forward and backward.
//! * [`sequencing`]: MGU activation, semi-normalized mappings, bin loss.
//! * [`training`]: bins, batching, folds, AdamW pretraining, checkpoints.
//! * [`interpret`]: timecourses, CCC/TC, significance tests, matching.
//! * [`downstream`]: motor and sleep probes, few-shot curves, metrics.
//! * [`synth`]: synthetic scenes with ground-truth envelopes, blink probe.

pub mod downstream;
pub mod dsp;
pub mod filterbank;
pub mod interpret;
pub mod io;
pub mod model;
pub mod rng;
pub mod sequencing;
pub mod stats;
pub mod synth;
pub mod training;

mod error;

pub use error::{Error, Result};
pub use io::{DatasetManifest, RecordingBuffer, Store, Trial, TrialTable};
pub use model::{LatentVector, ModelConfig, ModelParams};
pub use training::{Checkpoint, FoldSplit, TrainConfig};
