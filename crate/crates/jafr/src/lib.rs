//! Bias the frequency profile of a classifier by regularizing the Fourier
//! spectrum of its input gradients.
//!
//! The pieces, bottom to top:
//!
//! - [`tensor`]: a small `f64` computation graph whose backward pass is built
//!   from the same ops as the forward pass, so gradients of gradients work.
//! - [`spectral`]: a differentiable 2-D DFT and magnitude-map construction.
//! - [`freqbias`]: the low-frequency bias score `B_low` of a magnitude
//!   spectrum and the loss `-ln B_low` that drives it up.
//! - [`nn`]: desk-scale MLP / CNN classifiers, cross-entropy, and the input
//!   Jacobian with a graph attached for second-order training.
//! - [`attacks`]: FGSM and PGD within an L∞ ball.
//! - [`corruptions`]: parametric common corruptions at five severities.
//! - [`trainer`]: the regularized training loop.
//! - [`evaluator`]: accuracy / robustness / mCE reports and spectrum exports.
//! - [`data`]: IDX and CIFAR binary loaders plus seeded synthetic datasets.

pub mod attacks;
pub mod cli;
pub mod config;
pub mod corruptions;
pub mod data;
pub mod evaluator;
pub mod freqbias;
pub mod nn;
pub mod spectral;
pub mod tensor;
pub mod trainer;

/// Entry point for the `jafr` binary; returns the process exit code.
pub fn run_cli() -> i32 {
    cli::main_impl()
}

// Every code block in the book runs as a doc-test, keeping the guide in
// lockstep with the library (mdbook itself cannot run snippets that depend
// on the crate).
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    pub struct Autodiff;
    #[doc = include_str!("../../../book/src/spectra.md")]
    pub struct Spectra;
    #[doc = include_str!("../../../book/src/frequency-bias.md")]
    pub struct FrequencyBias;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/attacks.md")]
    pub struct Attacks;
    #[doc = include_str!("../../../book/src/corruptions.md")]
    pub struct Corruptions;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
