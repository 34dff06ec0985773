//! Synthetic phantoms, pre-segmentation perturbation, the sensitivity
//! experiment and the command line interface.

pub mod cli;
pub mod perturb;
pub mod phantom;
pub mod scene;
pub mod sensitivity;

pub use perturb::{erode, perturb_labels, PerturbParams};
pub use phantom::{make_phantom, Phantom, PhantomKind, PhantomSpec};
pub use sensitivity::{sensitivity_experiment, SensitivityConfig, SensitivityRow};
