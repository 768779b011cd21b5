//! Query-and-transfer black-box adversarial attacks driven by a conditional
//! normalizing flow over a DCT-reduced perturbation subspace.
//!
//! The pipeline: train desk-scale surrogate classifiers, pretrain a
//! conditional flow against their energy-based adversarial distribution,
//! then attack a held-out target by running CMA-ES over the flow's latent
//! space, upsampling candidates with the inverse DCT and querying the
//! target's loss oracle.

pub mod attack;
pub mod classifier;
pub mod cmaes;
pub mod data;
pub mod dct;
pub mod energy;
pub mod error;
pub mod flow;
pub mod io;
pub mod report;
pub mod selftest;
pub mod tensor;
pub mod util;

pub use attack::{cg_attack, project_ball, AttackConfig, AttackOutcome, TransferMode};
pub use classifier::{
    adv_loss, ensemble_adv_loss, train_classifier, AdvLossSpec, Arch, AttackMode,
    ClassifierModel, QueryOracle, TrainConfig,
};
pub use cmaes::{cma_init, CmaConfig, CmaState};
pub use data::{gen_synthetic_dataset, split_openset, Dataset, DatasetConfig, OpenSetCase};
pub use dct::DctSubspace;
pub use energy::{kl_gradient, pretrain_flow, EnergyModel, KlTrainConfig, SpaceMap};
pub use error::{Error, Result};
pub use flow::{CondFlow, FlowLayout};
pub use tensor::{NdArray, ParamStore, Tape};
