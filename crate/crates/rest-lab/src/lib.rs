//! Reinforced self-training (ReST) for semantic segmentation, desk scale.
//!
//! A supervised micro U-Net is treated as the environment of an MDP whose
//! states are its probability maps. A stochastic pixel policy generates
//! pseudolabels for unlabeled images, rewarded first by a frozen
//! max-margin similarity classifier trained on expert demonstrations and
//! later by held-out validation accuracy of the fine-tuned environment.
//! Everything runs on synthetic blob data so a full cross-validated
//! experiment fits in minutes on one core.

pub mod cli;
pub mod expert_reward;
pub mod metrics;
pub mod numcore;
pub mod policy;
pub mod rest_loop;
pub mod segnet;
pub mod synthdata;
