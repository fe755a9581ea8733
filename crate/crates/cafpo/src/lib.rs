//! Factor-based portfolio construction toolkit.
//!
//! The pipeline: stock-return and firm-characteristic panels are ingested
//! from CSV (or generated synthetically with known ground truth), compressed
//! into a small set of latent factors by a conditional autoencoder, and fed
//! as state windows to reinforcement-learning agents (PPO, DDPG) that emit
//! long-short portfolio weights. A rolling-window engine retrains everything
//! once per step, evaluates out of sample, audits for lookahead, and writes
//! plot-ready reports. Expected-gradients attribution explains the trained
//! actor's weights in terms of factors.

pub mod agents;
pub mod attribution;
pub mod autodiff;
pub mod backtest;
pub mod baselines;
pub mod data;
pub mod envs;
pub mod factors;
