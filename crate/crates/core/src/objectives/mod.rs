//! Preference objectives on sequence log-probabilities.
//!
//! All pairwise losses share the shape `scale * softplus(-z)` where `z` is a
//! margin between the chosen and rejected responses:
//!
//! | objective | margin `z`                                   | scale     |
//! |-----------|----------------------------------------------|-----------|
//! | DPO       | `β(logπ(y_w) − logπ_ref(y_w)) − β(logπ(y_l) − logπ_ref(y_l))` | 1 |
//! | WPO       | same as DPO                                  | `w_w·w_l` |
//! | SimPO     | `β·logπ(y_w)/|y_w| − β·logπ(y_l)/|y_l| − γ` | 1         |
//! | BT        | `β·logπ(y_w) − β·logπ(y_l)`                  | 1         |
//!
//! The partition term of the implicit reward cancels in every margin and
//! therefore never appears.

mod gradient;
mod schedule;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use gradient::{loss_gradient, pair_loss, PairEval, PairTokens};
pub use schedule::learning_rate;
pub use train::{batch_loss, train, AdamW, LossReport, TrainLogEntry, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Dpo,
    Simpo,
    Wpo,
    Bt,
}

impl std::str::FromStr for ObjectiveKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dpo" => Ok(Self::Dpo),
            "simpo" => Ok(Self::Simpo),
            "wpo" => Ok(Self::Wpo),
            "bt" => Ok(Self::Bt),
            other => Err(format!("unknown objective {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    pub beta: f64,
    /// Target margin, SimPO only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_ratio: f64,
    pub schedule: Schedule,
    #[serde(default)]
    pub weight_decay: f64,
    /// Seed for the per-epoch shuffle.
    #[serde(default)]
    pub seed: u64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            kind: ObjectiveKind::Dpo,
            beta: 0.1,
            gamma: None,
            learning_rate: 1e-2,
            batch_size: 32,
            epochs: 2,
            warmup_ratio: 0.1,
            schedule: Schedule::Cosine,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Model families with published hyperparameters for 8–9B policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetModel {
    Llama3,
    Gemma2,
}

impl ObjectiveConfig {
    pub fn dpo(beta: f64) -> Self {
        Self {
            beta,
            ..Self::default()
        }
    }

    pub fn simpo(beta: f64, gamma: f64) -> Self {
        Self {
            kind: ObjectiveKind::Simpo,
            beta,
            gamma: Some(gamma),
            ..Self::default()
        }
    }

    pub fn wpo(beta: f64) -> Self {
        Self {
            kind: ObjectiveKind::Wpo,
            beta,
            ..Self::default()
        }
    }

    /// Large-model settings: batch 128, one epoch, cosine with 10% warmup,
    /// and the per-model learning rate, β and γ/β.
    pub fn preset(model: PresetModel, kind: ObjectiveKind) -> Result<Self> {
        let (lr, beta, gamma_ratio) = match (model, kind) {
            (PresetModel::Llama3, ObjectiveKind::Dpo) => (5e-7, 0.01, None),
            (PresetModel::Llama3, ObjectiveKind::Simpo) => (8e-7, 13.0, Some(0.2)),
            (PresetModel::Llama3, ObjectiveKind::Wpo) => (3e-7, 0.02, None),
            (PresetModel::Gemma2, ObjectiveKind::Dpo) => (1e-6, 0.01, None),
            (PresetModel::Gemma2, ObjectiveKind::Simpo) => (1e-6, 10.0, Some(0.7)),
            (PresetModel::Gemma2, ObjectiveKind::Wpo) => (1e-6, 0.01, None),
            (_, ObjectiveKind::Bt) => return invalid("no preset for the reward-model objective"),
        };
        Ok(Self {
            kind,
            beta,
            gamma: gamma_ratio.map(|r| r * beta),
            learning_rate: lr,
            batch_size: 128,
            epochs: 1,
            warmup_ratio: 0.1,
            schedule: Schedule::Cosine,
            weight_decay: 0.0,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return invalid("beta must be positive");
        }
        match (self.kind, self.gamma) {
            (ObjectiveKind::Simpo, None) => return invalid("SimPO needs gamma"),
            (_, Some(g)) if !(g >= 0.0) => return invalid("gamma must be non-negative"),
            _ => {}
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate must be non-negative");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return invalid("batch_size and epochs must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return invalid("warmup_ratio must lie in [0, 1]");
        }
        if !(self.weight_decay >= 0.0) {
            return invalid("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pairwise reward-model loss `−log σ(r_w − r_l)`.
pub fn bt_loss(r_w: f64, r_l: f64) -> f64 {
    softplus(-(r_w - r_l))
}

/// `β·(logπ_θ − logπ_ref)`, the implicit reward without its partition term.
pub fn implicit_reward(beta: f64, logp_theta: f64, logp_ref: f64) -> f64 {
    beta * (logp_theta - logp_ref)
}

pub fn dpo_margin(logp_w: f64, logp_w_ref: f64, logp_l: f64, logp_l_ref: f64, beta: f64) -> f64 {
    implicit_reward(beta, logp_w, logp_w_ref) - implicit_reward(beta, logp_l, logp_l_ref)
}

pub fn dpo_loss(logp_w: f64, logp_w_ref: f64, logp_l: f64, logp_l_ref: f64, beta: f64) -> f64 {
    softplus(-dpo_margin(logp_w, logp_w_ref, logp_l, logp_l_ref, beta))
}

pub fn simpo_loss(logp_w: f64, len_w: usize, logp_l: f64, len_l: usize, beta: f64, gamma: f64) -> f64 {
    let z = beta * logp_w / len_w as f64 - beta * logp_l / len_l as f64 - gamma;
    softplus(-z)
}

/// DPO loss scaled by both consistency weights (held constant).
pub fn wpo_loss(logp_w: f64, logp_w_ref: f64, logp_l: f64, logp_l_ref: f64, beta: f64, w_w: f64, w_l: f64) -> f64 {
    dpo_loss(logp_w, logp_w_ref, logp_l, logp_l_ref, beta) * w_w * w_l
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn symmetric_points_are_ln2() {
        assert!((bt_loss(0.3, 0.3) - LN_2).abs() < 1e-15);
        assert!((dpo_loss(-3.0, -3.0, -7.0, -7.0, 0.1) - LN_2).abs() < 1e-15);
        assert!((simpo_loss(-6.0, 3, -4.0, 2, 2.0, 0.0) - LN_2).abs() < 1e-15);
    }

    #[test]
    fn bt_values() {
        assert_eq!(bt_loss(f64::INFINITY, 0.0), 0.0);
        assert!(bt_loss(1e308, -1e308) < 1e-300);
        assert!((bt_loss(1.0, 0.0) - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((bt_loss(1.0, 0.0) - 0.313262).abs() < 1e-6);
        assert!((bt_loss(-800.0, 0.0) - 800.0).abs() < 1e-12);
    }

    #[test]
    fn implicit_reward_values() {
        assert_eq!(implicit_reward(0.5, -2.0, -2.0), 0.0);
        assert!((implicit_reward(0.01, 0.0, -2.0) - 0.02).abs() < 1e-17);
    }

    #[test]
    fn dpo_values() {
        assert!((dpo_loss(1.0, 0.0, 0.0, 0.0, 1.0) - softplus(-1.0)).abs() < 1e-15);
        assert!((dpo_loss(1.0, 0.0, 0.0, 0.0, 1.0) - 0.313262).abs() < 1e-6);
        let v = dpo_loss(10.0, 0.0, 0.0, 0.0, 0.01);
        assert!((v - (1.0 + 0.1f64.exp().recip()).ln()).abs() < 1e-15);
        assert!((v - 0.644397).abs() < 1e-6);
    }

    #[test]
    fn simpo_values() {
        // β = 10, γ = 7, normalized difference 0.7
        let v = simpo_loss(-1.3 * 4.0, 4, -2.0 * 3.0, 3, 10.0, 7.0);
        assert!((v - LN_2).abs() < 1e-12);
        let a = simpo_loss(-3.0, 3, -8.0, 4, 1.5, 0.2);
        let b = simpo_loss(-6.0, 6, -16.0, 8, 1.5, 0.2);
        assert_eq!(a, b);
    }

    #[test]
    fn wpo_values() {
        let d = dpo_loss(-1.0, -2.0, -3.0, -2.5, 0.1);
        assert_eq!(wpo_loss(-1.0, -2.0, -3.0, -2.5, 0.1, 1.0, 1.0).to_bits(), d.to_bits());
        assert_eq!(wpo_loss(-1.0, -2.0, -3.0, -2.5, 0.1, 0.5, 0.5), d / 4.0);
        assert!((wpo_loss(-1.0, -1.0, -3.0, -3.0, 0.1, 0.8, 0.6) - 0.48 * LN_2).abs() < 1e-15);
    }

    #[test]
    fn presets() {
        let g = ObjectiveConfig::preset(PresetModel::Gemma2, ObjectiveKind::Simpo).unwrap();
        assert_eq!((g.beta, g.gamma), (10.0, Some(7.0)));
        assert_eq!(g.batch_size, 128);
        let l = ObjectiveConfig::preset(PresetModel::Llama3, ObjectiveKind::Dpo).unwrap();
        assert_eq!((l.learning_rate, l.beta), (5e-7, 0.01));
        assert!(l.validate().is_ok());
        assert!(ObjectiveConfig::preset(PresetModel::Llama3, ObjectiveKind::Bt).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ObjectiveConfig::default().validate().is_ok());
        let mut c = ObjectiveConfig::default();
        c.kind = ObjectiveKind::Simpo;
        assert!(c.validate().is_err());
        c.gamma = Some(0.5);
        assert!(c.validate().is_ok());
        assert!(ObjectiveConfig { beta: 0.0, ..Default::default() }.validate().is_err());
        assert!(ObjectiveConfig { warmup_ratio: 1.5, ..Default::default() }.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dpo_is_positive_and_decreasing(a in -50.0f64..50.0, d in 0.001f64..10.0, beta in 0.01f64..5.0) {
                let lo = dpo_loss(a, 0.0, 0.0, 0.0, beta);
                let hi = dpo_loss(a + d, 0.0, 0.0, 0.0, beta);
                prop_assert!(lo >= 0.0 && hi >= 0.0);
                prop_assert!(hi < lo || (lo - hi).abs() < 1e-300);
            }

            #[test]
            fn simpo_is_decreasing(a in -20.0f64..0.0, d in 0.01f64..5.0, beta in 0.1f64..5.0, gamma in 0.0f64..2.0) {
                let lo = simpo_loss(a, 1, -10.0, 1, beta, gamma);
                let hi = simpo_loss(a + d, 1, -10.0, 1, beta, gamma);
                prop_assert!(hi < lo);
            }

            #[test]
            fn partition_term_cancels(w in -30.0f64..0.0, wr in -30.0f64..0.0, l in -30.0f64..0.0, lr in -30.0f64..0.0, c in -100.0f64..100.0, beta in 0.01f64..2.0) {
                let base = dpo_loss(w, wr, l, lr, beta);
                let shifted = dpo_loss(w, wr + c, l, lr + c, beta);
                prop_assert!((base - shifted).abs() < 1e-9);
                let m = dpo_margin(w, wr, l, lr, beta);
                prop_assert!((m - dpo_margin(w, wr + c, l, lr + c, beta)).abs() < 1e-9);
            }
        }
    }
}
