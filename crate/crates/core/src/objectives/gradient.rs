use crate::error::{invalid, Error, Result};
use crate::policy::{log_softmax, softmax, TabularLM};
use crate::types::{PreferencePair, TokenId};

use super::{bt_loss, dpo_loss, sigmoid, simpo_loss, softplus, wpo_loss, ObjectiveConfig, ObjectiveKind};

/// Token-level view of a pair plus its frozen reference log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTokens {
    pub prompt: Vec<TokenId>,
    pub chosen: Vec<TokenId>,
    pub rejected: Vec<TokenId>,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
    pub chosen_weight: Option<f64>,
    pub rejected_weight: Option<f64>,
}

impl PairTokens {
    pub fn new(pair: &PreferencePair, reference: &TabularLM) -> Result<Self> {
        let prompt = pair
            .prompt
            .tokens()
            .ok_or_else(|| Error::InvalidInput(format!("pair {} has a text prompt", pair.instruction_id)))?;
        if pair.chosen.is_text() || pair.rejected.is_text() {
            return invalid(format!("pair {} has text responses", pair.instruction_id));
        }
        let (ref_chosen, _) = reference.sequence_logprob(prompt, &pair.chosen.tokens)?;
        let (ref_rejected, _) = reference.sequence_logprob(prompt, &pair.rejected.tokens)?;
        Ok(Self {
            prompt: prompt.to_vec(),
            chosen: pair.chosen.tokens.clone(),
            rejected: pair.rejected.tokens.clone(),
            ref_chosen,
            ref_rejected,
            chosen_weight: pair.chosen_weight,
            rejected_weight: pair.rejected_weight,
        })
    }

    fn weights(&self) -> Result<(f64, f64)> {
        match (self.chosen_weight, self.rejected_weight) {
            (Some(w), Some(l)) if w > 0.0 && l > 0.0 => Ok((w, l)),
            (Some(_), Some(_)) => invalid("consistency weights must be positive"),
            _ => Err(Error::WeightUnavailable("WPO needs weights on both responses".into())),
        }
    }
}

/// Loss of one pair, evaluated directly from the scalar loss functions.
pub fn pair_loss(model: &TabularLM, pair: &PairTokens, cfg: &ObjectiveConfig) -> Result<f64> {
    let (w, _) = model.sequence_logprob(&pair.prompt, &pair.chosen)?;
    let (l, _) = model.sequence_logprob(&pair.prompt, &pair.rejected)?;
    Ok(match cfg.kind {
        ObjectiveKind::Dpo => dpo_loss(w, pair.ref_chosen, l, pair.ref_rejected, cfg.beta),
        ObjectiveKind::Wpo => {
            let (ww, wl) = pair.weights()?;
            wpo_loss(w, pair.ref_chosen, l, pair.ref_rejected, cfg.beta, ww, wl)
        }
        ObjectiveKind::Simpo => simpo_loss(
            w,
            pair.chosen.len(),
            l,
            pair.rejected.len(),
            cfg.beta,
            cfg.gamma.unwrap_or(0.0),
        ),
        ObjectiveKind::Bt => bt_loss(cfg.beta * w, cfg.beta * l),
    })
}

/// Loss, reported margin and the logit gradient of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEval {
    pub loss: f64,
    /// Implicit-reward (or normalized log-prob) margin, γ excluded.
    pub margin: f64,
}

/// Adds `coef * ∂ logπ(tokens | prompt) / ∂ logits` into `grad`.
fn add_logprob_grad(model: &TabularLM, prompt: &[TokenId], tokens: &[TokenId], coef: f64, grad: &mut [f64]) -> Result<f64> {
    let v = model.vocab().size;
    let mut total = 0.0;
    for (row, &t) in model.visited_rows(prompt, tokens)?.into_iter().zip(tokens) {
        let logits = model.row(row);
        total += log_softmax(logits)[t as usize];
        let probs = softmax(logits, 1.0);
        let cells = &mut grad[row * v..(row + 1) * v];
        for (g, p) in cells.iter_mut().zip(&probs) {
            *g -= coef * p;
        }
        cells[t as usize] += coef;
    }
    Ok(total)
}

/// Accumulates `scale * ∂loss/∂logits` for one pair into `grad`.
///
/// Every loss is `s·softplus(−z)` with `z = a_w·logπ(y_w) − a_l·logπ(y_l) + c`,
/// so the gradient is `−s·σ(−z)·(a_w ∇logπ(y_w) − a_l ∇logπ(y_l))`.
pub(crate) fn accumulate_gradient(
    model: &TabularLM,
    pair: &PairTokens,
    cfg: &ObjectiveConfig,
    scale: f64,
    grad: &mut [f64],
) -> Result<PairEval> {
    let (a_w, a_l, offset, weight) = match cfg.kind {
        ObjectiveKind::Dpo => (cfg.beta, cfg.beta, -cfg.beta * (pair.ref_chosen - pair.ref_rejected), 1.0),
        ObjectiveKind::Wpo => {
            let (ww, wl) = pair.weights()?;
            (cfg.beta, cfg.beta, -cfg.beta * (pair.ref_chosen - pair.ref_rejected), ww * wl)
        }
        ObjectiveKind::Simpo => (
            cfg.beta / pair.chosen.len() as f64,
            cfg.beta / pair.rejected.len() as f64,
            0.0,
            1.0,
        ),
        ObjectiveKind::Bt => (cfg.beta, cfg.beta, 0.0, 1.0),
    };
    let gamma = if cfg.kind == ObjectiveKind::Simpo {
        cfg.gamma.unwrap_or(0.0)
    } else {
        0.0
    };

    // the coefficient depends on z, so score first with a scratch pass
    let (w, _) = model.sequence_logprob(&pair.prompt, &pair.chosen)?;
    let (l, _) = model.sequence_logprob(&pair.prompt, &pair.rejected)?;
    let margin = a_w * w - a_l * l + offset;
    let z = margin - gamma;
    let loss = weight * softplus(-z);
    let coef = -scale * weight * sigmoid(-z);
    add_logprob_grad(model, &pair.prompt, &pair.chosen, coef * a_w, grad)?;
    add_logprob_grad(model, &pair.prompt, &pair.rejected, -coef * a_l, grad)?;
    Ok(PairEval { loss, margin })
}

/// Exact gradient of one pair's loss with respect to every logit cell.
pub fn loss_gradient(model: &TabularLM, pair: &PairTokens, cfg: &ObjectiveConfig) -> Result<(PairEval, Vec<f64>)> {
    let mut grad = vec![0.0; model.logits().len()];
    let eval = accumulate_gradient(model, pair, cfg, 1.0, &mut grad)?;
    Ok((eval, grad))
}
