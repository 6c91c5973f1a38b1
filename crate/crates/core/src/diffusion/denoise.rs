use std::io::Write;

use serde::{Deserialize, Serialize};

use super::TokenPredictor;
use crate::error::{Error, Result};
use crate::numerics::graph::softmax_in_place;
use crate::tokenizer::{TokenSequence, MASK};

/// Positions filled in one inference round, in restoration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiseRound {
    pub round: usize,
    pub positions: Vec<usize>,
    pub ids: Vec<usize>,
    pub confidences: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DenoiseTrace {
    pub rounds: Vec<DenoiseRound>,
}

impl DenoiseTrace {
    pub fn restored_per_round(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.positions.len()).collect()
    }

    /// One JSON object per round.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.rounds {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Fill `future_len` masked positions after `history` in `steps` rounds.
///
/// Each round restores `future_len / steps` positions, the final round
/// takes whatever is left. Within a round the most confident positions win
/// (confidence is the largest softmax probability); ties go to the earlier
/// position and, inside a position, to the smaller token id. Restored
/// positions are never revisited. `allowed` optionally restricts the
/// vocabulary the argmax may pick from.
pub fn denoise_infer(
    predictor: &TokenPredictor<'_>,
    history: &TokenSequence,
    future_len: usize,
    steps: usize,
    allowed: Option<&[bool]>,
) -> Result<(TokenSequence, DenoiseTrace)> {
    if steps == 0 || future_len == 0 {
        return Err(Error::Config("inference needs at least one step and one future token".into()));
    }
    if steps > future_len {
        return Err(Error::Config(format!(
            "{steps} inference steps exceed {future_len} future tokens"
        )));
    }
    if history.has_mask() {
        return Err(Error::Precondition("history tokens contain MASK".into()));
    }
    let k = predictor.vocab();
    history.validate(k)?;
    if let Some(a) = allowed {
        if a.len() != k || !a.iter().any(|&x| x) {
            return Err(Error::Config("vocabulary mask must cover the codebook and keep a token".into()));
        }
    }
    let n_hist = history.len();
    let mut ids: Vec<usize> = history.ids.iter().copied().chain(std::iter::repeat_n(MASK, future_len)).collect();
    let per_round = future_len / steps;
    let mut trace = DenoiseTrace::default();
    for round in 0..steps {
        let remaining = ids[n_hist..].iter().filter(|&&i| i == MASK).count();
        let take = if round + 1 == steps { remaining } else { per_round };
        let logits = predictor.logits(&ids)?;
        let mut candidates: Vec<(usize, usize, f64)> = Vec::with_capacity(remaining);
        for (pos, &id) in ids.iter().enumerate().skip(n_hist) {
            if id != MASK {
                continue;
            }
            let mut row = logits.row(pos).to_vec();
            if let Some(a) = allowed {
                for (v, keep) in row.iter_mut().zip(a) {
                    if !keep {
                        *v = f64::NEG_INFINITY;
                    }
                }
            }
            softmax_in_place(&mut row);
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            candidates.push((pos, best, row[best]));
        }
        // stable sort keeps ascending position order among equal confidences
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2));
        let mut record = DenoiseRound {
            round,
            positions: Vec::with_capacity(take),
            ids: Vec::with_capacity(take),
            confidences: Vec::with_capacity(take),
        };
        for &(pos, id, conf) in candidates.iter().take(take) {
            ids[pos] = id;
            record.positions.push(pos - n_hist);
            record.ids.push(id);
            record.confidences.push(conf);
        }
        trace.rounds.push(record);
    }
    let future = TokenSequence::new(ids[n_hist..].to_vec(), history.layout);
    Ok((future, trace))
}
