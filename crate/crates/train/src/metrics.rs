//! Development-set metrics: log-perplexity, per-token accuracy, and the
//! per-sequence exact-match rate.

use mm_data::{Batch, BatchTarget};
use mm_model::{ForwardPass, Generated};

/// Summary for one task on one dev set. Accuracy counts argmax hits on
/// scored (non-pad) positions; exact match requires the whole generated
/// sequence (or the single class) to be correct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Mean negative log-likelihood per scored token, natural log.
    pub log_ppl: f64,
    pub accuracy: f64,
    pub exact_match: f64,
}

impl Metrics {
    pub fn line(&self) -> String {
        format!("{:.6}\t{:.6}\t{:.6}", self.log_ppl, self.accuracy, self.exact_match)
    }
}

/// Running sums that fold per-batch results into one `Metrics`.
#[derive(Debug, Default, Clone)]
pub struct MetricAccum {
    nll_sum: f64,
    scored: usize,
    hits: usize,
    exact_hits: usize,
    sequences: usize,
}

impl MetricAccum {
    /// Folds one teacher-forced pass (loss side) into the sums.
    pub fn add_forward(&mut self, batch: &Batch, out: &ForwardPass) {
        self.nll_sum += out.ce.data()[0] * out.scored as f64;
        self.scored += out.scored;
        self.hits += argmax_hits(batch, out);
    }

    /// Folds one greedy generation against the references.
    pub fn add_generated(&mut self, batch: &Batch, generated: &Generated) {
        match (&batch.target, generated) {
            (BatchTarget::Tokens(refs), Generated::Tokens(out)) => {
                for (r, o) in refs.iter().zip(out.iter()) {
                    self.sequences += 1;
                    if r == o {
                        self.exact_hits += 1;
                    }
                }
            }
            (BatchTarget::Class(refs), Generated::Classes(out)) => {
                for (r, o) in refs.iter().zip(out.iter()) {
                    self.sequences += 1;
                    if r == o {
                        self.exact_hits += 1;
                    }
                }
            }
            _ => {}
        }
    }

    pub fn finish(&self) -> Metrics {
        Metrics {
            log_ppl: if self.scored > 0 { self.nll_sum / self.scored as f64 } else { 0.0 },
            accuracy: if self.scored > 0 {
                self.hits as f64 / self.scored as f64
            } else {
                0.0
            },
            exact_match: if self.sequences > 0 {
                self.exact_hits as f64 / self.sequences as f64
            } else {
                0.0
            },
        }
    }
}

/// Argmax hits over the scored positions of a teacher-forced pass.
/// First-max tie convention, matching greedy decoding.
fn argmax_hits(batch: &Batch, out: &ForwardPass) -> usize {
    let logits = &out.logits;
    match &batch.target {
        BatchTarget::Tokens(rows) => {
            let v = *logits.shape().last().unwrap();
            let lo = logits.shape()[1];
            let mut hits = 0;
            for (r, row) in rows.iter().enumerate() {
                for (t, &tok) in row.iter().enumerate() {
                    let cell = &logits.data()[(r * lo + t) * v..(r * lo + t + 1) * v];
                    if argmax(cell) as u32 == tok {
                        hits += 1;
                    }
                }
            }
            hits
        }
        BatchTarget::Class(classes) => {
            let v = *logits.shape().last().unwrap();
            classes
                .iter()
                .enumerate()
                .filter(|(r, &c)| argmax(&logits.data()[r * v..(r + 1) * v]) == c)
                .count()
        }
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_counts_hand_case() {
        // Targets [3,4,5], argmax predictions [3,4,7] -> accuracy 2/3.
        let batch = Batch {
            task_name: "t".into(),
            command: 0,
            input: mm_data::BatchInput::Tokens(vec![vec![1]]),
            target: BatchTarget::Tokens(vec![vec![3, 4, 5]]),
            spatial_hint: None,
        };
        let v = 8usize;
        let mut logits = vec![0.0; 3 * v];
        logits[3] = 5.0; // position 0 -> 3
        logits[v + 4] = 5.0; // position 1 -> 4
        logits[2 * v + 7] = 5.0; // position 2 -> 7
        let logits = mm_tensor::Tensor::new(&[1, 3, v], logits).unwrap();
        let probs = logits.clone();
        let out = ForwardPass {
            loss: mm_tensor::Tensor::scalar(1.0).unwrap(),
            ce: mm_tensor::Tensor::scalar(1.0).unwrap(),
            aux: mm_tensor::Tensor::scalar(0.0).unwrap(),
            logits,
            probs,
            scored: 3,
        };
        let mut acc = MetricAccum::default();
        acc.add_forward(&batch, &out);
        let m = acc.finish();
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.log_ppl - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_match_requires_full_sequence() {
        let batch = Batch {
            task_name: "t".into(),
            command: 0,
            input: mm_data::BatchInput::Tokens(vec![vec![1], vec![1]]),
            target: BatchTarget::Tokens(vec![vec![3, 1], vec![4, 1]]),
            spatial_hint: None,
        };
        let generated = Generated::Tokens(vec![vec![3, 1], vec![4, 2]]);
        let mut acc = MetricAccum::default();
        acc.add_generated(&batch, &generated);
        assert!((acc.finish().exact_match - 0.5).abs() < 1e-12);
    }
}
