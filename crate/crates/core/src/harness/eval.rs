use super::task::{EvalItem, PartitionedQa};
use crate::error::Result;
use crate::lm::{detokenize, TokenSeq, Vocab};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub correct: usize,
    pub total: usize,
    /// Item index and message of every runner failure.
    pub failures: Vec<(usize, String)>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Exact match of detokenized runner output against each item's answer.
/// A runner error, or output outside the vocab, counts as incorrect.
pub fn evaluate_accuracy<F>(mut runner: F, eval: &[EvalItem], vocab: &Vocab) -> EvalReport
where
    F: FnMut(&EvalItem) -> Result<Vec<u32>>,
{
    let mut report = EvalReport { total: eval.len(), ..Default::default() };
    for (i, item) in eval.iter().enumerate() {
        let got = runner(item).and_then(|t| detokenize(&TokenSeq::new(t), vocab));
        match got {
            Ok(text) => {
                if detokenize(&TokenSeq::new(item.answer.clone()), vocab).is_ok_and(|want| want == text) {
                    report.correct += 1;
                }
            }
            Err(e) => report.failures.push((i, e.to_string())),
        }
    }
    report
}

/// Accuracy of guessing a uniform random value for every item.
pub fn chance_level(qa: &PartitionedQa) -> f64 {
    1.0 / qa.alphabet.n_values as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::harness::{gen_partitioned_qa, TaskSpec};

    #[test]
    fn oracle_and_wrong_runners() {
        let qa = gen_partitioned_qa(&TaskSpec::new(10, 2, 0.2, 0.0, 1)).unwrap();
        let v = &qa.alphabet.vocab;
        assert_eq!(evaluate_accuracy(|e| Ok(e.answer.clone()), &qa.eval, v).accuracy(), 1.0);
        let wrong = vec![qa.alphabet.abstain(), 0];
        assert_eq!(evaluate_accuracy(|_| Ok(wrong.clone()), &qa.eval, v).accuracy(), 0.0);
        let r = evaluate_accuracy(|_| Err(Error::InvalidArgument("boom".into())), &qa.eval, v);
        assert_eq!((r.accuracy(), r.failures.len()), (0.0, qa.eval.len()));
        let r = evaluate_accuracy(|_| Ok(vec![9999]), &qa.eval, v);
        assert_eq!(r.failures.len(), qa.eval.len());
    }
}
