use serde::{Deserialize, Serialize};

use super::ClassifierError;

/// Accuracy and error rates, all in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub fn evaluate(pred: &[u8], truth: &[u8]) -> Result<EvalReport, ClassifierError> {
    if pred.len() != truth.len() {
        return Err(ClassifierError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    if fp + tn == 0 {
        return Err(ClassifierError::NoNegatives);
    }
    if fn_ + tp == 0 {
        return Err(ClassifierError::NoPositives);
    }
    let n = pred.len() as f64;
    Ok(EvalReport {
        accuracy: 100.0 * (tp + tn) as f64 / n,
        fp_rate: 100.0 * fp as f64 / (fp + tn) as f64,
        fn_rate: 100.0 * fn_ as f64 / (fn_ + tp) as f64,
        tp,
        fp,
        tn,
        fn_,
    })
}
