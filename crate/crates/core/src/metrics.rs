//! Per-class and weighted F1, confusion matrices, and the paired t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{EmotionLabel, NUM_CLASSES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_f1: [f64; NUM_CLASSES],
    pub weighted_f1: f64,
    /// Rows are gold labels, columns predictions.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub support: [usize; NUM_CLASSES],
    pub accuracy: f64,
}

impl EvalReport {
    /// Score predictions against gold label indices. A class with no true
    /// positives has F1 = 0.
    pub fn from_predictions(gold: &[usize], pred: &[usize]) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::EmptyInput("no instances to evaluate".into()));
        }
        if gold.len() != pred.len() {
            return Err(Error::dim("evaluate", &[gold.len()], &[pred.len()]));
        }
        let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        for (&g, &p) in gold.iter().zip(pred) {
            if g >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(Error::Label {
                    line: None,
                    detail: format!("label index {} outside 0..{NUM_CLASSES}", g.max(p)),
                });
            }
            confusion[g][p] += 1;
        }
        let mut support = [0usize; NUM_CLASSES];
        let mut per_class_f1 = [0.0; NUM_CLASSES];
        for c in 0..NUM_CLASSES {
            let tp = confusion[c][c];
            let gold_c: usize = confusion[c].iter().sum();
            let pred_c: usize = confusion.iter().map(|row| row[c]).sum();
            support[c] = gold_c;
            // 2PR/(P+R) = 2tp / (gold + pred)
            if tp > 0 {
                per_class_f1[c] = 2.0 * tp as f64 / (gold_c + pred_c) as f64;
            }
        }
        let total = gold.len() as f64;
        let weighted_f1 = (0..NUM_CLASSES)
            .map(|c| support[c] as f64 * per_class_f1[c])
            .sum::<f64>()
            / total;
        let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
        Ok(Self {
            per_class_f1,
            weighted_f1,
            confusion,
            support,
            accuracy: correct as f64 / total,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per class plus a weighted row, then the confusion matrix.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,support,f1\n");
        for l in EmotionLabel::ALL {
            let c = l.index();
            out.push_str(&format!(
                "{},{},{:.4}\n",
                l.name(),
                self.support[c],
                self.per_class_f1[c]
            ));
        }
        out.push_str(&format!(
            "weighted,{},{:.4}\n",
            self.support.iter().sum::<usize>(),
            self.weighted_f1
        ));
        out.push('\n');
        out.push_str("gold\\pred");
        for l in EmotionLabel::ALL {
            out.push(',');
            out.push_str(l.name());
        }
        out.push('\n');
        for l in EmotionLabel::ALL {
            out.push_str(l.name());
            for v in self.confusion[l.index()] {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided.
    pub p: f64,
    pub df: usize,
    /// Differences had zero variance: `p = 1` if their mean is 0, else
    /// `p = 0` (and `t` is ±∞).
    pub degenerate: bool,
}

/// Paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Sample {
            needed: 2,
            got: a.len(),
        });
    }
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = a.len() - 1;
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest {
                t: 0.0,
                p: 1.0,
                df,
                degenerate: true,
            }
        } else {
            TTest {
                t: mean.signum() * f64::INFINITY,
                p: 0.0,
                df,
                degenerate: true,
            }
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numeric {
        op: "paired_t_test",
        detail: e.to_string(),
    })?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest {
        t,
        p,
        df,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_worked_example() {
        // gold [ne, jo, ne, an], pred [ne, ne, ne, an]
        let (ne, jo, an) = (5, 4, 0);
        let r = EvalReport::from_predictions(&[ne, jo, ne, an], &[ne, ne, ne, an]).unwrap();
        assert!((r.per_class_f1[ne] - 0.8).abs() < 1e-12);
        assert_eq!(r.per_class_f1[jo], 0.0);
        assert_eq!(r.per_class_f1[an], 1.0);
        assert!((r.weighted_f1 - 0.65).abs() < 1e-12);
        assert_eq!(r.support[1], 0);
        assert_eq!(r.per_class_f1[1], 0.0);
    }

    #[test]
    fn perfect_predictions() {
        let gold = [0, 3, 3, 7];
        let r = EvalReport::from_predictions(&gold, &gold).unwrap();
        assert_eq!(r.weighted_f1, 1.0);
        for c in [0, 3, 7] {
            assert_eq!(r.per_class_f1[c], 1.0);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            EvalReport::from_predictions(&[], &[]),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(
            EvalReport::from_predictions(&[8], &[0]),
            Err(Error::Label { .. })
        ));
    }

    #[test]
    fn t_test_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_t_test(&a, &[0.0; 5]).unwrap();
        assert!((r.t - 4.2426).abs() < 1e-3, "{}", r.t);
        assert!((r.p - 0.0132).abs() < 1e-3, "{}", r.p);
        assert_eq!(r.df, 4);

        let same = paired_t_test(&a, &a).unwrap();
        assert_eq!((same.t, same.p, same.degenerate), (0.0, 1.0, true));

        let shifted: Vec<f64> = a.iter().map(|v| v - 1.0).collect();
        let shift = paired_t_test(&a, &shifted).unwrap();
        assert_eq!((shift.p, shift.degenerate), (0.0, true));

        assert!(matches!(paired_t_test(&a, &[1.0]), Err(Error::Contract(_))));
    }
}
