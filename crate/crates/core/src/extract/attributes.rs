//! Attribute selection and attribute–label correlation.

use serde::Serialize;

use super::{CommonsenseResult, EffectType};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_SELECTION: [EffectType; 2] = [EffectType::XWant, EffectType::OReact];

/// Parse a comma-separated attribute list such as `xWant,oReact`.
pub fn parse_selection(spec: &str) -> Result<Vec<EffectType>> {
    let out: Vec<EffectType> = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Selection(spec.to_string()));
    }
    Ok(out)
}

/// Text for the commonsense encoder: one `attr : p1 ; p2` section per
/// selected attribute that has phrases, sections joined with ` | `.
pub fn select_attributes(result: &CommonsenseResult, selection: &[EffectType]) -> String {
    selection
        .iter()
        .filter(|e| !result.get(**e).is_empty())
        .map(|e| format!("{} : {}", e.name(), result.get(*e).join(" ; ")))
        .collect::<Vec<_>>()
        .join(" | ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub r: f64,
    pub samples: usize,
    /// Zero variance on either side; `r` reported as 0.
    pub degenerate: bool,
}

/// Pearson correlation between each embedding's mean value and its label
/// index.
pub fn correlate_attributes(samples: &[(Tensor, usize)]) -> Result<Correlation> {
    if samples.len() < 2 {
        return Err(Error::Sample {
            needed: 2,
            got: samples.len(),
        });
    }
    let xs: Vec<f64> = samples
        .iter()
        .map(|(t, _)| t.data().iter().sum::<f64>() / t.numel().max(1) as f64)
        .collect();
    let ys: Vec<f64> = samples.iter().map(|(_, l)| *l as f64).collect();
    let (r, degenerate) = pearson(&xs, &ys);
    Ok(Correlation {
        r,
        samples: samples.len(),
        degenerate,
    })
}

fn pearson(xs: &[f64], ys: &[f64]) -> (f64, bool) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let denom = (sxx * syy).sqrt();
    if denom == 0.0 || !denom.is_finite() {
        return (0.0, true);
    }
    ((sxy / denom).clamp(-1.0, 1.0), false)
}

/// Correlation of every attribute with the labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeCorrelation {
    pub entries: Vec<(EffectType, Correlation)>,
}

impl AttributeCorrelation {
    /// Attributes ordered by coefficient, most positive first; ties by name.
    pub fn ranking(&self) -> Vec<EffectType> {
        let mut v: Vec<(EffectType, f64)> = self.entries.iter().map(|(e, c)| (*e, c.r)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.name().cmp(b.0.name())));
        v.into_iter().map(|(e, _)| e).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("attribute,r,samples,degenerate\n");
        for (e, c) in &self.entries {
            out.push_str(&format!(
                "{},{:.6},{},{}\n",
                e, c.r, c.samples, c.degenerate
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result() -> CommonsenseResult {
        CommonsenseResult::from_pairs([
            (EffectType::XWant, vec!["to rest", "to sleep"]),
            (EffectType::OReact, vec!["worried"]),
            (EffectType::XAttr, vec!["lazy"]),
        ])
        .unwrap()
    }

    #[test]
    fn default_selection_order() {
        assert_eq!(
            select_attributes(&result(), &DEFAULT_SELECTION),
            "xWant : to rest ; to sleep | oReact : worried"
        );
        assert_eq!(
            select_attributes(&result(), &[EffectType::XAttr]),
            "xAttr : lazy"
        );
        assert_eq!(select_attributes(&result(), &[EffectType::XNeed]), "");
    }

    #[test]
    fn selection_parsing() {
        assert_eq!(parse_selection("xWant, oReact").unwrap(), DEFAULT_SELECTION);
        assert!(matches!(parse_selection("xFoo"), Err(Error::Selection(_))));
        assert!(matches!(parse_selection(""), Err(Error::Selection(_))));
    }

    fn samples(xs: &[f64], ys: &[usize]) -> Vec<(Tensor, usize)> {
        xs.iter()
            .zip(ys)
            .map(|(x, y)| (Tensor::new(&[1, 2], vec![*x - 1.0, *x + 1.0]).unwrap(), *y))
            .collect()
    }

    #[test]
    fn correlation_examples() {
        let c = correlate_attributes(&samples(&[4.0, 4.0, 4.0], &[0, 1, 2])).unwrap();
        assert_eq!((c.r, c.degenerate), (0.0, true));
        let c = correlate_attributes(&samples(&[0.0, 3.0, 5.0], &[0, 3, 5])).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
        // hand oracle: dx = (-1,0,1), dy = (-1,1,0) → 1 / (√2·√2)
        let c = correlate_attributes(&samples(&[1.0, 2.0, 3.0], &[0, 2, 1])).unwrap();
        assert!((c.r - 0.5).abs() < 1e-12);
        assert!(matches!(
            correlate_attributes(&samples(&[1.0], &[0])),
            Err(Error::Sample { needed: 2, got: 1 })
        ));
    }
}
