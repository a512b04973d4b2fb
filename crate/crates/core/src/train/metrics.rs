use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Macro-averaged F1 over every label seen in `gold` or `pred`.
pub fn macro_f1(gold: &[String], pred: &[String]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::UndefinedMetric("F1 of an empty dataset".into()));
    }
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "{} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    // label -> (tp, fp, fn)
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        if g == p {
            counts.entry(g).or_default().0 += 1;
        } else {
            counts.entry(p).or_default().1 += 1;
            counts.entry(g).or_default().2 += 1;
        }
    }
    let sum: f64 = counts
        .values()
        .map(|&(tp, fp, fn_)| {
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            }
        })
        .sum();
    Ok(sum / counts.len() as f64)
}

/// Decodes BIO tags into `(start, end_exclusive, type)` spans. An `I-x` that
/// follows `O` or a different type opens a new span; other tags close spans.
pub fn bio_spans(tags: &[String]) -> Vec<(usize, usize, String)> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, String)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, kind) = match tag.split_once('-') {
            Some((p @ ("B" | "I"), k)) => (p, k),
            _ => ("O", ""),
        };
        let continues = prefix == "I" && open.as_ref().is_some_and(|(_, k)| k == kind);
        if continues {
            continue;
        }
        if let Some((s, k)) = open.take() {
            spans.push((s, i, k));
        }
        if prefix != "O" {
            open = Some((i, kind.to_string()));
        }
    }
    if let Some((s, k)) = open {
        spans.push((s, tags.len(), k));
    }
    spans
}

/// Entity-level micro F1 with exact span and type match.
pub fn entity_f1(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<f64> {
    if gold.is_empty() {
        return Err(Error::UndefinedMetric("F1 of an empty dataset".into()));
    }
    if gold.len() != pred.len() {
        return Err(Error::Data(format!(
            "{} gold sequences but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let (mut tp, mut n_gold, mut n_pred) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        let gs: BTreeSet<_> = bio_spans(g).into_iter().collect();
        let ps: BTreeSet<_> = bio_spans(p).into_iter().collect();
        tp += gs.intersection(&ps).count();
        n_gold += gs.len();
        n_pred += ps.len();
    }
    if n_gold + n_pred == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (n_gold + n_pred) as f64)
}
