//! Class-balanced selection: classes take turns claiming their best
//! remaining image.

use std::cmp::Ordering;

use super::{SelectionBatch, SelectionError};
use crate::model::ScoredImage;

/// Cycles through `classes`; each turn takes the highest-scoring unselected
/// image for that class (ties to the smaller id). A class with nothing left
/// loses its turn. `scores_at_selection` records the per-class score that
/// won the turn.
pub fn select_round_robin(
    scores: &[ScoredImage],
    classes: &[usize],
    n: usize,
) -> Result<SelectionBatch, SelectionError> {
    let mut batch = SelectionBatch::new("round-robin");
    if scores.is_empty() {
        return if n == 0 {
            Ok(batch)
        } else {
            Err(SelectionError::EmptyPool)
        };
    }
    if classes.is_empty() {
        return Err(SelectionError::NoClasses);
    }
    let mut by_id: Vec<usize> = (0..scores.len()).collect();
    by_id.sort_by(|&a, &b| scores[a].image_id.cmp(&scores[b].image_id));
    if let Some(w) = by_id
        .windows(2)
        .find(|w| scores[w[0]].image_id == scores[w[1]].image_id)
    {
        return Err(SelectionError::DuplicateId(scores[w[0]].image_id.clone()));
    }
    let class_score = |i: usize, c: usize| -> Result<f64, SelectionError> {
        let s = &scores[i];
        let v = s
            .per_class_scores
            .as_ref()
            .and_then(|p| p.get(c))
            .copied()
            .ok_or_else(|| SelectionError::MissingPerClassScores {
                id: s.image_id.clone(),
                class: c,
            })?;
        if !v.is_finite() {
            return Err(SelectionError::InvalidScore {
                id: s.image_id.clone(),
                score: v,
            });
        }
        Ok(v)
    };

    let mut queues: Vec<Vec<(usize, f64)>> = Vec::with_capacity(classes.len());
    for &c in classes {
        let mut q = by_id
            .iter()
            .map(|&i| class_score(i, c).map(|v| (i, v)))
            .collect::<Result<Vec<_>, _>>()?;
        // Stable sort over id order keeps the id tie-break.
        q.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal));
        queues.push(q);
    }

    let n = n.min(scores.len());
    let mut taken = vec![false; scores.len()];
    let mut cursor = vec![0usize; classes.len()];
    while batch.len() < n {
        let mut progressed = false;
        for (q, pos) in queues.iter().zip(cursor.iter_mut()) {
            if batch.len() >= n {
                break;
            }
            while *pos < q.len() && taken[q[*pos].0] {
                *pos += 1;
            }
            if let Some(&(i, v)) = q.get(*pos) {
                taken[i] = true;
                batch.push(&scores[i].image_id, v);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    Ok(batch)
}
