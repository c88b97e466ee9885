use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gateway::Embedder;
use crate::matrix::{dot, norm};

/// Pairs every goal in `goals_a` with the most similar goal (cosine of their
/// embeddings) in `goals_b`. Targets may repeat; ties go to the lowest index.
pub fn match_real_pairs(
    goals_a: &[String],
    goals_b: &[String],
    embedder: &dyn Embedder,
) -> Result<Vec<(usize, usize)>> {
    if goals_a.is_empty() || goals_b.is_empty() {
        return Err(Error::invalid("both goal lists must be non-empty"));
    }
    let a = unit_rows(embedder.embed_raw(goals_a)?, "a")?;
    let b = unit_rows(embedder.embed_raw(goals_b)?, "b")?;
    let dim = a[0].len();
    if let Some(bad) = b.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    Ok(a.par_iter()
        .enumerate()
        .map(|(i, ra)| {
            let mut best = 0;
            let mut best_sim = f64::NEG_INFINITY;
            for (j, rb) in b.iter().enumerate() {
                let s = dot(ra, rb);
                if s > best_sim {
                    best_sim = s;
                    best = j;
                }
            }
            (i, best)
        })
        .collect())
}

fn unit_rows(rows: Vec<Vec<f32>>, side: &str) -> Result<Vec<Vec<f64>>> {
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            let r: Vec<f64> = r.into_iter().map(f64::from).collect();
            let n = norm(&r);
            if n == 0.0 {
                return Err(Error::ZeroRow {
                    row: format!("{side}[{i}]"),
                });
            }
            Ok(r.into_iter().map(|v| v / n).collect())
        })
        .collect()
}
