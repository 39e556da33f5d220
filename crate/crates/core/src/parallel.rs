//! Row-chunked parallel accumulation with an optional reproducible
//! reduction order.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How per-chunk partial results are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionOrder {
    /// Fixed chunking and a pairwise tree over the chunks in index order.
    /// Bit-for-bit reproducible regardless of the thread count.
    #[default]
    Pairwise,
    /// Combination order follows work stealing.
    Unordered,
}

/// Rows per chunk. Fixed so that chunk boundaries never depend on the pool size.
pub(crate) const ROWS_PER_CHUNK: usize = 16;

/// Runs `body` over fixed row chunks of `0..n_rows` and merges the partials.
pub(crate) fn reduce_rows<A, I, B, C>(n_rows: usize, order: ReductionOrder, init: I, body: B, combine: C) -> A
where
    A: Send,
    I: Fn(Range<usize>) -> A + Sync + Send,
    B: Fn(Range<usize>, &mut A) + Sync + Send,
    C: Fn(A, A) -> A + Sync + Send,
{
    let n_chunks = n_rows.div_ceil(ROWS_PER_CHUNK).max(1);
    let chunk = |k: usize| k * ROWS_PER_CHUNK..((k + 1) * ROWS_PER_CHUNK).min(n_rows);
    let run = |k: usize| {
        let rows = chunk(k);
        let mut acc = init(rows.clone());
        body(rows, &mut acc);
        acc
    };
    match order {
        ReductionOrder::Pairwise => {
            let parts: Vec<A> = (0..n_chunks).into_par_iter().map(run).collect();
            pairwise(parts, &combine)
        }
        ReductionOrder::Unordered => (0..n_chunks)
            .into_par_iter()
            .map(run)
            .reduce_with(&combine)
            .expect("at least one chunk"),
    }
}

fn pairwise<A>(mut parts: Vec<A>, combine: &impl Fn(A, A) -> A) -> A {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(combine(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop().expect("at least one part")
}

/// Pairwise (cascade) sum of a slice in index order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}
