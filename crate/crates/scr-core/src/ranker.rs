//! Ranking of distance rows.
//!
//! Two algorithms with identical output contracts: counting sort for
//! integer rows (`O(N + max_value)`) and a comparison sort for anything
//! finite (`O(N log N)`). Both break ties by ascending gallery index, so on
//! integer input they are bit-identical — the cross-check used throughout
//! the tests.

use crate::distance::{DistanceRow, DistanceValues};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankAlgorithm {
    Counting,
    Comparison,
}

impl RankAlgorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            RankAlgorithm::Counting => "counting",
            RankAlgorithm::Comparison => "comparison",
        }
    }
}

impl std::str::FromStr for RankAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "counting" => Ok(RankAlgorithm::Counting),
            "comparison" => Ok(RankAlgorithm::Comparison),
            other => Err(Error::Argument(format!(
                "unknown ranker '{other}' (expected counting|comparison)"
            ))),
        }
    }
}

/// Gallery indices ordered by ascending distance, with the distances
/// permuted alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct RankResult {
    pub query_index: usize,
    pub order: Vec<u32>,
    pub distances: DistanceValues,
    pub algorithm: RankAlgorithm,
}

impl RankResult {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Stable counting sort over an integer distance row.
///
/// Allocates `max_value + 1` buckets and emits indices by ascending bucket,
/// preserving the original (ascending-index) order within each bucket.
pub fn counting_sort_rank(row: &DistanceRow, max_value: u32) -> Result<RankResult> {
    let values = match &row.values {
        DistanceValues::Int(v) => v,
        DistanceValues::Real(_) => {
            return Err(Error::Contract(
                "counting sort requires an integer distance row".into(),
            ))
        }
    };
    if let Some(&bad) = values.iter().find(|&&v| v > max_value) {
        return Err(Error::Contract(format!(
            "distance {bad} exceeds declared maximum {max_value}"
        )));
    }

    let n = values.len();
    let mut counts = vec![0u32; max_value as usize + 2];
    for &v in values {
        counts[v as usize + 1] += 1;
    }
    // exclusive prefix sum: counts[v] = first output slot for value v
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let mut order = vec![0u32; n];
    let mut sorted = vec![0u32; n];
    for (i, &v) in values.iter().enumerate() {
        let slot = counts[v as usize] as usize;
        counts[v as usize] += 1;
        order[slot] = i as u32;
        sorted[slot] = v;
    }
    Ok(RankResult {
        query_index: row.query_index,
        order,
        distances: DistanceValues::Int(sorted),
        algorithm: RankAlgorithm::Counting,
    })
}

/// Comparison sort over a real or integer distance row; ties break by
/// ascending gallery index.
pub fn comparison_sort_rank(row: &DistanceRow) -> Result<RankResult> {
    match &row.values {
        DistanceValues::Real(values) => {
            if values.iter().any(|v| v.is_nan()) {
                return Err(Error::Contract("NaN distance in row".into()));
            }
            let mut order: Vec<u32> = (0..values.len() as u32).collect();
            order.sort_unstable_by(|&a, &b| {
                values[a as usize]
                    .total_cmp(&values[b as usize])
                    .then(a.cmp(&b))
            });
            let sorted = order.iter().map(|&i| values[i as usize]).collect();
            Ok(RankResult {
                query_index: row.query_index,
                order,
                distances: DistanceValues::Real(sorted),
                algorithm: RankAlgorithm::Comparison,
            })
        }
        DistanceValues::Int(values) => {
            let mut order: Vec<u32> = (0..values.len() as u32).collect();
            order.sort_unstable_by(|&a, &b| {
                values[a as usize].cmp(&values[b as usize]).then(a.cmp(&b))
            });
            let sorted = order.iter().map(|&i| values[i as usize]).collect();
            Ok(RankResult {
                query_index: row.query_index,
                order,
                distances: DistanceValues::Int(sorted),
                algorithm: RankAlgorithm::Comparison,
            })
        }
    }
}

/// First `k` entries of a ranking.
pub fn top_k(result: &RankResult, k: usize) -> Result<RankResult> {
    if k == 0 || k > result.len() {
        return Err(Error::Argument(format!(
            "k must be in 1..={}, got {k}",
            result.len()
        )));
    }
    let distances = match &result.distances {
        DistanceValues::Real(v) => DistanceValues::Real(v[..k].to_vec()),
        DistanceValues::Int(v) => DistanceValues::Int(v[..k].to_vec()),
    };
    Ok(RankResult {
        query_index: result.query_index,
        order: result.order[..k].to_vec(),
        distances,
        algorithm: result.algorithm,
    })
}
