//! Partition agreement: ARI, NMI and exact recovery up to relabelling.

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::error::{Error, Result};

/// Hard block labels, one per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("a partition needs at least one node"));
        }
        Ok(Partition { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One more than the largest label.
    pub fn num_labels(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

impl TryFrom<Vec<usize>> for Partition {
    type Error = Error;
    fn try_from(labels: Vec<usize>) -> Result<Self> {
        Partition::new(labels)
    }
}

/// Counts `table[a][b]` of nodes labelled `a` in the first partition and `b` in the second.
pub fn confusion(a: &Partition, b: &Partition) -> Result<Vec<Vec<usize>>> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("partition lengths differ ({} vs {})", a.len(), b.len())));
    }
    let mut table = vec![vec![0; b.num_labels()]; a.num_labels()];
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        table[x][y] += 1;
    }
    Ok(table)
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

pub fn ari(a: &Partition, b: &Partition) -> Result<f64> {
    let table = confusion(a, b)?;
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..b.num_labels())
        .map(|j| choose2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = choose2(a.len());
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = 0.5 * (rows + cols);
    if max == expected {
        // Both partitions trivial in the same way (all singletons or one block).
        return Ok(if a.labels == b.labels || same_clustering(&table) { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

fn same_clustering(table: &[Vec<usize>]) -> bool {
    let rows_ok = table.iter().all(|r| r.iter().filter(|&&c| c > 0).count() <= 1);
    let cols = table.first().map_or(0, Vec::len);
    let cols_ok = (0..cols).all(|j| table.iter().filter(|r| r[j] > 0).count() <= 1);
    rows_ok && cols_ok
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information over √(H(a)H(b)). If either entropy vanishes the
/// result is 1 when both do, 0 otherwise.
pub fn nmi(a: &Partition, b: &Partition) -> Result<f64> {
    let table = confusion(a, b)?;
    let n = a.len() as f64;
    let row_sums: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<usize> = (0..b.num_labels()).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    let ha = entropy(row_sums.iter().copied(), n);
    let hb = entropy(col_sums.iter().copied(), n);
    if ha == 0.0 || hb == 0.0 {
        return Ok(if ha == 0.0 && hb == 0.0 { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (row_sums[i] as f64 * col_sums[j] as f64)).ln();
            }
        }
    }
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Label bijection maximising agreement: `m[a] = b`. Labels of `a` without a
/// counterpart map to unused labels past `b`'s range.
pub fn best_matching(a: &Partition, b: &Partition) -> Result<Vec<usize>> {
    let table = confusion(a, b)?;
    let size = a.num_labels().max(b.num_labels());
    let weights = Matrix::from_fn(size, size, |(i, j)| {
        table.get(i).and_then(|r| r.get(j)).map_or(0, |&c| c as i64)
    });
    let (_, assignment) = kuhn_munkres(&weights);
    Ok(assignment.into_iter().take(a.num_labels()).collect())
}

/// True iff some relabelling of `fitted` equals `truth`.
pub fn exact_recovery(truth: &Partition, fitted: &Partition) -> Result<bool> {
    let m = best_matching(truth, fitted)?;
    Ok(truth.labels.iter().zip(&fitted.labels).all(|(&t, &f)| m[t] == f))
}
