//! Blocked complete randomization of clusters and exhaustive enumeration of
//! assignments.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numeric::round_half_even;
use crate::population::Population;

/// Generator identity echoed into every output header.
pub const RNG_ID: &str = "ChaCha8 (rand_chacha 0.9), stream per replication";

/// Default ceiling on the number of enumerated assignments.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Per-block treatment indicators over clusters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    blocks: Vec<Vec<bool>>,
}

impl Assignment {
    pub fn new(blocks: Vec<Vec<bool>>) -> Assignment {
        Assignment { blocks }
    }

    /// Builds an assignment from per-block sorted treated-cluster indices.
    pub fn from_treated_indices(cluster_counts: &[usize], treated: &[Vec<usize>]) -> Assignment {
        let blocks = cluster_counts
            .iter()
            .zip(treated)
            .map(|(&m, idx)| {
                let mut t = vec![false; m];
                for &j in idx {
                    t[j] = true;
                }
                t
            })
            .collect();
        Assignment { blocks }
    }

    pub fn blocks(&self) -> &[Vec<bool>] {
        &self.blocks
    }

    pub fn block(&self, b: usize) -> &[bool] {
        &self.blocks[b]
    }

    pub fn treated(&self, b: usize, j: usize) -> bool {
        self.blocks[b][j]
    }

    pub fn treated_count(&self, b: usize) -> usize {
        self.blocks[b].iter().filter(|&&t| t).count()
    }

    pub fn check_shape(&self, pop: &Population) -> Result<()> {
        if self.blocks.len() != pop.h() {
            return Err(Error::AssignmentShape(format!(
                "{} blocks in assignment, {} in population",
                self.blocks.len(),
                pop.h()
            )));
        }
        for (t, block) in self.blocks.iter().zip(pop.blocks()) {
            if t.len() != block.m() {
                return Err(Error::AssignmentShape(format!(
                    "block `{}` has {} clusters but the assignment covers {}",
                    block.id,
                    block.m(),
                    t.len()
                )));
            }
        }
        Ok(())
    }

    /// Concatenated 0/1 string over blocks, blocks separated by `|`.
    pub fn bitstring(&self) -> String {
        self.blocks
            .iter()
            .map(|b| {
                b.iter()
                    .map(|&t| if t { '1' } else { '0' })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join("|")
    }

    /// Audit serialization with columns `block,cluster,T`.
    pub fn write_csv<W: std::io::Write>(&self, pop: &Population, out: W) -> Result<()> {
        self.check_shape(pop)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["block", "cluster", "T"])?;
        for (t, block) in self.blocks.iter().zip(pop.blocks()) {
            for (tj, c) in t.iter().zip(&block.clusters) {
                w.write_record([
                    block.id.as_str(),
                    c.id.as_str(),
                    if *tj { "1" } else { "0" },
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Independent generator for replication `stream` under `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Treated counts `round_half_even(p_b * m_b)` per block, checked to lie in `[1, m_b - 1]`.
/// A single proportion is applied to every block.
pub fn treated_counts(pop: &Population, proportions: &[f64]) -> Result<Vec<usize>> {
    let h = pop.h();
    if proportions.len() != 1 && proportions.len() != h {
        return Err(Error::DimensionMismatch {
            what: "treated proportions",
            expected: h,
            got: proportions.len(),
        });
    }
    pop.blocks()
        .iter()
        .enumerate()
        .map(|(b, block)| {
            let p = proportions[if proportions.len() == 1 { 0 } else { b }];
            let m = block.m();
            let m1 = if p > 0.0 && p < 1.0 {
                round_half_even(p * m as f64) as usize
            } else {
                0
            };
            if m1 < 1 || m1 + 1 > m {
                return Err(Error::InfeasibleCount {
                    block: block.id.clone(),
                    p,
                    m,
                    m1,
                    max: m - 1,
                });
            }
            Ok(m1)
        })
        .collect()
}

/// Uniformly random subset of `m1_b` clusters per block, independent across blocks.
pub fn draw_with_rng(
    cluster_counts: &[usize],
    treated: &[usize],
    rng: &mut ChaCha8Rng,
) -> Assignment {
    let idx: Vec<Vec<usize>> = cluster_counts
        .iter()
        .zip(treated)
        .map(|(&m, &k)| {
            let mut v = index::sample(rng, m, k).into_vec();
            v.sort_unstable();
            v
        })
        .collect();
    Assignment::from_treated_indices(cluster_counts, &idx)
}

/// Draws one blocked complete randomization with stream 0 of `seed`.
pub fn draw_assignment(pop: &Population, proportions: &[f64], seed: u64) -> Result<Assignment> {
    let counts = treated_counts(pop, proportions)?;
    Ok(draw_with_rng(
        &pop.cluster_counts(),
        &counts,
        &mut rng_for(seed, 0),
    ))
}

pub fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// The full set of blocked assignments, in lexicographic order: treated index
/// sets are ordered lexicographically within a block and the first block is the
/// most significant.
#[derive(Debug, Clone)]
pub struct AssignmentSpace {
    cluster_counts: Vec<usize>,
    treated: Vec<usize>,
    block_sizes: Vec<u128>,
    total: u128,
}

/// Checks the enumeration size against `cap` and returns the assignment space.
pub fn enumerate_assignments(
    pop: &Population,
    proportions: &[f64],
    cap: u128,
) -> Result<AssignmentSpace> {
    let counts = treated_counts(pop, proportions)?;
    AssignmentSpace::new(pop.cluster_counts(), counts, cap)
}

impl AssignmentSpace {
    pub fn new(
        cluster_counts: Vec<usize>,
        treated: Vec<usize>,
        cap: u128,
    ) -> Result<AssignmentSpace> {
        let block_sizes: Vec<u128> = cluster_counts
            .iter()
            .zip(&treated)
            .map(|(&m, &k)| binomial(m, k).unwrap_or(u128::MAX))
            .collect();
        let total = block_sizes
            .iter()
            .try_fold(1u128, |acc, &c| acc.checked_mul(c))
            .unwrap_or(u128::MAX);
        if total > cap {
            return Err(Error::EnumerationCap { count: total, cap });
        }
        Ok(AssignmentSpace {
            cluster_counts,
            treated,
            block_sizes,
            total,
        })
    }

    pub fn len(&self) -> u128 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn cluster_counts(&self) -> &[usize] {
        &self.cluster_counts
    }

    pub fn treated(&self) -> &[usize] {
        &self.treated
    }

    /// Cursor positioned at assignment number `rank` (0-based).
    pub fn cursor_at(&self, rank: u128) -> Cursor {
        assert!(rank < self.total, "rank out of range");
        let mut rem = rank;
        let mut idx = vec![Vec::new(); self.cluster_counts.len()];
        for b in (0..self.cluster_counts.len()).rev() {
            let r = rem % self.block_sizes[b];
            rem /= self.block_sizes[b];
            idx[b] = unrank_combination(self.cluster_counts[b], self.treated[b], r);
        }
        Cursor {
            cluster_counts: self.cluster_counts.clone(),
            idx,
            remaining: self.total - rank,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Assignment> + '_ {
        let mut cursor = (self.total > 0).then(|| self.cursor_at(0));
        std::iter::from_fn(move || {
            let c = cursor.as_mut()?;
            let a = c.assignment();
            if !c.advance() {
                cursor = None;
            }
            Some(a)
        })
    }
}

/// Walks the assignment space from a starting rank, exposing treated index sets.
#[derive(Debug, Clone)]
pub struct Cursor {
    cluster_counts: Vec<usize>,
    idx: Vec<Vec<usize>>,
    remaining: u128,
}

impl Cursor {
    /// Sorted treated indices per block.
    pub fn treated_indices(&self) -> &[Vec<usize>] {
        &self.idx
    }

    pub fn assignment(&self) -> Assignment {
        Assignment::from_treated_indices(&self.cluster_counts, &self.idx)
    }

    /// Moves to the next assignment; false once the space is exhausted.
    pub fn advance(&mut self) -> bool {
        if self.remaining <= 1 {
            self.remaining = 0;
            return false;
        }
        self.remaining -= 1;
        for b in (0..self.idx.len()).rev() {
            if next_combination(&mut self.idx[b], self.cluster_counts[b]) {
                return true;
            }
            let k = self.idx[b].len();
            self.idx[b] = (0..k).collect();
        }
        false
    }
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    for i in (0..k).rev() {
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn unrank_combination(n: usize, k: usize, mut rank: u128) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut x = 0;
    for pos in 0..k {
        loop {
            let count = binomial(n - x - 1, k - pos - 1).expect("fits");
            if rank < count {
                out.push(x);
                x += 1;
                break;
            }
            rank -= count;
            x += 1;
        }
    }
    out
}
