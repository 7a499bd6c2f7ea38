//! Proper random samplings over subsets of `{0, …, n−1}` and the partition
//! machinery used by block-serial sampling.
//!
//! Indices are zero-based in code. The plain-text partition format used by
//! configs and CSV output is one-based (`"1,4,7,10|2,5,8,11|3,6,9,12"`).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Generator for run `run` of an experiment seeded with `base_seed`.
pub fn run_rng(base_seed: u64, run: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(run))
}

/// Disjoint blocks covering `{0, …, n−1}`, kept in canonical order: each
/// block sorted, blocks ordered by their smallest element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    n: usize,
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(n: usize, mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n];
        for block in &mut blocks {
            if block.is_empty() {
                return Err(Error::InvalidParameter("partition has an empty block".into()));
            }
            block.sort_unstable();
            for &i in block.iter() {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, n });
                }
                if seen[i] {
                    return Err(Error::InvalidParameter(format!("index {} appears twice", i + 1)));
                }
                seen[i] = true;
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidParameter(format!(
                "partition does not cover index {}",
                missing + 1
            )));
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Self { n, blocks })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of blocks.
    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Common block size, if all blocks have the same size.
    pub fn uniform_size(&self) -> Option<usize> {
        let b = self.blocks[0].len();
        self.blocks.iter().all(|blk| blk.len() == b).then_some(b)
    }

    /// `block_of()[i]` is the block containing index `i`.
    pub fn block_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for (j, block) in self.blocks.iter().enumerate() {
            for &i in block {
                out[i] = j;
            }
        }
        out
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (j, block) in self.blocks.iter().enumerate() {
            if j > 0 {
                f.write_str("|")?;
            }
            for (k, i) in block.iter().enumerate() {
                if k > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{}", i + 1)?;
            }
        }
        Ok(())
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut blocks = Vec::new();
        for part in s.trim().split('|') {
            let mut block = Vec::new();
            for tok in part.split(',') {
                let k: usize = tok
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad partition index {tok:?} in {s:?}")))?;
                if k == 0 {
                    return Err(Error::Parse("partition indices are one-based".into()));
                }
                block.push(k - 1);
            }
            blocks.push(block);
        }
        let n = blocks.iter().map(|b| b.len()).sum();
        Partition::new(n, blocks)
    }
}

/// The law of `S^k`.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    /// One index per draw, index `i` with probability `probs[i]`.
    Serial { probs: Vec<f64> },
    /// One whole block per draw.
    BSerial { partition: Partition, block_probs: Vec<f64> },
    /// A uniformly random subset of size `b`.
    BNice { n: usize, b: usize },
    /// Every index, every draw.
    Full { n: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampling {
    scheme: Scheme,
    /// Cumulative probabilities for inverse-CDF draws (serial and b-serial).
    cdf: Vec<f64>,
    block_of: Vec<usize>,
}

fn check_probabilities(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::InvalidParameter("empty probability vector".into()));
    }
    for (i, &p) in probs.iter().enumerate() {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::ImproperSampling { index: i, prob: p });
        }
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

impl Sampling {
    pub fn serial(probs: Vec<f64>) -> Result<Self> {
        check_probabilities(&probs)?;
        let n = probs.len();
        Ok(Self {
            cdf: cumulative(&probs),
            block_of: (0..n).collect(),
            scheme: Scheme::Serial { probs },
        })
    }

    pub fn serial_uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        Self::serial(vec![1.0 / n as f64; n])
    }

    pub fn b_serial(partition: Partition, block_probs: Vec<f64>) -> Result<Self> {
        if block_probs.len() != partition.m() {
            return Err(Error::Dimension {
                context: "b-serial block probabilities",
                expected: partition.m(),
                found: block_probs.len(),
            });
        }
        check_probabilities(&block_probs).map_err(|e| match e {
            Error::ImproperSampling { index, prob } => Error::ImproperSampling {
                index: partition.blocks()[index][0],
                prob,
            },
            other => other,
        })?;
        Ok(Self {
            cdf: cumulative(&block_probs),
            block_of: partition.block_of(),
            scheme: Scheme::BSerial { partition, block_probs },
        })
    }

    pub fn b_serial_uniform(partition: Partition) -> Result<Self> {
        let m = partition.m();
        Self::b_serial(partition, vec![1.0 / m as f64; m])
    }

    pub fn b_nice(n: usize, b: usize) -> Result<Self> {
        if b == 0 || b > n {
            return Err(Error::InvalidParameter(format!("b-nice needs 1 <= b <= n, got b={b}, n={n}")));
        }
        Ok(Self {
            scheme: Scheme::BNice { n, b },
            cdf: Vec::new(),
            block_of: Vec::new(),
        })
    }

    pub fn full(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        Ok(Self {
            scheme: Scheme::Full { n },
            cdf: Vec::new(),
            block_of: Vec::new(),
        })
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn n(&self) -> usize {
        match &self.scheme {
            Scheme::Serial { probs } => probs.len(),
            Scheme::BSerial { partition, .. } => partition.n(),
            Scheme::BNice { n, .. } | Scheme::Full { n } => *n,
        }
    }

    pub fn is_serial(&self) -> bool {
        matches!(self.scheme, Scheme::Serial { .. })
    }

    /// Short identifier used in records and file names.
    pub fn id(&self) -> String {
        match &self.scheme {
            Scheme::Serial { probs } => {
                let uniform = probs.iter().all(|p| (p - probs[0]).abs() <= SUM_TOL);
                format!("serial-{}", if uniform { "uniform" } else { "weighted" })
            }
            Scheme::BSerial { partition, .. } => format!("bserial[{partition}]"),
            Scheme::BNice { b, .. } => format!("{b}-nice"),
            Scheme::Full { .. } => "full".into(),
        }
    }

    /// Iterations doing one full pass of operator work, when well defined.
    pub fn epoch_length(&self) -> Option<usize> {
        match &self.scheme {
            Scheme::Serial { probs } => Some(probs.len()),
            Scheme::BSerial { partition, .. } => Some(partition.m()),
            Scheme::BNice { n, b } => (n % b == 0).then(|| n / b),
            Scheme::Full { .. } => Some(1),
        }
    }

    fn pick(&self, rng: &mut (impl Rng + ?Sized)) -> usize {
        let u: f64 = rng.random();
        self.cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len() - 1)
    }

    /// Draws `S^k`, sorted ascending.
    pub fn draw(&self, rng: &mut (impl Rng + ?Sized)) -> Vec<usize> {
        match &self.scheme {
            Scheme::Serial { .. } => vec![self.pick(rng)],
            Scheme::BSerial { partition, .. } => partition.blocks()[self.pick(rng)].clone(),
            Scheme::BNice { n, b } => {
                let mut s = rand::seq::index::sample(rng, *n, *b).into_vec();
                s.sort_unstable();
                s
            }
            Scheme::Full { n } => (0..*n).collect(),
        }
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < self.n() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index: i, n: self.n() })
        }
    }

    /// `p_i = P(i ∈ S)`
    pub fn inclusion_prob(&self, i: usize) -> Result<f64> {
        self.check_index(i)?;
        Ok(match &self.scheme {
            Scheme::Serial { probs } => probs[i],
            Scheme::BSerial { block_probs, .. } => block_probs[self.block_of[i]],
            Scheme::BNice { n, b } => *b as f64 / *n as f64,
            Scheme::Full { .. } => 1.0,
        })
    }

    pub fn inclusion_probs(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.inclusion_prob(i).unwrap()).collect()
    }

    /// `p_ij = P(i ∈ S, j ∈ S)`
    pub fn pair_prob(&self, i: usize, j: usize) -> Result<f64> {
        self.check_index(i)?;
        self.check_index(j)?;
        if i == j {
            return self.inclusion_prob(i);
        }
        Ok(match &self.scheme {
            Scheme::Serial { .. } => 0.0,
            Scheme::BSerial { block_probs, .. } => {
                if self.block_of[i] == self.block_of[j] {
                    block_probs[self.block_of[i]]
                } else {
                    0.0
                }
            }
            Scheme::BNice { n, b } => {
                let (n, b) = (*n as f64, *b as f64);
                b * (b - 1.0) / (n * (n - 1.0))
            }
            Scheme::Full { .. } => 1.0,
        })
    }

    /// Every subset with positive probability and its probability. b-nice
    /// support is enumerated only when `C(n, b) <= budget`.
    pub fn support(&self, budget: u128) -> Result<Vec<(Vec<usize>, f64)>> {
        Ok(match &self.scheme {
            Scheme::Serial { probs } => probs.iter().enumerate().map(|(i, p)| (vec![i], *p)).collect(),
            Scheme::BSerial { partition, block_probs } => partition
                .blocks()
                .iter()
                .cloned()
                .zip(block_probs.iter().copied())
                .collect(),
            Scheme::Full { n } => vec![((0..*n).collect(), 1.0)],
            Scheme::BNice { n, b } => {
                let count = binomial(*n as u128, *b as u128)?;
                if count > budget {
                    return Err(Error::BudgetExceeded { count, budget });
                }
                let p = 1.0 / count as f64;
                combinations(*n, *b).into_iter().map(|s| (s, p)).collect()
            }
        })
    }
}

fn binomial(n: u128, k: u128) -> Result<u128> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        // acc * (n - k + i) is divisible by i at every step
        acc = acc
            .checked_mul(n - k + i)
            .ok_or_else(|| Error::Overflow(format!("C({n}, {k})")))?
            / i;
    }
    Ok(acc)
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        if !next_combination(&mut c, n) {
            return out;
        }
    }
}

/// Advances `c` (strictly increasing, values `< n`) to the next combination.
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

fn check_divisor(n: usize, b: usize) -> Result<()> {
    if n == 0 || b == 0 || !n.is_multiple_of(b) {
        return Err(Error::InvalidParameter(format!("block size {b} must divide n = {n}")));
    }
    Ok(())
}

/// Number of partitions of `n` indices into blocks of size `b`:
/// `Π_{j=1}^{n/b} C(jb − 1, b − 1)`.
pub fn count_partitions(n: usize, b: usize) -> Result<u128> {
    check_divisor(n, b)?;
    let mut total: u128 = 1;
    for j in 1..=(n / b) {
        let c = binomial((j * b - 1) as u128, (b - 1) as u128)?;
        total = total
            .checked_mul(c)
            .ok_or_else(|| Error::Overflow(format!("partition count for n={n}, b={b}")))?;
    }
    Ok(total)
}

/// Streams every partition into blocks of size `b` exactly once. The
/// smallest unassigned index anchors each new block; the other members run
/// through combinations in lexicographic order.
pub fn enumerate_partitions(n: usize, b: usize) -> Result<PartitionIter> {
    check_divisor(n, b)?;
    let mut it = PartitionIter {
        n,
        b,
        levels: Vec::with_capacity(n / b),
        done: false,
    };
    it.fill_from(0, (0..n).collect());
    Ok(it)
}

#[derive(Debug, Clone)]
struct Level {
    remaining: Vec<usize>,
    combo: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PartitionIter {
    n: usize,
    b: usize,
    levels: Vec<Level>,
    done: bool,
}

impl PartitionIter {
    fn fill_from(&mut self, depth: usize, mut remaining: Vec<usize>) {
        self.levels.truncate(depth);
        while !remaining.is_empty() {
            let combo: Vec<usize> = (0..self.b - 1).collect();
            let next = Self::rest(&remaining, &combo);
            self.levels.push(Level { remaining, combo });
            remaining = next;
        }
    }

    fn chosen(level: &Level) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(level.remaining[0]).chain(level.combo.iter().map(|&c| level.remaining[c + 1]))
    }

    fn rest(remaining: &[usize], combo: &[usize]) -> Vec<usize> {
        let mut taken = vec![false; remaining.len()];
        taken[0] = true;
        for &c in combo {
            taken[c + 1] = true;
        }
        remaining
            .iter()
            .zip(&taken)
            .filter(|(_, t)| !**t)
            .map(|(v, _)| *v)
            .collect()
    }
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let blocks: Vec<Vec<usize>> = self.levels.iter().map(|l| Self::chosen(l).collect()).collect();
        let current = Partition { n: self.n, blocks };

        self.done = true;
        for depth in (0..self.levels.len()).rev() {
            let level = &mut self.levels[depth];
            let pool = level.remaining.len() - 1;
            if next_combination(&mut level.combo, pool) {
                let next = Self::rest(&level.remaining, &level.combo);
                self.fill_from(depth + 1, next);
                self.done = false;
                break;
            }
        }
        Some(current)
    }
}

/// `I_j = {jb, …, jb + b − 1}`
pub fn consecutive_partition(n: usize, b: usize) -> Result<Partition> {
    check_divisor(n, b)?;
    Partition::new(n, (0..n / b).map(|j| (j * b..(j + 1) * b).collect()).collect())
}

/// `I_j = {j, j + m, j + 2m, …}` with stride `m = n/b`.
pub fn equidistant_partition(n: usize, b: usize) -> Result<Partition> {
    check_divisor(n, b)?;
    let m = n / b;
    Partition::new(n, (0..m).map(|j| (0..b).map(|k| j + k * m).collect()).collect())
}
