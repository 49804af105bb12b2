//! Non-crossing partitions and the nested evaluation `kappa_pi(b_1, ..., b_{n-1})`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Largest supported number of points.
pub const MAX_POINTS: usize = 12;

/// Source of cumulant maps `kappa_m: B^{m-1} -> B` for the nested evaluation.
pub trait CumulantProvider {
    fn dim(&self) -> usize;

    /// `kappa_order(args)`, `args.len() == order - 1`.
    fn eval_cumulant(&self, order: usize, args: &[Mat]) -> Result<Mat>;
}

/// A non-crossing partition of `{1, ..., n}`; blocks sorted internally and
/// ordered by their smallest element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NCPartition {
    n: usize,
    blocks: Vec<Vec<usize>>,
}

impl NCPartition {
    /// Validates `blocks` as a non-crossing partition of `{1..n}`.
    pub fn new(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut blocks: Vec<Vec<usize>> = blocks
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b
            })
            .collect();
        blocks.sort_by_key(|b| b.first().copied().unwrap_or(0));
        let mut seen = vec![false; n + 1];
        for b in &blocks {
            if b.is_empty() {
                return Err(Error::InvalidArgument("empty block".into()));
            }
            for &i in b {
                if i == 0 || i > n || seen[i] {
                    return Err(Error::InvalidArgument(format!(
                        "blocks do not partition {{1..{n}}} (index {i})"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().skip(1).any(|s| !s) {
            return Err(Error::InvalidArgument(format!(
                "blocks do not cover {{1..{n}}}"
            )));
        }
        if !is_noncrossing(&blocks) {
            return Err(Error::InvalidArgument("partition is crossing".into()));
        }
        Ok(NCPartition { n, blocks })
    }

    /// The one-block partition `1_n`.
    pub fn full(n: usize) -> Self {
        NCPartition {
            n,
            blocks: vec![(1..=n).collect()],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn is_full(&self) -> bool {
        self.blocks.len() == 1
    }

    /// Block label of each point (0-based labels, points 1..n at slots 0..n-1).
    pub fn labels(&self) -> Vec<usize> {
        let mut lab = vec![0; self.n];
        for (k, b) in self.blocks.iter().enumerate() {
            for &i in b {
                lab[i - 1] = k;
            }
        }
        lab
    }
}

impl Serialize for NCPartition {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.blocks.serialize(s)
    }
}

impl<'de> Deserialize<'de> for NCPartition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let blocks: Vec<Vec<usize>> = Vec::deserialize(d)?;
        let n = blocks.iter().map(Vec::len).sum();
        NCPartition::new(n, blocks).map_err(serde::de::Error::custom)
    }
}

/// Non-crossing test by a single left-to-right scan with a stack of open blocks.
///
/// `blocks` must be a set partition of `{1..n}` (1-based indices).
pub fn is_noncrossing(blocks: &[Vec<usize>]) -> bool {
    let n: usize = blocks.iter().map(Vec::len).sum();
    let mut label = vec![usize::MAX; n + 1];
    let mut last = vec![0usize; blocks.len()];
    for (k, b) in blocks.iter().enumerate() {
        for &i in b {
            if i == 0 || i > n {
                return false;
            }
            label[i] = k;
            last[k] = last[k].max(i);
        }
    }
    let mut open = vec![false; blocks.len()];
    let mut stack: Vec<usize> = Vec::new();
    for (i, &k) in label.iter().enumerate().skip(1) {
        if open[k] {
            if stack.last() != Some(&k) {
                return false;
            }
            if last[k] == i {
                stack.pop();
                open[k] = false;
            }
        } else if last[k] > i {
            stack.push(k);
            open[k] = true;
        }
    }
    true
}

/// All non-crossing partitions of `{1..n}`, ordered lexicographically by the
/// restricted-growth block-membership word.
pub fn enumerate_nc(n: usize) -> Result<Vec<NCPartition>> {
    if n == 0 || n > MAX_POINTS {
        return Err(Error::InvalidArgument(format!(
            "number of points must lie in 1..={MAX_POINTS}, got {n}"
        )));
    }
    let mut out = Vec::new();
    let mut word = vec![0usize; n];
    extend_word(&mut word, 1, 0, &mut out);
    Ok(out)
}

fn word_to_blocks(word: &[usize]) -> Vec<Vec<usize>> {
    let nb = word.iter().max().map_or(0, |m| m + 1);
    let mut blocks = vec![Vec::new(); nb];
    for (i, &l) in word.iter().enumerate() {
        blocks[l].push(i + 1);
    }
    blocks
}

fn extend_word(word: &mut [usize], pos: usize, max_label: usize, out: &mut Vec<NCPartition>) {
    if pos == word.len() {
        let blocks = word_to_blocks(word);
        out.push(NCPartition {
            n: word.len(),
            blocks,
        });
        return;
    }
    for l in 0..=max_label + 1 {
        word[pos] = l;
        // a crossing among the first pos+1 points persists in every extension
        if is_noncrossing(&word_to_blocks(&word[..=pos])) {
            extend_word(word, pos + 1, max_label.max(l), out);
        }
    }
}

/// Nested evaluation of `kappa_pi(b_1, ..., b_{n-1})`.
///
/// The word `X b_1 X ... b_{n-1} X` is reduced by repeatedly replacing an
/// innermost interval block by the value of its cumulant. A block at the left
/// or right end of the current word is absorbed into the outer left or right
/// factor; an interior one is spliced between its neighbouring coefficients.
pub fn contract_evaluate<P: CumulantProvider + ?Sized>(
    p: &NCPartition,
    kappa: &P,
    coeffs: &[Mat],
) -> Result<Mat> {
    let n = p.n();
    if coeffs.len() + 1 != n {
        return Err(Error::DimensionMismatch(format!(
            "a partition of {n} points needs {} coefficients, {} given",
            n - 1,
            coeffs.len()
        )));
    }
    let d = kappa.dim();
    let labels = p.labels();
    let mut letters: Vec<usize> = labels.clone();
    let mut inner: Vec<Mat> = coeffs.to_vec();
    let mut left = Mat::identity(d, d);
    let mut right = Mat::identity(d, d);
    let mut remaining: Vec<usize> = p.blocks().iter().map(Vec::len).collect();

    loop {
        // innermost interval block: a maximal run of equal labels that is the whole block
        let (start, len) = find_interval(&letters, &remaining)
            .ok_or_else(|| Error::InvalidArgument("partition has no interval block".into()))?;
        let label = letters[start];
        let value = kappa.eval_cumulant(len, &inner[start..start + len - 1])?;
        let end = start + len;
        if start == 0 && end == letters.len() {
            return Ok(left * value * right);
        }
        if start == 0 {
            left = left * value * &inner[end - 1];
            letters.drain(0..end);
            inner.drain(0..end);
        } else if end == letters.len() {
            right = &inner[start - 1] * value * right;
            letters.drain(start..end);
            inner.drain(start - 1..end - 1);
        } else {
            let merged = &inner[start - 1] * value * &inner[end - 1];
            letters.drain(start..end);
            inner.splice(start - 1..end, std::iter::once(merged));
        }
        remaining[label] = 0;
    }
}

fn find_interval(letters: &[usize], remaining: &[usize]) -> Option<(usize, usize)> {
    let mut i = 0;
    while i < letters.len() {
        let l = letters[i];
        let mut j = i;
        while j < letters.len() && letters[j] == l {
            j += 1;
        }
        if j - i == remaining[l] {
            return Some((i, j - i));
        }
        i = j;
    }
    None
}
