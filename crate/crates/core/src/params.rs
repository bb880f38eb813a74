//! Flat parameter vectors, their partition into weight roles, and
//! magnitude-based pruning.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

/// All trainable parameters of a model as one flat vector of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(
                "parameter vector contains non-finite entries",
            ));
        }
        Ok(ParamVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(alloc::vec![0.0; len])
    }

    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        ParamVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Elementwise sum. Both vectors must have the same length.
    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        check_len("parameter vector", self.len(), other.len())?;
        ParamVector::new(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// What a parameter is used for. Only the two weight roles can be pruned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    EncoderWeight,
    DecoderWeight,
    Bias,
    Codebook,
}

/// One contiguous, row-major block of parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub name: &'static str,
    pub role: Role,
    pub rows: usize,
    pub cols: usize,
}

impl Block {
    pub const fn new(name: &'static str, role: Role, rows: usize, cols: usize) -> Self {
        Block {
            name,
            role,
            rows,
            cols,
        }
    }

    pub const fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered block list describing a model's parameter layout. Indices are
/// assigned block by block in declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModelShape {
    pub blocks: Vec<Block>,
}

impl ModelShape {
    pub fn new(blocks: Vec<Block>) -> Self {
        ModelShape { blocks }
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }

    /// Starting offset of every block, in declaration order.
    pub fn offsets(&self) -> Vec<usize> {
        let mut next = 0;
        self.blocks
            .iter()
            .map(|b| {
                let at = next;
                next += b.len();
                at
            })
            .collect()
    }

    /// Offset of the first block named `name`.
    pub fn offset_of(&self, name: &str) -> Option<usize> {
        let mut next = 0;
        for b in &self.blocks {
            if b.name == name {
                return Some(next);
            }
            next += b.len();
        }
        None
    }
}

/// Which weights a pruning rate applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    WholeModel,
    DecoderOnly,
}

impl Scope {
    pub const ALL: [Scope; 2] = [Scope::WholeModel, Scope::DecoderOnly];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scope::WholeModel => "whole_model",
            Scope::DecoderOnly => "decoder_only",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole_model" | "whole-model" | "whole" => Ok(Scope::WholeModel),
            "decoder_only" | "decoder-only" | "decoder" => Ok(Scope::DecoderOnly),
            _ => Err(Error::Config("unknown pruning scope")),
        }
    }
}

/// Disjoint index sets covering `0..len` by parameter role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightPartition {
    encoder_weights: Vec<usize>,
    decoder_weights: Vec<usize>,
    biases: Vec<usize>,
    codebook: Vec<usize>,
    len: usize,
}

impl WeightPartition {
    pub fn encoder_weights(&self) -> &[usize] {
        &self.encoder_weights
    }

    pub fn decoder_weights(&self) -> &[usize] {
        &self.decoder_weights
    }

    pub fn biases(&self) -> &[usize] {
        &self.biases
    }

    pub fn codebook(&self) -> &[usize] {
        &self.codebook
    }

    /// Total number of parameters covered.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of prunable weights (encoder plus decoder).
    pub fn weight_count(&self) -> usize {
        self.encoder_weights.len() + self.decoder_weights.len()
    }

    /// Sorted indices that may be pruned under `scope`.
    pub fn eligible(&self, scope: Scope) -> Vec<usize> {
        match scope {
            Scope::DecoderOnly => self.decoder_weights.clone(),
            Scope::WholeModel => merge_sorted(&self.encoder_weights, &self.decoder_weights),
        }
    }

    pub fn eligible_count(&self, scope: Scope) -> usize {
        match scope {
            Scope::DecoderOnly => self.decoder_weights.len(),
            Scope::WholeModel => self.weight_count(),
        }
    }

    pub fn role_of(&self, index: usize) -> Option<Role> {
        let sets = [
            (Role::EncoderWeight, &self.encoder_weights),
            (Role::DecoderWeight, &self.decoder_weights),
            (Role::Bias, &self.biases),
            (Role::Codebook, &self.codebook),
        ];
        sets.into_iter()
            .find(|(_, set)| set.binary_search(&index).is_ok())
            .map(|(role, _)| role)
    }

    /// Checks that every index of `mask` is eligible under the mask's scope.
    pub fn check_mask(&self, mask: &PruningMask) -> Result<()> {
        let eligible = self.eligible(mask.scope);
        for &i in mask.indices() {
            if eligible.binary_search(&i).is_err() {
                return Err(Error::Contract("mask index is not eligible for pruning"));
            }
        }
        Ok(())
    }
}

fn merge_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Assigns indices to every block of `shape` and groups them by role.
pub fn build_partition(shape: &ModelShape) -> Result<WeightPartition> {
    if shape.blocks.iter().any(Block::is_empty) {
        return Err(Error::Config("zero-size parameter block"));
    }
    let mut part = WeightPartition {
        encoder_weights: Vec::new(),
        decoder_weights: Vec::new(),
        biases: Vec::new(),
        codebook: Vec::new(),
        len: 0,
    };
    let mut next = 0;
    for block in &shape.blocks {
        let set = match block.role {
            Role::EncoderWeight => &mut part.encoder_weights,
            Role::DecoderWeight => &mut part.decoder_weights,
            Role::Bias => &mut part.biases,
            Role::Codebook => &mut part.codebook,
        };
        set.extend(next..next + block.len());
        next += block.len();
    }
    part.len = next;
    if part.encoder_weights.is_empty() {
        return Err(Error::Config("model has no encoder weights"));
    }
    if part.decoder_weights.is_empty() {
        return Err(Error::Config("model has no decoder weights"));
    }
    Ok(part)
}

/// A set of pruned indices together with the rate and scope that chose them.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningMask {
    indices: Vec<usize>,
    rate: f64,
    scope: Scope,
}

impl PruningMask {
    pub fn empty(scope: Scope) -> Self {
        PruningMask {
            indices: Vec::new(),
            rate: 0.0,
            scope,
        }
    }

    /// Builds a mask from explicit indices, which must be strictly increasing.
    pub fn from_parts(indices: Vec<usize>, rate: f64, scope: Scope) -> Result<Self> {
        check_rate(rate)?;
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Contract("mask indices must be strictly increasing"));
        }
        Ok(PruningMask {
            indices,
            rate,
            scope,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    fn check_bounds(&self, len: usize) -> Result<()> {
        match self.indices.last() {
            Some(&index) if index >= len => Err(Error::IndexOutOfRange { index, len }),
            _ => Ok(()),
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Contract("pruning rate must lie in [0, 1]"))
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// `round(rate * eligible)`, halves rounded up.
///
/// Products land within float noise of the exact rational value for every
/// grid rate, so a tiny slack keeps exact halves (e.g. 0.15 * 10) from
/// rounding down.
pub fn pruned_count(rate: f64, eligible: usize) -> usize {
    let exact = rate * eligible as f64;
    let k = libm::floor(exact + 0.5 + 1e-9) as usize;
    k.min(eligible)
}

/// Picks the `round(rate * |eligible|)` eligible weights of smallest
/// magnitude. Ties go to the lower index.
pub fn select_pruned_indices(
    w: &ParamVector,
    part: &WeightPartition,
    rate: f64,
    scope: Scope,
) -> Result<PruningMask> {
    check_rate(rate)?;
    check_len("parameter vector", part.len(), w.len())?;
    let mut eligible = part.eligible(scope);
    let k = pruned_count(rate, eligible.len());
    let values = w.as_slice();
    let by_magnitude = |a: &usize, b: &usize| -> Ordering {
        libm::fabs(values[*a])
            .total_cmp(&libm::fabs(values[*b]))
            .then(a.cmp(b))
    };
    if k > 0 && k < eligible.len() {
        eligible.select_nth_unstable_by(k - 1, by_magnitude);
    }
    eligible.truncate(k);
    eligible.sort_unstable();
    Ok(PruningMask {
        indices: eligible,
        rate,
        scope,
    })
}

/// Zeroes the masked coordinates and leaves every other entry untouched.
pub fn apply_mask(w: &ParamVector, mask: &PruningMask) -> Result<ParamVector> {
    mask.check_bounds(w.len())?;
    let mut out = w.0.clone();
    for &i in mask.indices() {
        out[i] = 0.0;
    }
    Ok(ParamVector(out))
}

/// The additive vector that turns `w` into its pruned version: `-w_i` on
/// masked coordinates, zero elsewhere.
///
/// Unmasked entries are `-0.0`, which is a bitwise additive identity, so
/// `w + pruning_direction(w, m)` reproduces `apply_mask(w, m)` bit for bit.
pub fn pruning_direction(w: &ParamVector, mask: &PruningMask) -> Result<ParamVector> {
    mask.check_bounds(w.len())?;
    let mut out = alloc::vec![-0.0; w.len()];
    for &i in mask.indices() {
        out[i] = -w.0[i];
    }
    Ok(ParamVector(out))
}
