//! Payload generation.
//!
//! A benchmark payload is an ordered list of iovec-style buffers, each
//! classified as Small, Medium, or Large by its byte size. Payloads are
//! described by a [`PayloadSpec`] (scheme, per-buffer categories and sizes,
//! seed) and materialized into deterministic byte buffers with
//! [`materialize`]: the content of buffer `i` is a pure function of
//! `(seed, i)`, so re-materialization anywhere — another process, another
//! language — is bit-identical.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Smallest admissible buffer size in bytes.
pub const MIN_BUFFER_BYTES: u64 = 1;
/// First Medium size: buffers in `[1, 1024)` are Small (binary units).
pub const MEDIUM_THRESHOLD_BYTES: u64 = 1024;
/// First Large size: buffers in `[1024, 1048576)` are Medium.
pub const LARGE_THRESHOLD_BYTES: u64 = 1024 * 1024;
/// Largest admissible buffer size in bytes (10 MiB, inclusive).
pub const MAX_BUFFER_BYTES: u64 = 10 * 1024 * 1024;

/// Errors from payload specification and generation.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("buffer size {0} is outside the supported range [1, {MAX_BUFFER_BYTES}]")]
    SizeOutOfRange(u64),
    #[error("buffer size {size} is outside the {category} range {range}")]
    SizeOutsideCategory {
        size: u64,
        category: BufferCategory,
        range: &'static str,
    },
    #[error("category set must not be empty")]
    EmptyCategories,
    #[error("scheme requires at least two buffer categories, got {0}")]
    TooFewCategories(usize),
    #[error("bias category {0} is not in the chosen category set")]
    BiasNotInCategories(BufferCategory),
    #[error("buffer count must be at least 1")]
    ZeroCount,
    #[error("payload must contain at least one buffer")]
    EmptyPayload,
}

/// Size class of one iovec buffer.
///
/// The three categories partition `[1, 10 MiB]` exactly: Small is
/// `[1, 1 KiB)`, Medium is `[1 KiB, 1 MiB)`, and Large is `[1 MiB, 10 MiB]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferCategory {
    Small,
    Medium,
    Large,
}

impl BufferCategory {
    /// All categories in ascending size order.
    pub const ALL: [BufferCategory; 3] = [
        BufferCategory::Small,
        BufferCategory::Medium,
        BufferCategory::Large,
    ];

    /// Inclusive lower and upper size bounds of this category.
    pub fn bounds(self) -> (u64, u64) {
        match self {
            BufferCategory::Small => (MIN_BUFFER_BYTES, MEDIUM_THRESHOLD_BYTES - 1),
            BufferCategory::Medium => (MEDIUM_THRESHOLD_BYTES, LARGE_THRESHOLD_BYTES - 1),
            BufferCategory::Large => (LARGE_THRESHOLD_BYTES, MAX_BUFFER_BYTES),
        }
    }

    /// Whether `size` falls inside this category's range.
    pub fn contains(self, size: u64) -> bool {
        let (lo, hi) = self.bounds();
        (lo..=hi).contains(&size)
    }

    /// Human-readable range, used in error messages.
    pub fn range_str(self) -> &'static str {
        match self {
            BufferCategory::Small => "[1, 1024)",
            BufferCategory::Medium => "[1024, 1048576)",
            BufferCategory::Large => "[1048576, 10485760]",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BufferCategory::Small => "small",
            BufferCategory::Medium => "medium",
            BufferCategory::Large => "large",
        }
    }
}

impl fmt::Display for BufferCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BufferCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "small" | "s" => Ok(BufferCategory::Small),
            "medium" | "m" => Ok(BufferCategory::Medium),
            "large" | "l" => Ok(BufferCategory::Large),
            other => Err(format!(
                "unknown buffer category '{other}' (expected small, medium, or large)"
            )),
        }
    }
}

/// Classify a buffer size into its category.
///
/// Sizes of 0 or above 10 MiB are outside the supported taxonomy and are
/// rejected.
pub fn categorize(size: u64) -> Result<BufferCategory, WorkloadError> {
    match size {
        0 => Err(WorkloadError::SizeOutOfRange(size)),
        s if s < MEDIUM_THRESHOLD_BYTES => Ok(BufferCategory::Small),
        s if s < LARGE_THRESHOLD_BYTES => Ok(BufferCategory::Medium),
        s if s <= MAX_BUFFER_BYTES => Ok(BufferCategory::Large),
        s => Err(WorkloadError::SizeOutOfRange(s)),
    }
}

/// A set of buffer categories, iterated in ascending size order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<BufferCategory>", try_from = "Vec<BufferCategory>")]
pub struct CategorySet {
    small: bool,
    medium: bool,
    large: bool,
}

impl CategorySet {
    /// All three categories.
    pub const ALL: CategorySet = CategorySet {
        small: true,
        medium: true,
        large: true,
    };

    pub const EMPTY: CategorySet = CategorySet {
        small: false,
        medium: false,
        large: false,
    };

    pub fn of(categories: &[BufferCategory]) -> CategorySet {
        let mut set = CategorySet::EMPTY;
        for c in categories {
            set.insert(*c);
        }
        set
    }

    pub fn insert(&mut self, category: BufferCategory) {
        match category {
            BufferCategory::Small => self.small = true,
            BufferCategory::Medium => self.medium = true,
            BufferCategory::Large => self.large = true,
        }
    }

    pub fn contains(self, category: BufferCategory) -> bool {
        match category {
            BufferCategory::Small => self.small,
            BufferCategory::Medium => self.medium,
            BufferCategory::Large => self.large,
        }
    }

    pub fn len(self) -> usize {
        self.small as usize + self.medium as usize + self.large as usize
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    /// Member categories in ascending size order (Small first).
    pub fn ascending(self) -> Vec<BufferCategory> {
        BufferCategory::ALL
            .into_iter()
            .filter(|c| self.contains(*c))
            .collect()
    }

    /// Member categories in descending size order (Large first).
    pub fn descending(self) -> Vec<BufferCategory> {
        let mut v = self.ascending();
        v.reverse();
        v
    }
}

impl From<CategorySet> for Vec<BufferCategory> {
    fn from(set: CategorySet) -> Self {
        set.ascending()
    }
}

impl TryFrom<Vec<BufferCategory>> for CategorySet {
    type Error = String;

    fn try_from(v: Vec<BufferCategory>) -> Result<Self, Self::Error> {
        if v.is_empty() {
            return Err("category set must not be empty".to_string());
        }
        Ok(CategorySet::of(&v))
    }
}

impl fmt::Display for CategorySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.ascending().iter().map(|c| c.name()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for CategorySet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = CategorySet::EMPTY;
        for part in s.split(',').filter(|p| !p.trim().is_empty()) {
            set.insert(part.parse()?);
        }
        if set.is_empty() {
            return Err("category set must not be empty".to_string());
        }
        Ok(set)
    }
}

/// Per-category buffer sizes used by the generation schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSizeConfig {
    pub small_bytes: u64,
    pub medium_bytes: u64,
    pub large_bytes: u64,
}

impl Default for BufferSizeConfig {
    /// 10 bytes / 10 KiB / 1 MiB.
    fn default() -> Self {
        BufferSizeConfig {
            small_bytes: 10,
            medium_bytes: 10 * 1024,
            large_bytes: 1024 * 1024,
        }
    }
}

impl BufferSizeConfig {
    /// Check every size against its category's range.
    pub fn validate(&self) -> Result<(), WorkloadError> {
        for (category, size) in [
            (BufferCategory::Small, self.small_bytes),
            (BufferCategory::Medium, self.medium_bytes),
            (BufferCategory::Large, self.large_bytes),
        ] {
            if !category.contains(size) {
                return Err(WorkloadError::SizeOutsideCategory {
                    size,
                    category,
                    range: category.range_str(),
                });
            }
        }
        Ok(())
    }

    pub fn size_for(&self, category: BufferCategory) -> u64 {
        match category {
            BufferCategory::Small => self.small_bytes,
            BufferCategory::Medium => self.medium_bytes,
            BufferCategory::Large => self.large_bytes,
        }
    }
}

/// How buffer categories are distributed across a payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Deterministic round-robin over the chosen categories in ascending
    /// size order; per-category counts differ by at most one.
    Uniform,
    /// Each buffer's category drawn independently and uniformly from the
    /// chosen categories (at least two) by a seeded PRNG.
    Random,
    /// Categories weighted 6:3:1 toward a bias category; composition fixed
    /// by largest-remainder rounding, bias buffers ordered first.
    Skew,
    /// Caller-provided buffer list.
    Custom,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scheme::Uniform => "uniform",
            Scheme::Random => "random",
            Scheme::Skew => "skew",
            Scheme::Custom => "custom",
        };
        f.write_str(s)
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(Scheme::Uniform),
            "random" => Ok(Scheme::Random),
            "skew" => Ok(Scheme::Skew),
            "custom" => Ok(Scheme::Custom),
            other => Err(format!(
                "unknown scheme '{other}' (expected uniform, random, or skew)"
            )),
        }
    }
}

/// One buffer in a payload specification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSpec {
    pub category: BufferCategory,
    pub size: u64,
}

/// The ordered list of buffers forming one RPC body, plus the seed that
/// determines their content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PayloadSpec {
    scheme: Scheme,
    buffers: Vec<BufferSpec>,
    seed: u64,
}

impl PayloadSpec {
    /// Build a custom spec from an explicit buffer list. Every size must lie
    /// in its category's range and the list must be non-empty.
    pub fn custom(buffers: Vec<BufferSpec>, seed: u64) -> Result<PayloadSpec, WorkloadError> {
        Self::new(Scheme::Custom, buffers, seed)
    }

    fn new(
        scheme: Scheme,
        buffers: Vec<BufferSpec>,
        seed: u64,
    ) -> Result<PayloadSpec, WorkloadError> {
        if buffers.is_empty() {
            return Err(WorkloadError::EmptyPayload);
        }
        for b in &buffers {
            if !b.category.contains(b.size) {
                return Err(WorkloadError::SizeOutsideCategory {
                    size: b.size,
                    category: b.category,
                    range: b.category.range_str(),
                });
            }
        }
        Ok(PayloadSpec {
            scheme,
            buffers,
            seed,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn buffers(&self) -> &[BufferSpec] {
        &self.buffers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sum of all buffer sizes.
    pub fn total_bytes(&self) -> u64 {
        self.buffers.iter().map(|b| b.size).sum()
    }

    /// Buffer counts as `[small, medium, large]`.
    pub fn category_counts(&self) -> [usize; 3] {
        let mut counts = [0usize; 3];
        for b in &self.buffers {
            counts[b.category as usize] += 1;
        }
        counts
    }
}

/// A materialized payload: one byte buffer per spec entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Payload {
    buffers: Vec<Vec<u8>>,
    spec: PayloadSpec,
}

impl Payload {
    pub fn buffers(&self) -> &[Vec<u8>] {
        &self.buffers
    }

    pub fn spec(&self) -> &PayloadSpec {
        &self.spec
    }

    /// Total content bytes across all buffers.
    pub fn content_bytes(&self) -> u64 {
        self.buffers.iter().map(|b| b.len() as u64).sum()
    }
}

/// Round-robin over the chosen categories in ascending size order: buffer
/// `i` gets category `i mod n`, so per-category counts differ by at most 1.
pub fn generate_uniform(
    categories: CategorySet,
    count: usize,
    sizes: &BufferSizeConfig,
    seed: u64,
) -> Result<PayloadSpec, WorkloadError> {
    if categories.is_empty() {
        return Err(WorkloadError::EmptyCategories);
    }
    if count == 0 {
        return Err(WorkloadError::ZeroCount);
    }
    sizes.validate()?;
    let order = categories.ascending();
    let buffers = (0..count)
        .map(|i| {
            let category = order[i % order.len()];
            BufferSpec {
                category,
                size: sizes.size_for(category),
            }
        })
        .collect();
    PayloadSpec::new(Scheme::Uniform, buffers, seed)
}

/// Each buffer's category drawn independently, uniformly over the chosen
/// categories (at least two required), from the stream seeded by `seed`.
/// The same seed always yields the same spec.
pub fn generate_random(
    categories: CategorySet,
    count: usize,
    sizes: &BufferSizeConfig,
    seed: u64,
) -> Result<PayloadSpec, WorkloadError> {
    if categories.len() < 2 {
        return Err(WorkloadError::TooFewCategories(categories.len()));
    }
    if count == 0 {
        return Err(WorkloadError::ZeroCount);
    }
    sizes.validate()?;
    let order = categories.ascending();
    let mut rng = SplitMix64::new(seed);
    let buffers = (0..count)
        .map(|_| {
            let category = order[(rng.next_u64() % order.len() as u64) as usize];
            BufferSpec {
                category,
                size: sizes.size_for(category),
            }
        })
        .collect();
    PayloadSpec::new(Scheme::Random, buffers, seed)
}

/// Weighted composition biased toward one category.
///
/// Weights 6:3:1 are assigned to the bias category first and then to the
/// remaining chosen categories in descending size order, renormalized over
/// the chosen set. Per-category counts come from largest-remainder rounding
/// with remainder ties resolved toward the bias category (then larger
/// categories first). Buffers are ordered bias-category first, then the
/// rest in descending size order.
pub fn generate_skew(
    categories: CategorySet,
    count: usize,
    sizes: &BufferSizeConfig,
    bias: BufferCategory,
    seed: u64,
) -> Result<PayloadSpec, WorkloadError> {
    if categories.len() < 2 {
        return Err(WorkloadError::TooFewCategories(categories.len()));
    }
    if !categories.contains(bias) {
        return Err(WorkloadError::BiasNotInCategories(bias));
    }
    if count == 0 {
        return Err(WorkloadError::ZeroCount);
    }
    sizes.validate()?;

    // Category order for both weight assignment and tie-breaking: bias
    // first, then the rest descending by size.
    let mut order = vec![bias];
    order.extend(categories.descending().into_iter().filter(|c| *c != bias));
    let weights: &[u64] = match order.len() {
        2 => &[6, 3],
        3 => &[6, 3, 1],
        n => return Err(WorkloadError::TooFewCategories(n)),
    };
    let weight_sum: u64 = weights.iter().sum();

    // Largest-remainder apportionment in exact integer arithmetic.
    let numer: Vec<u64> = weights.iter().map(|w| w * count as u64).collect();
    let mut alloc: Vec<u64> = numer.iter().map(|n| n / weight_sum).collect();
    let mut leftover = count as u64 - alloc.iter().sum::<u64>();
    let mut by_remainder: Vec<usize> = (0..order.len()).collect();
    // Stable sort keeps the bias-first order among equal remainders.
    by_remainder.sort_by_key(|&i| std::cmp::Reverse(numer[i] % weight_sum));
    for &i in &by_remainder {
        if leftover == 0 {
            break;
        }
        alloc[i] += 1;
        leftover -= 1;
    }

    let mut buffers = Vec::with_capacity(count);
    for (category, n) in order.iter().zip(&alloc) {
        for _ in 0..*n {
            buffers.push(BufferSpec {
                category: *category,
                size: sizes.size_for(*category),
            });
        }
    }
    PayloadSpec::new(Scheme::Skew, buffers, seed)
}

/// Fill the spec's buffers with their deterministic byte streams.
///
/// Buffer `i` is the splitmix64 byte stream seeded with
/// [`buffer_stream_seed`]`(spec.seed, i)`; the operation is idempotent and
/// bit-identical across processes.
pub fn materialize(spec: &PayloadSpec) -> Payload {
    let buffers = spec
        .buffers
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut bytes = vec![0u8; b.size as usize];
            fill_deterministic(&mut bytes, buffer_stream_seed(spec.seed, i as u64));
            bytes
        })
        .collect();
    Payload {
        buffers,
        spec: spec.clone(),
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 pseudo-random stream.
///
/// This is the normative content generator for payload bytes: state advances
/// by the golden-ratio increment and each output is the standard
/// splitmix64 avalanche of the new state. Outputs are emitted as
/// little-endian bytes.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Fill `buf` with the stream's little-endian byte output.
    pub fn fill_bytes(&mut self, buf: &mut [u8]) {
        for chunk in buf.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Stream seed for buffer `i` of a payload with seed `seed`: one splitmix64
/// output taken at state `seed + (i + 1) * 0x9E3779B97F4A7C15`. Distinct
/// `(seed, i)` pairs map to distinct stream seeds for all payloads small
/// enough to matter.
pub fn buffer_stream_seed(seed: u64, index: u64) -> u64 {
    SplitMix64::new(seed.wrapping_add(index.wrapping_mul(GOLDEN_GAMMA))).next_u64()
}

fn fill_deterministic(buf: &mut [u8], stream_seed: u64) {
    SplitMix64::new(stream_seed).fill_bytes(buf);
}
