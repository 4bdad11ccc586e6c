//! Counter-based randomness addressed by multi-indices.
//!
//! Every random quantity used by the estimator is a pure function of
//! `(master_seed, multi-index, draw_counter, lane)`. Nothing is stateful, so the
//! order in which the recursion tree is walked (or which thread walks it) never
//! changes a single bit of the output.
//!
//! Key derivation, version [`KEY_SCHEME_VERSION`]:
//!
//! 1. Two 64-bit chaining states are seeded from the master seed.
//! 2. Each path entry is zig-zag encoded and absorbed into both states.
//! 3. The path length is absorbed last, which makes the encoding injective.
//! 4. State `a` becomes the Philox4x32-10 key; state `b` fills the upper half of
//!    the 128-bit counter. The lower half holds `(lane, draw_counter)`.
//!
//! A lane is one Philox block and yields two 53-bit uniforms. Normals use the
//! inverse normal CDF, one uniform per normal, so draw counts stay exact.

use statrs::function::erf::erfc_inv;
use thiserror::Error;

/// Bumped whenever any output of this module changes for a fixed key.
pub const KEY_SCHEME_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RngError {
    #[error("negative time increment {0}")]
    NegativeIncrement(f64),
    #[error("multi-index must have at least one entry")]
    EmptyIndex,
}

/// An element of the index set `∪ₙ ℤⁿ` labelling one independent source of
/// randomness in the recursion tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<i64>);

impl MultiIndex {
    pub fn new(path: Vec<i64>) -> Result<Self, RngError> {
        if path.is_empty() {
            return Err(RngError::EmptyIndex);
        }
        Ok(Self(path))
    }

    /// The singleton `(0)`.
    pub fn root() -> Self {
        Self(vec![0])
    }

    /// The singleton `(r)`, used for independent top-level replications.
    pub fn replicate(r: i64) -> Self {
        Self(vec![r])
    }

    /// Appends `(level, sample)` to the path.
    pub fn child(&self, level: i64, sample: i64) -> Self {
        let mut path = self.0.clone();
        path.push(level);
        path.push(sample);
        Self(path)
    }

    pub fn path(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// Full address of one draw: seed, tree node and use-site counter.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub index: MultiIndex,
    pub draw_counter: u32,
}

impl StreamKey {
    pub fn new(master_seed: u64, index: MultiIndex, draw_counter: u32) -> Self {
        Self {
            master_seed,
            index,
            draw_counter,
        }
    }

    fn stream(&self) -> Stream {
        IndexKey::from_index(self.master_seed, &self.index).stream(self.draw_counter)
    }
}

/// `dim` i.i.d. standard normals determined by `key`.
pub fn normal_vector(key: &StreamKey, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    key.stream().fill_normals(&mut out);
    out
}

/// A uniform in `[0, 1)` determined by `key`.
pub fn uniform01(key: &StreamKey) -> f64 {
    key.stream().uniform()
}

/// `√dt` times [`normal_vector`]; `dt = 0` gives the exact zero vector.
pub fn brownian_increment(key: &StreamKey, dim: usize, dt: f64) -> Result<Vec<f64>, RngError> {
    if !(dt >= 0.0) {
        return Err(RngError::NegativeIncrement(dt));
    }
    if dt == 0.0 {
        return Ok(vec![0.0; dim]);
    }
    let mut z = normal_vector(key, dim);
    let s = dt.sqrt();
    z.iter_mut().for_each(|v| *v *= s);
    Ok(z)
}

const ABSORB_MUL_A: u64 = 0x9E37_79B9_7F4A_7C15;
const ABSORB_MUL_B: u64 = 0xC2B2_AE3D_27D4_EB4F;
const ABSORB_XOR_A: u64 = 0x243F_6A88_85A3_08D3;
const ABSORB_XOR_B: u64 = 0x1319_8A2E_0370_7344;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

/// Incrementally hashed multi-index. Extending a key by child entries costs
/// O(entries), independent of the depth of the node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexKey {
    a: u64,
    b: u64,
    len: u64,
}

impl IndexKey {
    fn seeded(master_seed: u64) -> Self {
        Self {
            a: mix64(master_seed ^ ABSORB_XOR_A),
            b: mix64(master_seed.rotate_left(29) ^ ABSORB_XOR_B),
            len: 0,
        }
    }

    #[inline]
    fn absorb(&mut self, entry: i64) {
        let v = zigzag(entry);
        self.a = mix64(self.a.wrapping_mul(ABSORB_MUL_A) ^ v ^ ABSORB_XOR_A);
        self.b = mix64(self.b.wrapping_mul(ABSORB_MUL_B) ^ v.rotate_left(32) ^ ABSORB_XOR_B);
        self.len += 1;
    }

    pub fn from_index(master_seed: u64, index: &MultiIndex) -> Self {
        let mut k = Self::seeded(master_seed);
        for &e in index.path() {
            k.absorb(e);
        }
        k
    }

    /// Key of `(self, level, sample)`.
    #[inline]
    pub fn child(&self, level: i64, sample: i64) -> Self {
        let mut k = *self;
        k.absorb(level);
        k.absorb(sample);
        k
    }

    #[inline]
    pub fn stream(&self, draw_counter: u32) -> Stream {
        let a = mix64(self.a ^ self.len.wrapping_mul(ABSORB_MUL_B));
        let b = mix64(self.b ^ self.len.wrapping_mul(ABSORB_MUL_A) ^ ABSORB_XOR_A);
        Stream {
            key: [a as u32, (a >> 32) as u32],
            hi: [b as u32, (b >> 32) as u32],
            draw_counter,
        }
    }
}

/// The finite sequence of draws attached to one (node, use-site) pair.
#[derive(Debug, Clone, Copy)]
pub struct Stream {
    key: [u32; 2],
    hi: [u32; 2],
    draw_counter: u32,
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

impl Stream {
    #[inline]
    fn block(&self, lane: u32) -> [u64; 2] {
        let out = philox4x32_10([lane, self.draw_counter, self.hi[0], self.hi[1]], self.key);
        [
            (out[0] as u64) | ((out[1] as u64) << 32),
            (out[2] as u64) | ((out[3] as u64) << 32),
        ]
    }

    /// Raw 64-bit word number `j` of this stream.
    #[inline]
    pub fn word(&self, j: u64) -> u64 {
        self.block((j / 2) as u32)[(j % 2) as usize]
    }

    /// First uniform of the stream, in `[0, 1)`.
    #[inline]
    pub fn uniform(&self) -> f64 {
        (self.word(0) >> 11) as f64 * TWO_POW_M53
    }

    /// Overwrites `out` with standard normals (draws `0..out.len()`).
    pub fn fill_normals(&self, out: &mut [f64]) {
        for (lane, chunk) in out.chunks_mut(2).enumerate() {
            let words = self.block(lane as u32);
            for (slot, w) in chunk.iter_mut().zip(words) {
                *slot = normal_from_bits(w);
            }
        }
    }
}

/// Maps the top 53 bits to the open interval `(0, 1)` and applies Φ⁻¹.
#[inline]
fn normal_from_bits(w: u64) -> f64 {
    let p = ((w >> 11) as f64 + 0.5) * TWO_POW_M53;
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

#[inline]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = (a as u64) * (b as u64);
    ((p >> 32) as u32, p as u32)
}

/// Philox4x32 with 10 rounds (Salmon et al., Random123).
#[inline]
pub fn philox4x32_10(mut ctr: [u32; 4], mut key: [u32; 2]) -> [u32; 4] {
    for round in 0..10 {
        if round > 0 {
            key[0] = key[0].wrapping_add(PHILOX_W0);
            key[1] = key[1].wrapping_add(PHILOX_W1);
        }
        let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
        let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
        ctr = [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0];
    }
    ctr
}
