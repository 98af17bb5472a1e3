//! Handcrafted IrisCode baselines and masked Hamming matching with
//! exhaustive circular shift search.

mod loggabor;
mod ordinal;

pub use loggabor::{loggabor_encode, loggabor_kernel, loggabor_response, LogGaborParams};
pub use ordinal::{ordinal_encode, ordinal_response, OrdinalParams};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum fraction of jointly valid bits for a comparison to count.
pub const MIN_JOINT_FRACTION: f64 = 0.01;

/// Packed binary code with a validity mask, `planes × rows × cols` bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IrisCode {
    rows: usize,
    cols: usize,
    planes: usize,
    words: usize,
    bits: Vec<u64>,
    mask: Vec<u64>,
    encoder: String,
    digest: String,
}

impl IrisCode {
    pub fn new(planes: usize, rows: usize, cols: usize, encoder: &str, digest: &str) -> Self {
        let words = cols.div_ceil(64);
        let n = planes * rows * words;
        Self {
            rows,
            cols,
            planes,
            words,
            bits: vec![0; n],
            mask: vec![0; n],
            encoder: encoder.to_string(),
            digest: digest.to_string(),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.planes, self.rows, self.cols)
    }

    pub fn encoder(&self) -> &str {
        &self.encoder
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn total_bits(&self) -> usize {
        self.planes * self.rows * self.cols
    }

    fn locate(&self, plane: usize, row: usize, col: usize) -> (usize, u64) {
        (
            (plane * self.rows + row) * self.words + col / 64,
            1u64 << (col % 64),
        )
    }

    pub fn bit(&self, plane: usize, row: usize, col: usize) -> bool {
        let (w, m) = self.locate(plane, row, col);
        self.bits[w] & m != 0
    }

    pub fn valid(&self, plane: usize, row: usize, col: usize) -> bool {
        let (w, m) = self.locate(plane, row, col);
        self.mask[w] & m != 0
    }

    pub fn set(&mut self, plane: usize, row: usize, col: usize, bit: bool, valid: bool) {
        let (w, m) = self.locate(plane, row, col);
        if bit {
            self.bits[w] |= m;
        } else {
            self.bits[w] &= !m;
        }
        if valid {
            self.mask[w] |= m;
        } else {
            self.mask[w] &= !m;
        }
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Circular column shift: column `c` of the result holds column
    /// `c - shift` of `self`.
    pub fn shifted(&self, shift: isize) -> Self {
        let mut out = Self::new(
            self.planes,
            self.rows,
            self.cols,
            &self.encoder,
            &self.digest,
        );
        let w = self.cols as isize;
        if self.cols <= 128 && self.cols > 0 {
            let s = shift.rem_euclid(w) as u32;
            let full: u128 = if self.cols == 128 {
                u128::MAX
            } else {
                (1u128 << self.cols) - 1
            };
            let rot = |x: u128| -> u128 {
                if s == 0 {
                    x
                } else {
                    ((x << s) | (x >> (self.cols as u32 - s))) & full
                }
            };
            for row in 0..self.planes * self.rows {
                let base = row * self.words;
                let load = |v: &[u64]| {
                    let lo = v[base] as u128;
                    let hi = if self.words > 1 {
                        (v[base + 1] as u128) << 64
                    } else {
                        0
                    };
                    lo | hi
                };
                let (b, m) = (rot(load(&self.bits)), rot(load(&self.mask)));
                out.bits[base] = b as u64;
                out.mask[base] = m as u64;
                if self.words > 1 {
                    out.bits[base + 1] = (b >> 64) as u64;
                    out.mask[base + 1] = (m >> 64) as u64;
                }
            }
            return out;
        }
        for p in 0..self.planes {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let src = (c as isize - shift).rem_euclid(w) as usize;
                    out.set(p, r, c, self.bit(p, r, src), self.valid(p, r, src));
                }
            }
        }
        out
    }

    /// Writes the code: a text header line followed by packed little-endian
    /// bit words, then mask words.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "IRISCODE 1 {} {} {} {} {}",
            self.encoder, self.digest, self.planes, self.rows, self.cols
        )?;
        for w in self.bits.iter().chain(&self.mask) {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self> {
        let mut raw = Vec::new();
        input
            .read_to_end(&mut raw)
            .map_err(|e| Error::io("<iriscode>", e))?;
        let bad = |msg: &str| Error::invalid("iris code", msg.to_string());
        let nl = raw
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing header"))?;
        let header = std::str::from_utf8(&raw[..nl]).map_err(|_| bad("non-UTF-8 header"))?;
        let f: Vec<&str> = header.split(' ').collect();
        if f.len() != 7 || f[0] != "IRISCODE" || f[1] != "1" {
            return Err(bad("unrecognized header"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad shape field"));
        let mut code = Self::new(num(f[4])?, num(f[5])?, num(f[6])?, f[2], f[3]);
        let n = code.bits.len();
        let body = &raw[nl + 1..];
        if body.len() != 16 * n {
            return Err(bad("truncated body"));
        }
        for (i, chunk) in body.chunks_exact(8).enumerate() {
            let w = u64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if i < n {
                code.bits[i] = w;
            } else {
                code.mask[i - n] = w;
            }
        }
        Ok(code)
    }
}

/// Outcome of [`hamming_match`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Fraction of disagreeing jointly-valid bits, in `[0, 1]`.
    pub distance: f64,
    /// Shift applied to the second code at the minimum.
    pub shift: isize,
    /// False when no shift had at least 1% jointly valid bits; the distance
    /// is then 1.0.
    pub reliable: bool,
}

/// `(distance, joint valid count)` at one shift.
fn distance_at(a: &IrisCode, b: &IrisCode) -> (usize, usize) {
    let mut diff = 0;
    let mut joint = 0;
    for i in 0..a.bits.len() {
        let m = a.mask[i] & b.mask[i];
        joint += m.count_ones() as usize;
        diff += ((a.bits[i] ^ b.bits[i]) & m).count_ones() as usize;
    }
    (diff, joint)
}

/// Masked fractional Hamming distance minimized over circular shifts of `b`
/// in `[-shift_range, shift_range]`. Ties go to the smallest `|shift|`,
/// negative before positive.
pub fn hamming_match(a: &IrisCode, b: &IrisCode, shift_range: usize) -> Result<MatchResult> {
    if a.digest != b.digest || a.encoder != b.encoder {
        return Err(Error::invalid(
            "iris code pair",
            format!(
                "encoder mismatch: {}/{} vs {}/{}",
                a.encoder, a.digest, b.encoder, b.digest
            ),
        ));
    }
    if a.shape() != b.shape() {
        return Err(Error::invalid(
            "iris code pair",
            format!("shape mismatch: {:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let floor = (MIN_JOINT_FRACTION * a.total_bits() as f64).ceil() as usize;
    let mut best = MatchResult {
        distance: 1.0,
        shift: 0,
        reliable: false,
    };
    let order = std::iter::once(0).chain((1..=shift_range as isize).flat_map(|s| [-s, s]));
    for s in order {
        let (diff, joint) = distance_at(a, &b.shifted(s));
        if joint == 0 || joint < floor {
            continue;
        }
        let hd = diff as f64 / joint as f64;
        if !best.reliable || hd < best.distance {
            best = MatchResult {
                distance: hd,
                shift: s,
                reliable: true,
            };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_code(seed: u64, planes: usize, rows: usize, cols: usize) -> IrisCode {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = IrisCode::new(planes, rows, cols, "test", "0");
        for p in 0..planes {
            for r in 0..rows {
                for col in 0..cols {
                    c.set(p, r, col, rng.gen(), true);
                }
            }
        }
        c
    }

    #[test]
    fn identical_codes_match_at_zero() {
        let a = random_code(1, 2, 4, 70);
        for range in [0, 3, 10] {
            let m = hamming_match(&a, &a, range).unwrap();
            assert_eq!((m.distance, m.shift, m.reliable), (0.0, 0, true));
        }
    }

    #[test]
    fn shifted_copy_is_found() {
        let a = random_code(2, 2, 4, 128);
        let b = a.shifted(3);
        let m = hamming_match(&a, &b, 5).unwrap();
        assert_eq!((m.distance, m.shift), (0.0, -3));
        let m = hamming_match(&b, &a, 5).unwrap();
        assert_eq!((m.distance, m.shift), (0.0, 3));
    }

    #[test]
    fn minimum_never_exceeds_unshifted() {
        let a = random_code(3, 1, 3, 64);
        let b = random_code(4, 1, 3, 64);
        let h0 = hamming_match(&a, &b, 0).unwrap().distance;
        let h8 = hamming_match(&a, &b, 8).unwrap().distance;
        assert!(h8 <= h0);
    }

    #[test]
    fn digest_mismatch_is_an_error() {
        let a = random_code(1, 1, 2, 8);
        let mut b = a.clone();
        b.digest = "other".into();
        assert!(hamming_match(&a, &b, 0).is_err());
    }

    #[test]
    fn sparse_joint_mask_is_unreliable() {
        let mut a = random_code(5, 1, 10, 100);
        let b = random_code(6, 1, 10, 100);
        for r in 0..10 {
            for c in 0..100 {
                let bit = a.bit(0, r, c);
                a.set(0, r, c, bit, r == 0 && c < 5);
            }
        }
        let m = hamming_match(&a, &b, 0).unwrap();
        assert_eq!((m.distance, m.reliable), (1.0, false));
    }

    #[test]
    fn random_codes_average_one_half() {
        let (mut sum, n) = (0.0, 1000);
        for i in 0..n {
            let a = random_code(10_000 + i, 2, 8, 128);
            let b = random_code(20_000 + i, 2, 8, 128);
            sum += hamming_match(&a, &b, 0).unwrap().distance;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    fn serialization_round_trip() {
        let a = random_code(7, 2, 5, 100);
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        assert_eq!(IrisCode::read_from(buf.as_slice()).unwrap(), a);
        assert!(IrisCode::read_from(&buf[..buf.len() - 3]).is_err());
    }
}
