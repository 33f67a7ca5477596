//! Bit-packed binary tensors and xnor/popcount arithmetic.
//!
//! A value of `+1` is stored as bit `1` and `-1` as bit `0`. Bits are packed
//! least-significant-bit first, and every row starts on a byte boundary. Pad
//! bits in the final byte of a row are always zero.

use crate::error::{Error, Result};

/// Widest row a [`BitTensor`] may hold, in bits.
pub const MAX_ROW_BITS: usize = 1 << 16;

/// Number of bytes needed to hold `bits` bits.
#[inline]
pub fn bytes_for_bits(bits: usize) -> usize {
    bits.div_ceil(8)
}

/// A ±1 value in its stored form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignBit {
    /// −1, stored as bit 0.
    Neg,
    /// +1, stored as bit 1.
    Pos,
}

impl SignBit {
    #[inline]
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            SignBit::Pos
        } else {
            SignBit::Neg
        }
    }

    #[inline]
    pub fn bit(self) -> bool {
        self == SignBit::Pos
    }

    #[inline]
    pub fn value(self) -> i8 {
        match self {
            SignBit::Neg => -1,
            SignBit::Pos => 1,
        }
    }

    pub fn from_value(v: i8) -> Result<Self> {
        match v {
            -1 => Ok(SignBit::Neg),
            1 => Ok(SignBit::Pos),
            other => Err(Error::invalid(format!("{other} is not a ±1 value"))),
        }
    }
}

/// Binary activation: negative inputs map to −1, everything else to +1.
///
/// Zero maps to +1 so the function is total over finite inputs.
pub fn binary_activation(x: f32) -> Result<SignBit> {
    if !x.is_finite() {
        return Err(Error::invalid(format!(
            "binary activation of non-finite value {x}"
        )));
    }
    Ok(SignBit::from_bit(x >= 0.0))
}

/// Packs a row of ±1 values, bit `i` set iff `values[i] == +1`.
pub fn pack_row(values: &[i8]) -> Result<Vec<u8>> {
    let mut out = vec![0u8; bytes_for_bits(values.len())];
    for (i, &v) in values.iter().enumerate() {
        if SignBit::from_value(v)?.bit() {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    Ok(out)
}

/// Inverse of [`pack_row`] for the first `n` bits of `bytes`.
pub fn unpack_row(bytes: &[u8], n: usize) -> Vec<i8> {
    (0..n).map(|i| if get_bit(bytes, i) { 1 } else { -1 }).collect()
}

#[inline]
pub fn get_bit(bytes: &[u8], i: usize) -> bool {
    bytes[i / 8] >> (i % 8) & 1 == 1
}

#[inline]
pub fn set_bit(bytes: &mut [u8], i: usize, bit: bool) {
    let mask = 1u8 << (i % 8);
    if bit {
        bytes[i / 8] |= mask;
    } else {
        bytes[i / 8] &= !mask;
    }
}

/// ±1 dot product of two packed rows holding `n` valid bits each.
///
/// Computed as `n - 2 * popcount(a XOR b)` over the valid bits.
pub fn xnor_popcount_dot(a: &[u8], b: &[u8], n: usize) -> Result<i32> {
    let need = bytes_for_bits(n);
    if a.len() != need || b.len() != need {
        return Err(Error::invalid(format!(
            "operands hold {} and {} bytes but {n} bits need {need}",
            a.len(),
            b.len()
        )));
    }
    Ok(dot_bits(a, 0, b, 0, n))
}

/// Loads `len <= 56` bits starting at bit `off`, LSB first.
#[inline]
fn load_bits(bytes: &[u8], off: usize, len: usize) -> u64 {
    debug_assert!(len <= 56);
    let (start, shift) = (off / 8, off % 8);
    let word = match bytes.get(start..start + 8) {
        Some(chunk) => u64::from_le_bytes(chunk.try_into().expect("8 bytes")),
        None => bytes[start..start + (shift + len).div_ceil(8)]
            .iter()
            .rev()
            .fold(0u64, |w, &b| w << 8 | b as u64),
    };
    (word >> shift) & ((1u64 << len) - 1)
}

/// ±1 dot product of the `n`-bit segments `a[a_off..]` and `b[b_off..]`.
///
/// Offsets are in bits and need not be byte aligned. This is the kernel used
/// by the fused blocks to line a convolution window up against its filter.
#[inline]
pub fn dot_bits(a: &[u8], a_off: usize, b: &[u8], b_off: usize, n: usize) -> i32 {
    debug_assert!(a_off + n <= a.len() * 8 && b_off + n <= b.len() * 8);
    let mut differ = 0u32;
    if a_off.is_multiple_of(8) && b_off.is_multiple_of(8) {
        let a = &a[a_off / 8..];
        let b = &b[b_off / 8..];
        let full = n / 8;
        for (x, y) in a[..full].iter().zip(&b[..full]) {
            differ += (x ^ y).count_ones();
        }
        let rem = n % 8;
        if rem != 0 {
            let mask = (1u8 << rem) - 1;
            differ += ((a[full] ^ b[full]) & mask).count_ones();
        }
    } else {
        let mut done = 0;
        while done < n {
            let len = (n - done).min(56);
            let x = load_bits(a, a_off + done, len);
            let y = load_bits(b, b_off + done, len);
            differ += (x ^ y).count_ones();
            done += len;
        }
    }
    n as i32 - 2 * differ as i32
}

/// Channel/height/width extent of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    /// Shape of a flat vector of `n` elements.
    pub const fn vector(n: usize) -> Self {
        Shape::new(1, 1, n)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row_stride(&self) -> usize {
        bytes_for_bits(self.width)
    }

    /// Bytes of a bit-packed tensor of this shape with byte-aligned rows.
    pub fn packed_bytes(&self) -> usize {
        self.channels * self.height * self.row_stride()
    }

    /// Unused pad bits at the end of each packed row.
    pub fn waste_bits_per_row(&self) -> usize {
        self.row_stride() * 8 - self.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Bit-packed binary tensor with byte-aligned rows.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitTensor {
    shape: Shape,
    data: Vec<u8>,
}

impl BitTensor {
    /// All −1 tensor.
    pub fn zeros(shape: Shape) -> Result<Self> {
        check_width(shape.width)?;
        Ok(BitTensor {
            shape,
            data: vec![0; shape.packed_bytes()],
        })
    }

    /// Wraps already packed bytes, checking the length and pad bits.
    pub fn from_bytes(shape: Shape, data: Vec<u8>) -> Result<Self> {
        check_width(shape.width)?;
        if data.len() != shape.packed_bytes() {
            return Err(Error::invalid(format!(
                "{} bytes do not match shape {shape} ({} bytes)",
                data.len(),
                shape.packed_bytes()
            )));
        }
        let tensor = BitTensor { shape, data };
        if !tensor.view().padding_is_clear() {
            return Err(Error::invalid("non-zero pad bits in packed rows"));
        }
        Ok(tensor)
    }

    /// Packs ±1 values laid out channel, row, column.
    pub fn from_signs(shape: Shape, values: &[i8]) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::invalid(format!(
                "{} values do not fill shape {shape}",
                values.len()
            )));
        }
        let mut t = BitTensor::zeros(shape)?;
        let rows = values.chunks(shape.width.max(1));
        for (r, row) in rows.enumerate().take(shape.channels * shape.height) {
            let packed = pack_row(row)?;
            let stride = shape.row_stride();
            t.data[r * stride..(r + 1) * stride].copy_from_slice(&packed);
        }
        Ok(t)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn row_stride(&self) -> usize {
        self.shape.row_stride()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn view(&self) -> BitView<'_> {
        BitView {
            shape: self.shape,
            data: &self.data,
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> bool {
        self.view().get(c, y, x)
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, bit: bool) {
        let stride = self.row_stride();
        let row = (c * self.shape.height + y) * stride;
        set_bit(&mut self.data[row..row + stride], x, bit);
    }

    pub fn row(&self, c: usize, y: usize) -> &[u8] {
        self.view().row(c, y)
    }

    /// Unpacks to ±1 values, channel, row, column order.
    pub fn to_signs(&self) -> Vec<i8> {
        self.view().to_signs()
    }
}

fn check_width(width: usize) -> Result<()> {
    if width > MAX_ROW_BITS {
        return Err(Error::invalid(format!(
            "row width {width} exceeds {MAX_ROW_BITS} bits"
        )));
    }
    Ok(())
}

/// Borrowed bit-packed tensor, as read out of an inference arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitView<'a> {
    pub shape: Shape,
    pub data: &'a [u8],
}

impl<'a> BitView<'a> {
    pub fn new(shape: Shape, data: &'a [u8]) -> Result<Self> {
        if data.len() != shape.packed_bytes() {
            return Err(Error::invalid(format!(
                "{} bytes do not match shape {shape}",
                data.len()
            )));
        }
        Ok(BitView { shape, data })
    }

    #[inline]
    pub fn row(&self, c: usize, y: usize) -> &'a [u8] {
        let stride = self.shape.row_stride();
        let start = (c * self.shape.height + y) * stride;
        &self.data[start..start + stride]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> bool {
        get_bit(self.row(c, y), x)
    }

    pub fn to_signs(&self) -> Vec<i8> {
        let s = self.shape;
        let mut out = Vec::with_capacity(s.len());
        for c in 0..s.channels {
            for y in 0..s.height {
                out.extend(unpack_row(self.row(c, y), s.width));
            }
        }
        out
    }

    pub fn to_owned(&self) -> BitTensor {
        BitTensor {
            shape: self.shape,
            data: self.data.to_vec(),
        }
    }

    fn padding_is_clear(&self) -> bool {
        let rem = self.shape.width % 8;
        if rem == 0 || self.shape.row_stride() == 0 {
            return true;
        }
        let mask = !((1u8 << rem) - 1);
        self.data
            .chunks(self.shape.row_stride())
            .all(|row| row[row.len() - 1] & mask == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent scalar packer: one bit at a time, no chunking.
    fn scalar_pack(values: &[i8]) -> Vec<u8> {
        let mut out = Vec::new();
        for (i, &v) in values.iter().enumerate() {
            if i % 8 == 0 {
                out.push(0u8);
            }
            if v == 1 {
                let last = out.len() - 1;
                out[last] += 1 << (i % 8);
            }
        }
        out
    }

    fn scalar_dot(a: &[i8], b: &[i8]) -> i32 {
        a.iter().zip(b).map(|(&x, &y)| x as i32 * y as i32).sum()
    }

    #[test]
    fn pack_all_ones_and_all_minus_ones() {
        assert_eq!(pack_row(&[1; 8]).unwrap(), vec![0xFF]);
        assert_eq!(pack_row(&[-1; 8]).unwrap(), vec![0x00]);
    }

    #[test]
    fn pack_width_three_matches_scalar_packer() {
        let v = [1, -1, 1];
        let expected = scalar_pack(&v);
        assert_eq!(expected, vec![0b0000_0101]);
        assert_eq!(pack_row(&v).unwrap(), expected);
    }

    #[test]
    fn pack_rejects_non_sign_values() {
        assert!(matches!(pack_row(&[1, 0, -1]), Err(Error::InvalidInput(_))));
        assert!(pack_row(&[2]).is_err());
    }

    #[test]
    fn dot_identical_and_complement() {
        let a: Vec<u8> = (0..8).map(|i| (i * 37 + 11) as u8).collect();
        let b: Vec<u8> = a.iter().map(|x| !x).collect();
        assert_eq!(xnor_popcount_dot(&a, &a, 64).unwrap(), 64);
        assert_eq!(xnor_popcount_dot(&a, &b, 64).unwrap(), -64);
    }

    #[test]
    fn dot_four_bit_example() {
        // bits written most significant first: 1011 and 1001
        let a_vals = [1i8, -1, 1, 1];
        let b_vals = [1i8, -1, -1, 1];
        let oracle = scalar_dot(&a_vals, &b_vals);
        assert_eq!(oracle, 2);
        let a = pack_row(&a_vals).unwrap();
        let b = pack_row(&b_vals).unwrap();
        assert_eq!(xnor_popcount_dot(&a, &b, 4).unwrap(), oracle);
    }

    #[test]
    fn dot_rejects_mismatched_lengths() {
        assert!(xnor_popcount_dot(&[0, 0], &[0], 9).is_err());
        assert!(xnor_popcount_dot(&[0], &[0], 9).is_err());
    }

    #[test]
    fn activation_signs_and_tie() {
        assert_eq!(binary_activation(-3.2).unwrap(), SignBit::Neg);
        assert_eq!(binary_activation(0.5).unwrap(), SignBit::Pos);
        assert_eq!(binary_activation(0.0).unwrap(), SignBit::Pos);
        assert_eq!(binary_activation(-0.0).unwrap(), SignBit::Pos);
        assert!(binary_activation(f32::NAN).is_err());
        assert!(binary_activation(f32::INFINITY).is_err());
    }

    #[test]
    fn tensor_rejects_dirty_padding() {
        let shape = Shape::new(1, 1, 3);
        assert!(BitTensor::from_bytes(shape, vec![0b0000_0111]).is_ok());
        assert!(BitTensor::from_bytes(shape, vec![0b0000_1111]).is_err());
        assert!(BitTensor::from_bytes(shape, vec![0, 0]).is_err());
    }

    #[test]
    fn tensor_set_get() {
        let mut t = BitTensor::zeros(Shape::new(2, 3, 10)).unwrap();
        assert_eq!(t.as_bytes().len(), 2 * 3 * 2);
        t.set(1, 2, 9, true);
        assert!(t.get(1, 2, 9));
        assert!(!t.get(1, 2, 8));
        assert_eq!(t.row(1, 2), &[0, 0b10]);
        t.set(1, 2, 9, false);
        assert!(t.as_bytes().iter().all(|&b| b == 0));
    }

    #[test]
    fn width_limit() {
        assert!(BitTensor::zeros(Shape::new(1, 1, MAX_ROW_BITS)).is_ok());
        assert!(BitTensor::zeros(Shape::new(1, 1, MAX_ROW_BITS + 1)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn signs(max: usize) -> impl Strategy<Value = Vec<i8>> {
            prop::collection::vec(prop::bool::ANY, 1..=max)
                .prop_map(|v| v.into_iter().map(|b| if b { 1 } else { -1 }).collect())
        }

        fn sign_pair(max: usize) -> impl Strategy<Value = (Vec<i8>, Vec<i8>)> {
            (1..=max).prop_flat_map(|n| {
                let one = prop::collection::vec(prop::bool::ANY, n)
                    .prop_map(|v| v.into_iter().map(|b| if b { 1 } else { -1 }).collect());
                (one.clone(), one)
            })
        }

        proptest! {
            #[test]
            fn pack_round_trip(v in signs(1024)) {
                let packed = pack_row(&v).unwrap();
                prop_assert_eq!(&packed, &scalar_pack(&v));
                prop_assert_eq!(unpack_row(&packed, v.len()), v);
            }

            #[test]
            fn dot_matches_scalar((a, b) in sign_pair(512)) {
                let n = a.len();
                let pa = pack_row(&a).unwrap();
                let pb = pack_row(&b).unwrap();
                let d = xnor_popcount_dot(&pa, &pb, n).unwrap();
                prop_assert_eq!(d, scalar_dot(&a, &b));
                prop_assert_eq!(d, xnor_popcount_dot(&pb, &pa, n).unwrap());
                prop_assert!(d.unsigned_abs() as usize <= n);
                prop_assert_eq!((d - n as i32).rem_euclid(2), 0);
            }

            #[test]
            fn unaligned_dot_matches_scalar(
                (a, b) in sign_pair(300),
                a_pre in 0usize..20,
                b_pre in 0usize..20,
            ) {
                let mut a_full = vec![-1i8; a_pre];
                a_full.extend(&a);
                let mut b_full = vec![1i8; b_pre];
                b_full.extend(&b);
                let pa = pack_row(&a_full).unwrap();
                let pb = pack_row(&b_full).unwrap();
                prop_assert_eq!(dot_bits(&pa, a_pre, &pb, b_pre, a.len()), scalar_dot(&a, &b));
            }
        }
    }
}
