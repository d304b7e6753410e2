//! MSB-position magnitude proxy and the soft-sparsity dot product.
//!
//! The position of the highest set bit of `|x|` is `floor(log2 |x|)`, so the
//! sum of two operand positions brackets the magnitude of their product:
//! `2^(p_a + p_b) <= |a * b| < 2^(p_a + p_b + 2)`. Comparing these sums lets a
//! window of products be ranked without multiplying anything, and products
//! that sit `t_int` or more positions below the largest one are skipped.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::PruneError;

/// Highest-set-bit position of an integer magnitude, or `Zero` for 0.
///
/// `Zero` orders strictly below every position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MsbMagnitude {
    Zero,
    Pos(u8),
}

impl MsbMagnitude {
    pub fn position(self) -> Option<u8> {
        match self {
            MsbMagnitude::Zero => None,
            MsbMagnitude::Pos(p) => Some(p),
        }
    }

    pub fn is_zero(self) -> bool {
        self == MsbMagnitude::Zero
    }
}

impl fmt::Display for MsbMagnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MsbMagnitude::Zero => f.write_str("zero"),
            MsbMagnitude::Pos(p) => write!(f, "{p}"),
        }
    }
}

/// Sum of the two operand MSB positions of a product, or `Zero` when either
/// operand is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProductMagnitude {
    Zero,
    Sum(u8),
}

impl ProductMagnitude {
    pub fn sum(self) -> Option<u8> {
        match self {
            ProductMagnitude::Zero => None,
            ProductMagnitude::Sum(s) => Some(s),
        }
    }

    pub fn is_zero(self) -> bool {
        self == ProductMagnitude::Zero
    }

    /// Gap `max - self` in MSB units; `None` if either side is `Zero`.
    pub fn gap_below(self, max: ProductMagnitude) -> Option<u32> {
        match (max, self) {
            (ProductMagnitude::Sum(m), ProductMagnitude::Sum(s)) if m >= s => {
                Some(u32::from(m - s))
            }
            _ => None,
        }
    }

    pub(crate) fn from_code(code: i16) -> Self {
        if code < 0 {
            ProductMagnitude::Zero
        } else {
            ProductMagnitude::Sum(code as u8)
        }
    }
}

impl fmt::Display for ProductMagnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProductMagnitude::Zero => f.write_str("zero"),
            ProductMagnitude::Sum(s) => write!(f, "{s}"),
        }
    }
}

/// Highest-set-bit position of `|x|`.
///
/// `i32::MIN` has no positive counterpart; its magnitude saturates to `2^31`
/// and maps to position 31.
pub fn msb_pos(x: i32) -> MsbMagnitude {
    if x == 0 {
        MsbMagnitude::Zero
    } else {
        MsbMagnitude::Pos((31 - x.unsigned_abs().leading_zeros()) as u8)
    }
}

pub fn product_magnitude(a: i32, b: i32) -> ProductMagnitude {
    match (msb_pos(a), msb_pos(b)) {
        (MsbMagnitude::Pos(pa), MsbMagnitude::Pos(pb)) => ProductMagnitude::Sum(pa + pb),
        _ => ProductMagnitude::Zero,
    }
}

/// Skip threshold in MSB units.
///
/// A product whose magnitude sum lies `t_int` or more below the window
/// maximum is skipped; anything closer is multiplied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneThreshold {
    t_int: u32,
    fraction: Option<f64>,
}

impl PruneThreshold {
    /// Threshold given directly in MSB units. `t_int = 0` would drop even the
    /// dominant product, so it is rejected.
    pub fn new(t_int: u32) -> Result<Self, PruneError> {
        if t_int == 0 {
            return Err(PruneError::ZeroThreshold);
        }
        Ok(Self {
            t_int,
            fraction: None,
        })
    }

    /// Threshold for a relative tolerance `f`: `ceil(log2(1/f))`.
    ///
    /// Computed as the least `t` with `f * 2^t >= 1`; scaling by a power of
    /// two is exact in binary floating point, so boundaries such as
    /// `f = 0.25` land on the right integer.
    pub fn from_fraction(f: f64) -> Result<Self, PruneError> {
        if !(f > 0.0 && f < 1.0) {
            return Err(PruneError::FractionOutOfRange(f));
        }
        let mut t = 0u32;
        let mut scaled = f;
        while scaled < 1.0 {
            scaled *= 2.0;
            t += 1;
        }
        Ok(Self {
            t_int: t,
            fraction: Some(f),
        })
    }

    pub fn t_int(&self) -> u32 {
        self.t_int
    }

    pub fn fraction(&self) -> Option<f64> {
        self.fraction
    }

    /// Short label such as `f:0.05` or `t:7`.
    pub fn label(&self) -> String {
        match self.fraction {
            Some(f) => format!("f:{f}"),
            None => format!("t:{}", self.t_int),
        }
    }
}

/// Parses the [`PruneThreshold::label`] syntax: `f:0.05` or `t:7`.
impl FromStr for PruneThreshold {
    type Err = PruneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PruneError::BadSpec(s.to_string());
        match s.trim().split_once(':') {
            Some(("f", v)) => Self::from_fraction(v.trim().parse().map_err(|_| bad())?),
            Some(("t", v)) => Self::new(v.trim().parse().map_err(|_| bad())?),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for PruneThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.fraction {
            Some(frac) => write!(f, "f={frac} (T={})", self.t_int),
            None => write!(f, "T={}", self.t_int),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneOutcome {
    pub sum: i64,
    pub kept_mask: Vec<bool>,
    pub mults_performed: u32,
    pub msb_max: ProductMagnitude,
}

/// Approximate `sum(a_i * b_i)`, multiplying only the pairs whose magnitude
/// sum is within `threshold.t_int()` of the window maximum.
pub fn approx_dot(
    pairs: &[(i32, i32)],
    threshold: PruneThreshold,
) -> Result<PruneOutcome, PruneError> {
    if pairs.is_empty() {
        return Err(PruneError::EmptyInput);
    }
    let (acts, wts): (Vec<i32>, Vec<i32>) = pairs.iter().copied().unzip();
    let act_codes: Vec<i16> = acts.iter().map(|&a| msb_code(a)).collect();
    let wt_codes: Vec<i16> = wts.iter().map(|&w| msb_code(w)).collect();
    let mut kept_mask = vec![false; pairs.len()];
    let r = prune_accumulate(
        &acts,
        &wts,
        &act_codes,
        &wt_codes,
        threshold.t_int,
        Some(&mut kept_mask),
    );
    Ok(PruneOutcome {
        sum: r.sum,
        kept_mask,
        mults_performed: r.performed,
        msb_max: ProductMagnitude::from_code(r.max_code),
    })
}

/// Sentinel code for a zero operand. Any sum involving it stays negative, so a
/// product code `< 0` means "zero product" without a branch per operand.
pub(crate) const ZERO_CODE: i16 = -1024;

/// Compact MSB encoding used on the hot path: position, or [`ZERO_CODE`].
#[inline]
pub(crate) fn msb_code(x: i32) -> i16 {
    if x == 0 {
        ZERO_CODE
    } else {
        (31 - x.unsigned_abs().leading_zeros()) as i16
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PrunedSum {
    pub sum: i64,
    pub performed: u32,
    pub nonzero: u32,
    pub max_code: i16,
}

/// Shared decision kernel for [`approx_dot`] and the convolution engine.
///
/// Pass 1 forms every product code and takes the maximum; pass 2 multiplies
/// only pairs with `code >= 0 && max - code < t`.
#[inline]
pub(crate) fn prune_accumulate(
    acts: &[i32],
    wts: &[i32],
    act_codes: &[i16],
    wt_codes: &[i16],
    t_int: u32,
    mut kept: Option<&mut [bool]>,
) -> PrunedSum {
    debug_assert_eq!(acts.len(), wts.len());
    debug_assert_eq!(acts.len(), act_codes.len());
    debug_assert_eq!(acts.len(), wt_codes.len());

    let mut max_code = ZERO_CODE;
    let mut nonzero = 0u32;
    for (&ca, &cw) in act_codes.iter().zip(wt_codes) {
        let m = ca + cw;
        if m >= 0 {
            nonzero += 1;
            if m > max_code {
                max_code = m;
            }
        }
    }
    if max_code < 0 {
        if let Some(mask) = kept {
            mask.fill(false);
        }
        return PrunedSum {
            sum: 0,
            performed: 0,
            nonzero: 0,
            max_code: ZERO_CODE,
        };
    }

    // keep iff max - m < t  <=>  m > max - t
    let floor = i32::from(max_code) - t_int.min(i32::MAX as u32) as i32;
    let mut sum = 0i64;
    let mut performed = 0u32;
    for i in 0..acts.len() {
        let m = act_codes[i] + wt_codes[i];
        let keep = m >= 0 && i32::from(m) > floor;
        if keep {
            sum += i64::from(acts[i]) * i64::from(wts[i]);
            performed += 1;
        }
        if let Some(mask) = kept.as_deref_mut() {
            mask[i] = keep;
        }
    }
    PrunedSum {
        sum,
        performed,
        nonzero,
        max_code,
    }
}
