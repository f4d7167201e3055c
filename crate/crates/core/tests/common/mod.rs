//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use ndarray::Array4;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

/// Exhaustive Otsu scan in exact rational arithmetic: between-class
/// variance `ω₁ω₂(μ₁ − μ₂)²` for every cut, smallest maximizing cut wins.
pub fn otsu_oracle(hist: &[u64]) -> usize {
    let n: u64 = hist.iter().sum();
    let total = BigRational::from_integer(BigInt::from(n));
    let mut best: Option<(BigRational, usize)> = None;
    for t in 1..hist.len() {
        let (lower, upper) = hist.split_at(t);
        let c1: u64 = lower.iter().sum();
        let c2: u64 = upper.iter().sum();
        let var = if c1 == 0 || c2 == 0 {
            BigRational::zero()
        } else {
            let moment = |h: &[u64], off: usize| -> BigInt {
                h.iter().enumerate().map(|(i, &c)| BigInt::from((i + off) as u64) * BigInt::from(c)).sum()
            };
            let r = |x: u64| BigRational::from_integer(BigInt::from(x));
            let w1 = r(c1) / &total;
            let w2 = r(c2) / &total;
            let mu1 = BigRational::from_integer(moment(lower, 0)) / r(c1);
            let mu2 = BigRational::from_integer(moment(upper, t)) / r(c2);
            let d = mu1 - mu2;
            w1 * w2 * &d * &d
        };
        if best.as_ref().is_none_or(|(b, _)| var > *b) {
            best = Some((var, t));
        }
    }
    best.map(|b| b.1).unwrap_or(1)
}

/// Linear `k`-bin histogram between min and max, computed without the
/// library's binning helper.
pub fn histogram(values: &[f64], k: usize) -> Vec<u64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut h = vec![0u64; k];
    for &x in values {
        let b = ((x - lo) / (hi - lo) * k as f64).floor();
        let b = if b < 0.0 { 0 } else if b as usize >= k { k - 1 } else { b as usize };
        h[b] += 1;
    }
    h
}

/// Breadth-first flood fill; each component as a sorted cell set.
pub fn flood_fill(pb: &Array4<u8>) -> BTreeSet<BTreeSet<[usize; 4]>> {
    let s = pb.shape().to_vec();
    let mut seen = Array4::<bool>::from_elem(pb.raw_dim(), false);
    let mut out = BTreeSet::new();
    for ((a, b, c, d), &v) in pb.indexed_iter() {
        if v == 0 || seen[[a, b, c, d]] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([[a, b, c, d]]);
        seen[[a, b, c, d]] = true;
        while let Some(cell) = queue.pop_front() {
            comp.insert(cell);
            for ax in 0..4 {
                for delta in [-1i64, 1] {
                    let x = cell[ax] as i64 + delta;
                    if x < 0 || x >= s[ax] as i64 {
                        continue;
                    }
                    let mut n = cell;
                    n[ax] = x as usize;
                    if pb[n] != 0 && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        out.insert(comp);
    }
    out
}
