//! Integer-lattice grid scans: a single exhaustive level, and the
//! coarse-to-fine pyramid built from repeated levels.
//!
//! Candidates are enumerated in lexicographic order with the last axis
//! varying fastest. Within a scan the best candidate is the highest score,
//! ties going to the earliest in that order. Evaluation runs in parallel but
//! the reduction only compares `(score, scan index)` pairs, so the outcome
//! does not depend on the thread count.

use rayon::prelude::*;

/// Step sizes of the three pyramid levels.
pub const PYRAMID_STEPS: [i64; 3] = [15, 5, 1];

/// Inclusive range `lo..=hi` visited at `lo, lo + step, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisScan {
    pub lo: i64,
    pub hi: i64,
    pub step: i64,
}

impl AxisScan {
    pub fn len(&self) -> usize {
        if self.hi < self.lo || self.step <= 0 {
            0
        } else {
            ((self.hi - self.lo) / self.step + 1) as usize
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value(&self, k: usize) -> i64 {
        self.lo + k as i64 * self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanBest<const D: usize> {
    pub point: [i64; D],
    pub score: f64,
    pub evaluations: usize,
}

pub fn candidate_count<const D: usize>(axes: &[AxisScan; D]) -> usize {
    axes.iter().map(AxisScan::len).product()
}

fn decode<const D: usize>(axes: &[AxisScan; D], mut index: usize) -> [i64; D] {
    let mut point = [0; D];
    for d in (0..D).rev() {
        let n = axes[d].len();
        point[d] = axes[d].value(index % n);
        index /= n;
    }
    point
}

fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if a.0 > b.0 || (a.0 == b.0 && a.1 <= b.1) {
        a
    } else {
        b
    }
}

/// Exhaustive scan of one lattice. `None` when some axis is empty.
pub fn scan<const D: usize, F>(axes: &[AxisScan; D], eval: &F) -> Option<ScanBest<D>>
where
    F: Fn([i64; D]) -> f64 + Sync,
{
    let total = candidate_count(axes);
    if total == 0 {
        return None;
    }
    let (score, index) = (0..total)
        .into_par_iter()
        .map(|i| (eval(decode(axes, i)), i))
        .reduce(|| (f64::NEG_INFINITY, usize::MAX), better);
    // All scores NaN would leave the identity in place.
    let index = if index == usize::MAX { 0 } else { index };
    Some(ScanBest {
        point: decode(axes, index),
        score,
        evaluations: total,
    })
}

/// Incumbent after one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelBest<const D: usize> {
    pub step: i64,
    pub point: [i64; D],
    pub score: f64,
    pub evaluations: usize,
}

/// Coarse-to-fine search over `domain` (inclusive bounds per axis).
///
/// Each level scans the current ranges at its step. A level's best replaces
/// the incumbent only with a strictly greater score. The next ranges are
/// `incumbent +- step`, clamped to `domain`.
pub fn pyramid<const D: usize, F>(
    domain: &[(i64, i64); D],
    steps: &[i64],
    eval: &F,
) -> Vec<LevelBest<D>>
where
    F: Fn([i64; D]) -> f64 + Sync,
{
    pyramid_wrapped(domain, &[false; D], &|p| p, steps, eval)
}

/// [`pyramid`] on a lattice whose `wrapped` axes are charts of a cyclic
/// parameter. Windows on those axes are not clamped; every candidate goes
/// through `canon`, which must map any lattice point (including ones a
/// window pushed past the domain) to an equivalent point inside it. Axes
/// that are not wrapped are clamped as usual, but `canon` may still move
/// them, as when crossing a seam mirrors another coordinate.
///
/// Windows are scanned in unwrapped order, so ties still go to the earliest
/// candidate of each window.
pub fn pyramid_wrapped<const D: usize, F, C>(
    domain: &[(i64, i64); D],
    wrapped: &[bool; D],
    canon: &C,
    steps: &[i64],
    eval: &F,
) -> Vec<LevelBest<D>>
where
    F: Fn([i64; D]) -> f64 + Sync,
    C: Fn([i64; D]) -> [i64; D] + Sync,
{
    assert!(
        domain.iter().all(|(lo, hi)| lo <= hi),
        "empty search domain"
    );
    let canonical_eval = |point: [i64; D]| eval(canon(point));
    let mut ranges = *domain;
    let mut incumbent: Option<([i64; D], f64)> = None;
    let mut trace = Vec::with_capacity(steps.len());
    for &step in steps {
        let axes = ranges.map(|(lo, hi)| AxisScan { lo, hi, step });
        let best = scan(&axes, &canonical_eval).expect("pyramid ranges are never empty");
        let (point, score) = match incumbent {
            Some((p, s)) if best.score <= s => (p, s),
            _ => (canon(best.point), best.score),
        };
        incumbent = Some((point, score));
        trace.push(LevelBest {
            step,
            point,
            score,
            evaluations: best.evaluations,
        });
        for d in 0..D {
            let (lo, hi) = domain[d];
            ranges[d] = if wrapped[d] && 2 * step < hi - lo + 1 {
                (point[d] - step, point[d] + step)
            } else {
                ((point[d] - step).max(lo), (point[d] + step).min(hi))
            };
        }
    }
    trace
}
