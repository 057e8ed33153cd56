//! Reference implementations written separately from the library code.

use std::collections::{BTreeMap, BTreeSet};

/// Pacing reference state: (pace, comprehension, steady, ssthresh).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefPacing {
    pub pace: f64,
    pub comprehension: f64,
    pub steady: bool,
    pub ssthresh: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct RefParams {
    pub alpha: f64,
    pub beta: f64,
    pub hi: f64,
    pub lo: f64,
    pub lambda: f64,
    pub floor: f64,
}

impl RefPacing {
    pub fn start(floor: f64, ssthresh: f64, prior: f64) -> Self {
        RefPacing {
            pace: floor,
            comprehension: prior,
            steady: false,
            ssthresh,
        }
    }

    /// One quiz outcome. Comprehension is `(1 - lambda) * c + lambda * a`,
    /// the same operation order the controller is required to use.
    pub fn step(self, p: &RefParams, a: f64) -> Self {
        let mut n = self;
        n.comprehension = (1.0 - p.lambda) * self.comprehension + p.lambda * a;
        if a >= p.hi {
            if self.steady {
                n.pace = self.pace + p.alpha;
            } else {
                let doubled = self.pace * 2.0;
                n.pace = if doubled < self.ssthresh {
                    doubled
                } else {
                    self.ssthresh
                };
                n.steady = n.pace == self.ssthresh;
            }
        } else if a < p.lo {
            let cut = p.beta * self.pace;
            n.pace = if cut > p.floor { cut } else { p.floor };
            n.ssthresh = n.pace;
            n.steady = true;
        }
        n
    }

    pub fn new_topic(self, p: &RefParams) -> Self {
        let half = self.pace / 2.0;
        RefPacing {
            pace: p.floor,
            steady: false,
            ssthresh: if half > p.floor { half } else { p.floor },
            ..self
        }
    }
}

/// Whole days between two instants, by counting day boundaries one at a time.
pub fn days_by_counting(assigned: i64, answered: i64) -> i64 {
    let mut days = 0;
    let mut t = assigned + 86_400;
    while t <= answered {
        days += 1;
        t += 86_400;
    }
    days
}

/// Competition ranks by brute force: 1 + the number of strictly higher scores.
/// Rows ordered by descending score then actor id.
pub fn ranks_by_counting(scores: &BTreeMap<String, i64>) -> Vec<(usize, String, i64)> {
    let mut rows: Vec<(usize, String, i64)> = scores
        .iter()
        .map(|(a, s)| (1 + scores.values().filter(|o| **o > *s).count(), a.clone(), *s))
        .collect();
    rows.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.cmp(&y.1)));
    rows
}

/// Mean and population variance by exact rational arithmetic on integers.
/// Returns (mean numerator, variance numerator, denominator n, n * n).
pub fn exact_moments(values: &[i64]) -> (i128, i128, i128, i128) {
    let n = values.len() as i128;
    let sum: i128 = values.iter().map(|v| *v as i128).sum();
    // variance = (n * sum(x^2) - sum^2) / n^2
    let sq: i128 = values.iter().map(|v| (*v as i128) * (*v as i128)).sum();
    (sum, n * sq - sum * sum, n, n * n)
}

fn words(s: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut cur = String::new();
    for c in s.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

/// Word-set overlap as (shared, total distinct).
pub fn overlap(a: &str, b: &str) -> (usize, usize) {
    let (x, y) = (words(a), words(b));
    (x.intersection(&y).count(), x.union(&y).count())
}

/// Difficulty after one session, on the 1..10 scale.
pub fn next_difficulty(d: f64, accuracy: f64) -> f64 {
    let target = 10.0 - 9.0 * accuracy;
    (0.75 * d + 0.25 * target).clamp(1.0, 10.0)
}
