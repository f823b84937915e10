//! Statistical kernels: pooled two-sample t-test, two-sided critical values,
//! logistic propensity scores fit by IRLS, and nearest-neighbour matching.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub dof: f64,
    pub p_two_sided: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sum_sq_dev(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m).powi(2)).sum()
}

/// Student's two-sample t-test with pooled variance.
///
/// Zero pooled variance gives `t = 0, p = 1` for equal means and `t = +∞, p = 0`
/// otherwise, so degenerate samples reject at every confidence level.
pub fn students_t(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Insufficient(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let dof = na + nb - 2.0;
    let pooled = (sum_sq_dev(a, ma) + sum_sq_dev(b, mb)) / dof;
    let diff = ma - mb;
    if pooled == 0.0 {
        let (t, p) = if diff == 0.0 { (0.0, 1.0) } else { (f64::INFINITY, 0.0) };
        return Ok(TTestResult { t, dof, p_two_sided: p });
    }
    let t = diff / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, dof).expect("dof > 0");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTestResult {
        t,
        dof,
        p_two_sided: p,
    })
}

/// Two-sided critical value: the `1 - (1 - ci/100)/2` quantile of Student's t.
pub fn t_critical(ci: f64, dof: f64) -> Result<f64> {
    if !(ci > 0.0 && ci < 100.0) {
        return Err(Error::param("ci", format!("confidence level must be in (0, 100), got {ci}")));
    }
    if !(dof >= 1.0) {
        return Err(Error::param("dof", format!("degrees of freedom must be >= 1, got {dof}")));
    }
    let q = 1.0 - (1.0 - ci / 100.0) / 2.0;
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::param("dof", e.to_string()))?;
    Ok(dist.inverse_cdf(q))
}

/// One unit in a treatment-vs-control comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit<'a> {
    pub treated: bool,
    pub confounder: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    /// `P(treated | confounder)` per unit; `None` for units in categories
    /// where only one group is present.
    pub scores: Vec<Option<f64>>,
    pub unmatchable: Vec<String>,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub log_likelihood: f64,
}

pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_TOL: f64 = 1e-8;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(y: &[f64], p: &[f64]) -> f64 {
    y.iter()
        .zip(p)
        .map(|(&yi, &pi)| {
            let pi = pi.clamp(1e-300, 1.0 - 1e-16);
            yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln()
        })
        .sum()
}

/// Logistic regression by iteratively reweighted least squares.
///
/// `x` must already contain the intercept column. Returns the coefficients,
/// fitted probabilities, iteration count and final log-likelihood.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64]) -> Result<(DVector<f64>, Vec<f64>, usize, f64)> {
    let (n, k) = x.shape();
    if n != y.len() {
        return Err(Error::LengthMismatch { expected: n, got: y.len() });
    }
    let yv = DVector::from_column_slice(y);
    let mut beta = DVector::zeros(k);
    let mut probs = vec![0.5; n];
    let mut ll = log_likelihood(y, &probs);
    let mut iterations = 0;
    while iterations < IRLS_MAX_ITER {
        iterations += 1;
        let weights: Vec<f64> = probs.iter().map(|p| (p * (1.0 - p)).max(1e-12)).collect();
        let mut xtwx = DMatrix::zeros(k, k);
        for (i, w) in weights.iter().enumerate() {
            let row = x.row(i);
            xtwx += row.transpose() * row * *w;
        }
        let resid = &yv - DVector::from_column_slice(&probs);
        let grad = x.transpose() * resid;
        let step = xtwx
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or_else(|| Error::Degenerate("propensity design matrix is singular".into()))?;
        beta += step;
        let eta = x * &beta;
        probs = eta.iter().map(|z| sigmoid(*z)).collect();
        let next = log_likelihood(y, &probs);
        let converged = (next - ll).abs() < IRLS_TOL;
        ll = next;
        if converged {
            break;
        }
    }
    Ok((beta, probs, iterations, ll))
}

/// Propensity of treatment given a categorical confounder.
///
/// Categories where every unit is treated (or every unit is control) violate
/// positivity; their units get no score and are reported as unmatchable.
pub fn propensity(units: &[Unit<'_>]) -> Result<PropensityFit> {
    let n_treated = units.iter().filter(|u| u.treated).count();
    if n_treated == 0 || n_treated == units.len() {
        return Err(Error::Insufficient(
            "propensity needs both treated and control units".into(),
        ));
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for u in units {
        let c = counts.entry(u.confounder).or_default();
        if u.treated {
            c.0 += 1;
        } else {
            c.1 += 1;
        }
    }
    let unmatchable: Vec<String> = counts
        .iter()
        .filter(|(_, (t, c))| *t == 0 || *c == 0)
        .map(|(k, _)| k.to_string())
        .collect();
    if !unmatchable.is_empty() {
        warn!("excluding categories without overlap: {}", unmatchable.join(", "));
    }
    let levels: Vec<&str> = counts
        .iter()
        .filter(|(_, (t, c))| *t > 0 && *c > 0)
        .map(|(k, _)| *k)
        .collect();
    if levels.is_empty() {
        return Err(Error::Insufficient("no category contains both groups".into()));
    }
    let column: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let kept: Vec<usize> = (0..units.len())
        .filter(|&i| column.contains_key(units[i].confounder))
        .collect();

    // Intercept plus one-hot indicators with the first level as reference.
    let k = levels.len();
    let mut x = DMatrix::zeros(kept.len(), k);
    let mut y = Vec::with_capacity(kept.len());
    for (r, &i) in kept.iter().enumerate() {
        x[(r, 0)] = 1.0;
        let c = column[units[i].confounder];
        if c > 0 {
            x[(r, c)] = 1.0;
        }
        y.push(if units[i].treated { 1.0 } else { 0.0 });
    }
    let (beta, probs, iterations, ll) = fit_logistic(&x, &y)?;

    // A fitted score per category; every unit in a category shares it exactly.
    let mut by_level: BTreeMap<&str, f64> = BTreeMap::new();
    for (r, &i) in kept.iter().enumerate() {
        by_level.entry(units[i].confounder).or_insert(probs[r]);
    }
    let scores = units
        .iter()
        .map(|u| by_level.get(u.confounder).copied())
        .collect();
    Ok(PropensityFit {
        scores,
        unmatchable,
        coefficients: beta.iter().copied().collect(),
        iterations,
        log_likelihood: ll,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated: usize,
    /// Nearest control, smallest index among ties.
    pub control: usize,
    /// Every control at the nearest distance (same-category ones when available).
    pub ties: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchedSample {
    pub pairs: Vec<MatchedPair>,
    /// Treated units without a score (outside common support).
    pub excluded: usize,
}

impl MatchedSample {
    /// Mean over treated units of `outcome[treated] - mean(outcome[ties])`.
    pub fn att(&self, outcome: &[f64]) -> Result<f64> {
        if self.pairs.is_empty() {
            return Err(Error::Insufficient("no matched pairs".into()));
        }
        let total: f64 = self
            .pairs
            .iter()
            .map(|p| {
                let control = p.ties.iter().map(|&c| outcome[c]).sum::<f64>() / p.ties.len() as f64;
                outcome[p.treated] - control
            })
            .sum();
        Ok(total / self.pairs.len() as f64)
    }

    pub fn treated_mean(&self, outcome: &[f64]) -> f64 {
        self.pairs.iter().map(|p| outcome[p.treated]).sum::<f64>() / self.pairs.len() as f64
    }

    pub fn control_mean(&self, outcome: &[f64]) -> f64 {
        self.pairs
            .iter()
            .map(|p| p.ties.iter().map(|&c| outcome[c]).sum::<f64>() / p.ties.len() as f64)
            .sum::<f64>()
            / self.pairs.len() as f64
    }
}

/// Nearest-neighbour matching on propensity score, with replacement.
///
/// Among controls at the minimum score distance, those sharing the treated
/// unit's confounder value are preferred, so a categorical confounder reduces
/// to exact matching within category.
pub fn psm_match(units: &[Unit<'_>], scores: &[Option<f64>]) -> Result<MatchedSample> {
    if units.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: units.len(),
            got: scores.len(),
        });
    }
    // score bits → confounder → control indices (ascending).
    let mut groups: BTreeMap<u64, (f64, BTreeMap<&str, Vec<usize>>)> = BTreeMap::new();
    let mut any_control = false;
    for (i, (u, s)) in units.iter().zip(scores).enumerate() {
        if u.treated {
            continue;
        }
        any_control = true;
        if let Some(s) = s {
            groups
                .entry(order_key(*s))
                .or_insert_with(|| (*s, BTreeMap::new()))
                .1
                .entry(u.confounder)
                .or_default()
                .push(i);
        }
    }
    if !any_control {
        return Err(Error::Insufficient("matching needs at least one control".into()));
    }

    let mut out = MatchedSample::default();
    for (i, (u, s)) in units.iter().zip(scores).enumerate() {
        if !u.treated {
            continue;
        }
        let Some(s) = *s else {
            out.excluded += 1;
            continue;
        };
        let key = order_key(s);
        let below = groups.range(..=key).next_back();
        let above = groups.range(key..).next();
        let candidates: Vec<&(f64, BTreeMap<&str, Vec<usize>>)> = match (below, above) {
            (None, None) => {
                out.excluded += 1;
                continue;
            }
            (Some((_, g)), None) | (None, Some((_, g))) => vec![g],
            (Some((kb, gb)), Some((ka, ga))) => {
                let (db, da) = ((s - gb.0).abs(), (ga.0 - s).abs());
                if kb == ka || db < da {
                    vec![gb]
                } else if da < db {
                    vec![ga]
                } else {
                    vec![gb, ga]
                }
            }
        };
        let same: Vec<usize> = candidates
            .iter()
            .filter_map(|g| g.1.get(u.confounder))
            .flatten()
            .copied()
            .collect();
        let mut ties = if same.is_empty() {
            candidates
                .iter()
                .flat_map(|g| g.1.values().flatten().copied())
                .collect()
        } else {
            same
        };
        ties.sort_unstable();
        out.pairs.push(MatchedPair {
            treated: i,
            control: ties[0],
            ties,
        });
    }
    Ok(out)
}

/// Monotone map from finite f64 to u64 for ordered lookup.
fn order_key(x: f64) -> u64 {
    let bits = x.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_samples() {
        let r = students_t(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p_two_sided - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_sentinel() {
        let r = students_t(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(r.t, f64::INFINITY);
        assert_eq!(r.p_two_sided, 0.0);
        let r = students_t(&[3.0, 3.0], &[3.0, 3.0]).unwrap();
        assert_eq!((r.t, r.p_two_sided), (0.0, 1.0));
    }

    #[test]
    fn hand_computed_t() {
        // Means 2 and 3, pooled variance 1, SE sqrt(2/3).
        let r = students_t(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((r.t + 1.0 / (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((r.t + 1.2247).abs() < 1e-4);
        assert_eq!(r.dof, 4.0);
        assert!(students_t(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn critical_values() {
        assert!((t_critical(95.0, 10.0).unwrap() - 2.228).abs() < 1e-3);
        assert!((t_critical(95.0, 1e6).unwrap() - 1.960).abs() < 2e-3);
        for d in [1.0, 5.0, 30.0] {
            let (a, b, c) = (
                t_critical(60.0, d).unwrap(),
                t_critical(75.0, d).unwrap(),
                t_critical(95.0, d).unwrap(),
            );
            assert!(a < b && b < c);
        }
        assert!(t_critical(95.0, 5.0).unwrap() > t_critical(95.0, 50.0).unwrap());
        assert!(t_critical(0.0, 5.0).is_err());
        assert!(t_critical(100.0, 5.0).is_err());
        assert!(t_critical(95.0, 0.5).is_err());
    }

    fn units<'a>(spec: &[(&'a str, bool)]) -> Vec<Unit<'a>> {
        spec.iter()
            .map(|(c, t)| Unit {
                treated: *t,
                confounder: c,
            })
            .collect()
    }

    #[test]
    fn independent_treatment_gives_flat_scores() {
        let u = units(&[
            ("a", true),
            ("a", false),
            ("b", true),
            ("b", false),
            ("c", true),
            ("c", false),
        ]);
        let fit = propensity(&u).unwrap();
        for s in &fit.scores {
            assert!((s.unwrap() - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn scores_equal_category_frequencies() {
        let u = units(&[
            ("a", true),
            ("a", true),
            ("a", false),
            ("b", true),
            ("b", false),
            ("b", false),
            ("b", false),
        ]);
        let fit = propensity(&u).unwrap();
        assert!((fit.scores[0].unwrap() - 2.0 / 3.0).abs() < 1e-6);
        assert!((fit.scores[4].unwrap() - 0.25).abs() < 1e-6);
        assert!(fit.iterations <= IRLS_MAX_ITER);
    }

    #[test]
    fn separated_category_is_flagged() {
        let u = units(&[("a", true), ("a", false), ("b", true), ("b", true)]);
        let fit = propensity(&u).unwrap();
        assert_eq!(fit.unmatchable, vec!["b".to_string()]);
        assert!(fit.scores[2].is_none() && fit.scores[3].is_none());
        let m = psm_match(&u, &fit.scores).unwrap();
        assert_eq!(m.excluded, 2);
        assert_eq!(m.pairs.len(), 1);
        assert!(propensity(&units(&[("a", true), ("b", true)])).is_err());
    }

    #[test]
    fn equal_scores_match_smallest_id() {
        let u = units(&[("a", true), ("a", false), ("a", true), ("a", false), ("a", false)]);
        let m = psm_match(&u, &[Some(0.4); 5]).unwrap();
        assert!(m.pairs.iter().all(|p| p.control == 1));
        assert_eq!(m.pairs[0].ties, vec![1, 3, 4]);
    }

    #[test]
    fn matches_stay_within_category() {
        // Both categories have propensity 1/2, so score distance alone cannot
        // tell them apart.
        let u = units(&[("a", true), ("b", false), ("a", false), ("b", true)]);
        let fit = propensity(&u).unwrap();
        let m = psm_match(&u, &fit.scores).unwrap();
        for p in &m.pairs {
            for &c in &p.ties {
                assert_eq!(u[c].confounder, u[p.treated].confounder);
            }
        }
        assert!(psm_match(&units(&[("a", true)]), &[Some(0.5)]).is_err());
    }

    #[test]
    fn nearest_score_wins() {
        let u = units(&[("x", true), ("y", false), ("z", false)]);
        let m = psm_match(&u, &[Some(0.5), Some(0.45), Some(0.9)]).unwrap();
        assert_eq!(m.pairs[0].control, 1);
    }

    proptest! {
        #[test]
        fn t_antisymmetric(a in prop::collection::vec(-100f64..100.0, 2..20), b in prop::collection::vec(-100f64..100.0, 2..20)) {
            let ab = students_t(&a, &b).unwrap();
            let ba = students_t(&b, &a).unwrap();
            prop_assume!(ab.t.is_finite());
            prop_assert!((ab.t + ba.t).abs() <= 1e-9 * ab.t.abs().max(1.0));
            prop_assert!((ab.p_two_sided - ba.p_two_sided).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab.p_two_sided));
        }
    }
}
