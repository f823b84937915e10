//! Input perturbations P0–P6 and the weighted treatment-assignment sampler.
//!
//! P1–P3 act on numeric history and touch every `n`-th value (anchored at
//! index `n - 1 + phase`). P4–P6 act on image inputs only.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::series::ConfounderField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Perturbation {
    /// Unperturbed control.
    P0,
    /// Drop-to-zero.
    P1,
    /// Value halved.
    P2,
    /// Missing values.
    P3,
    /// Centre pixel set to black.
    P4,
    /// Saturation ×10.
    P5,
    /// Sentiment stripe from an auxiliary classifier.
    P6,
}

impl Perturbation {
    pub const ALL: [Perturbation; 7] = [
        Perturbation::P0,
        Perturbation::P1,
        Perturbation::P2,
        Perturbation::P3,
        Perturbation::P4,
        Perturbation::P5,
        Perturbation::P6,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, Perturbation::P1 | Perturbation::P2 | Perturbation::P3)
    }

    pub fn is_image(self) -> bool {
        matches!(self, Perturbation::P4 | Perturbation::P5 | Perturbation::P6)
    }

    pub fn as_str(self) -> &'static str {
        ["P0", "P1", "P2", "P3", "P4", "P5", "P6"][self.index()]
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Perturbation::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::param("perturbation", format!("unknown tag `{s}`")))
    }
}

/// A perturbation tag with its spacing parameters.
///
/// `period` and `phase` only matter for P1–P3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationKind {
    pub tag: Perturbation,
    pub period: usize,
    pub phase: usize,
}

impl PerturbationKind {
    pub fn new(tag: Perturbation, period: usize) -> Self {
        Self {
            tag,
            period,
            phase: 0,
        }
    }

    /// Apply to a numeric history. Image perturbations and P0 pass values through.
    pub fn apply_numeric(&self, history: &[f64]) -> Result<Vec<Option<f64>>> {
        Ok(match self.tag {
            Perturbation::P1 => wrap(drop_to_zero_with_phase(history, self.period, self.phase)?),
            Perturbation::P2 => wrap(halve_with_phase(history, self.period, self.phase)?),
            Perturbation::P3 => missing_with_phase(history, self.period, self.phase)?,
            _ => wrap(history.to_vec()),
        })
    }
}

fn wrap(values: Vec<f64>) -> Vec<Option<f64>> {
    values.into_iter().map(Some).collect()
}

/// Indices `n-1+phase, 2n-1+phase, ...` below `len`.
pub fn every_nth(len: usize, n: usize, phase: usize) -> Result<impl Iterator<Item = usize>> {
    if n == 0 {
        return Err(Error::param("n", "perturbation period must be >= 1"));
    }
    Ok((n - 1 + phase..len).step_by(n))
}

fn map_every_nth(history: &[f64], n: usize, phase: usize, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let mut out = history.to_vec();
    for i in every_nth(history.len(), n, phase)? {
        out[i] = f(out[i]);
    }
    Ok(out)
}

/// P1: every `n`-th value set to zero.
pub fn drop_to_zero(history: &[f64], n: usize) -> Result<Vec<f64>> {
    drop_to_zero_with_phase(history, n, 0)
}

pub fn drop_to_zero_with_phase(history: &[f64], n: usize, phase: usize) -> Result<Vec<f64>> {
    map_every_nth(history, n, phase, |_| 0.0)
}

/// P2: every `n`-th value halved.
pub fn halve(history: &[f64], n: usize) -> Result<Vec<f64>> {
    halve_with_phase(history, n, 0)
}

pub fn halve_with_phase(history: &[f64], n: usize, phase: usize) -> Result<Vec<f64>> {
    map_every_nth(history, n, phase, |v| v / 2.0)
}

/// P3: every `n`-th value replaced by an explicit missing marker (`None`).
pub fn missing(history: &[f64], n: usize) -> Result<Vec<Option<f64>>> {
    missing_with_phase(history, n, 0)
}

pub fn missing_with_phase(history: &[f64], n: usize, phase: usize) -> Result<Vec<Option<f64>>> {
    let mut out = wrap(history.to_vec());
    for i in every_nth(history.len(), n, phase)? {
        out[i] = None;
    }
    Ok(out)
}

/// P4: the pixel at `(w/2, h/2)` becomes black.
pub fn pixel_center_black(image: &RgbImage) -> Result<RgbImage> {
    if image.width == 0 || image.height == 0 {
        return Err(Error::param("image", "empty raster"));
    }
    let mut out = image.clone();
    out.put(image.width / 2, image.height / 2, [0, 0, 0]);
    Ok(out)
}

/// RGB in `[0,1]` to hexcone HSV with `h` in degrees `[0,360)`, `s, v` in `[0,1]`.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    [h, s, max]
}

pub fn hsv_to_rgb(hsv: [f64; 3]) -> [f64; 3] {
    let [h, s, v] = hsv;
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn to_unit(px: [u8; 3]) -> [f64; 3] {
    px.map(|c| f64::from(c) / 255.0)
}

fn to_byte(px: [f64; 3]) -> [u8; 3] {
    px.map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8)
}

pub fn scale_saturation(px: [u8; 3], factor: f64) -> [u8; 3] {
    let [h, s, v] = rgb_to_hsv(to_unit(px));
    to_byte(hsv_to_rgb([h, (s * factor).clamp(0.0, 1.0), v]))
}

/// P5: saturation multiplied by ten and clamped to 1.
pub fn saturation_x10(image: &RgbImage) -> RgbImage {
    let mut out = image.clone();
    for px in out.pixels_mut() {
        *px = scale_saturation(*px, 10.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub fn label(self) -> i8 {
        match self {
            Sentiment::Negative => -1,
            Sentiment::Neutral => 0,
            Sentiment::Positive => 1,
        }
    }

    pub fn from_label(label: i8) -> Result<Self> {
        match label {
            -1 => Ok(Sentiment::Negative),
            0 => Ok(Sentiment::Neutral),
            1 => Ok(Sentiment::Positive),
            other => Err(Error::Provider(format!("label {other} outside {{-1, 0, 1}}"))),
        }
    }

    /// Gray level `round((label + 1) * 127.5)`: -1 → 0, 0 → 128, 1 → 255.
    pub fn intensity(self) -> u8 {
        ((f64::from(self.label()) + 1.0) * 127.5).round() as u8
    }
}

/// Classifies the sentiment of a plotted series.
pub trait SentimentProvider: Send + Sync {
    fn classify(&self, plot: &RgbImage, values: &[f64]) -> Result<Sentiment>;
}

/// Sign of the least-squares slope of the plotted values, with a small dead band.
#[derive(Debug, Clone, Copy)]
pub struct SlopeSignProvider {
    pub dead_band: f64,
}

impl Default for SlopeSignProvider {
    fn default() -> Self {
        Self { dead_band: 1e-9 }
    }
}

pub fn ls_slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (y - mean_y);
        sxx += dx * dx;
    }
    sxy / sxx
}

impl SentimentProvider for SlopeSignProvider {
    fn classify(&self, _plot: &RgbImage, values: &[f64]) -> Result<Sentiment> {
        let slope = ls_slope(values);
        if !slope.is_finite() {
            return Err(Error::Provider("slope is not finite".into()));
        }
        Ok(if slope > self.dead_band {
            Sentiment::Positive
        } else if slope < -self.dead_band {
            Sentiment::Negative
        } else {
            Sentiment::Neutral
        })
    }
}

pub const STRIPE_ROWS: usize = 16;

/// P6: a `width × 16` gray stripe encoding the provider's label for this plot.
pub fn sentiment_stripe(
    line_plot: &RgbImage,
    values: &[f64],
    provider: &dyn SentimentProvider,
) -> Result<RgbImage> {
    let sentiment = provider.classify(line_plot, values)?;
    let g = sentiment.intensity();
    Ok(RgbImage::filled(line_plot.width, STRIPE_ROWS, [g, g, g]))
}

/// Paint `stripe` over the top rows of `base`.
pub fn overlay_stripe(base: &RgbImage, stripe: &RgbImage) -> RgbImage {
    let mut out = base.clone();
    for y in 0..stripe.height.min(base.height) {
        for x in 0..stripe.width.min(base.width) {
            out.put(x, y, stripe.get(x, y));
        }
    }
    out
}

/// Weighted assignment of perturbations conditioned on a confounder value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentDistribution {
    pub name: String,
    pub field: ConfounderField,
    pub favored: String,
    #[serde(default = "default_ratio")]
    pub weight_ratio: f64,
    pub seed: u64,
}

fn default_ratio() -> f64 {
    2.0
}

impl TreatmentDistribution {
    /// Sampling weights over `arms` for a row with confounder value `value`.
    /// P0 keeps weight 1; other arms get `weight_ratio` when the row is favored.
    pub fn weights(&self, arms: &[Perturbation], value: &str) -> Vec<f64> {
        let favored = value == self.favored;
        arms.iter()
            .map(|p| {
                if favored && *p != Perturbation::P0 {
                    self.weight_ratio
                } else {
                    1.0
                }
            })
            .collect()
    }
}

/// Draw one perturbation per row.
///
/// Row `i` uses ChaCha8 stream `i` under the distribution seed, so each row's
/// draw depends only on `(seed, i)`.
pub fn assign_treatments<S: AsRef<str>>(
    confounder_values: &[S],
    arms: &[Perturbation],
    distribution: &TreatmentDistribution,
) -> Result<Vec<Perturbation>> {
    if !(distribution.weight_ratio > 0.0 && distribution.weight_ratio.is_finite()) {
        return Err(Error::param("weight_ratio", "must be a positive finite number"));
    }
    if arms.is_empty() {
        return Err(Error::param("arms", "no perturbations to assign"));
    }
    if !confounder_values
        .iter()
        .any(|v| v.as_ref() == distribution.favored)
    {
        return Err(Error::UnknownConfounder(distribution.favored.clone()));
    }
    let favored = WeightedIndex::new(distribution.weights(arms, &distribution.favored))
        .map_err(|e| Error::param("weights", e.to_string()))?;
    let uniform = WeightedIndex::new(vec![1.0; arms.len()])
        .map_err(|e| Error::param("weights", e.to_string()))?;
    Ok(confounder_values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut rng = ChaCha8Rng::seed_from_u64(distribution.seed);
            rng.set_stream(i as u64);
            let dist = if v.as_ref() == distribution.favored {
                &favored
            } else {
                &uniform
            };
            arms[dist.sample(&mut rng)]
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn drop_every_second() {
        assert_eq!(drop_to_zero(&[3.0, 4.0, 5.0, 6.0], 2).unwrap(), vec![3.0, 0.0, 5.0, 0.0]);
        assert_eq!(drop_to_zero(&[3.0, 4.0, 5.0], 1).unwrap(), vec![0.0; 3]);
        let window: Vec<f64> = (1..=80).map(f64::from).collect();
        let zeros = drop_to_zero(&window, 80).unwrap().iter().filter(|v| **v == 0.0).count();
        assert_eq!(zeros, 1);
        assert!(drop_to_zero(&window, 0).is_err());
    }

    #[test]
    fn halve_every_second() {
        assert_eq!(halve(&[8.0; 4], 2).unwrap(), vec![8.0, 4.0, 8.0, 4.0]);
        assert_eq!(halve(&[0.0; 4], 2).unwrap(), vec![0.0; 4]);
        let twice = halve(&halve(&[8.0; 4], 2).unwrap(), 2).unwrap();
        assert_eq!(twice, vec![8.0, 2.0, 8.0, 2.0]);
    }

    #[test]
    fn missing_every_second() {
        assert_eq!(
            missing(&[3.0, 4.0, 5.0, 6.0], 2).unwrap(),
            vec![Some(3.0), None, Some(5.0), None]
        );
    }

    #[test]
    fn phase_shifts_anchor() {
        let k = PerturbationKind {
            tag: Perturbation::P1,
            period: 2,
            phase: 1,
        };
        assert_eq!(
            k.apply_numeric(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap(),
            vec![Some(1.0), Some(2.0), Some(0.0), Some(4.0), Some(0.0)]
        );
    }

    #[test]
    fn tag_round_trip() {
        for p in Perturbation::ALL {
            assert_eq!(p.as_str().parse::<Perturbation>().unwrap(), p);
        }
        assert!("P7".parse::<Perturbation>().is_err());
    }

    #[test]
    fn center_pixel() {
        let img = RgbImage::filled(3, 3, [255, 255, 255]);
        let out = pixel_center_black(&img).unwrap();
        assert_eq!(out.get(1, 1), [0, 0, 0]);
        assert_eq!(img.diff_count(&out), 1);

        let big = RgbImage::filled(128, 128, [10, 200, 30]);
        let out = pixel_center_black(&big).unwrap();
        assert_eq!(out.get(64, 64), [0, 0, 0]);
        assert_eq!(big.diff_count(&out), 1);

        assert!(pixel_center_black(&RgbImage::filled(0, 0, [0, 0, 0])).is_err());
    }

    #[test]
    fn saturation_cases() {
        assert_eq!(scale_saturation([90, 90, 90], 10.0), [90, 90, 90]);
        assert_eq!(scale_saturation([255, 0, 0], 10.0), [255, 0, 0]);
        // V = 200/255, min 190/255 → S = 10/200 = 0.05.
        let px = [200u8, 190, 190];
        assert!((rgb_to_hsv(to_unit(px))[1] - 0.05).abs() < 1e-12);
        let out = scale_saturation(px, 10.0);
        let [h, s, v] = rgb_to_hsv(to_unit(out));
        assert!((s - 0.5).abs() < 1e-12, "{s}");
        assert_eq!(out, [200, 100, 100]);
        assert_eq!(h, 0.0);
        assert!((v - 200.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn stripe_intensities() {
        assert_eq!(Sentiment::Negative.intensity(), 0);
        assert_eq!(Sentiment::Neutral.intensity(), 128);
        assert_eq!(Sentiment::Positive.intensity(), 255);

        let plot = RgbImage::filled(128, 128, [255, 255, 255]);
        let down = sentiment_stripe(&plot, &[3.0, 2.0, 1.0], &SlopeSignProvider::default()).unwrap();
        assert_eq!((down.width, down.height), (128, 16));
        assert!(down.pixels().all(|p| *p == [0, 0, 0]));
        let flat = sentiment_stripe(&plot, &[2.0, 2.0, 2.0], &SlopeSignProvider::default()).unwrap();
        assert_eq!(flat.get(5, 5), [128, 128, 128]);
        let composed = overlay_stripe(&plot, &down);
        assert_eq!(composed.get(0, 15), [0, 0, 0]);
        assert_eq!(composed.get(0, 16), [255, 255, 255]);
    }

    struct Failing;
    impl SentimentProvider for Failing {
        fn classify(&self, _: &RgbImage, _: &[f64]) -> Result<Sentiment> {
            Err(Error::Provider("backend offline".into()))
        }
    }

    #[test]
    fn provider_failure_propagates() {
        let plot = RgbImage::filled(4, 4, [0, 0, 0]);
        let err = sentiment_stripe(&plot, &[1.0, 2.0], &Failing).unwrap_err();
        assert!(err.to_string().contains("backend offline"));
        assert!(Sentiment::from_label(2).is_err());
    }

    fn dist(favored: &str, ratio: f64, seed: u64) -> TreatmentDistribution {
        TreatmentDistribution {
            name: "DC1".into(),
            field: ConfounderField::Company,
            favored: favored.into(),
            weight_ratio: ratio,
            seed,
        }
    }

    #[test]
    fn favored_rows_rarely_get_control() {
        let rows = vec!["META"; 26_000];
        let a = assign_treatments(&rows, &Perturbation::ALL, &dist("META", 2.0, 11)).unwrap();
        let share = a.iter().filter(|p| **p == Perturbation::P0).count() as f64 / rows.len() as f64;
        assert!((share - 1.0 / 13.0).abs() < 0.01, "{share}");
    }

    #[test]
    fn assignment_is_deterministic_and_validated() {
        let rows = ["META", "GOOG", "PFE", "META"];
        let d = dist("META", 2.0, 5);
        assert_eq!(
            assign_treatments(&rows, &Perturbation::ALL, &d).unwrap(),
            assign_treatments(&rows, &Perturbation::ALL, &d).unwrap()
        );
        assert!(matches!(
            assign_treatments(&rows, &Perturbation::ALL, &dist("XOM", 2.0, 5)),
            Err(Error::UnknownConfounder(_))
        ));
        assert!(assign_treatments(&rows, &Perturbation::ALL, &dist("META", 0.0, 5)).is_err());
    }

    fn chi2_p(counts: &[usize], probs: &[f64]) -> f64 {
        let n: usize = counts.iter().sum();
        let stat: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&c, &p)| {
                let e = p * n as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn marginals_match_weights_chi_squared() {
        for (favored, ratio) in [("META", 2.0), ("META", 1.0), ("GOOG", 3.5)] {
            let rows: Vec<&str> = (0..20_000).map(|i| if i % 2 == 0 { "META" } else { "GOOG" }).collect();
            let d = dist(favored, ratio, 2024);
            let a = assign_treatments(&rows, &Perturbation::ALL, &d).unwrap();
            for company in ["META", "GOOG"] {
                let mut counts = [0usize; 7];
                for (p, r) in a.iter().zip(&rows) {
                    if *r == company {
                        counts[p.index()] += 1;
                    }
                }
                let w = d.weights(&Perturbation::ALL, company);
                let total: f64 = w.iter().sum();
                let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
                let p = chi2_p(&counts, &probs);
                assert!(p > 0.01, "favored={favored} ratio={ratio} company={company} p={p} counts={counts:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn numeric_perturbations_touch_floor_len_over_n(values in prop::collection::vec(1.0f64..500.0, 1..200), n in 1usize..90) {
            let expected = values.len() / n;
            let changed = |out: &[f64]| out.iter().zip(&values).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
            prop_assert_eq!(changed(&drop_to_zero(&values, n).unwrap()), expected);
            prop_assert_eq!(changed(&halve(&values, n).unwrap()), expected);
            let m = missing(&values, n).unwrap();
            prop_assert_eq!(m.iter().filter(|v| v.is_none()).count(), expected);
            for (a, b) in m.iter().zip(&values) {
                if let Some(a) = a { prop_assert_eq!(a.to_bits(), b.to_bits()); }
            }
        }

        #[test]
        fn saturation_keeps_hue_and_value(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
            let before = rgb_to_hsv(to_unit([r, g, b]));
            let after = rgb_to_hsv(to_unit(scale_saturation([r, g, b], 10.0)));
            prop_assert!((before[2] - after[2]).abs() <= 1.0 / 255.0 + 1e-12);
            // Hue is undefined for gray pixels. Rounding back to bytes moves
            // the middle channel by up to half a unit, which bounds the hue
            // drift by 1/(12 V) of the wheel when V is the largest channel.
            if before[1] > 0.0 {
                let dh = (before[0] - after[0]).abs();
                let dh = dh.min(360.0 - dh) / 360.0;
                let top = f64::from(r.max(g).max(b));
                let bound = (1.0 / 255.0f64).max(1.0 / (12.0 * top)) + 1e-12;
                prop_assert!(dh <= bound, "dh={} before={:?} after={:?}", dh, before, after);
            }
        }
    }
}
