//! Partial orders over raw scores and their discretization into `L` levels.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::RawScore;
use crate::perturb::Perturbation;

pub const DEFAULT_LEVELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerIsBetter,
    HigherIsBetter,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lower" | "lower_is_better" | "lower-is-better" => Ok(Direction::LowerIsBetter),
            "higher" | "higher_is_better" | "higher-is-better" => Ok(Direction::HigherIsBetter),
            other => Err(Error::param("direction", format!("expected `lower` or `higher`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderEntry {
    pub model_id: String,
    pub score: f64,
}

/// Models of one perturbation sorted ascending by score, ties by model id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialOrder {
    pub perturbation: Perturbation,
    pub entries: Vec<OrderEntry>,
}

impl PartialOrder {
    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    fn reversed(&self) -> Vec<&OrderEntry> {
        let mut v: Vec<&OrderEntry> = self.entries.iter().collect();
        v.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.model_id.cmp(&b.model_id)));
        v
    }
}

pub fn create_partial_order(scores: &[RawScore], perturbation: Perturbation) -> PartialOrder {
    let mut entries: Vec<OrderEntry> = scores
        .iter()
        .filter(|s| s.perturbation == perturbation)
        .map(|s| OrderEntry {
            model_id: s.model_id.clone(),
            score: s.value,
        })
        .collect();
    entries.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.model_id.cmp(&b.model_id)));
    PartialOrder {
        perturbation,
        entries,
    }
}

/// Near-equal contiguous split: the first `n % levels` groups get one extra item.
pub fn array_split(n: usize, levels: usize) -> Result<Vec<Range<usize>>> {
    if levels == 0 {
        return Err(Error::param("levels", "must be at least 1"));
    }
    let (base, extra) = (n / levels, n % levels);
    let mut start = 0;
    Ok((0..levels)
        .map(|g| {
            let len = base + usize::from(g < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Ratings (1-based) for scores already in rating order.
///
/// Every run of equal scores receives the group holding most of its members,
/// the lower group on a tie. A lone model scores 1 when its score is zero and
/// `levels` otherwise.
pub fn ratings_for_sorted(scores: &[f64], levels: usize) -> Result<Vec<usize>> {
    let groups = array_split(scores.len(), levels)?;
    if scores.len() == 1 {
        return Ok(vec![if scores[0] == 0.0 { 1 } else { levels }]);
    }
    let group_of = |i: usize| groups.iter().position(|g| g.contains(&i)).expect("index in range");
    let mut out = vec![0; scores.len()];
    let mut start = 0;
    while start < scores.len() {
        let mut end = start + 1;
        while end < scores.len() && scores[end] == scores[start] {
            end += 1;
        }
        let mut counts = vec![0usize; levels];
        for i in start..end {
            counts[group_of(i)] += 1;
        }
        let best = counts
            .iter()
            .enumerate()
            .fold(0, |best, (g, &c)| if c > counts[best] { g } else { best });
        out[start..end].fill(best + 1);
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatedEntry {
    pub model_id: String,
    pub score: f64,
    /// 0-based position in the rating order.
    pub position: usize,
    pub rating: usize,
}

/// Ratings per perturbation for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingTable {
    pub metric: String,
    pub direction: Direction,
    pub levels: usize,
    /// `true` when scores were split in ascending order.
    pub ascending: bool,
    pub perturbations: BTreeMap<Perturbation, Vec<RatedEntry>>,
}

impl RatingTable {
    pub fn rating(&self, perturbation: Perturbation, model_id: &str) -> Option<usize> {
        self.perturbations
            .get(&perturbation)?
            .iter()
            .find(|e| e.model_id == model_id)
            .map(|e| e.rating)
    }
}

/// Rate one partial order. Higher-is-better metrics are split in descending
/// order so that rating 1 is always the best level.
pub fn assign_rating(po: &PartialOrder, levels: usize, direction: Direction) -> Result<Vec<RatedEntry>> {
    let ordered: Vec<&OrderEntry> = match direction {
        Direction::LowerIsBetter => po.entries.iter().collect(),
        Direction::HigherIsBetter => po.reversed(),
    };
    rate_ordered(&ordered, levels)
}

fn rate_ordered(ordered: &[&OrderEntry], levels: usize) -> Result<Vec<RatedEntry>> {
    if ordered.is_empty() {
        return Err(Error::Insufficient("partial order has no entries".into()));
    }
    let scores: Vec<f64> = ordered.iter().map(|e| e.score).collect();
    let ratings = ratings_for_sorted(&scores, levels)?;
    Ok(ordered
        .iter()
        .zip(ratings)
        .enumerate()
        .map(|(position, (e, rating))| RatedEntry {
            model_id: e.model_id.clone(),
            score: e.score,
            position,
            rating,
        })
        .collect())
}

/// Build the rating table of one metric across every perturbation present.
pub fn rate_metric(metric: &str, scores: &[RawScore], levels: usize, direction: Direction) -> Result<RatingTable> {
    let mut perturbations = BTreeMap::new();
    let present: std::collections::BTreeSet<Perturbation> = scores
        .iter()
        .filter(|s| s.metric == metric)
        .map(|s| s.perturbation)
        .collect();
    let own: Vec<RawScore> = scores.iter().filter(|s| s.metric == metric).cloned().collect();
    for p in present {
        let po = create_partial_order(&own, p);
        perturbations.insert(p, assign_rating(&po, levels, direction)?);
    }
    Ok(RatingTable {
        metric: metric.to_string(),
        direction,
        levels,
        ascending: direction == Direction::LowerIsBetter,
        perturbations,
    })
}

/// Re-rate a higher-is-better table in ascending score order, the layout in
/// which such tables are usually printed (rating 1 = lowest score).
pub fn invert_direction(table: &RatingTable) -> Result<RatingTable> {
    if table.direction != Direction::HigherIsBetter {
        return Err(Error::param("direction", "only higher-is-better tables can be inverted"));
    }
    let mut perturbations = BTreeMap::new();
    for (p, entries) in &table.perturbations {
        let mut order: Vec<OrderEntry> = entries
            .iter()
            .map(|e| OrderEntry {
                model_id: e.model_id.clone(),
                score: e.score,
            })
            .collect();
        order.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.model_id.cmp(&b.model_id)));
        let refs: Vec<&OrderEntry> = order.iter().collect();
        perturbations.insert(*p, rate_ordered(&refs, table.levels)?);
    }
    Ok(RatingTable {
        ascending: true,
        perturbations,
        ..table.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Scope;
    use proptest::prelude::*;

    fn raw(model: &str, p: Perturbation, v: f64) -> RawScore {
        RawScore {
            metric: "M".into(),
            model_id: model.into(),
            perturbation: p,
            confounder: Scope::None,
            value: v,
        }
    }

    fn sizes(n: usize, l: usize) -> Vec<usize> {
        array_split(n, l).unwrap().iter().map(|r| r.len()).collect()
    }

    #[test]
    fn split_sizes() {
        assert_eq!(sizes(11, 3), vec![4, 4, 3]);
        assert_eq!(sizes(2, 3), vec![1, 1, 0]);
        assert_eq!(sizes(5, 1), vec![5]);
        assert!(array_split(3, 0).is_err());
    }

    #[test]
    fn tie_blocks_follow_majority() {
        let s = [2.6, 4.6, 4.6, 4.6, 4.6, 5.9, 5.9, 6.9, 6.9, 6.9, 6.9];
        assert_eq!(
            ratings_for_sorted(&s, 3).unwrap(),
            vec![1, 1, 1, 1, 1, 2, 2, 3, 3, 3, 3]
        );
        let s = [4.6, 4.6, 4.6, 4.6, 5.9, 5.9, 5.9, 5.9, 6.9, 6.9, 6.9];
        assert_eq!(
            ratings_for_sorted(&s, 3).unwrap(),
            vec![1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3]
        );
        // Two of four in each group: the lower group wins.
        assert_eq!(ratings_for_sorted(&[1.0, 1.0, 2.0, 2.0, 3.0, 3.0], 2).unwrap(), vec![1, 1, 1, 1, 2, 2]);
    }

    #[test]
    fn single_model_branch() {
        assert_eq!(ratings_for_sorted(&[0.0], 3).unwrap(), vec![1]);
        assert_eq!(ratings_for_sorted(&[7.0], 3).unwrap(), vec![3]);
    }

    #[test]
    fn order_is_deterministic() {
        let a = vec![
            raw("b", Perturbation::P0, 1.0),
            raw("a", Perturbation::P0, 1.0),
            raw("c", Perturbation::P0, 0.5),
            raw("z", Perturbation::P1, 0.1),
        ];
        let mut b = a.clone();
        b.reverse();
        let po = create_partial_order(&a, Perturbation::P0);
        assert_eq!(po, create_partial_order(&b, Perturbation::P0));
        let ids: Vec<&str> = po.entries.iter().map(|e| e.model_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn higher_is_better_puts_best_first() {
        let scores = vec![
            raw("lo", Perturbation::P0, 0.2),
            raw("mid", Perturbation::P0, 0.5),
            raw("hi", Perturbation::P0, 0.9),
        ];
        let t = rate_metric("M", &scores, 3, Direction::HigherIsBetter).unwrap();
        assert_eq!(t.rating(Perturbation::P0, "hi"), Some(1));
        assert_eq!(t.rating(Perturbation::P0, "lo"), Some(3));
        let inv = invert_direction(&t).unwrap();
        assert_eq!(inv.rating(Perturbation::P0, "lo"), Some(1));
        assert!(invert_direction(&rate_metric("M", &scores, 3, Direction::LowerIsBetter).unwrap()).is_err());
        assert_eq!("higher".parse::<Direction>().unwrap(), Direction::HigherIsBetter);
        assert!("sideways".parse::<Direction>().is_err());
    }

    proptest! {
        #[test]
        fn ratings_monotone_and_tie_coherent(mut v in prop::collection::vec(0u8..6, 1..40), l in 1usize..6) {
            v.sort_unstable();
            let s: Vec<f64> = v.iter().map(|&x| f64::from(x)).collect();
            let r = ratings_for_sorted(&s, l).unwrap();
            for i in 1..s.len() {
                prop_assert!(r[i - 1] <= r[i]);
                if s[i - 1] == s[i] { prop_assert_eq!(r[i - 1], r[i]); }
            }
            prop_assert!(r.iter().all(|&x| (1..=l).contains(&x)));
            // Strictly monotone transforms keep ratings once the lone-model
            // branch, which looks at the value itself, is out of the way.
            prop_assume!(s.len() > 1);
            let t: Vec<f64> = s.iter().map(|x| (x * 3.0 + 1.0).exp()).collect();
            prop_assert_eq!(ratings_for_sorted(&t, l).unwrap(), r);
        }

        #[test]
        fn distinct_scores_reduce_to_plain_split(n in 2usize..40, l in 1usize..6) {
            let s: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let r = ratings_for_sorted(&s, l).unwrap();
            for (g, range) in array_split(n, l).unwrap().into_iter().enumerate() {
                for i in range { prop_assert_eq!(r[i], g + 1); }
            }
        }
    }
}
