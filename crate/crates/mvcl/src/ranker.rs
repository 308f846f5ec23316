//! Pairwise preferences over candidates and their conversion into ranked
//! lists: exhaustive search over permutations, win counting, and
//! probability summing. Ties break lexicographically by candidate id
//! everywhere so outputs are deterministic.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};

/// Pairwise win probabilities over n >= 2 candidates. Ids are held sorted;
/// p(i, j) + p(j, i) = 1 by construction.
#[derive(Debug, Clone)]
pub struct PreferenceSet {
    ids: Vec<String>,
    /// Upper-triangular probabilities: probs[(i, j)] with i < j is the
    /// probability that ids[i] is preferred over ids[j].
    probs: BTreeMap<(usize, usize), f64>,
}

impl PreferenceSet {
    /// Build from (first, second, p(first preferred over second)) entries.
    /// Every unordered pair must be covered exactly once, or twice with
    /// complementary probabilities (within 1e-9).
    pub fn from_probs(entries: &[(String, String, f64)]) -> Result<Self> {
        let mut ids: Vec<String> = Vec::new();
        for (a, b, _) in entries {
            if a == b {
                return Err(Error::Contract(format!("self-preference for {a}")));
            }
            ids.push(a.clone());
            ids.push(b.clone());
        }
        ids.sort_unstable();
        ids.dedup();
        if ids.len() < 2 {
            return Err(Error::Contract("preference set needs >= 2 candidates".into()));
        }
        let index: BTreeMap<&str, usize> = ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut probs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (a, b, p) in entries {
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Contract(format!("probability {p} out of [0,1]")));
            }
            let (ia, ib) = (index[a.as_str()], index[b.as_str()]);
            let (key, p_canon) = if ia < ib { ((ia, ib), *p) } else { ((ib, ia), 1.0 - *p) };
            match probs.get(&key) {
                None => {
                    probs.insert(key, p_canon);
                }
                Some(&existing) => {
                    if (existing - p_canon).abs() > 1e-9 {
                        return Err(Error::Contract(format!(
                            "inconsistent preferences for ({a}, {b}): {existing} vs {p_canon}"
                        )));
                    }
                }
            }
        }
        let expect = ids.len() * (ids.len() - 1) / 2;
        if probs.len() != expect {
            return Err(Error::Contract(format!(
                "preference set covers {} of {expect} pairs",
                probs.len()
            )));
        }
        Ok(PreferenceSet { ids, probs })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// P(ids[i] preferred over ids[j]).
    fn p_idx(&self, i: usize, j: usize) -> f64 {
        if i < j {
            self.probs[&(i, j)]
        } else {
            1.0 - self.probs[&(j, i)]
        }
    }

    pub fn probability(&self, a: &str, b: &str) -> Result<f64> {
        let find = |x: &str| {
            self.ids
                .iter()
                .position(|id| id == x)
                .ok_or_else(|| Error::Contract(format!("unknown candidate {x}")))
        };
        Ok(self.p_idx(find(a)?, find(b)?))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RankedList {
    pub order: Vec<String>,
    pub method: String,
    /// Per-candidate score where the method defines one (wins or
    /// probability sums).
    pub scores: BTreeMap<String, f64>,
    /// Number of pairwise preferences the order satisfies.
    pub satisfied_pairs: usize,
}

/// Pairs (u before v) with p(u, v) strictly above one half; exact-half
/// preferences satisfy neither direction.
fn satisfied_count(prefs: &PreferenceSet, order: &[usize]) -> usize {
    let mut count = 0;
    for i in 0..order.len() {
        for j in (i + 1)..order.len() {
            if prefs.p_idx(order[i], order[j]) > 0.5 {
                count += 1;
            }
        }
    }
    count
}

fn permutations_lex(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut used = vec![false; n];
    fn rec(n: usize, current: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if current.len() == n {
            out.push(current.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                current.push(i);
                rec(n, current, used, out);
                current.pop();
                used[i] = false;
            }
        }
    }
    rec(n, &mut current, &mut used, &mut out);
    out
}

/// Search all n! orders for the one satisfying the most pairwise
/// preferences; the first maximum in lexicographic id order wins. Guarded
/// at n <= 8.
pub fn exhaustive_rank(prefs: &PreferenceSet) -> Result<RankedList> {
    let n = prefs.len();
    if n > 8 {
        return Err(Error::SizeGuard(format!(
            "exhaustive search over {n}! orders refused; use wincount_rank"
        )));
    }
    let mut best: Option<(usize, Vec<usize>)> = None;
    for perm in permutations_lex(n) {
        let score = satisfied_count(prefs, &perm);
        let better = match &best {
            None => true,
            Some((s, _)) => score > *s,
        };
        if better {
            best = Some((score, perm));
        }
    }
    let (satisfied, order_idx) = best.expect("n >= 2 guarantees permutations");
    let order: Vec<String> = order_idx.iter().map(|&i| prefs.ids[i].clone()).collect();
    Ok(RankedList {
        order,
        method: "exhaustive".into(),
        scores: BTreeMap::new(),
        satisfied_pairs: satisfied,
    })
}

fn rank_by_score(prefs: &PreferenceSet, method: &str, score_of: impl Fn(usize) -> f64) -> RankedList {
    let n = prefs.len();
    let mut order: Vec<usize> = (0..n).collect();
    let scores: Vec<f64> = (0..n).map(score_of).collect();
    // ids are sorted, so a stable sort on descending score breaks ties
    // lexicographically
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let satisfied = satisfied_count(prefs, &order);
    RankedList {
        order: order.iter().map(|&i| prefs.ids[i].clone()).collect(),
        method: method.into(),
        scores: (0..n)
            .map(|i| (prefs.ids[i].clone(), scores[i]))
            .collect(),
        satisfied_pairs: satisfied,
    }
}

/// Rank by how many opponents each candidate beats (p > 0.5).
pub fn wincount_rank(prefs: &PreferenceSet) -> RankedList {
    let n = prefs.len();
    rank_by_score(prefs, "wincount", |i| {
        (0..n)
            .filter(|&j| j != i && prefs.p_idx(i, j) > 0.5)
            .count() as f64
    })
}

/// Build a preference set by evaluating each unordered candidate pair once
/// in canonical (sorted-id) order. `pair_prob(first, second)` must return
/// P(second more relevant than first) — the model's P(y=1) on the triple
/// (query, first, second) — so P(first preferred) is its complement. The
/// complement fills the reverse direction by construction, which enforces
/// the p(i,j) + p(j,i) = 1 invariant even for models that are not exactly
/// antisymmetric under candidate swap.
pub fn prefs_from_pair_fn(
    candidates: &[String],
    mut pair_prob: impl FnMut(&str, &str) -> Result<f64>,
) -> Result<PreferenceSet> {
    if candidates.len() < 2 {
        return Err(Error::Contract("ranking needs >= 2 candidates".into()));
    }
    let mut ids = candidates.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != candidates.len() {
        return Err(Error::Contract("duplicate candidate ids".into()));
    }
    let mut entries = Vec::new();
    for i in 0..ids.len() {
        for j in (i + 1)..ids.len() {
            let y_hat = pair_prob(&ids[i], &ids[j])?;
            if !(0.0..=1.0).contains(&y_hat) {
                return Err(Error::Contract(format!(
                    "pair probability {y_hat} out of [0,1]"
                )));
            }
            entries.push((ids[i].clone(), ids[j].clone(), 1.0 - y_hat));
        }
    }
    PreferenceSet::from_probs(&entries)
}

/// Rank by the sum of a candidate's win probabilities over all opponents.
pub fn probsum_rank(prefs: &PreferenceSet) -> RankedList {
    let n = prefs.len();
    rank_by_score(prefs, "probsum", |i| {
        (0..n).filter(|&j| j != i).map(|j| prefs.p_idx(i, j)).sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn prefs(entries: &[(&str, &str, f64)]) -> PreferenceSet {
        let owned: Vec<(String, String, f64)> = entries
            .iter()
            .map(|(a, b, p)| (a.to_string(), b.to_string(), *p))
            .collect();
        PreferenceSet::from_probs(&owned).unwrap()
    }

    fn transitive() -> PreferenceSet {
        prefs(&[("A", "B", 0.9), ("B", "C", 0.8), ("A", "C", 0.7)])
    }

    fn cycle() -> PreferenceSet {
        prefs(&[("A", "B", 0.9), ("B", "C", 0.9), ("C", "A", 0.9)])
    }

    #[test]
    fn exhaustive_on_transitive_tournament() {
        let r = exhaustive_rank(&transitive()).unwrap();
        assert_eq!(r.order, vec!["A", "B", "C"]);
        assert_eq!(r.satisfied_pairs, 3);
    }

    #[test]
    fn exhaustive_on_cycle_breaks_ties_lexicographically() {
        // brute force over the 6 permutations: the cycle caps at 2/3
        let r = exhaustive_rank(&cycle()).unwrap();
        assert_eq!(r.satisfied_pairs, 2);
        assert_eq!(r.order, vec!["A", "B", "C"]);
    }

    #[test]
    fn exhaustive_two_candidates() {
        let r = exhaustive_rank(&prefs(&[("A", "B", 0.4)])).unwrap();
        assert_eq!(r.order, vec!["B", "A"]);
    }

    #[test]
    fn size_guard_points_to_wincount() {
        let mut entries = Vec::new();
        let ids: Vec<String> = (0..9).map(|i| format!("c{i}")).collect();
        for i in 0..9 {
            for j in (i + 1)..9 {
                entries.push((ids[i].clone(), ids[j].clone(), 0.6));
            }
        }
        let p = PreferenceSet::from_probs(&entries).unwrap();
        assert!(matches!(exhaustive_rank(&p), Err(Error::SizeGuard(_))));
        // wincount still works at this size
        let r = wincount_rank(&p);
        assert_eq!(r.order.len(), 9);
    }

    #[test]
    fn wincount_examples() {
        assert_eq!(wincount_rank(&transitive()).order, vec!["A", "B", "C"]);
        // full tie on the cycle: all wins equal 1 -> lexicographic
        let r = wincount_rank(&cycle());
        assert_eq!(r.order, vec!["A", "B", "C"]);
        assert_eq!(r.scores["A"], 1.0);

        // exact 0.5 satisfies neither side: both win counts zero
        let r = wincount_rank(&prefs(&[("A", "B", 0.5)]));
        assert_eq!(r.order, vec!["A", "B"]);
        assert_eq!(r.scores["A"], 0.0);
        assert_eq!(r.scores["B"], 0.0);
    }

    #[test]
    fn probsum_examples() {
        let r = probsum_rank(&transitive());
        assert_eq!(r.order, vec!["A", "B", "C"]);
        assert!((r.scores["A"] - 1.6).abs() < 1e-12);
        assert!((r.scores["B"] - 0.9).abs() < 1e-12);
        assert!((r.scores["C"] - 0.5).abs() < 1e-12);

        let r = probsum_rank(&cycle());
        assert_eq!(r.order, vec!["A", "B", "C"]);
        assert!((r.scores["A"] - 1.0).abs() < 1e-12);

        let r = probsum_rank(&prefs(&[("A", "B", 0.7)]));
        assert_eq!(r.order, vec!["A", "B"]);
        assert!((r.scores["A"] - 0.7).abs() < 1e-12);
        assert!((r.scores["B"] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn complement_invariant_is_enforced() {
        let bad = vec![
            ("A".to_string(), "B".to_string(), 0.7),
            ("B".to_string(), "A".to_string(), 0.7),
        ];
        assert!(PreferenceSet::from_probs(&bad).is_err());
        let ok = vec![
            ("A".to_string(), "B".to_string(), 0.7),
            ("B".to_string(), "A".to_string(), 0.3),
        ];
        let p = PreferenceSet::from_probs(&ok).unwrap();
        assert!((p.probability("B", "A").unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn input_order_never_matters() {
        let forward = prefs(&[("A", "B", 0.9), ("B", "C", 0.8), ("A", "C", 0.7)]);
        let scrambled = prefs(&[("C", "A", 0.3), ("B", "A", 0.1), ("C", "B", 0.2)]);
        assert_eq!(
            exhaustive_rank(&forward).unwrap().order,
            exhaustive_rank(&scrambled).unwrap().order
        );
        assert_eq!(wincount_rank(&forward).order, wincount_rank(&scrambled).order);
        assert_eq!(probsum_rank(&forward).order, probsum_rank(&scrambled).order);
    }

    #[test]
    fn pair_fn_constant_half_gives_all_half() {
        let ids: Vec<String> = vec!["b".into(), "a".into(), "c".into()];
        let p = prefs_from_pair_fn(&ids, |_, _| Ok(0.5)).unwrap();
        assert_eq!(p.probability("a", "b").unwrap(), 0.5);
        assert_eq!(p.probability("c", "a").unwrap(), 0.5);
    }

    #[test]
    fn pair_fn_complement_holds_by_construction() {
        // an intentionally non-antisymmetric callable still yields a
        // consistent preference set because each pair is evaluated once
        let ids: Vec<String> = vec!["a".into(), "b".into()];
        let p = prefs_from_pair_fn(&ids, |_, _| Ok(0.8)).unwrap();
        let pab = p.probability("a", "b").unwrap();
        let pba = p.probability("b", "a").unwrap();
        assert!((pab + pba - 1.0).abs() < 1e-12);
        assert!((pab - 0.2).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_dominates_heuristics_on_random_sets() {
        let mut rng = Rng::new(404);
        for _ in 0..300 {
            let n = 2 + rng.below(5);
            let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
            let mut entries = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    entries.push((ids[i].clone(), ids[j].clone(), rng.next_f64()));
                }
            }
            let p = PreferenceSet::from_probs(&entries).unwrap();
            let ex = exhaustive_rank(&p).unwrap();
            let wc = wincount_rank(&p);
            let ps = probsum_rank(&p);
            assert!(ex.satisfied_pairs >= wc.satisfied_pairs);
            assert!(ex.satisfied_pairs >= ps.satisfied_pairs);
        }
    }

    #[test]
    fn strictly_transitive_sets_agree_across_methods() {
        // strict transitivity in the stochastic sense: preferences derived
        // from planted utilities (what a trained pairwise model emits for a
        // total order); mere >0.5-transitivity is not enough for prob-sum
        let mut rng = Rng::new(505);
        for _ in 0..100 {
            let n = 2 + rng.below(5);
            let ids: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            let mut utility = vec![0.0; n];
            let mut level = 0.0;
            for &cand in &order {
                // descending utilities with gaps >= 0.5 keep every p off 0.5
                utility[cand] = level;
                level -= 0.5 + rng.next_f64();
            }
            let mut entries = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    let p_win = 1.0 / (1.0 + (utility[j] - utility[i]).exp());
                    entries.push((ids[i].clone(), ids[j].clone(), p_win));
                }
            }
            let p = PreferenceSet::from_probs(&entries).unwrap();
            let expect: Vec<String> = order.iter().map(|&i| ids[i].clone()).collect();
            assert_eq!(exhaustive_rank(&p).unwrap().order, expect);
            assert_eq!(wincount_rank(&p).order, expect);
            assert_eq!(probsum_rank(&p).order, expect);
        }
    }
}
