//! The insight pool: a bounded store of one-sentence design principles with
//! novelty-gated admission, utility-ranked retrieval, tiered credit
//! assignment and eviction.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Principles the pool starts from before any extraction has happened.
pub const SEED_INSIGHTS: [&str; 5] = [
    "Design adaptive hybrid meta-heuristics synergistically fusing multiple search paradigms and dynamically tune operator parameters based on search stage or problem features.",
    "Employ machine learning to mine problem structures and use learned insights to intelligently bias towards promising search regions.",
    "Explore objective function engineering by introducing auxiliary objectives or dynamically adjusting weights to reshape the search landscape.",
    "Construct problem-specialized solution representations and co-design dedicated operators to fully leverage the representation's structure.",
    "Implement intelligent diversification based on solution feature space analysis to systematically target uncovered regions and escape local optima.",
];

/// Effectiveness assigned to every newly admitted or seeded insight.
pub const INITIAL_EFFECTIVENESS: f64 = 0.5;

/// Range of the normalized score fed into the credit tiers.
pub const RHO_MIN: f64 = -1.0;
pub const RHO_MAX: f64 = 2.0;

/// Hard bounds on effectiveness.
pub const EFFECTIVENESS_MIN: f64 = -1.0;
pub const EFFECTIVENESS_MAX: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InsightId(pub u64);

impl fmt::Display for InsightId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insight {
    pub id: InsightId,
    pub text: String,
    #[serde(rename = "E")]
    pub effectiveness: f64,
    #[serde(rename = "N")]
    pub usage_count: u32,
    #[serde(rename = "last_used")]
    pub last_used_gen: Option<u32>,
    #[serde(rename = "last_success")]
    pub last_success_gen: Option<u32>,
    #[serde(rename = "created")]
    pub created_gen: u32,
    pub is_seed: bool,
}

impl Insight {
    /// Generation the eviction clock runs from: last use, or creation when
    /// the insight was never retrieved.
    pub fn clock_start(&self) -> u32 {
        self.last_used_gen.unwrap_or(self.created_gen)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoolConfig {
    pub capacity: usize,
    pub jaccard_threshold: f64,
    pub select_count: usize,
    pub usage_penalty: f64,
    pub recency_bonus: f64,
    pub recency_window: u32,
    pub ema_rate: f64,
    pub decay: f64,
    pub grace_usage: u32,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            capacity: 30,
            jaccard_threshold: 0.7,
            select_count: 3,
            usage_penalty: 0.1,
            recency_bonus: 0.2,
            recency_window: 2,
            ema_rate: 0.3,
            decay: 0.01,
            grace_usage: 3,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<(), PoolError> {
        if self.select_count < 1 || self.capacity < self.select_count {
            return Err(PoolError::Config("capacity >= select_count >= 1 required".into()));
        }
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold <= 1.0) {
            return Err(PoolError::Config("jaccard_threshold must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_rate) {
            return Err(PoolError::Config("ema_rate must be in [0, 1]".into()));
        }
        Ok(())
    }

    /// Adaptive utility `E - w_u ln(N + 1) + B_r`.
    pub fn utility(&self, insight: &Insight, t: u32) -> f64 {
        let recent = insight
            .last_success_gen
            .is_some_and(|s| t.saturating_sub(s) <= self.recency_window);
        let bonus = if recent { self.recency_bonus } else { 0.0 };
        insight.effectiveness - self.usage_penalty * (insight.usage_count as f64 + 1.0).ln() + bonus
    }

    /// `E - R_decay (t - t_last_used)`.
    pub fn eviction_score(&self, insight: &Insight, t: u32) -> f64 {
        let idle = t.saturating_sub(insight.clock_start()) as f64;
        insight.effectiveness - self.decay * idle
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("pool not empty")]
    NotEmpty,
    #[error("invalid pool config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Admission {
    Admitted { id: InsightId },
    Rejected { reason: RejectReason },
}

impl Admission {
    pub fn is_admitted(&self) -> bool {
        matches!(self, Admission::Admitted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    TooSimilar { to: InsightId, similarity: f64 },
}

/// One pruning step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eviction {
    pub insight: Insight,
    pub score: f64,
    /// Set when every member was inside its grace period.
    pub grace_override: bool,
}

/// Record of one credit application to one insight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditUpdate {
    pub id: InsightId,
    pub before: f64,
    pub after: f64,
}

fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard similarity over lowercase alphanumeric word sets. Two texts without
/// any tokens are identical.
pub fn jaccard_similarity(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    let union = ta.union(&tb).count();
    if union == 0 {
        return 1.0;
    }
    ta.intersection(&tb).count() as f64 / union as f64
}

/// `(g_worst - g_new) / (g_worst - g_best)` clamped to `[-1, 2]`. A uniform
/// population scores 1 at or below the best and 0 otherwise.
pub fn normalized_score(g_new: f64, g_best: f64, g_worst: f64) -> f64 {
    let span = g_worst - g_best;
    if span == 0.0 {
        return if g_new <= g_best { 1.0 } else { 0.0 };
    }
    ((g_worst - g_new) / span).clamp(RHO_MIN, RHO_MAX)
}

/// Range of the credit signal given the clamp on the normalized score.
pub const CREDIT_MIN: f64 = -0.8;
pub const CREDIT_MAX: f64 = 1.2;

/// Tiered credit for an offspring against pre-generation population stats
/// (objectives minimized).
pub fn credit_signal(g_new: f64, g_best: f64, g_avg: f64, g_worst: f64) -> f64 {
    let rho = normalized_score(g_new, g_best, g_worst);
    let g = if g_new <= g_best {
        0.8 + 0.2 * rho
    } else if g_new <= g_avg {
        0.2 + 0.6 * rho
    } else {
        -0.3 + 0.5 * rho
    };
    // 0.8 + 0.2 * 2.0 rounds to just above 1.2
    g.clamp(CREDIT_MIN, CREDIT_MAX)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InsightPool {
    config: PoolConfig,
    insights: Vec<Insight>,
    next_id: u64,
}

impl InsightPool {
    pub fn new(config: PoolConfig) -> Self {
        InsightPool { config, insights: Vec::new(), next_id: 0 }
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    pub fn insights(&self) -> &[Insight] {
        &self.insights
    }

    pub fn get(&self, id: InsightId) -> Option<&Insight> {
        self.insights.iter().find(|k| k.id == id)
    }

    pub fn len(&self) -> usize {
        self.insights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.insights.is_empty()
    }

    fn push(&mut self, text: String, t: u32, is_seed: bool) -> InsightId {
        let id = InsightId(self.next_id);
        self.next_id += 1;
        self.insights.push(Insight {
            id,
            text,
            effectiveness: INITIAL_EFFECTIVENESS,
            usage_count: 0,
            last_used_gen: None,
            last_success_gen: None,
            created_gen: t,
            is_seed,
        });
        id
    }

    /// Loads the built-in seed principles into an empty pool.
    pub fn seed(&mut self) -> Result<Vec<InsightId>, PoolError> {
        if !self.insights.is_empty() {
            return Err(PoolError::NotEmpty);
        }
        Ok(SEED_INSIGHTS.iter().map(|s| self.push((*s).to_string(), 0, true)).collect())
    }

    /// Admits `candidate` when it is strictly below the similarity threshold
    /// against every current member. Admission does not prune.
    pub fn admit(&mut self, candidate: &str, t: u32) -> Admission {
        let text = candidate.trim();
        if text.is_empty() {
            return Admission::Rejected { reason: RejectReason::Empty };
        }
        let closest = self
            .insights
            .iter()
            .map(|k| (k.id, jaccard_similarity(&k.text, text)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((to, similarity)) = closest {
            if similarity >= self.config.jaccard_threshold {
                return Admission::Rejected { reason: RejectReason::TooSimilar { to, similarity } };
            }
        }
        Admission::Admitted { id: self.push(text.to_string(), t, false) }
    }

    pub fn utility(&self, insight: &Insight, t: u32) -> f64 {
        self.config.utility(insight, t)
    }

    pub fn eviction_score(&self, insight: &Insight, t: u32) -> f64 {
        self.config.eviction_score(insight, t)
    }

    /// Top-`s` insights by utility. Ties go to lower usage, then older
    /// creation. Returned insights are marked used at `t`; the returned values
    /// are snapshots taken after that bookkeeping.
    pub fn retrieve(&mut self, t: u32) -> Vec<Insight> {
        let mut ranked: Vec<(f64, usize)> = self
            .insights
            .iter()
            .enumerate()
            .map(|(i, k)| (self.config.utility(k, t), i))
            .collect();
        ranked.sort_by(|a, b| {
            let ka = &self.insights[a.1];
            let kb = &self.insights[b.1];
            b.0.total_cmp(&a.0)
                .then(ka.usage_count.cmp(&kb.usage_count))
                .then(ka.created_gen.cmp(&kb.created_gen))
                .then(ka.id.cmp(&kb.id))
        });
        ranked.truncate(self.config.select_count);
        ranked
            .into_iter()
            .map(|(_, i)| {
                let k = &mut self.insights[i];
                k.usage_count += 1;
                k.last_used_gen = Some(t);
                k.clone()
            })
            .collect()
    }

    /// EMA update of every contributing insight toward `g_eff`. Ids that are
    /// no longer in the pool are skipped and returned.
    pub fn apply_credit(&mut self, contributing: &[InsightId], g_eff: f64, t: u32) -> (Vec<CreditUpdate>, Vec<InsightId>) {
        assert!(g_eff.is_finite(), "credit signal must be finite");
        let alpha = self.config.ema_rate;
        let mut updates = Vec::new();
        let mut skipped = Vec::new();
        for id in contributing {
            match self.insights.iter_mut().find(|k| k.id == *id) {
                Some(k) => {
                    let before = k.effectiveness;
                    k.effectiveness = ((1.0 - alpha) * before + alpha * g_eff).clamp(EFFECTIVENESS_MIN, EFFECTIVENESS_MAX);
                    if g_eff > 0.0 {
                        k.last_success_gen = Some(t);
                    }
                    updates.push(CreditUpdate { id: *id, before, after: k.effectiveness });
                }
                None => {
                    log::warn!("credit for unknown insight {id} skipped");
                    skipped.push(*id);
                }
            }
        }
        (updates, skipped)
    }

    /// Evicts until the pool fits its capacity. Members still inside their
    /// grace period are only evicted when nobody else is eligible.
    pub fn prune(&mut self, t: u32) -> Vec<Eviction> {
        let mut evicted = Vec::new();
        while self.insights.len() > self.config.capacity {
            let grace = self.config.grace_usage;
            let pick = |only_mature: bool| {
                self.insights
                    .iter()
                    .enumerate()
                    .filter(|(_, k)| !only_mature || k.usage_count >= grace)
                    .map(|(i, k)| (i, self.config.eviction_score(k, t)))
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            };
            let (index, score, grace_override) = match pick(true) {
                Some((i, s)) => (i, s, false),
                None => {
                    let (i, s) = pick(false).expect("pool over capacity is non-empty");
                    (i, s, true)
                }
            };
            let insight = self.insights.remove(index);
            evicted.push(Eviction { insight, score, grace_override });
        }
        evicted
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn insight(e: f64, n: u32, last_success: Option<u32>) -> Insight {
        Insight {
            id: InsightId(0),
            text: "x".into(),
            effectiveness: e,
            usage_count: n,
            last_used_gen: None,
            last_success_gen: last_success,
            created_gen: 0,
            is_seed: false,
        }
    }

    #[test]
    fn seeding() {
        let mut pool = InsightPool::new(PoolConfig::default());
        assert_eq!(pool.seed().unwrap().len(), 5);
        assert_eq!(pool.len(), 5);
        assert!(pool.insights().iter().all(|k| k.is_seed && k.effectiveness == 0.5 && k.usage_count == 0));
        assert!(pool.insights()[0].text.contains("adaptive hybrid meta-heuristics"));
        assert_eq!(pool.seed(), Err(PoolError::NotEmpty));
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard_similarity("Use greedy fits", "use GREEDY fits!"), 1.0);
        assert_eq!(jaccard_similarity("a b c", "b c d"), 0.5);
        assert_eq!(jaccard_similarity("a b", "c d"), 0.0);
        assert_eq!(jaccard_similarity("", "  --  "), 1.0);
    }

    #[test]
    fn admission_threshold_is_exclusive() {
        // 7 shared of 10 total tokens is exactly 0.7
        let base = "a b c d e f g h";
        let exact = "a b c d e f g x y";
        assert!((jaccard_similarity(base, exact) - 0.7).abs() < 1e-15);
        let mut pool = InsightPool::new(PoolConfig::default());
        assert!(pool.admit(base, 1).is_admitted());
        assert!(!pool.admit(base, 1).is_admitted());
        assert!(!pool.admit(exact, 1).is_admitted());

        // 0.69 admitted against threshold 0.7, and 0.70 rejected
        let cfg = PoolConfig { jaccard_threshold: 0.7, ..PoolConfig::default() };
        let mut pool = InsightPool::new(cfg);
        let base: Vec<String> = (0..69).map(|i| format!("w{i}")).collect();
        pool.admit(&base.join(" "), 0);
        let mut cand: Vec<String> = base.clone();
        cand.extend((0..31).map(|i| format!("z{i}")));
        assert!((jaccard_similarity(&base.join(" "), &cand.join(" ")) - 0.69).abs() < 1e-12);
        assert!(pool.admit(&cand.join(" "), 0).is_admitted());
    }

    #[test]
    fn blank_candidate_rejected() {
        let mut pool = InsightPool::new(PoolConfig::default());
        assert_eq!(pool.admit("   ", 0), Admission::Rejected { reason: RejectReason::Empty });
    }

    #[test]
    fn utility_examples() {
        let cfg = PoolConfig::default();
        assert!((cfg.utility(&insight(0.8, 0, None), 5) - 0.8).abs() < 1e-15);
        let u = cfg.utility(&insight(0.8, 3, Some(4)), 5);
        assert!((u - (0.8 - 0.1 * 4f64.ln() + 0.2)).abs() < 1e-15);
        assert!((u - 0.8614).abs() < 1e-4);
        assert!((cfg.utility(&insight(0.0, 0, Some(5)), 5) - 0.2).abs() < 1e-15);
        // outside the recency window
        assert!((cfg.utility(&insight(0.0, 0, Some(2)), 5)).abs() < 1e-15);
    }

    #[test]
    fn retrieval_takes_top_s_and_counts_usage() {
        let mut pool = InsightPool::new(PoolConfig::default());
        pool.seed().unwrap();
        pool.insights[3].effectiveness = 0.9;
        let got = pool.retrieve(1);
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].id, InsightId(3));
        assert!(got.iter().all(|k| k.usage_count == 1 && k.last_used_gen == Some(1)));
        let untouched = pool.insights().iter().filter(|k| k.usage_count == 0).count();
        assert_eq!(untouched, 2);

        let mut small = InsightPool::new(PoolConfig::default());
        small.admit("alpha beta gamma", 0);
        small.admit("delta epsilon zeta", 0);
        assert_eq!(small.retrieve(0).len(), 2);
        assert!(InsightPool::new(PoolConfig::default()).retrieve(0).is_empty());
    }

    #[test]
    fn retrieval_prefers_less_used_on_ties() {
        let mut pool = InsightPool::new(PoolConfig { select_count: 1, usage_penalty: 0.0, ..PoolConfig::default() });
        pool.seed().unwrap();
        let first = pool.retrieve(0)[0].id;
        let second = pool.retrieve(0)[0].id;
        assert_ne!(first, second);
    }

    #[test]
    fn normalized_score_examples() {
        assert_eq!(normalized_score(10.0, 10.0, 20.0), 1.0);
        assert_eq!(normalized_score(20.0, 10.0, 20.0), 0.0);
        assert!((normalized_score(12.0, 10.0, 20.0) - 0.8).abs() < 1e-15);
        assert_eq!(normalized_score(-100.0, 10.0, 20.0), 2.0);
        assert_eq!(normalized_score(100.0, 10.0, 20.0), -1.0);
        assert_eq!(normalized_score(5.0, 5.0, 5.0), 1.0);
        assert_eq!(normalized_score(6.0, 5.0, 5.0), 0.0);
    }

    #[test]
    fn credit_examples() {
        assert!((credit_signal(10.0, 10.0, 15.0, 20.0) - 1.0).abs() < 1e-15);
        assert!((credit_signal(12.0, 10.0, 15.0, 20.0) - 0.68).abs() < 1e-12);
        assert!((credit_signal(18.0, 10.0, 15.0, 20.0) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn ema_examples() {
        let mut pool = InsightPool::new(PoolConfig::default());
        let id = match pool.admit("some principle text", 0) {
            Admission::Admitted { id } => id,
            _ => unreachable!(),
        };
        let (up, skipped) = pool.apply_credit(&[id, InsightId(99)], 1.0, 3);
        assert!((up[0].after - 0.65).abs() < 1e-15);
        assert_eq!(skipped, vec![InsightId(99)]);
        assert_eq!(pool.get(id).unwrap().last_success_gen, Some(3));

        let before = pool.get(id).unwrap().effectiveness;
        pool.apply_credit(&[id], before, 4);
        assert!((pool.get(id).unwrap().effectiveness - before).abs() < 1e-15);

        pool.apply_credit(&[id], -0.2, 5);
        assert_eq!(pool.get(id).unwrap().last_success_gen, Some(4));
    }

    #[test]
    fn eviction_score_examples() {
        let cfg = PoolConfig::default();
        let mut k = insight(0.5, 1, None);
        k.last_used_gen = Some(10);
        assert!((cfg.eviction_score(&k, 20) - 0.4).abs() < 1e-15);
        assert_eq!(cfg.eviction_score(&k, 10), 0.5);
        let mut fresh = insight(0.5, 0, None);
        fresh.created_gen = 4;
        assert!((cfg.eviction_score(&fresh, 14) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn prune_keeps_capacity_and_evicts_argmin() {
        let cfg = PoolConfig { capacity: 2, grace_usage: 0, ..PoolConfig::default() };
        let mut pool = InsightPool::new(cfg);
        pool.admit("one two three", 0);
        pool.admit("four five six", 0);
        assert!(pool.prune(0).is_empty());
        pool.admit("seven eight nine", 0);
        pool.insights[0].effectiveness = 0.4;
        pool.insights[1].effectiveness = 0.1;
        let ev = pool.prune(0);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].insight.text, "four five six");
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn prune_respects_grace_period() {
        let cfg = PoolConfig { capacity: 2, ..PoolConfig::default() };
        let mut pool = InsightPool::new(cfg);
        pool.admit("one two three", 0);
        pool.admit("four five six", 0);
        pool.admit("seven eight nine", 0);
        // only the first is mature; it goes even though its score is highest
        pool.insights[0].usage_count = 3;
        pool.insights[0].effectiveness = 1.0;
        let ev = pool.prune(0);
        assert_eq!(ev[0].insight.text, "one two three");
        assert!(!ev[0].grace_override);
        // everyone in grace: the capacity still holds
        pool.admit("ten eleven twelve", 0);
        let ev = pool.prune(0);
        assert!(ev[0].grace_override);
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn pool_at_default_capacity_returns_to_thirty() {
        let mut pool = InsightPool::new(PoolConfig::default());
        for i in 0..31 {
            assert!(pool.admit(&format!("unique{i} token{i} marker{i}"), 0).is_admitted());
        }
        assert_eq!(pool.len(), 31);
        pool.prune(1);
        assert_eq!(pool.len(), 30);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn credit_is_bounded_and_tier_monotone(
                best in -100.0f64..100.0,
                d1 in 0.0f64..50.0,
                d2 in 0.0f64..50.0,
                x in -200.0f64..300.0,
                y in -200.0f64..300.0,
            ) {
                let avg = best + d1;
                let worst = avg + d2;
                let g = credit_signal(x, best, avg, worst);
                prop_assert!((-0.8..=1.2).contains(&g));
                let (lo, hi) = if x < y { (x, y) } else { (y, x) };
                let tier = |v: f64| if v <= best { 0 } else if v <= avg { 1 } else { 2 };
                if tier(lo) == tier(hi) {
                    prop_assert!(credit_signal(lo, best, avg, worst) >= credit_signal(hi, best, avg, worst));
                }
            }

            #[test]
            fn effectiveness_stays_bounded(signals in proptest::collection::vec(-0.8f64..=1.2, 1..100)) {
                let mut pool = InsightPool::new(PoolConfig::default());
                pool.admit("bounded effectiveness check", 0);
                let id = pool.insights()[0].id;
                for (t, g) in signals.into_iter().enumerate() {
                    pool.apply_credit(&[id], g, t as u32);
                    let e = pool.get(id).unwrap().effectiveness;
                    prop_assert!((-1.0..=1.5).contains(&e));
                }
            }

            #[test]
            fn utility_decreases_with_usage(e in -1.0f64..1.5, n in 0u32..1000) {
                let cfg = PoolConfig::default();
                prop_assert!(cfg.utility(&insight(e, n + 1, None), 3) < cfg.utility(&insight(e, n, None), 3));
            }

            #[test]
            fn jaccard_is_symmetric_and_bounded(a in "[a-d ]{0,12}", b in "[a-d ]{0,12}") {
                let s = jaccard_similarity(&a, &b);
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert_eq!(s, jaccard_similarity(&b, &a));
            }
        }
    }
}
