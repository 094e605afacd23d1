//! Monte Carlo comparison of index policies on a k-armed normal bandit with
//! geometric discounting.
//!
//! Randomness is organised for common random numbers: replication `r` uses
//! ChaCha stream `r`, the arm means are drawn at word position 0, and the
//! observations of arm `i` come from word position `(i + 1) << 64`. The `k`-th
//! pull of arm `i` therefore sees the same noise under every policy.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrected::{index_avg, index_ca, index_ca_prime, index_ua, index_ua_prime};
use crate::error::{config, Error, Result};
use crate::exact::{gittins_exact, DpConfig};
use crate::model::{Discounting, NormalArm};

/// Allocation rule: pull the arm with the largest index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Exact,
    Ca,
    CaPrime,
    Ua,
    UaPrime,
    Avg,
    /// Posterior mean.
    Greedy,
}

impl Policy {
    pub const ALL: [Policy; 7] =
        [Policy::Exact, Policy::Ca, Policy::CaPrime, Policy::Ua, Policy::UaPrime, Policy::Avg, Policy::Greedy];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Exact => "exact",
            Policy::Ca => "ca",
            Policy::CaPrime => "ca_prime",
            Policy::Ua => "ua",
            Policy::UaPrime => "ua_prime",
            Policy::Avg => "avg",
            Policy::Greedy => "greedy",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| config(format!("unknown policy `{s}`")))
    }
}

type CacheKey = (u64, u64);

/// Memoised exact indices, keyed by discount factor and signal-to-noise ratio.
///
/// By location/scale equivariance the index of `N(u, v)` with noise `sigma^2`
/// is `u + sigma * lambda0(v / sigma^2)`, so only `lambda0` is stored.
pub struct IndexCache {
    dp: DpConfig,
    entries: Mutex<HashMap<CacheKey, Arc<OnceLock<Result<f64>>>>>,
}

impl IndexCache {
    pub fn new(dp: DpConfig) -> Self {
        Self { dp, entries: Mutex::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact index of `arm`, solving on first use.
    pub fn exact(&self, arm: &NormalArm, d: &Discounting) -> Result<f64> {
        let snr = arm.snr();
        let key = (d.beta().to_bits(), snr.to_bits());
        let slot = self.entries.lock().expect("cache lock").entry(key).or_default().clone();
        let unit = slot.get_or_init(|| {
            let unit = NormalArm::unit(0.0, snr)?;
            gittins_exact(&unit, d, &self.dp).map(|r| r.value)
        });
        let lambda0 = unit.clone()?;
        Ok(arm.mean() + arm.obs_variance().sqrt() * lambda0)
    }
}

impl Default for IndexCache {
    fn default() -> Self {
        Self::new(DpConfig::default())
    }
}

/// A rule assigning an index to an arm's current posterior.
pub trait IndexRule: Sync {
    fn name(&self) -> &str;
    fn index(&self, arm: &NormalArm, d: &Discounting) -> Result<f64>;
}

/// [`Policy`] bound to an exact-index cache.
pub struct PolicyRule<'a> {
    pub policy: Policy,
    pub cache: &'a IndexCache,
}

impl IndexRule for PolicyRule<'_> {
    fn name(&self) -> &str {
        self.policy.name()
    }

    fn index(&self, arm: &NormalArm, d: &Discounting) -> Result<f64> {
        index_of(self.policy, arm, d, self.cache)
    }
}

/// Index of `arm` under `policy`, in the arm's reward units.
pub fn index_of(policy: Policy, arm: &NormalArm, d: &Discounting, cache: &IndexCache) -> Result<f64> {
    let closed = match policy {
        Policy::Greedy => return Ok(arm.mean()),
        Policy::Exact => return cache.exact(arm, d),
        Policy::Ca => index_ca,
        Policy::CaPrime => index_ca_prime,
        Policy::Ua => index_ua,
        Policy::UaPrime => index_ua_prime,
        Policy::Avg => index_avg,
    };
    let sigma = arm.obs_variance().sqrt();
    Ok(arm.mean() + sigma * closed(0.0, arm.snr(), d.beta())?.value)
}

/// Bandit experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub arms: Vec<NormalArm>,
    pub beta: f64,
    /// Stop once the discounted remaining reward is provably below this.
    pub truncation_tol: f64,
    pub replications: u64,
    pub seed: u64,
}

impl BanditConfig {
    pub fn new(arms: Vec<NormalArm>, beta: f64, replications: u64, seed: u64) -> Self {
        Self { arms, beta, truncation_tol: 1e-6, replications, seed }
    }

    pub fn validate(&self) -> Result<Discounting> {
        if self.arms.len() < 2 {
            return Err(config(format!("need at least 2 arms, got {}", self.arms.len())));
        }
        if self.replications < 1 {
            return Err(config("replications must be at least 1"));
        }
        if !(self.truncation_tol > 0.0 && self.truncation_tol.is_finite()) {
            return Err(config(format!("truncation_tol must be positive, got {}", self.truncation_tol)));
        }
        Discounting::new(self.beta)
    }
}

/// Aggregate outcome of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: String,
    pub mean_discounted_reward: f64,
    pub std_err: f64,
    pub replications: u64,
    pub mean_pulls_per_arm: Vec<f64>,
}

/// One replication: discounted reward and the ordered list of pulled arms.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub reward: f64,
    pub pulls: Vec<usize>,
}

/// Safety stop far beyond any horizon the truncation rule produces.
const MAX_STEPS: usize = 10_000_000;

fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Run replication `rep` of `cfg` under `rule`.
pub fn run_replication(cfg: &BanditConfig, d: &Discounting, rule: &dyn IndexRule, rep: u64) -> Result<Trajectory> {
    let k = cfg.arms.len();
    let beta = d.beta();
    let mut theta_rng = replication_rng(cfg.seed, rep);
    let theta: Vec<f64> = cfg
        .arms
        .iter()
        .map(|a| {
            let e: f64 = theta_rng.sample(StandardNormal);
            a.mean() + a.variance().sqrt() * e
        })
        .collect();
    let mut noise: Vec<ChaCha8Rng> = (0..k)
        .map(|i| {
            let mut rng = replication_rng(cfg.seed, rep);
            rng.set_word_pos(((i as u128) + 1) << 64);
            rng
        })
        .collect();

    let mut arms = cfg.arms.clone();
    let mut index: Vec<f64> = arms.iter().map(|a| rule.index(a, d)).collect::<Result<_>>()?;
    let mut reward = 0.0;
    let mut weight = 1.0;
    let mut pulls = Vec::new();
    while pulls.len() < MAX_STEPS {
        let tail = arms
            .iter()
            .map(|a| a.mean().abs() + 5.0 * (a.variance() + a.obs_variance()).sqrt())
            .fold(0.0, f64::max);
        if weight * tail / (1.0 - beta) < cfg.truncation_tol {
            break;
        }
        // first maximum wins ties
        let mut best = 0;
        for i in 1..k {
            if index[i] > index[best] {
                best = i;
            }
        }
        let e: f64 = noise[best].sample(StandardNormal);
        let y = theta[best] + arms[best].obs_variance().sqrt() * e;
        reward += weight * y;
        weight *= beta;
        arms[best] = arms[best].posterior_update(y)?;
        index[best] = rule.index(&arms[best], d)?;
        pulls.push(best);
    }
    Ok(Trajectory { reward, pulls })
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Simulate `cfg` under an arbitrary index rule.
///
/// Replications run in parallel; their results are reduced in replication
/// order, so the output is bit-identical for any thread count.
pub fn simulate_rule(cfg: &BanditConfig, rule: &dyn IndexRule) -> Result<SimResult> {
    let d = cfg.validate()?;
    let k = cfg.arms.len();
    let per_rep: Vec<(f64, Vec<u64>)> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let t = run_replication(cfg, &d, rule, rep)?;
            let mut counts = vec![0u64; k];
            t.pulls.iter().for_each(|&i| counts[i] += 1);
            Ok((t.reward, counts))
        })
        .collect::<Result<_>>()?;

    let n = cfg.replications as f64;
    let mut sum = Neumaier::default();
    let mut pulls = vec![0u64; k];
    for (r, counts) in &per_rep {
        sum.add(*r);
        pulls.iter_mut().zip(counts).for_each(|(p, c)| *p += c);
    }
    let mean = sum.value() / n;
    let mut ss = Neumaier::default();
    per_rep.iter().for_each(|(r, _)| ss.add((r - mean).powi(2)));
    let std_err = if cfg.replications > 1 { (ss.value() / (n - 1.0) / n).sqrt() } else { 0.0 };
    Ok(SimResult {
        policy: rule.name().to_string(),
        mean_discounted_reward: mean,
        std_err,
        replications: cfg.replications,
        mean_pulls_per_arm: pulls.iter().map(|&p| p as f64 / n).collect(),
    })
}

/// Simulate one policy with a fresh exact-index cache.
pub fn simulate(cfg: &BanditConfig, policy: Policy) -> Result<SimResult> {
    let cache = IndexCache::default();
    simulate_rule(cfg, &PolicyRule { policy, cache: &cache })
}

/// Simulate several policies on common random numbers, sharing `cache`.
pub fn compare_with(cfg: &BanditConfig, policies: &[Policy], cache: &IndexCache) -> Result<Vec<SimResult>> {
    policies.iter().map(|&policy| simulate_rule(cfg, &PolicyRule { policy, cache })).collect()
}

/// [`compare_with`] using a fresh cache at the default grid settings.
pub fn compare(cfg: &BanditConfig, policies: &[Policy]) -> Result<Vec<SimResult>> {
    compare_with(cfg, policies, &IndexCache::default())
}

/// CSV with header `policy,mean,std_err,replications`.
pub fn results_to_csv(results: &[SimResult], precision: usize) -> String {
    let mut out = String::from("policy,mean,std_err,replications\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.policy,
            crate::report::format_fixed(r.mean_discounted_reward, precision),
            crate::report::format_fixed(r.std_err, precision),
            r.replications
        );
    }
    out
}
