use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, LogNormal};
use serde::{Deserialize, Serialize};

use super::{ApplicationDag, StageSpec, TraceError};

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntRange {
    pub min: u32,
    pub max: u32,
}

impl IntRange {
    pub fn new(min: u32, max: u32) -> Self {
        Self { min, max }
    }

    pub fn mean(&self) -> f64 {
        (self.min as f64 + self.max as f64) / 2.0
    }

    fn sample(&self, rng: &mut impl Rng) -> u32 {
        rng.random_range(self.min..=self.max)
    }
}

/// Per-task work distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkDistribution {
    /// `exp(N(mu, sigma²))`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    Uniform {
        min: f64,
        max: f64,
    },
    Constant {
        value: f64,
    },
}

impl WorkDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            WorkDistribution::LogNormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
            WorkDistribution::Uniform { min, max } => (min + max) / 2.0,
            WorkDistribution::Constant { value } => value,
        }
    }

    fn validate(&self) -> Result<(), String> {
        match *self {
            WorkDistribution::LogNormal { mu, sigma } if mu.is_finite() && sigma.is_finite() && sigma >= 0.0 => Ok(()),
            WorkDistribution::Uniform { min, max } if min > 0.0 && max >= min && max.is_finite() => Ok(()),
            WorkDistribution::Constant { value } if value > 0.0 && value.is_finite() => Ok(()),
            other => Err(format!("{other:?} does not produce positive finite work")),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            WorkDistribution::LogNormal { mu, sigma } => LogNormal::new(mu, sigma).expect("validated").sample(rng),
            WorkDistribution::Uniform { min, max } => {
                if max > min {
                    rng.random_range(min..max)
                } else {
                    min
                }
            }
            WorkDistribution::Constant { value } => value,
        }
    }
}

/// Parameters of a synthetic workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub app_count: usize,
    /// Applications per second of the Poisson arrival process.
    pub arrival_rate: f64,
    pub stage_count_range: IntRange,
    pub task_count_range: IntRange,
    pub task_work_distribution: WorkDistribution,
    /// Per-application multiplier on task work, drawn uniformly from this list.
    #[serde(default = "default_scale_factors")]
    pub scale_factors: Vec<f64>,
    /// Offered load as a fraction of cluster capacity, in (0, 1].
    pub target_load: f64,
    pub seed: u64,
}

fn default_scale_factors() -> Vec<f64> {
    vec![1.0]
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |field: &'static str, reason: String| Err(TraceError::InvalidSpec { field, reason });
        if self.app_count == 0 {
            return bad("app_count", "must be positive".into());
        }
        if !(self.arrival_rate.is_finite() && self.arrival_rate > 0.0) {
            return bad("arrival_rate", format!("{} is not a positive rate", self.arrival_rate));
        }
        for (field, r) in [
            ("stage_count_range", self.stage_count_range),
            ("task_count_range", self.task_count_range),
        ] {
            if r.min == 0 || r.max < r.min {
                return bad(
                    field,
                    format!("[{}, {}] must be a non-empty range of positive counts", r.min, r.max),
                );
            }
        }
        if let Err(reason) = self.task_work_distribution.validate() {
            return bad("task_work_distribution", reason);
        }
        if self.scale_factors.is_empty() || self.scale_factors.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("scale_factors", "must be a non-empty list of positive factors".into());
        }
        if !(self.target_load > 0.0 && self.target_load <= 1.0) {
            return bad("target_load", format!("{} is outside (0, 1]", self.target_load));
        }
        Ok(())
    }
}

/// Expected total work of one generated application.
pub fn expected_app_work(spec: &WorkloadSpec) -> f64 {
    let scale = spec.scale_factors.iter().sum::<f64>() / spec.scale_factors.len().max(1) as f64;
    spec.stage_count_range.mean() * spec.task_count_range.mean() * spec.task_work_distribution.mean() * scale
}

/// Arrival rate λ with `E[work per app] · λ = target_load · capacity`.
pub fn calibrate_arrival_rate(spec: &WorkloadSpec, cluster_capacity: f64) -> Result<f64, TraceError> {
    if !(cluster_capacity.is_finite() && cluster_capacity > 0.0) {
        return Err(TraceError::InvalidSpec {
            field: "cluster_capacity",
            reason: format!("{cluster_capacity} is not positive"),
        });
    }
    let work = expected_app_work(spec);
    if !(work > 0.0) {
        return Err(TraceError::ZeroExpectedWork);
    }
    Ok(spec.target_load * cluster_capacity / work)
}

/// Draws `spec.app_count` random applications with Poisson arrivals.
///
/// Structure and arrivals come from separate streams of the same seed, so
/// changing only the rate rescales every arrival time by the same factor.
pub fn generate_workload(spec: &WorkloadSpec) -> Result<Vec<ApplicationDag>, TraceError> {
    spec.validate()?;
    let mut shape_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut arrival_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    arrival_rng.set_stream(1);

    let mut clock = 0.0f64;
    let mut apps = Vec::with_capacity(spec.app_count);
    for app_id in 0..spec.app_count {
        let gap: f64 = Exp1.sample(&mut arrival_rng);
        clock += gap;
        let scale = spec.scale_factors[shape_rng.random_range(0..spec.scale_factors.len())];
        let n = spec.stage_count_range.sample(&mut shape_rng);
        let stages = (0..n)
            .map(|i| {
                let task_count = spec.task_count_range.sample(&mut shape_rng);
                let task_work = spec.task_work_distribution.sample(&mut shape_rng) * scale;
                let parent_ids = if i == 0 { vec![] } else { vec![shape_rng.random_range(0..i)] };
                StageSpec {
                    stage_id: i,
                    task_count,
                    task_work,
                    data_volume: task_work * task_count as f64,
                    parent_ids,
                }
            })
            .collect();
        apps.push(ApplicationDag {
            app_id: app_id as u64,
            arrival_time: clock / spec.arrival_rate,
            stages,
        });
    }
    Ok(apps)
}
