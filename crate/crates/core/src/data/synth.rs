//! Synthetic multi-task tabular data with controlled label prevalence and
//! injected subgroup bias.
//!
//! Labels follow a logistic ground truth: a per-task linear predictor over
//! the generic features (main effects plus pairwise categorical
//! interactions), an intercept calibrated so the expected prevalence hits the
//! target exactly, and a subgroup-dependent intercept shift of
//! `bias[a][m] * g / (G - 1)` for subgroup `g` of attribute `a`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::data::dataset::TabularDataset;
use crate::data::schema::{CategoricalColumn, Schema, SensitiveAttribute};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTask {
    pub name: String,
    pub prevalence: f64,
    /// Standard deviation of the feature-driven part of the logit.
    #[serde(default = "one")]
    pub signal: f64,
    /// Share of that variance carried by pairwise categorical interactions.
    #[serde(default)]
    pub interaction: f64,
    /// Generic feature names (`cat_j`, `cont_l`) the task depends on; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drivers: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthAttribute {
    pub name: String,
    pub subgroups: Vec<String>,
    pub proportions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub tasks: Vec<SynthTask>,
    #[serde(default)]
    pub attributes: Vec<SynthAttribute>,
    /// `bias[a][m]`: logit shift between the first and last subgroup of
    /// attribute `a` on task `m`. Empty means no bias.
    #[serde(default)]
    pub bias: Vec<Vec<f64>>,
    /// Generic categorical feature count.
    pub p: usize,
    /// Continuous feature count.
    pub q: usize,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    /// Cardinality of every generic categorical feature.
    #[serde(default = "default_categories")]
    pub categories: usize,
    /// Probability that a generic feature cell is blanked out.
    #[serde(default)]
    pub missing_rate: f64,
}

fn one() -> f64 {
    1.0
}

fn default_categories() -> usize {
    4
}

impl SynthConfig {
    /// Five tasks spanning the observed 4.10%..23.77% prevalence range (the
    /// three interior prevalences are placeholders) and three attributes.
    pub fn default_profile(n: usize, seed: u64) -> Self {
        let task = |name: &str, prevalence: f64| SynthTask {
            name: name.into(),
            prevalence,
            signal: 1.5,
            interaction: 0.3,
            drivers: None,
        };
        SynthConfig {
            tasks: vec![
                task("MALIGNANCY", 0.041),
                task("DIABETES", 0.10),
                task("REJECTION", 0.2377),
                task("INFECTION", 0.13),
                task("CARDIOVASCULAR", 0.18),
            ],
            attributes: vec![
                SynthAttribute {
                    name: "GENDER".into(),
                    subgroups: vec!["M".into(), "F".into()],
                    proportions: vec![0.6, 0.4],
                },
                SynthAttribute {
                    name: "AGE_GROUP".into(),
                    subgroups: vec!["Adult".into(), "Pediatric".into()],
                    proportions: vec![0.85, 0.15],
                },
                SynthAttribute {
                    name: "ETHCAT".into(),
                    subgroups: ["White", "Black", "Asian", "Hispanic", "Other"]
                        .iter()
                        .map(|s| s.to_string())
                        .collect(),
                    proportions: vec![0.6, 0.15, 0.05, 0.15, 0.05],
                },
            ],
            bias: vec![
                vec![0.0, 0.2, 0.4, 0.0, 0.1],
                vec![0.5, 0.8, 1.5, 0.2, 0.6],
                vec![0.3, 0.2, 0.6, 0.4, 0.3],
            ],
            p: 6,
            q: 4,
            n,
            seed,
            categories: 4,
            missing_rate: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::config("tasks", "at least one task is required"));
        }
        for (m, t) in self.tasks.iter().enumerate() {
            if !(t.prevalence > 0.0 && t.prevalence < 1.0) {
                return Err(Error::config(
                    format!("tasks[{m}].prevalence"),
                    format!("must lie in (0, 1), got {}", t.prevalence),
                ));
            }
            if !(t.signal.is_finite() && t.signal >= 0.0) {
                return Err(Error::config(
                    format!("tasks[{m}].signal"),
                    "must be finite and >= 0",
                ));
            }
            if !(0.0..=1.0).contains(&t.interaction) {
                return Err(Error::config(
                    format!("tasks[{m}].interaction"),
                    "must lie in [0, 1]",
                ));
            }
            if let Some(drivers) = &t.drivers {
                for d in drivers {
                    if self.driver_slot(d).is_none() {
                        return Err(Error::config(
                            format!("tasks[{m}].drivers"),
                            format!("unknown generic feature `{d}`"),
                        ));
                    }
                }
            }
        }
        for (a, attr) in self.attributes.iter().enumerate() {
            if attr.subgroups.len() < 2 {
                return Err(Error::config(
                    format!("attributes[{a}].subgroups"),
                    "need at least 2 subgroups",
                ));
            }
            if attr.proportions.len() != attr.subgroups.len() {
                return Err(Error::config(
                    format!("attributes[{a}].proportions"),
                    "length must match subgroups",
                ));
            }
            let total: f64 = attr.proportions.iter().sum();
            if attr.proportions.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
                return Err(Error::config(
                    format!("attributes[{a}].proportions"),
                    format!("must be non-negative and sum to 1, got sum {total}"),
                ));
            }
        }
        if !self.bias.is_empty() {
            if self.bias.len() != self.attributes.len() {
                return Err(Error::config("bias", "needs one row per attribute"));
            }
            for (a, row) in self.bias.iter().enumerate() {
                if row.len() != self.tasks.len() {
                    return Err(Error::config(
                        format!("bias[{a}]"),
                        "needs one entry per task",
                    ));
                }
                if row.iter().any(|b| !b.is_finite()) {
                    return Err(Error::config(
                        format!("bias[{a}]"),
                        "entries must be finite",
                    ));
                }
            }
        }
        if self.p + self.attributes.len() == 0 {
            return Err(Error::config(
                "p",
                "need at least one categorical feature or attribute",
            ));
        }
        if self.categories < 2 {
            return Err(Error::config("categories", "must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::config("missing_rate", "must lie in [0, 1)"));
        }
        Ok(())
    }

    fn driver_slot(&self, name: &str) -> Option<Driver> {
        let parse = |prefix: &str, limit: usize| {
            name.strip_prefix(prefix)
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&i| i >= 1 && i <= limit)
                .map(|i| i - 1)
        };
        parse("cat_", self.p)
            .map(Driver::Cat)
            .or_else(|| parse("cont_", self.q).map(Driver::Cont))
    }

    pub fn schema(&self) -> Schema {
        let mut categorical: Vec<CategoricalColumn> = (1..=self.p)
            .map(|j| CategoricalColumn {
                name: format!("cat_{j}"),
                categories: (0..self.categories).map(|k| format!("c{k}")).collect(),
            })
            .collect();
        categorical.extend(self.attributes.iter().map(|a| CategoricalColumn {
            name: a.name.clone(),
            categories: a.subgroups.clone(),
        }));
        let mut schema = Schema {
            categorical,
            continuous: (1..=self.q).map(|l| format!("cont_{l}")).collect(),
            tasks: self.tasks.iter().map(|t| t.name.clone()).collect(),
            sensitive: self
                .attributes
                .iter()
                .map(|a| SensitiveAttribute {
                    name: a.name.clone(),
                    subgroups: a.subgroups.clone(),
                    exclude_from_model: false,
                })
                .collect(),
        };
        schema.resolve().expect("generated schema is valid");
        schema
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Driver {
    Cat(usize),
    Cont(usize),
}

fn standardize(v: &mut [f64]) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let scale = if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 };
    for x in v.iter_mut() {
        *x = (*x - mean) * scale;
    }
}

/// Intercept `b` with `mean(sigmoid(b + offsets)) == target`, by bisection.
fn calibrate_intercept(offsets: &[f64], target: f64) -> f64 {
    let rate = |b: f64| offsets.iter().map(|&o| sigmoid(b + o)).sum::<f64>() / offsets.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn synthesize(config: &SynthConfig) -> Result<TabularDataset> {
    config.validate()?;
    let n = config.n;
    let (p, q, k) = (config.p, config.q, config.categories);
    let n_attr = config.attributes.len();
    let m_tasks = config.tasks.len();

    // Separate streams so that e.g. changing the bias never moves features.
    let mut feature_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut effect_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut label_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xD1B5_4A32_D192_ED03);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x94D0_49BB_1331_11EB);

    let mut cat_true = vec![0u32; n * p];
    let mut cont_true = vec![0.0f64; n * q];
    let mut groups = vec![0u32; n * n_attr];
    for r in 0..n {
        for j in 0..p {
            cat_true[r * p + j] = feature_rng.random_range(0..k) as u32;
        }
        for l in 0..q {
            cont_true[r * q + l] = StandardNormal.sample(&mut feature_rng);
        }
        for (a, attr) in config.attributes.iter().enumerate() {
            let u: f64 = feature_rng.random();
            let mut acc = 0.0;
            let mut g = attr.proportions.len() - 1;
            for (i, &prop) in attr.proportions.iter().enumerate() {
                acc += prop;
                if u < acc {
                    g = i;
                    break;
                }
            }
            groups[r * n_attr + a] = g as u32;
        }
    }

    let mut labels = vec![0u8; n * m_tasks];
    for (m, task) in config.tasks.iter().enumerate() {
        let drivers: Vec<Driver> = match &task.drivers {
            Some(names) => names.iter().filter_map(|d| config.driver_slot(d)).collect(),
            None => (0..p)
                .map(Driver::Cat)
                .chain((0..q).map(Driver::Cont))
                .collect(),
        };
        let cat_drivers: Vec<usize> = drivers
            .iter()
            .filter_map(|d| {
                if let Driver::Cat(j) = d {
                    Some(*j)
                } else {
                    None
                }
            })
            .collect();
        let cont_drivers: Vec<usize> = drivers
            .iter()
            .filter_map(|d| {
                if let Driver::Cont(l) = d {
                    Some(*l)
                } else {
                    None
                }
            })
            .collect();

        let cat_effects: Vec<Vec<f64>> = cat_drivers
            .iter()
            .map(|_| {
                (0..k)
                    .map(|_| StandardNormal.sample(&mut effect_rng))
                    .collect()
            })
            .collect();
        let cont_weights: Vec<f64> = cont_drivers
            .iter()
            .map(|_| StandardNormal.sample(&mut effect_rng))
            .collect();
        let pairs: Vec<(usize, usize)> = cat_drivers.windows(2).map(|w| (w[0], w[1])).collect();
        let tables: Vec<Vec<f64>> = pairs
            .iter()
            .map(|_| {
                (0..k * k)
                    .map(|_| StandardNormal.sample(&mut effect_rng))
                    .collect()
            })
            .collect();

        let mut main = vec![0.0; n];
        let mut inter = vec![0.0; n];
        for r in 0..n {
            let cats = &cat_true[r * p..(r + 1) * p];
            let conts = &cont_true[r * q..(r + 1) * q];
            let mut s = 0.0;
            for (e, &j) in cat_effects.iter().zip(&cat_drivers) {
                s += e[cats[j] as usize];
            }
            for (w, &l) in cont_weights.iter().zip(&cont_drivers) {
                s += w * conts[l];
            }
            main[r] = s;
            inter[r] = tables
                .iter()
                .zip(&pairs)
                .map(|(t, &(a, b))| t[cats[a] as usize * k + cats[b] as usize])
                .sum();
        }
        standardize(&mut main);
        standardize(&mut inter);
        let (wm, wi) = if pairs.is_empty() {
            (1.0, 0.0)
        } else {
            ((1.0 - task.interaction).sqrt(), task.interaction.sqrt())
        };
        let offsets: Vec<f64> = (0..n)
            .map(|r| {
                let mut z = task.signal * (wm * main[r] + wi * inter[r]);
                for (a, attr) in config.attributes.iter().enumerate() {
                    let b = config.bias.get(a).map_or(0.0, |row| row[m]);
                    let g = groups[r * n_attr + a] as f64;
                    z += b * g / (attr.subgroups.len() - 1) as f64;
                }
                z
            })
            .collect();
        let intercept = if n > 0 {
            calibrate_intercept(&offsets, task.prevalence)
        } else {
            0.0
        };
        for r in 0..n {
            let prob = sigmoid(intercept + offsets[r]);
            let u: f64 = label_rng.random();
            labels[r * m_tasks + m] = u8::from(u < prob);
        }
    }

    let schema = config.schema();
    let width = p + n_attr;
    let mut categorical = vec![0u32; n * width];
    let mut continuous = cont_true;
    for r in 0..n {
        for j in 0..p {
            let code = cat_true[r * p + j];
            let missing =
                config.missing_rate > 0.0 && mask_rng.random::<f64>() < config.missing_rate;
            categorical[r * width + j] = if missing { k as u32 } else { code };
        }
        for a in 0..n_attr {
            categorical[r * width + p + a] = groups[r * n_attr + a];
        }
        for l in 0..q {
            if config.missing_rate > 0.0 && mask_rng.random::<f64>() < config.missing_rate {
                continuous[r * q + l] = f64::NAN;
            }
        }
    }
    TabularDataset::from_parts(schema, categorical, continuous, labels, Vec::new())
}
