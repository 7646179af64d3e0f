use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How relation features are assembled from the pair's object features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `[union geometry, F_i + F_j]`: identical for `i -> j` and `j -> i`.
    #[default]
    SymmetricUnion,
    /// `[union geometry, F_i, F_j]`.
    Ordered,
}

/// Attribute gate over a category; `None` accepts anything.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeFilter {
    pub shapes: Option<Vec<usize>>,
    pub colors: Option<Vec<usize>>,
    pub sizes: Option<Vec<usize>>,
}

impl AttributeFilter {
    pub fn matches(&self, shape: usize, color: usize, size: usize) -> bool {
        let ok = |set: &Option<Vec<usize>>, v: usize| set.as_ref().is_none_or(|s| s.contains(&v));
        ok(&self.shapes, shape) && ok(&self.colors, color) && ok(&self.sizes, size)
    }
}

/// Category-gated predicate: fires for an ordered pair whose subject and
/// object categories pass the two filters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemanticRule {
    pub name: String,
    #[serde(default)]
    pub subject: AttributeFilter,
    #[serde(default)]
    pub object: AttributeFilter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_shapes: usize,
    pub n_colors: usize,
    pub n_sizes: usize,
    pub semantic_predicates: Vec<SemanticRule>,
    /// Probability that a matching semantic rule overrides the spatial label.
    pub semantic_rate: f64,
    /// Inclusive `[min, max]` object count.
    pub objects_per_scene: [usize; 2],
    pub feature_noise_sigma: f64,
    /// Spread of the mixing weight between a color and its confusable
    /// partner; 0 disables the confusion.
    pub ambiguity_sigma: f64,
    pub seed: u64,
    pub feature_mode: FeatureMode,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_shapes: 3,
            n_colors: 8,
            n_sizes: 2,
            semantic_predicates: Vec::new(),
            semantic_rate: 1.0,
            objects_per_scene: [3, 6],
            feature_noise_sigma: 0.01,
            ambiguity_sigma: 0.0,
            seed: 0,
            feature_mode: FeatureMode::SymmetricUnion,
        }
    }
}

impl WorldConfig {
    pub fn num_categories(&self) -> usize {
        self.n_shapes * self.n_colors * self.n_sizes
    }

    pub fn num_predicates(&self) -> usize {
        super::SPATIAL_PREDICATES.len() + self.semantic_predicates.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_shapes == 0 || self.n_colors == 0 || self.n_sizes == 0 {
            return Err(Error::Config("attribute counts must be positive".into()));
        }
        if self.n_sizes > super::SIZE_RADII.len() {
            return Err(Error::Config(format!(
                "at most {} sizes are supported",
                super::SIZE_RADII.len()
            )));
        }
        let [lo, hi] = self.objects_per_scene;
        if lo < 2 || lo > hi || hi > 10 {
            return Err(Error::Config(format!(
                "objects_per_scene must satisfy 2 <= min <= max <= 10, got [{lo}, {hi}]"
            )));
        }
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            return Err(Error::Config("feature_noise_sigma must be >= 0".into()));
        }
        if !(self.ambiguity_sigma >= 0.0 && self.ambiguity_sigma.is_finite()) {
            return Err(Error::Config("ambiguity_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.semantic_rate) {
            return Err(Error::Config("semantic_rate must lie in [0, 1]".into()));
        }
        for rule in &self.semantic_predicates {
            let bad = |f: &AttributeFilter| {
                f.shapes.iter().flatten().any(|&v| v >= self.n_shapes)
                    || f.colors.iter().flatten().any(|&v| v >= self.n_colors)
                    || f.sizes.iter().flatten().any(|&v| v >= self.n_sizes)
            };
            if bad(&rule.subject) || bad(&rule.object) {
                return Err(Error::Config(format!("semantic rule `{}` references unknown attributes", rule.name)));
            }
            if super::SPATIAL_PREDICATES.contains(&rule.name.as_str()) {
                return Err(Error::Config(format!("semantic rule `{}` shadows a spatial predicate", rule.name)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Target share of test relationship instances whose triple is withheld
    /// from training.
    pub zero_shot_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 800,
            val: 100,
            test: 400,
            zero_shot_fraction: 0.0,
        }
    }
}

impl SplitConfig {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.test == 0 {
            return Err(Error::Config("train and test splits must be non-empty".into()));
        }
        if !(0.0..0.5).contains(&self.zero_shot_fraction) {
            return Err(Error::Config(format!(
                "zero_shot_fraction must lie in [0, 0.5), got {}",
                self.zero_shot_fraction
            )));
        }
        Ok(())
    }
}

/// Everything needed to regenerate a dataset, echoed into every split file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub world: WorldConfig,
    pub split: SplitConfig,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.split.validate()
    }
}
