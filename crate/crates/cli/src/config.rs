use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use chipcut_core::data::SynthConfig;
use chipcut_core::model::{build_resnet, BottleneckRatio, NetworkGraph, Variant};
use chipcut_core::partition::{LinkModel, Strategy};
use chipcut_core::profiler::PlanConfig;
use chipcut_core::tensor::{Precision, Shape};
use chipcut_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// A configuration or input problem that the user must fix. Maps to exit
/// code 1.
#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

fn invalid(msg: impl Into<String>) -> ValidationError {
    ValidationError(msg.into())
}

/// Experiment description as written in the TOML config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub ratios: Vec<usize>,
    #[serde(default = "default_precision")]
    pub precision: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelSection,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub link: LinkSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub profile: ProfileSection,
}

fn default_precision() -> String {
    "single".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub variant: String,
    /// Defaults to the dataset's class count.
    pub classes: Option<usize>,
    /// `[h, w]` of the network input. Defaults to the dataset image size.
    pub input_size: Option<[usize; 2]>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    #[default]
    Contiguous,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub n_chips: usize,
    pub strategy: StrategyName,
    /// Layer name to chip, for the explicit strategy. The input node may be
    /// omitted and then sits on chip 0.
    pub map: BTreeMap<String, usize>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            n_chips: 2,
            strategy: StrategyName::Contiguous,
            map: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LinkSection {
    fn default() -> Self {
        let link = LinkModel::default();
        Self {
            alpha: link.alpha,
            beta: link.beta,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    #[default]
    Synthetic,
    Cifar100,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub source: DatasetSource,
    pub cifar_train: Option<PathBuf>,
    pub cifar_test: Option<PathBuf>,
    pub synthetic: SyntheticSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    pub h: usize,
    pub w: usize,
    pub noise: f64,
    pub blobs: usize,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self {
            n_train: 2000,
            n_test: 500,
            classes: s.classes,
            h: s.h,
            w: s.w,
            noise: s.noise,
            blobs: s.blobs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            momentum: t.momentum,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSection {
    /// Seeded random inputs pushed through the partitioned model.
    pub inputs: usize,
    /// Bounded queue depth between chips when `inputs > 1`.
    pub pipeline_depth: usize,
}

impl Default for ProfileSection {
    fn default() -> Self {
        Self {
            inputs: 1,
            pipeline_depth: 1,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
    pub out: Option<PathBuf>,
}

/// Where training and test images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic {
        cfg: SynthConfig,
        n_train: usize,
        n_test: usize,
    },
    Cifar100 {
        train: PathBuf,
        test: PathBuf,
    },
}

impl DataSource {
    pub fn classes(&self) -> usize {
        match self {
            DataSource::Synthetic { cfg, .. } => cfg.classes,
            DataSource::Cifar100 { .. } => 100,
        }
    }

    pub fn image_size(&self) -> [usize; 2] {
        match self {
            DataSource::Synthetic { cfg, .. } => [cfg.h, cfg.w],
            DataSource::Cifar100 { .. } => [32, 32],
        }
    }
}

/// A validated experiment with every default and override applied.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub seed: u64,
    pub precision: Precision,
    pub output_dir: PathBuf,
    pub ratios: Vec<BottleneckRatio>,
    pub variant: Variant,
    pub classes: usize,
    pub input: Shape,
    pub plan: PlanConfig,
    pub link: LinkModel,
    pub data: DataSource,
    pub training: TrainConfig,
    pub profile: ProfileSection,
}

impl Experiment {
    pub fn build_graph(&self, r: BottleneckRatio) -> chipcut_core::Result<NetworkGraph> {
        build_resnet(self.variant, r, self.classes, self.input)
    }

    /// Whether the network input matches the dataset images, which training
    /// requires.
    pub fn input_matches_data(&self) -> bool {
        [self.input.h, self.input.w] == self.data.image_size()
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ValidationError> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ValidationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("config: cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies `overrides` and checks every field. Paths are resolved
    /// against the current directory.
    pub fn resolve(&self, overrides: &Overrides) -> Result<Experiment, ValidationError> {
        let seed = overrides.seed.unwrap_or(self.seed);
        let precision = match overrides.precision {
            Some(p) => p,
            None => self
                .precision
                .parse()
                .map_err(|e: chipcut_core::Error| invalid(e.to_string()))?,
        };
        let output_dir = overrides
            .out
            .clone()
            .unwrap_or_else(|| self.output_dir.clone());

        if self.ratios.is_empty() {
            return Err(invalid("ratios: must not be empty"));
        }
        let mut ratios = Vec::with_capacity(self.ratios.len());
        for (i, &r) in self.ratios.iter().enumerate() {
            let r = BottleneckRatio::new(r)
                .map_err(|_| invalid(format!("ratios[{i}]: must be >= 1, got {r}")))?;
            if ratios.contains(&r) {
                return Err(invalid(format!("ratios[{i}]: duplicate ratio {r}")));
            }
            ratios.push(r);
        }

        let variant: Variant = self
            .model
            .variant
            .parse()
            .map_err(|e: chipcut_core::Error| invalid(e.to_string()))?;
        let data = self.dataset.resolve(seed)?;
        let classes = self.model.classes.unwrap_or_else(|| data.classes());
        if classes < 2 {
            return Err(invalid(format!(
                "model.classes: must be >= 2, got {classes}"
            )));
        }
        let [h, w] = self.model.input_size.unwrap_or_else(|| data.image_size());
        if h == 0 || w == 0 {
            return Err(invalid("model.input_size: both sides must be >= 1"));
        }
        let input = Shape::new(1, 3, h, w);

        let link = LinkModel::for_precision(self.link.alpha, self.link.beta, precision)
            .map_err(|e| invalid(e.to_string()))?;
        let training = TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            lr: self.training.lr,
            momentum: self.training.momentum,
            seed,
        };
        training.validate().map_err(|e| invalid(e.to_string()))?;
        if self.profile.inputs == 0 {
            return Err(invalid("profile.inputs: must be >= 1"));
        }
        if self.profile.pipeline_depth == 0 {
            return Err(invalid("profile.pipeline_depth: must be >= 1"));
        }

        let mut exp = Experiment {
            seed,
            precision,
            output_dir,
            ratios,
            variant,
            classes,
            input,
            plan: PlanConfig::default(),
            link,
            data,
            training,
            profile: self.profile.clone(),
        };
        let base = exp
            .build_graph(BottleneckRatio::new(1).expect("1 is a valid ratio"))
            .map_err(|e| invalid(format!("model: {e}")))?;
        exp.plan = self.partition.resolve(&base)?;
        Ok(exp)
    }
}

impl DatasetSection {
    fn resolve(&self, seed: u64) -> Result<DataSource, ValidationError> {
        match self.source {
            DatasetSource::Synthetic => {
                let s = &self.synthetic;
                let cfg = SynthConfig {
                    seed,
                    classes: s.classes,
                    h: s.h,
                    w: s.w,
                    noise: s.noise,
                    blobs: s.blobs,
                };
                cfg.validate()
                    .map_err(|e| invalid(format!("dataset.{e}")))?;
                for (field, n) in [("n_train", s.n_train), ("n_test", s.n_test)] {
                    if n < s.classes {
                        return Err(invalid(format!(
                            "dataset.synthetic.{field}: must be >= classes ({}), got {n}",
                            s.classes
                        )));
                    }
                }
                Ok(DataSource::Synthetic {
                    cfg,
                    n_train: s.n_train,
                    n_test: s.n_test,
                })
            }
            DatasetSource::Cifar100 => {
                let existing =
                    |field: &str, p: &Option<PathBuf>| -> Result<PathBuf, ValidationError> {
                        let p = p.as_ref().ok_or_else(|| {
                            invalid(format!(
                                "dataset.{field}: required when source = \"cifar100\""
                            ))
                        })?;
                        if !p.is_file() {
                            return Err(invalid(format!(
                                "dataset.{field}: no such file {}",
                                p.display()
                            )));
                        }
                        Ok(p.clone())
                    };
                Ok(DataSource::Cifar100 {
                    train: existing("cifar_train", &self.cifar_train)?,
                    test: existing("cifar_test", &self.cifar_test)?,
                })
            }
        }
    }
}

impl PartitionSection {
    /// Node ids are the same for every ratio, so names resolve once against
    /// the r=1 graph.
    fn resolve(&self, graph: &NetworkGraph) -> Result<PlanConfig, ValidationError> {
        let layers = graph.len() - 1;
        if self.n_chips == 0 || self.n_chips > layers {
            return Err(invalid(format!(
                "partition.n_chips: must lie in 1..={layers}, got {}",
                self.n_chips
            )));
        }
        let strategy = match self.strategy {
            StrategyName::Contiguous => {
                if !self.map.is_empty() {
                    return Err(invalid(
                        "partition.map: only allowed with strategy = \"explicit\"",
                    ));
                }
                Strategy::Contiguous
            }
            StrategyName::Explicit => {
                let mut ids = BTreeMap::new();
                for (name, &chip) in &self.map {
                    let node = graph
                        .nodes()
                        .iter()
                        .find(|n| &n.name == name)
                        .ok_or_else(|| invalid(format!("partition.map: unknown layer {name:?}")))?;
                    if chip >= self.n_chips {
                        return Err(invalid(format!(
                            "partition.map.{name}: chip {chip} out of range for {} chips",
                            self.n_chips
                        )));
                    }
                    ids.insert(node.id, chip);
                }
                ids.entry(graph.input()).or_insert(0);
                if let Some(node) = graph.nodes().iter().find(|n| !ids.contains_key(&n.id)) {
                    return Err(invalid(format!(
                        "partition.map: no chip for layer {:?}",
                        node.name
                    )));
                }
                Strategy::Explicit(ids)
            }
        };
        Ok(PlanConfig {
            n_chips: self.n_chips,
            strategy,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
ratios = [1, 4]
[model]
variant = "tiny"
"#;

    fn resolve(text: &str) -> Result<Experiment, ValidationError> {
        ExperimentConfig::from_toml(text)?.resolve(&Overrides::default())
    }

    #[test]
    fn defaults_fill_a_minimal_config() {
        let exp = resolve(MINIMAL).unwrap();
        assert_eq!(exp.seed, 7);
        assert_eq!(exp.training.seed, 7);
        assert_eq!(exp.classes, 20);
        assert_eq!(exp.input, Shape::new(1, 3, 8, 8));
        assert_eq!(exp.plan, PlanConfig::default());
        assert_eq!(exp.link.word_size, 4);
        assert!(matches!(exp.data, DataSource::Synthetic { ref cfg, .. } if cfg.seed == 7));
    }

    #[test]
    fn overrides_win() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let exp = cfg
            .resolve(&Overrides {
                seed: Some(9),
                precision: Some(Precision::Double),
                out: Some("elsewhere".into()),
            })
            .unwrap();
        assert_eq!(exp.training.seed, 9);
        assert_eq!(exp.link.word_size, 8);
        assert_eq!(exp.output_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("ratios = [1, 4]", "ratios = []", "ratios"),
            ("ratios = [1, 4]", "ratios = [1, 0]", "ratios[1]"),
            (
                "variant = \"tiny\"",
                "variant = \"resnet19\"",
                "model.variant",
            ),
            ("seed = 7", "", "seed"),
            ("[model]", "bogus = 1\n[model]", "bogus"),
        ];
        for (from, to, field) in cases {
            let text = MINIMAL.replace(from, to);
            let err = resolve(&text).unwrap_err().to_string();
            assert!(err.contains(field), "{field}: {err}");
        }
        let extra = format!("{MINIMAL}[training]\nlr = -1.0\n");
        assert!(resolve(&extra)
            .unwrap_err()
            .to_string()
            .contains("training.lr"));
        let chips = format!("{MINIMAL}[partition]\nn_chips = 0\n");
        assert!(resolve(&chips)
            .unwrap_err()
            .to_string()
            .contains("partition.n_chips"));
        let cifar = format!(
            "{MINIMAL}[dataset]\nsource = \"cifar100\"\ncifar_train = \"/nonexistent/train.bin\"\n"
        );
        assert!(resolve(&cifar)
            .unwrap_err()
            .to_string()
            .contains("dataset.cifar_train"));
    }

    #[test]
    fn explicit_map_resolves_names() {
        let graph = build_resnet(
            Variant::Tiny,
            BottleneckRatio::new(1).unwrap(),
            20,
            Shape::new(1, 3, 8, 8),
        )
        .unwrap();
        let split = graph.len() / 2;
        let mut text = format!("{MINIMAL}[partition]\nstrategy = \"explicit\"\n[partition.map]\n");
        for n in graph.nodes().iter().skip(1) {
            text.push_str(&format!(
                "\"{}\" = {}\n",
                n.name,
                usize::from(n.id >= split)
            ));
        }
        let exp = resolve(&text).unwrap();
        match exp.plan.strategy {
            Strategy::Explicit(map) => {
                assert_eq!(map.len(), graph.len());
                assert_eq!(map[&0], 0);
                assert_eq!(map[&(graph.len() - 1)], 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        let missing = text.replace("\"head\" = 1\n", "");
        assert!(resolve(&missing)
            .unwrap_err()
            .to_string()
            .contains("\"head\""));
    }

    #[test]
    fn shipped_examples_validate() {
        for text in [
            include_str!("../configs/tiny_synthetic.toml"),
            include_str!("../configs/resnet18_profile.toml"),
        ] {
            resolve(text).unwrap();
        }
    }
}
