use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::NormKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnsembleMode {
    /// Single encoder and head.
    #[serde(rename = "BL", alias = "bl")]
    Baseline,
    /// N independently trained models, logits averaged at inference.
    #[serde(rename = "PE", alias = "pe")]
    Pure,
    /// N encoders trained jointly on one merged output.
    #[serde(rename = "ME", alias = "me")]
    Merge,
    /// One grouped model emulating ME.
    #[serde(rename = "EE", alias = "ee")]
    Easy,
}

impl EnsembleMode {
    pub fn code(self) -> &'static str {
        match self {
            EnsembleMode::Baseline => "bl",
            EnsembleMode::Pure => "pe",
            EnsembleMode::Merge => "me",
            EnsembleMode::Easy => "ee",
        }
    }
}

impl fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bl" | "baseline" => Ok(EnsembleMode::Baseline),
            "pe" | "pure" => Ok(EnsembleMode::Pure),
            "me" | "merge" => Ok(EnsembleMode::Merge),
            "ee" | "easy" => Ok(EnsembleMode::Easy),
            other => Err(Error::invalid(format!("unknown ensemble mode '{other}' (expected bl, pe, me or ee)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    /// Filters of one ensemble member; an EE block is `filters × groups` wide.
    pub filters: usize,
    pub kernel_size: usize,
    pub conv_layers_in_block: usize,
    pub norm: NormKind,
    #[serde(default)]
    pub pool: Option<usize>,
    /// Per-block group count for stepwise EE; `None` uses the spec's `N`.
    #[serde(default)]
    pub n_groups: Option<usize>,
}

impl BlockSpec {
    pub fn new(filters: usize, conv_layers_in_block: usize, pool: Option<usize>) -> Self {
        Self {
            filters,
            kernel_size: 3,
            conv_layers_in_block,
            norm: NormKind::Layer,
            pool,
            n_groups: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConvType {
    Group,
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MergeWeight {
    /// λ = 1/N
    InverseN,
    /// λ = 1
    One,
}

/// Three-letter ablation code: convolution type, normalization type, merge weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AblationCode {
    pub conv: ConvType,
    pub norm: NormKind,
    pub weight: MergeWeight,
}

impl AblationCode {
    pub const GGN: AblationCode = AblationCode {
        conv: ConvType::Group,
        norm: NormKind::Group,
        weight: MergeWeight::InverseN,
    };

    /// The five codes of the standard ablation run.
    pub fn standard() -> Vec<AblationCode> {
        ["GGN", "CGN", "GG1", "GLN", "CL1"]
            .iter()
            .map(|c| c.parse().expect("valid code"))
            .collect()
    }

    /// Number of factors in which two codes differ.
    pub fn distance(&self, other: &AblationCode) -> usize {
        usize::from(self.conv != other.conv)
            + usize::from(self.norm != other.norm)
            + usize::from(self.weight != other.weight)
    }
}

impl fmt::Display for AblationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.conv {
            ConvType::Group => 'G',
            ConvType::Conventional => 'C',
        };
        let n = match self.norm {
            NormKind::Group => 'G',
            NormKind::Layer => 'L',
            NormKind::Batch => 'B',
        };
        let w = match self.weight {
            MergeWeight::InverseN => 'N',
            MergeWeight::One => '1',
        };
        write!(f, "{c}{n}{w}")
    }
}

impl FromStr for AblationCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.trim().chars().collect();
        let bad = || Error::invalid(format!("invalid ablation code '{s}' (expected e.g. GGN, CGN, GG1, GLN, CL1)"));
        if chars.len() != 3 {
            return Err(bad());
        }
        let conv = match chars[0] {
            'G' => ConvType::Group,
            'C' => ConvType::Conventional,
            _ => return Err(bad()),
        };
        let norm = match chars[1] {
            'G' => NormKind::Group,
            'L' => NormKind::Layer,
            'B' => NormKind::Batch,
            _ => return Err(bad()),
        };
        let weight = match chars[2] {
            'N' => MergeWeight::InverseN,
            '1' => MergeWeight::One,
            _ => return Err(bad()),
        };
        Ok(Self { conv, norm, weight })
    }
}

impl Serialize for AblationCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AblationCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_multiplier() -> f64 {
    1.0
}

/// Declarative VGG-style 1-D CNN plus ensemble configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub blocks: Vec<BlockSpec>,
    pub input_channels: usize,
    pub input_width: usize,
    pub num_classes: usize,
    pub ensemble_mode: EnsembleMode,
    #[serde(rename = "N")]
    pub n: usize,
    /// Merge weight; `None` means 1/N.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_multiplier")]
    pub filter_multiplier: f64,
    /// EE only: overrides convolution type, normalization and merge weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationCode>,
}

impl ArchitectureSpec {
    /// Eight weight layers: seven convolutions in five pooled blocks plus the
    /// dense head. The first convolution has 16 filters.
    pub fn vgg8(input_channels: usize, input_width: usize, num_classes: usize) -> Self {
        let blocks = vec![
            BlockSpec::new(16, 1, Some(2)),
            BlockSpec::new(32, 1, Some(2)),
            BlockSpec::new(64, 2, Some(2)),
            BlockSpec::new(64, 2, Some(2)),
            BlockSpec::new(64, 1, None),
        ];
        Self {
            blocks,
            input_channels,
            input_width,
            num_classes,
            ensemble_mode: EnsembleMode::Baseline,
            n: 1,
            lambda: None,
            filter_multiplier: 1.0,
            ablation: None,
        }
    }

    /// Named architectures: `vgg8`, or `vgg-blocks-D` for its first `D` blocks.
    pub fn named(name: &str, input_channels: usize, input_width: usize, num_classes: usize) -> Result<Self> {
        let mut spec = Self::vgg8(input_channels, input_width, num_classes);
        match name.to_ascii_lowercase().as_str() {
            "vgg8" => Ok(spec),
            other => {
                let depth: usize = other
                    .strip_prefix("vgg-blocks-")
                    .and_then(|d| d.parse().ok())
                    .ok_or_else(|| Error::invalid(format!("unknown architecture '{name}' (expected vgg8 or vgg-blocks-D)")))?;
                spec = spec.truncated(depth)?;
                Ok(spec)
            }
        }
    }

    /// Keeps the first `depth` blocks.
    pub fn truncated(mut self, depth: usize) -> Result<Self> {
        if depth == 0 || depth > self.blocks.len() {
            return Err(Error::invalid(format!("depth {depth} outside 1..={}", self.blocks.len())));
        }
        self.blocks.truncate(depth);
        Ok(self)
    }

    pub fn with_mode(mut self, mode: EnsembleMode, n: usize) -> Self {
        self.ensemble_mode = mode;
        self.n = n;
        self
    }

    pub fn with_filter_multiplier(mut self, x: f64) -> Self {
        self.filter_multiplier = x;
        self
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        for b in &mut self.blocks {
            b.norm = norm;
        }
        self
    }

    /// Sets per-block group counts (stepwise EE).
    pub fn with_stepwise(mut self, groups: &[usize]) -> Result<Self> {
        if groups.len() != self.blocks.len() {
            return Err(Error::invalid(format!(
                "{} group counts for {} blocks",
                groups.len(),
                self.blocks.len()
            )));
        }
        for (b, &g) in self.blocks.iter_mut().zip(groups) {
            b.n_groups = Some(g);
        }
        self.ensemble_mode = EnsembleMode::Easy;
        self.n = *groups.last().expect("nonempty");
        Ok(self)
    }

    /// Per-member filter count of a block after the multiplier.
    pub fn block_filters(&self, block: usize) -> usize {
        ((self.blocks[block].filters as f64 * self.filter_multiplier).round() as usize).max(1)
    }

    /// Channel groups of each block: 1 outside EE.
    pub fn block_groups(&self) -> Vec<usize> {
        match self.ensemble_mode {
            EnsembleMode::Easy => self.blocks.iter().map(|b| b.n_groups.unwrap_or(self.n)).collect(),
            _ => vec![1; self.blocks.len()],
        }
    }

    pub fn is_stepwise(&self) -> bool {
        let g = self.block_groups();
        g.windows(2).any(|w| w[0] != w[1]) || g.last().is_some_and(|&l| l != self.n)
    }

    /// Groups in the final feature vector.
    pub fn feature_groups(&self) -> usize {
        *self.block_groups().last().unwrap_or(&1)
    }

    /// Channels of the tensor a bundle built from this spec consumes.
    pub fn model_input_channels(&self) -> usize {
        match self.ensemble_mode {
            EnsembleMode::Baseline => self.input_channels,
            EnsembleMode::Pure | EnsembleMode::Merge => self.input_channels * self.n,
            EnsembleMode::Easy => self.input_channels * self.block_groups()[0],
        }
    }

    /// λ applied when merging paths (or scaling EE features).
    pub fn resolved_lambda(&self) -> f64 {
        if let Some(code) = self.ablation {
            return match code.weight {
                MergeWeight::InverseN => 1.0 / self.feature_groups() as f64,
                MergeWeight::One => 1.0,
            };
        }
        match self.ensemble_mode {
            EnsembleMode::Baseline => 1.0,
            EnsembleMode::Easy => self.lambda.unwrap_or(1.0 / self.feature_groups() as f64),
            _ => self.lambda.unwrap_or(1.0 / self.n as f64),
        }
    }

    pub fn conv_type(&self) -> ConvType {
        self.ablation.map_or(ConvType::Group, |a| a.conv)
    }

    /// Normalization of block `i` as built. EE turns layer normalization into
    /// group normalization unless an ablation code pins the kind.
    pub fn effective_norm(&self, i: usize) -> NormKind {
        let declared = self.blocks[i].norm;
        match (self.ensemble_mode, self.ablation) {
            (EnsembleMode::Easy, Some(code)) => code.norm,
            (EnsembleMode::Easy, None) if declared == NormKind::Layer => NormKind::Group,
            _ => declared,
        }
    }

    pub fn has_batch_norm(&self) -> bool {
        (0..self.blocks.len()).any(|i| self.effective_norm(i) == NormKind::Batch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::invalid("architecture has no blocks"));
        }
        if self.input_channels == 0 || self.input_width == 0 {
            return Err(Error::invalid("input channels and width must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if self.n == 0 {
            return Err(Error::invalid("ensemble count N must be at least 1"));
        }
        if self.ensemble_mode == EnsembleMode::Baseline && self.n != 1 {
            return Err(Error::invalid(format!("BL requires N == 1, got N = {}", self.n)));
        }
        if let Some(l) = self.lambda {
            if !(l > 0.0) {
                return Err(Error::invalid(format!("lambda must be positive, got {l}")));
            }
        }
        if !(self.filter_multiplier > 0.0) {
            return Err(Error::invalid("filter multiplier must be positive"));
        }
        if self.ablation.is_some() && self.ensemble_mode != EnsembleMode::Easy {
            return Err(Error::invalid("ablation codes apply to EE only"));
        }
        let mut width = self.input_width;
        let mut in_ch = self.model_input_channels();
        let groups = self.block_groups();
        for (i, b) in self.blocks.iter().enumerate() {
            if b.conv_layers_in_block == 0 || b.kernel_size == 0 {
                return Err(Error::invalid(format!("block {i}: empty block or zero kernel")));
            }
            let g = groups[i];
            if g == 0 {
                return Err(Error::invalid(format!("block {i}: zero groups")));
            }
            if in_ch % g != 0 {
                return Err(Error::invalid(format!(
                    "block {i}: {in_ch} input channels not divisible by {g} groups"
                )));
            }
            if b.kernel_size % 2 == 0 {
                return Err(Error::invalid(format!("block {i}: kernel size must be odd to preserve width")));
            }
            in_ch = self.block_filters(i) * g;
            if let Some(p) = b.pool {
                if p == 0 || width / p == 0 {
                    return Err(Error::invalid(format!("block {i}: pool {p} too large for width {width}")));
                }
                width /= p;
            }
        }
        Ok(())
    }
}
