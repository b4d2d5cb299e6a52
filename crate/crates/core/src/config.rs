//! Run configuration read from flat key=value files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::align::RansacParams;
use crate::error::{Error, Result};
use crate::io::KvDoc;
use crate::loss::LossParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Only the mono pointmap features are injected.
    OnlyMono,
    /// Mono and SMPL features injected by plain addition.
    NoFfm,
    /// Full fusion module.
    Ffm,
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "only-mono" => Ok(Self::OnlyMono),
            "no-ffm" => Ok(Self::NoFfm),
            "ffm" => Ok(Self::Ffm),
            _ => Err(Error::Config(format!(
                "ablation mode must be only-mono, no-ffm or ffm, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OnlyMono => "only-mono",
            Self::NoFfm => "no-ffm",
            Self::Ffm => "ffm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlignmentMode {
    Aligned,
    Unaligned,
}

impl FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(Self::Aligned),
            "unaligned" => Ok(Self::Unaligned),
            _ => Err(Error::Config(format!(
                "alignment mode must be aligned or unaligned, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for AlignmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Aligned => "aligned",
            Self::Unaligned => "unaligned",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FusionConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub patch_size: usize,
    /// Number of self-attention levels after fusion.
    pub levels: usize,
    pub gate_hidden: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            num_heads: 8,
            patch_size: 16,
            levels: 2,
            gate_hidden: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RefineConfig {
    pub area_threshold: f64,
    pub margin: f64,
    pub upscale: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            area_threshold: 0.15,
            margin: 0.1,
            upscale: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalConfig {
    pub scale_align: bool,
    pub with_scale: bool,
    pub max_dt: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            scale_align: true,
            with_scale: true,
            max_dt: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub ransac: RansacParams,
    pub fusion: FusionConfig,
    pub loss: LossParams,
    pub eval: EvalConfig,
    pub ablation: AblationMode,
    pub alignment: AlignmentMode,
    pub refine: RefineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            seed: 0,
            ransac: RansacParams::default(),
            fusion: FusionConfig::default(),
            loss: LossParams::default(),
            eval: EvalConfig::default(),
            ablation: AblationMode::Ffm,
            alignment: AlignmentMode::Aligned,
            refine: RefineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDoc::parse(text)?;
        let mut c = RunConfig {
            input: doc.take_str("input.dir").map(PathBuf::from),
            output: doc.take_str("output.dir").map(PathBuf::from),
            ..RunConfig::default()
        };
        doc.take_into("seed", &mut c.seed)?;
        doc.take_into("ransac.threshold", &mut c.ransac.threshold)?;
        doc.take_into("ransac.iterations", &mut c.ransac.iterations)?;
        doc.take_into("ransac.min_valid_pixels", &mut c.ransac.min_valid_pixels)?;
        doc.take_into("fusion.embed_dim", &mut c.fusion.embed_dim)?;
        doc.take_into("fusion.heads", &mut c.fusion.num_heads)?;
        doc.take_into("fusion.patch", &mut c.fusion.patch_size)?;
        doc.take_into("fusion.levels", &mut c.fusion.levels)?;
        doc.take_into("fusion.gate_hidden", &mut c.fusion.gate_hidden)?;
        if let Some(alpha) = doc.take::<f64>("loss.alpha")? {
            c.loss = LossParams::new(alpha)?;
        }
        doc.take_into("eval.scale_align", &mut c.eval.scale_align)?;
        doc.take_into("eval.with_scale", &mut c.eval.with_scale)?;
        doc.take_into("eval.max_dt", &mut c.eval.max_dt)?;
        if let Some(mode) = doc.take_str("mode.ablation") {
            c.ablation = mode.parse()?;
        }
        if let Some(mode) = doc.take_str("mode.alignment") {
            c.alignment = mode.parse()?;
        }
        doc.take_into("refine.area_threshold", &mut c.refine.area_threshold)?;
        doc.take_into("refine.margin", &mut c.refine.margin)?;
        doc.take_into("refine.upscale", &mut c.refine.upscale)?;
        doc.finish()?;
        c.ransac.seed = c.seed;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        Self::parse(&text).map_err(|e| e.at_path(path))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.ransac.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.ransac.validate()?;
        let f = &self.fusion;
        if f.embed_dim == 0 || f.num_heads == 0 || !f.embed_dim.is_multiple_of(f.num_heads) {
            return Err(Error::Config(format!(
                "fusion.embed_dim {} must be a positive multiple of fusion.heads {}",
                f.embed_dim, f.num_heads
            )));
        }
        if f.patch_size == 0 || f.levels == 0 || f.gate_hidden == 0 {
            return Err(Error::Config(
                "fusion.patch, fusion.levels and fusion.gate_hidden must be >= 1".into(),
            ));
        }
        let r = &self.refine;
        if !(r.area_threshold > 0.0 && r.area_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "refine.area_threshold {} not in (0, 1]",
                r.area_threshold
            )));
        }
        if !(r.margin >= 0.0 && r.margin.is_finite()) || r.upscale == 0 {
            return Err(Error::Config(
                "refine.margin must be >= 0 and refine.upscale >= 1".into(),
            ));
        }
        if !(self.eval.max_dt >= 0.0) {
            return Err(Error::Config("eval.max_dt must be >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        let c = RunConfig::parse("seed = 9\nmode.ablation = no-ffm\nmode.alignment = unaligned\nransac.threshold = 0.01\nfusion.heads = 4\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.ransac.seed, 9);
        assert_eq!(c.ablation, AblationMode::NoFfm);
        assert_eq!(c.alignment, AlignmentMode::Unaligned);
        assert_eq!(c.ransac.threshold, 0.01);
        assert_eq!(c.fusion.num_heads, 4);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(
            RunConfig::parse("ransac.treshold = 0.1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(RunConfig::parse("mode.ablation = full\n").is_err());
        assert!(RunConfig::parse("fusion.heads = 5\n").is_err());
        assert!(RunConfig::parse("ransac.iterations = 0\n").is_err());
        assert!(RunConfig::parse("loss.alpha = -1\n").is_err());
    }
}
