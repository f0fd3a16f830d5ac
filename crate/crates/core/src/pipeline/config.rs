//! Pipeline configuration and its structured-text file format
//! (`key value` lines, `#` comments, unknown keys rejected).

use crate::cloud::{K_GLOB, K_LOC};
use crate::segmenters::{OracleCorruption, SplitMerge};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapMode {
    GtScale,
    Curvature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmenterChoice {
    Oracle,
    Ransac,
}

impl SegmenterChoice {
    pub fn name(&self) -> &'static str {
        match self {
            SegmenterChoice::Oracle => "oracle",
            SegmenterChoice::Ransac => "ransac",
        }
    }
}

/// Oracle corruption knobs exposed through the config file.
#[derive(Debug, Clone, Copy)]
pub struct OracleConfig {
    pub flip_rate: f64,
    pub temperature: f64,
    pub normal_jitter_deg: f64,
}

impl OracleConfig {
    pub fn corruption(&self) -> OracleCorruption {
        OracleCorruption {
            flip_rate: self.flip_rate,
            temperature: self.temperature,
            normal_jitter_deg: self.normal_jitter_deg,
            split_merge: SplitMerge::None,
        }
    }
}

/// RANSAC knobs shared by the global and local passes; the inlier floor is a
/// fraction of the scope size, separate per scope kind (patches exist to
/// find small things).
#[derive(Debug, Clone, Copy)]
pub struct RansacConfig {
    pub max_dist: f64,
    pub normal_thresh_deg: f64,
    pub candidates: usize,
    pub min_inlier_frac_global: f64,
    pub min_inlier_frac_local: f64,
    pub score_subsample: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Full-resolution point count (used by synthesis; runs use the actual
    /// cloud size).
    pub full_points: usize,
    /// Downsample size and patch size n.
    pub downsample_points: usize,
    pub eta: f64,
    pub theta: f64,
    pub max_patches: usize,
    pub k_glob: usize,
    pub k_loc: usize,
    pub heatmap: HeatmapMode,
    pub curvature_k: usize,
    pub curvature_top_fraction: f64,
    pub use_global_in_merge: bool,
    pub use_patch_selection: bool,
    pub epsilons: Vec<f64>,
    pub seed: u64,
    pub global_segmenter: SegmenterChoice,
    pub local_segmenter: SegmenterChoice,
    pub oracle: OracleConfig,
    pub ransac: RansacConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            full_points: 131_072,
            downsample_points: 8192,
            eta: 0.05,
            theta: 0.5,
            max_patches: 32,
            k_glob: K_GLOB,
            k_loc: K_LOC,
            heatmap: HeatmapMode::GtScale,
            curvature_k: 30,
            curvature_top_fraction: 0.2,
            use_global_in_merge: true,
            use_patch_selection: true,
            epsilons: vec![0.01, 0.02],
            seed: 0,
            global_segmenter: SegmenterChoice::Oracle,
            local_segmenter: SegmenterChoice::Oracle,
            oracle: OracleConfig { flip_rate: 0.0, temperature: 0.0, normal_jitter_deg: 0.0 },
            ransac: RansacConfig {
                max_dist: 0.01,
                normal_thresh_deg: 30.0,
                candidates: 1024,
                min_inlier_frac_global: 0.01,
                min_inlier_frac_local: 0.005,
                score_subsample: 2048,
            },
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.downsample_points > self.full_points {
            return Err(format!(
                "downsample_points {} exceeds full_points {}",
                self.downsample_points, self.full_points
            ));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(format!("eta {} outside (0, 1)", self.eta));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(format!("theta {} outside [0, 1]", self.theta));
        }
        if self.max_patches == 0 {
            return Err("max_patches must be positive".into());
        }
        if self.k_glob == 0 || self.k_loc == 0 {
            return Err("segment caps must be positive".into());
        }
        if self.k_glob > K_GLOB || self.k_loc > K_LOC {
            return Err(format!(
                "segment caps k_glob {} / k_loc {} exceed the stacking limits {K_GLOB} / {K_LOC}",
                self.k_glob, self.k_loc
            ));
        }
        if self.max_patches > 127 {
            return Err(format!(
                "max_patches {} exceeds the merge solver's 127-scope limit",
                self.max_patches
            ));
        }
        if self.epsilons.is_empty() {
            return Err("at least one epsilon required".into());
        }
        if self.ransac.max_dist <= 0.0 {
            return Err(format!("ransac max_dist {} must be positive", self.ransac.max_dist));
        }
        Ok(())
    }

    /// Serialize to the config file format.
    pub fn to_text(&self) -> String {
        let eps: Vec<String> = self.epsilons.iter().map(|e| e.to_string()).collect();
        format!(
            "full_points {}\n\
             downsample_points {}\n\
             eta {}\n\
             theta {}\n\
             max_patches {}\n\
             k_glob {}\n\
             k_loc {}\n\
             heatmap {}\n\
             curvature_k {}\n\
             curvature_top_fraction {}\n\
             use_global_in_merge {}\n\
             use_patch_selection {}\n\
             epsilons {}\n\
             seed {}\n\
             global_segmenter {}\n\
             local_segmenter {}\n\
             oracle_flip_rate {}\n\
             oracle_temperature {}\n\
             oracle_normal_jitter_deg {}\n\
             ransac_max_dist {}\n\
             ransac_normal_thresh_deg {}\n\
             ransac_candidates {}\n\
             ransac_min_inlier_frac_global {}\n\
             ransac_min_inlier_frac_local {}\n\
             ransac_score_subsample {}\n",
            self.full_points,
            self.downsample_points,
            self.eta,
            self.theta,
            self.max_patches,
            self.k_glob,
            self.k_loc,
            match self.heatmap {
                HeatmapMode::GtScale => "gt_scale",
                HeatmapMode::Curvature => "curvature",
            },
            self.curvature_k,
            self.curvature_top_fraction,
            self.use_global_in_merge,
            self.use_patch_selection,
            eps.join(" "),
            self.seed,
            self.global_segmenter.name(),
            self.local_segmenter.name(),
            self.oracle.flip_rate,
            self.oracle.temperature,
            self.oracle.normal_jitter_deg,
            self.ransac.max_dist,
            self.ransac.normal_thresh_deg,
            self.ransac.candidates,
            self.ransac.min_inlier_frac_global,
            self.ransac.min_inlier_frac_local,
            self.ransac.score_subsample,
        )
    }

    /// Parse the config file format; unset keys keep their defaults.
    pub fn from_text(text: &str) -> Result<PipelineConfig, String> {
        let mut config = PipelineConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| format!("line {}: expected `key value`", lineno + 1))?;
            let value = value.trim();
            let fail = |what: &str| format!("line {}: bad {what} `{value}`", lineno + 1);
            match key {
                "full_points" => config.full_points = value.parse().map_err(|_| fail("count"))?,
                "downsample_points" => {
                    config.downsample_points = value.parse().map_err(|_| fail("count"))?
                }
                "eta" => config.eta = value.parse().map_err(|_| fail("float"))?,
                "theta" => config.theta = value.parse().map_err(|_| fail("float"))?,
                "max_patches" => config.max_patches = value.parse().map_err(|_| fail("count"))?,
                "k_glob" => config.k_glob = value.parse().map_err(|_| fail("count"))?,
                "k_loc" => config.k_loc = value.parse().map_err(|_| fail("count"))?,
                "heatmap" => {
                    config.heatmap = match value {
                        "gt_scale" => HeatmapMode::GtScale,
                        "curvature" => HeatmapMode::Curvature,
                        _ => return Err(fail("heatmap mode")),
                    }
                }
                "curvature_k" => config.curvature_k = value.parse().map_err(|_| fail("count"))?,
                "curvature_top_fraction" => {
                    config.curvature_top_fraction = value.parse().map_err(|_| fail("float"))?
                }
                "use_global_in_merge" => {
                    config.use_global_in_merge = value.parse().map_err(|_| fail("bool"))?
                }
                "use_patch_selection" => {
                    config.use_patch_selection = value.parse().map_err(|_| fail("bool"))?
                }
                "epsilons" => {
                    let parsed: Result<Vec<f64>, _> =
                        value.split_whitespace().map(|t| t.parse()).collect();
                    config.epsilons = parsed.map_err(|_| fail("float list"))?;
                }
                "seed" => config.seed = value.parse().map_err(|_| fail("seed"))?,
                "global_segmenter" | "local_segmenter" => {
                    let choice = match value {
                        "oracle" => SegmenterChoice::Oracle,
                        "ransac" => SegmenterChoice::Ransac,
                        _ => return Err(fail("segmenter")),
                    };
                    if key == "global_segmenter" {
                        config.global_segmenter = choice;
                    } else {
                        config.local_segmenter = choice;
                    }
                }
                "oracle_flip_rate" => {
                    config.oracle.flip_rate = value.parse().map_err(|_| fail("float"))?
                }
                "oracle_temperature" => {
                    config.oracle.temperature = value.parse().map_err(|_| fail("float"))?
                }
                "oracle_normal_jitter_deg" => {
                    config.oracle.normal_jitter_deg = value.parse().map_err(|_| fail("float"))?
                }
                "ransac_max_dist" => {
                    config.ransac.max_dist = value.parse().map_err(|_| fail("float"))?
                }
                "ransac_normal_thresh_deg" => {
                    config.ransac.normal_thresh_deg = value.parse().map_err(|_| fail("float"))?
                }
                "ransac_candidates" => {
                    config.ransac.candidates = value.parse().map_err(|_| fail("count"))?
                }
                "ransac_min_inlier_frac_global" => {
                    config.ransac.min_inlier_frac_global =
                        value.parse().map_err(|_| fail("float"))?
                }
                "ransac_min_inlier_frac_local" => {
                    config.ransac.min_inlier_frac_local =
                        value.parse().map_err(|_| fail("float"))?
                }
                "ransac_score_subsample" => {
                    config.ransac.score_subsample = value.parse().map_err(|_| fail("count"))?
                }
                other => return Err(format!("line {}: unknown key `{other}`", lineno + 1)),
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_preserves_every_field() {
        let config = PipelineConfig {
            eta: 0.03,
            heatmap: HeatmapMode::Curvature,
            use_global_in_merge: false,
            global_segmenter: SegmenterChoice::Ransac,
            epsilons: vec![0.005, 0.01, 0.02],
            seed: 99,
            ..Default::default()
        };
        let text = config.to_text();
        let back = PipelineConfig::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(PipelineConfig::from_text("nonsense 1\n").is_err());
        assert!(PipelineConfig::from_text("eta notafloat\n").is_err());
        assert!(PipelineConfig::from_text("eta 2.0\n").is_err());
        assert!(PipelineConfig::from_text("k_loc 22\n").is_err());
        assert!(PipelineConfig::from_text("max_patches 128\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let text = "# a comment\n\neta 0.02  # trailing\n";
        let config = PipelineConfig::from_text(text).unwrap();
        assert_eq!(config.eta, 0.02);
    }
}
