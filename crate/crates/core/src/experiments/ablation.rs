use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{evaluate, train_on_manifest};
use crate::audio_io::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::features::{FeatureSpec, MelParams};
use crate::transformer::{Dataset, EpochMetrics, ModelConfig, TrainHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationAxis {
    /// Heads {1, 3, 6, 12} x layers {3, 6, 12} on a chosen feature family.
    HeadsLayers,
    /// The heads x layers grid on log mel + raw combined features.
    Combined,
    /// Mel bins {32, 64, 128}.
    Mels,
    /// STFT hop {1600, 1000, 500} samples.
    Hop,
    /// Diff segment length {50, 100, 300, 500} ms.
    TSeg,
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::HeadsLayers => "heads-layers",
            AblationAxis::Combined => "combined",
            AblationAxis::Mels => "mels",
            AblationAxis::Hop => "hop",
            AblationAxis::TSeg => "tseg",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Self::HeadsLayers,
            Self::Combined,
            Self::Mels,
            Self::Hop,
            Self::TSeg,
        ]
        .into_iter()
        .find(|a| a.as_str() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub setting: String,
    pub config: ModelConfig,
}

pub const HEADS: [usize; 4] = [1, 3, 6, 12];
pub const LAYERS: [usize; 3] = [3, 6, 12];
pub const MEL_BINS: [usize; 3] = [32, 64, 128];
pub const HOPS: [usize; 3] = [1600, 1000, 500];
pub const T_SEGS_MS: [u32; 4] = [50, 100, 300, 500];

/// The cells of one axis, each with its model configuration sized for clips
/// of `target_len` samples. `base` is the feature family of the heads x
/// layers axis and is ignored elsewhere.
pub fn ablation_cells(
    axis: AblationAxis,
    base: FeatureSpec,
    target_len: usize,
) -> Vec<AblationCell> {
    let cell = |setting: String, spec: FeatureSpec| AblationCell {
        setting,
        config: ModelConfig::for_features(spec, target_len),
    };
    let grid = |spec: FeatureSpec| {
        let mut cells = Vec::new();
        for heads in HEADS {
            for layers in LAYERS {
                let mut c = cell(format!("heads={heads} layers={layers}"), spec);
                c.config.n_heads = heads;
                c.config.n_layers = layers;
                cells.push(c);
            }
        }
        cells
    };
    let default_mel = MelParams::default();
    match axis {
        AblationAxis::HeadsLayers => grid(base),
        AblationAxis::Combined => grid(FeatureSpec::combined()),
        AblationAxis::Mels => MEL_BINS
            .iter()
            .map(|&n_mels| {
                cell(
                    format!("mels={n_mels}"),
                    FeatureSpec::LogMel(MelParams {
                        n_mels,
                        ..default_mel
                    }),
                )
            })
            .collect(),
        AblationAxis::Hop => HOPS
            .iter()
            .map(|&hop| {
                cell(
                    format!("hop={hop}"),
                    FeatureSpec::LogMel(MelParams { hop, ..default_mel }),
                )
            })
            .collect(),
        AblationAxis::TSeg => T_SEGS_MS
            .iter()
            .map(|&t_seg_ms| {
                cell(
                    format!("t_seg={t_seg_ms}ms"),
                    FeatureSpec::Diff { t_seg_ms },
                )
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub rows: usize,
    pub cols: usize,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub error: Option<String>,
    pub epochs: Vec<EpochMetrics>,
}

fn run_cell(
    cell: &AblationCell,
    manifest: &DatasetManifest,
    hyper: &TrainHyper,
    seed: u64,
) -> AblationRow {
    let spec = cell.config.features.expect("cells carry a feature spec");
    let target_len = cell.config.target_len.unwrap_or(manifest.max_len_samples);
    let (rows, cols) = spec.shape(target_len);
    let mut row = AblationRow {
        setting: cell.setting.clone(),
        rows,
        cols,
        accuracy: None,
        f1: None,
        error: None,
        epochs: Vec::new(),
    };
    let outcome = (|| -> Result<_> {
        let probe = super::ManifestDataset::new(manifest, Split::Train, spec, target_len)?;
        if !probe.is_empty() {
            let shape = probe.features(0)?.shape();
            if shape != (rows, cols) {
                return Err(Error::ShapeMismatch(format!(
                    "extracted {shape:?}, shape law gives {:?}",
                    (rows, cols)
                )));
            }
        }
        let trained = train_on_manifest(manifest, cell.config.clone(), hyper, seed, None)?;
        let eval = evaluate(&trained.model, manifest, Split::Test)?;
        Ok((trained.metrics, eval.report))
    })();
    match outcome {
        Ok((epochs, report)) => {
            row.accuracy = Some(report.accuracy);
            row.f1 = Some(report.f1);
            row.epochs = epochs;
        }
        Err(e) => {
            log::error!("ablation cell {} failed: {e}", cell.setting);
            row.error = Some(e.to_string());
        }
    }
    row
}

fn cell_path(dir: &Path, index: usize) -> std::path::PathBuf {
    dir.join(format!("cell-{index:02}.json"))
}

/// Trains and evaluates the selected cells of `axis` (all when `only` is
/// `None`) with one shared seed. Each cell writes `<out>/<axis>/cell-NN.json`
/// so cells can run in separate processes; the delimited tables
/// `<axis>.csv` and `<axis>_epochs.csv` are then rebuilt from whatever cell
/// files exist. `tweak` adjusts every cell's configuration, for example to
/// shrink the model on small machines. Training failures are recorded in
/// the row and do not stop the run.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    axis: AblationAxis,
    manifest: &DatasetManifest,
    base: FeatureSpec,
    hyper: &TrainHyper,
    seed: u64,
    tweak: &dyn Fn(&mut ModelConfig),
    only: Option<usize>,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    let cells = ablation_cells(axis, base, manifest.max_len_samples);
    if let Some(i) = only.filter(|&i| i >= cells.len()) {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} has {} cells, no cell {i}",
            cells.len()
        )));
    }
    let dir = out_dir.join(axis.as_str());
    fs::create_dir_all(&dir)?;
    for (i, cell) in cells.iter().enumerate() {
        if only.is_some_and(|o| o != i) {
            continue;
        }
        let mut cell = cell.clone();
        tweak(&mut cell.config);
        log::info!("ablation {axis}: cell {i} ({})", cell.setting);
        let row = run_cell(&cell, manifest, hyper, seed);
        fs::write(cell_path(&dir, i), serde_json::to_string_pretty(&row)?)?;
    }
    aggregate(axis, cells.len(), out_dir)
}

/// Reads the per-cell files of `axis` and writes the two tables.
pub fn aggregate(axis: AblationAxis, n_cells: usize, out_dir: &Path) -> Result<Vec<AblationRow>> {
    let dir = out_dir.join(axis.as_str());
    let mut rows = Vec::new();
    for i in 0..n_cells {
        let p = cell_path(&dir, i);
        if p.exists() {
            rows.push(serde_json::from_str::<AblationRow>(&fs::read_to_string(
                p,
            )?)?);
        }
    }
    let mut table = csv::Writer::from_path(out_dir.join(format!("{axis}.csv")))?;
    table.write_record(["setting", "input_shape", "accuracy", "f1", "error"])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in &rows {
        table.write_record([
            r.setting.clone(),
            format!("{}x{}", r.rows, r.cols),
            fmt(r.accuracy),
            fmt(r.f1),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    table.flush()?;
    let mut curves = csv::Writer::from_path(out_dir.join(format!("{axis}_epochs.csv")))?;
    curves.write_record([
        "setting",
        "epoch",
        "train_loss",
        "train_accuracy",
        "val_loss",
        "val_accuracy",
    ])?;
    for r in &rows {
        for e in &r.epochs {
            curves.write_record([
                r.setting.clone(),
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                format!("{:.6}", e.train_accuracy),
                fmt(e.val_loss),
                fmt(e.val_accuracy),
            ])?;
        }
    }
    curves.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    const CLIP: usize = 139_760;

    #[test]
    fn grid_sizes() {
        let base = FeatureSpec::diff();
        assert_eq!(
            ablation_cells(AblationAxis::HeadsLayers, base, CLIP).len(),
            12
        );
        assert_eq!(ablation_cells(AblationAxis::Combined, base, CLIP).len(), 12);
        assert_eq!(ablation_cells(AblationAxis::Mels, base, CLIP).len(), 3);
        assert_eq!(ablation_cells(AblationAxis::Hop, base, CLIP).len(), 3);
        assert_eq!(ablation_cells(AblationAxis::TSeg, base, CLIP).len(), 4);
    }

    #[test]
    fn cell_shapes_follow_feature_shapes() {
        let shapes = |axis| -> Vec<(usize, usize)> {
            ablation_cells(axis, FeatureSpec::diff(), CLIP)
                .iter()
                .map(|c| (c.config.max_frames, c.config.input_dim))
                .collect()
        };
        assert_eq!(
            shapes(AblationAxis::TSeg),
            [(173, 800), (86, 1600), (28, 4800), (16, 8000)]
        );
        assert_eq!(shapes(AblationAxis::Hop), [(88, 64), (140, 64), (280, 64)]);
        assert_eq!(shapes(AblationAxis::Mels), [(88, 32), (88, 64), (88, 128)]);
        assert!(shapes(AblationAxis::Combined)
            .iter()
            .all(|&s| s == (87, 1664)));
    }

    #[test]
    fn heads_layers_override_published_config() {
        let cells = ablation_cells(AblationAxis::HeadsLayers, FeatureSpec::log_mel(), CLIP);
        let c = &cells[4];
        assert_eq!(c.setting, "heads=3 layers=6");
        assert_eq!(
            (c.config.n_heads, c.config.n_layers, c.config.d_model),
            (3, 6, 64)
        );
        assert_eq!(c.config.features.unwrap().kind(), FeatureKind::LogMel);
    }

    #[test]
    fn axis_names_round_trip() {
        for a in [
            AblationAxis::HeadsLayers,
            AblationAxis::Combined,
            AblationAxis::Mels,
            AblationAxis::Hop,
            AblationAxis::TSeg,
        ] {
            assert_eq!(a.as_str().parse::<AblationAxis>().unwrap(), a);
        }
        assert!("depth".parse::<AblationAxis>().is_err());
    }
}
