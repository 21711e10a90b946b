use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use circa_core::imaging::ImageFormat;

/// Chest X-ray triage: corpus cleaning, model training, evaluation,
/// single-case prediction and the HTTP service.
///
/// Settings come from built-in defaults, then CIRCA_* environment
/// variables, then the --config file, then command-line flags.
#[derive(Debug, Parser)]
#[command(name = "circa", version, propagate_version = true, max_term_width = 100)]
pub struct Cli {
    /// TOML file with [service], [pipeline], [backends] and [train] tables [default: none]
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Seed for every randomized step; overrides pipeline.seed and the train.* seeds [default: from config]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-case corpus work [default: one per core]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Png,
    Jpeg,
    Dicom,
}

impl From<FormatArg> for ImageFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Png => ImageFormat::Png,
            FormatArg::Jpeg => ImageFormat::Jpeg,
            FormatArg::Dicom => ImageFormat::Dicom,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment and quality-score a corpus and drop low-quality outliers
    Clean {
        /// Input manifest (JSON lines)
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Manifest of the kept cases
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Cleaning report (JSON) [default: stdout]
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
    },
    /// Extract radiomics, image-branch probabilities and neural features
    Features {
        /// Input manifest (JSON lines)
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Receives features.json, labels.csv, image_probs.csv and train_stats.bin
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Skip fitting per-pixel ROI statistics [default: from train.fit_train_stats]
        #[arg(long)]
        no_train_stats: bool,
    },
    /// Rank radiomics features by Kruskal-Wallis effect size
    SelectFeatures {
        /// features.json written by `features`
        #[arg(long, value_name = "PATH")]
        features: PathBuf,
        /// Selection report (JSON)
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Minimum eta squared [default: from train.min_eta]
        #[arg(long)]
        min_eta: Option<f64>,
        /// Maximum number of selected features [default: from train.max_features]
        #[arg(long)]
        max_features: Option<usize>,
    },
    /// Train the dense radiomics classifier on the selected features
    TrainDense {
        /// features.json written by `features`
        #[arg(long, value_name = "PATH")]
        features: PathBuf,
        /// Selection report written by `select-features`
        #[arg(long, value_name = "PATH")]
        selection: PathBuf,
        /// Receives radiomics_scaler.bin, dense.bin, dense_report.json and radiomics_probs.csv
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Train the aggregation tree on per-case probability tables
    TrainTree {
        /// Feature table(s) (CSV, id column first); repeat to join columns
        #[arg(long, value_name = "PATH", required = true)]
        features: Vec<PathBuf>,
        /// Labels (CSV: id,class)
        #[arg(long, value_name = "PATH")]
        labels: PathBuf,
        /// Model file
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Maximum depth [default: from train.tree.max_depth]
        #[arg(long)]
        max_depth: Option<usize>,
        /// Minimum samples per leaf [default: from train.tree.min_leaf]
        #[arg(long)]
        min_leaf: Option<usize>,
    },
    /// Fit the neural-feature scaler and PCA; writes 2D coordinates
    FitPca {
        /// features.json written by `features`
        #[arg(long, value_name = "PATH")]
        features: PathBuf,
        /// Receives neural_scaler.bin, pca.bin and coords.csv
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Fraction of variance to keep [default: from train.pca_variance]
        #[arg(long)]
        variance: Option<f64>,
    },
    /// Fit the per-class subtype mixtures on 2D coordinates
    FitGmm {
        /// Coordinates (CSV: id,x,y)
        #[arg(long, value_name = "PATH")]
        coords: PathBuf,
        /// Labels (CSV: id,class)
        #[arg(long, value_name = "PATH")]
        labels: PathBuf,
        /// Model file
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// EM restarts per class [default: from train.gmm.restarts]
        #[arg(long)]
        restarts: Option<usize>,
    },
    /// Density-guided stratified hold-out split
    Split {
        /// Input manifest (JSON lines)
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Mixture model written by `fit-gmm`
        #[arg(long, value_name = "PATH")]
        gmm: PathBuf,
        /// Coordinates (CSV: id,x,y) for cases whose manifest entry has none [default: none]
        #[arg(long, value_name = "PATH")]
        coords: Option<PathBuf>,
        /// Hold-out cases per (dataset, subtype) cell
        #[arg(long, default_value_t = circa_core::pipeline::DEFAULT_PER_CELL)]
        per_cell: usize,
        /// Receives holdout.jsonl, train.jsonl and cells.json
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Clean, extract and fit a complete model bundle
    Train {
        /// Input manifest (JSON lines)
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Bundle directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Use the corpus as-is, without a quality fence
        #[arg(long)]
        skip_clean: bool,
        /// Small-model settings sized for demo corpora instead of [train]
        #[arg(long)]
        small: bool,
    },
    /// Run the full pipeline on one image and print the result JSON
    Predict {
        /// Radiograph (PNG, JPEG or DICOM)
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
        /// Bundle directory [default: from service.bundle_dir]
        #[arg(long, value_name = "DIR")]
        bundle: Option<PathBuf>,
        /// Format hint [default: detected from content]
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        /// Include wall-clock stage timings
        #[arg(long)]
        timings: bool,
    },
    /// Compute diagnostic metrics against a labeled manifest
    Evaluate {
        /// Labeled manifest (JSON lines)
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Predictions (CSV: id,class) [default: run the pipeline with --bundle]
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
        /// Bundle directory used when no predictions are given [default: from service.bundle_dir]
        #[arg(long, value_name = "DIR")]
        bundle: Option<PathBuf>,
        /// Report format
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
        /// Report file [default: stdout]
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Occlusion saliency for one image
    Saliency {
        /// Radiograph (PNG, JPEG or DICOM)
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
        /// Bundle directory [default: from service.bundle_dir]
        #[arg(long, value_name = "DIR")]
        bundle: Option<PathBuf>,
        /// Heatmap PNG
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Occluding patch side in ROI pixels [default: from pipeline.saliency or 64]
        #[arg(long)]
        patch: Option<usize>,
        /// Grid stride in ROI pixels [default: from pipeline.saliency or 64]
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Start the HTTP service
    Serve {
        /// Listen address [default: from service.bind]
        #[arg(long)]
        bind: Option<String>,
        /// Case store directory [default: from service.data_dir]
        #[arg(long, value_name = "DIR")]
        data_dir: Option<PathBuf>,
        /// Bundle directory [default: from service.bundle_dir]
        #[arg(long, value_name = "DIR")]
        bundle: Option<PathBuf>,
        /// Concurrent pipeline runs [default: from service.workers]
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render a synthetic corpus and fit a small bundle on it
    DemoBundle {
        /// Bundle directory; the corpus goes to <DIR>/corpus
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Images per class and appearance variant
        #[arg(long, default_value_t = circa_core::pipeline::synthetic::DEMO_PER_VARIANT)]
        per_variant: usize,
        /// Image side in pixels
        #[arg(long, default_value_t = circa_core::pipeline::synthetic::DEMO_SIZE)]
        size: usize,
    },
}
