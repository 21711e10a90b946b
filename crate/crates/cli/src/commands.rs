use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use circa_core::metrics::{evaluate_manifest, LabeledCase, Prediction};
use circa_core::models::{dense_forward, dense_train, gmm_fit, pca_fit, tree_fit, GmmModel2D};
use circa_core::pipeline::{
    canonical_json, clean_dataset, demo_train_config, extract_corpus, fit_bundle, process_case,
    stratified_sample, Backends, CorpusFeatures, DatasetManifest, ModelBundle, Pipeline, PipelineError, SaliencyParams,
};
use circa_core::pipeline::synthetic::{build_demo_bundle, DEMO_SEED};
use circa_core::radiomics::{rank_features, FeatureCatalog, FeatureScaler, SelectionReport};
use circa_core::Subtype;
use circa_service::AppConfig;
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{Cli, Command, ReportFormat};
use crate::tables::{join, read_labels, write_labels, Table};

/// A run that worked but whose answer is a refusal (rejected image, every
/// case filtered out, quota not met).
#[derive(Debug, PartialEq)]
pub enum Outcome {
    Done,
    Rejected(String),
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| path.display().to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).with_context(|| path.display().to_string())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| path.display().to_string())
}

/// Writes to stdout; a closed pipe (`| head`) ends output quietly.
fn stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| p.display().to_string()),
        None => stdout(text),
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| dir.display().to_string())
}

fn backends(cfg: &AppConfig) -> Backends {
    let p = &cfg.pipeline;
    cfg.backends.build(p.canvas_size, p.roi.size, p.sr_patch)
}

fn pipeline(cfg: &AppConfig, bundle: Option<PathBuf>) -> Result<Pipeline> {
    let dir = bundle
        .or_else(|| cfg.service.bundle_dir.clone())
        .context("no model bundle: pass --bundle or set service.bundle_dir")?;
    let (b, _) = ModelBundle::load(&dir)?;
    Ok(Pipeline::new(cfg.pipeline.clone(), Arc::new(b), backends(cfg))?)
}

fn read_corpus(path: &Path) -> Result<CorpusFeatures> {
    let c: CorpusFeatures = read_json(path)?;
    if c.ids.len() != c.classes.len() || c.ids.len() != c.radiomics.len() || c.ids.len() != c.neural.len() {
        bail!("{}: per-case arrays differ in length", path.display());
    }
    Ok(c)
}

fn rejection_text(result: &circa_core::pipeline::PipelineResult) -> String {
    match &result.rejection {
        Some(r) => format!("rejected: {:?}: {}", r.reason, r.message),
        None => "rejected".into(),
    }
}

/// Loads configuration (defaults, environment, file) and applies the global
/// flags on top.
pub fn load_config(cli: &Cli) -> Result<AppConfig> {
    let mut cfg = AppConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(s) = cli.seed {
        cfg.pipeline.seed = s;
        cfg.train.dense.seed = s;
        cfg.train.tree.seed = s;
        cfg.train.gmm.seed = s;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Clean { manifest, out, report } => {
            let m = DatasetManifest::load(&manifest)?;
            let (kept, rep) = clean_dataset(&m, &cfg.pipeline, &backends(&cfg))?;
            kept.save(&out)?;
            emit(report.as_deref(), &(serde_json::to_string_pretty(&rep)? + "\n"))?;
            eprintln!("kept {} of {} cases", rep.kept, rep.total);
            if rep.kept == 0 {
                return Ok(Outcome::Rejected("every case was filtered out".into()));
            }
        }
        Command::Features {
            manifest,
            out_dir,
            no_train_stats,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let corpus = extract_corpus(&m, &cfg.pipeline, &backends(&cfg), cfg.train.fit_train_stats && !no_train_stats)?;
            mkdir(&out_dir)?;
            write_json(&out_dir.join("features.json"), &corpus)?;
            if let Some(s) = &corpus.train_stats {
                write_bytes(&out_dir.join("train_stats.bin"), &s.to_bytes())?;
            }
            write_labels(
                &out_dir.join("labels.csv"),
                corpus.ids.iter().map(String::as_str).zip(corpus.classes.iter().copied()),
            )?;
            let mut probs = Table::new(&["p_normal", "p_pneumonia", "p_covid"]);
            for (id, p) in corpus.ids.iter().zip(&corpus.image_probs) {
                probs.push(id, p.to_vec());
            }
            probs.write(&out_dir.join("image_probs.csv"))?;
            for (id, why) in &corpus.skipped {
                eprintln!("skipped {id}: {why}");
            }
            eprintln!("extracted {} cases", corpus.ids.len());
        }
        Command::SelectFeatures {
            features,
            out,
            min_eta,
            max_features,
        } => {
            let corpus = read_corpus(&features)?;
            let names = FeatureCatalog::builtin().names();
            let rep = rank_features(
                &corpus.radiomics,
                &corpus.classes,
                &names,
                min_eta.unwrap_or(cfg.train.min_eta),
                max_features.unwrap_or(cfg.train.max_features),
            )?;
            write_json(&out, &rep)?;
            let n = rep.selected_indices().len();
            eprintln!("selected {n} of {} features", names.len());
            if n == 0 {
                return Ok(Outcome::Rejected("no feature reached the effect-size floor".into()));
            }
        }
        Command::TrainDense {
            features,
            selection,
            out_dir,
        } => {
            let corpus = read_corpus(&features)?;
            let sel: SelectionReport = read_json(&selection)?;
            let idx = sel.selected_indices();
            if idx.is_empty() {
                bail!("{}: no selected features", selection.display());
            }
            let picked: Vec<Vec<f64>> = corpus
                .radiomics
                .iter()
                .map(|r| idx.iter().map(|&i| r.get(i).copied().unwrap_or(f64::NAN)).collect())
                .collect();
            let scaler = FeatureScaler::fit(&picked)?;
            let scaled = scaler.apply_matrix(&picked)?;
            let (dense, rep) = dense_train(&scaled, &corpus.classes, &cfg.train.dense)?;
            mkdir(&out_dir)?;
            write_bytes(&out_dir.join("radiomics_scaler.bin"), &scaler.to_bytes())?;
            write_bytes(&out_dir.join("dense.bin"), &dense.to_bytes())?;
            write_json(&out_dir.join("dense_report.json"), &rep)?;
            let mut probs = Table::new(&["r_normal", "r_pneumonia", "r_covid"]);
            for (id, x) in corpus.ids.iter().zip(&scaled) {
                probs.push(id, dense_forward(&dense, x, false, None)?.to_array().to_vec());
            }
            probs.write(&out_dir.join("radiomics_probs.csv"))?;
            eprintln!("final loss {:.6}", rep.epoch_losses.last().copied().unwrap_or(f64::NAN));
        }
        Command::TrainTree {
            features,
            labels,
            out,
            max_depth,
            min_leaf,
        } => {
            let labels = read_labels(&labels)?;
            let tables = features.iter().map(|p| Table::read(p)).collect::<Result<Vec<_>>>()?;
            let ids: Vec<&str> = labels.iter().map(|(id, _)| id.as_str()).collect();
            let names: Vec<&Path> = features.iter().map(PathBuf::as_path).collect();
            let x = join(&ids, &tables, &names)?;
            let y: Vec<_> = labels.iter().map(|(_, c)| *c).collect();
            let mut tcfg = cfg.train.tree.clone();
            if let Some(d) = max_depth {
                tcfg.max_depth = d;
            }
            if let Some(l) = min_leaf {
                tcfg.min_leaf = l;
            }
            let tree = tree_fit(&x, &y, &tcfg)?;
            write_bytes(&out, &tree.to_bytes())?;
            eprintln!("depth {}, {} leaves", tree.depth(), tree.leaves().count());
        }
        Command::FitPca {
            features,
            out_dir,
            variance,
        } => {
            let corpus = read_corpus(&features)?;
            let scaler = FeatureScaler::fit(&corpus.neural)?;
            let neural = scaler.apply_matrix(&corpus.neural)?;
            let pca = pca_fit(&neural, variance.unwrap_or(cfg.train.pca_variance))?;
            mkdir(&out_dir)?;
            write_bytes(&out_dir.join("neural_scaler.bin"), &scaler.to_bytes())?;
            write_bytes(&out_dir.join("pca.bin"), &pca.to_bytes())?;
            let mut coords = Table::new(&["x", "y"]);
            let manifest_coords = corpus.coords.iter().all(Option::is_some);
            for (i, (id, v)) in corpus.ids.iter().zip(&neural).enumerate() {
                let p = match corpus.coords[i] {
                    Some(c) if manifest_coords => c.to_vec(),
                    _ => {
                        let r = pca.transform(v)?;
                        vec![r.first().copied().unwrap_or(0.0), r.get(1).copied().unwrap_or(0.0)]
                    }
                };
                coords.push(id, p);
            }
            coords.write(&out_dir.join("coords.csv"))?;
            eprintln!("{} components", pca.n_components);
        }
        Command::FitGmm {
            coords,
            labels,
            out,
            restarts,
        } => {
            let table = Table::read(&coords)?;
            if table.columns.len() != 2 {
                bail!("{}: expected columns id,x,y", coords.display());
            }
            let labels = read_labels(&labels)?;
            let ids: Vec<&str> = labels.iter().map(|(id, _)| id.as_str()).collect();
            let rows = join(&ids, std::slice::from_ref(&table), &[coords.as_path()])?;
            let mut by_class: [Vec<[f64; 2]>; 3] = Default::default();
            for ((_, c), r) in labels.iter().zip(rows) {
                by_class[c.index()].push([r[0], r[1]]);
            }
            let mut gcfg = cfg.train.gmm.clone();
            if let Some(r) = restarts {
                gcfg.restarts = r;
            }
            let gmm = gmm_fit(&by_class, &gcfg)?;
            write_bytes(&out, &gmm.to_bytes())?;
            stdout(&(serde_json::to_string_pretty(&gmm)? + "\n"))?;
        }
        Command::Split {
            manifest,
            gmm,
            coords,
            per_cell,
            out_dir,
        } => {
            let mut m = DatasetManifest::load(&manifest)?;
            if let Some(path) = coords {
                let table = Table::read(&path)?;
                let idx = table.index();
                for e in m.entries.iter_mut().filter(|e| e.coords.is_none()) {
                    if let Some(v) = idx.get(e.id.as_str()) {
                        e.coords = Some([v[0], v[1]]);
                    }
                }
            }
            let bytes = fs::read(&gmm).with_context(|| gmm.display().to_string())?;
            let model = GmmModel2D::from_bytes(&bytes)?;
            let split = match stratified_sample(&m, &model, per_cell, cfg.pipeline.seed) {
                Ok(s) => s,
                Err(e @ PipelineError::InsufficientClassCases { .. }) => return Ok(Outcome::Rejected(e.to_string())),
                Err(e) => return Err(e.into()),
            };
            mkdir(&out_dir)?;
            split.holdout.save(&out_dir.join("holdout.jsonl"))?;
            split.train.save(&out_dir.join("train.jsonl"))?;
            write_json(&out_dir.join("cells.json"), &split.cells)?;
            eprintln!(
                "hold-out {} cases, training {} cases",
                split.holdout.entries.len(),
                split.train.entries.len()
            );
        }
        Command::Train {
            manifest,
            out,
            skip_clean,
            small,
        } => {
            let b = backends(&cfg);
            let m = DatasetManifest::load(&manifest)?;
            let (m, cleaning) = if skip_clean {
                (m, None)
            } else {
                let (kept, rep) = clean_dataset(&m, &cfg.pipeline, &b)?;
                if rep.kept == 0 {
                    return Ok(Outcome::Rejected("every case was filtered out".into()));
                }
                (kept, Some(rep))
            };
            let corpus = extract_corpus(&m, &cfg.pipeline, &b, cfg.train.fit_train_stats)?;
            let tcfg = if small {
                let mut t = demo_train_config(corpus.ids.len());
                t.dense.seed = cfg.train.dense.seed;
                t.tree.seed = cfg.train.tree.seed;
                t.gmm.seed = cfg.train.gmm.seed;
                t
            } else {
                cfg.train.clone()
            };
            let threshold = cleaning.as_ref().and_then(|c| c.fence).map(|f| f.threshold);
            let (bundle, training) = fit_bundle(&corpus, &tcfg, cfg.pipeline.knn_k, threshold)?;
            bundle.save(&out)?;
            if let Some(c) = &cleaning {
                write_json(&out.join("cleaning.json"), c)?;
            }
            write_json(&out.join("training.json"), &training)?;
            eprintln!("bundle written to {} ({} cases)", out.display(), training.cases);
        }
        Command::Predict {
            image,
            bundle,
            format,
            timings,
        } => {
            let p = pipeline(&cfg, bundle)?;
            let bytes = fs::read(&image).with_context(|| image.display().to_string())?;
            let outcome = process_case(&bytes, format.map(Into::into), &p)?;
            let json = if timings {
                outcome.result.to_canonical_json()
            } else {
                outcome.result.golden_json()
            };
            stdout(&(json + "\n"))?;
            if outcome.result.is_rejected() {
                return Ok(Outcome::Rejected(rejection_text(&outcome.result)));
            }
        }
        Command::Evaluate {
            manifest,
            predictions,
            bundle,
            format,
            out,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let labeled: Vec<_> = m.entries.iter().filter(|e| e.class.is_some()).collect();
            let preds: Vec<Prediction> = match predictions {
                Some(path) => read_labels(&path)?
                    .into_iter()
                    .map(|(id, class)| Prediction { id, class })
                    .collect(),
                None => {
                    let p = pipeline(&cfg, bundle)?;
                    let runs: Vec<(String, Result<_, String>)> = labeled
                        .par_iter()
                        .map(|e| {
                            let r = m
                                .read_image(e)
                                .and_then(|bytes| process_case(&bytes, None, &p))
                                .map_err(|err| err.to_string())
                                .and_then(|o| match &o.result.classification {
                                    Some(c) => Ok(c.class),
                                    None => Err(rejection_text(&o.result)),
                                });
                            (e.id.clone(), r)
                        })
                        .collect();
                    let mut preds = Vec::new();
                    for (id, r) in runs {
                        match r {
                            Ok(class) => preds.push(Prediction { id, class }),
                            Err(why) => eprintln!("excluded {id}: {why}"),
                        }
                    }
                    preds
                }
            };
            if preds.is_empty() {
                return Ok(Outcome::Rejected("no case has a prediction".into()));
            }
            let predicted: std::collections::HashSet<&str> = preds.iter().map(|p| p.id.as_str()).collect();
            let truth: Vec<LabeledCase> = labeled
                .iter()
                .filter(|e| predicted.contains(e.id.as_str()))
                .map(|e| LabeledCase {
                    id: e.id.clone(),
                    class: e.class.expect("labeled"),
                    dataset: e.dataset.clone(),
                })
                .collect();
            let subtypes: HashMap<String, Subtype> =
                labeled.iter().filter_map(|e| e.subtype.map(|s| (e.id.clone(), s))).collect();
            let report = evaluate_manifest(&preds, &truth, &subtypes)?;
            let text = match format {
                ReportFormat::Json => report.to_json() + "\n",
                ReportFormat::Csv => report.to_csv(),
            };
            emit(out.as_deref(), &text)?;
        }
        Command::Saliency {
            image,
            bundle,
            out,
            patch,
            stride,
        } => {
            let base = cfg.pipeline.saliency.unwrap_or_default();
            cfg.pipeline.saliency = Some(SaliencyParams {
                patch: patch.unwrap_or(base.patch),
                stride: stride.unwrap_or(base.stride),
            });
            let p = pipeline(&cfg, bundle)?;
            let bytes = fs::read(&image).with_context(|| image.display().to_string())?;
            let outcome = process_case(&bytes, None, &p)?;
            let Some(png) = outcome.saliency_png() else {
                return Ok(Outcome::Rejected(rejection_text(&outcome.result)));
            };
            write_bytes(&out, &png)?;
            stdout(&(canonical_json(&outcome.result.saliency) + "\n"))?;
        }
        Command::Serve {
            bind,
            data_dir,
            bundle,
            workers,
        } => {
            let s = &mut cfg.service;
            if let Some(b) = bind {
                s.bind = b;
            }
            if let Some(d) = data_dir {
                s.data_dir = d;
            }
            if let Some(b) = bundle {
                s.bundle_dir = Some(b);
            }
            if let Some(w) = workers {
                s.workers = w;
            }
            cfg.validate()?;
            tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()?
                .block_on(circa_service::serve(cfg))?;
        }
        Command::DemoBundle { out, per_variant, size } => {
            let seed = cli.seed.unwrap_or(DEMO_SEED);
            let build = build_demo_bundle(&out.join("corpus"), per_variant, size, seed, &cfg.pipeline, &backends(&cfg))?;
            let manifest = build.bundle.save(&out)?;
            write_json(&out.join("cleaning.json"), &build.cleaning)?;
            write_json(&out.join("training.json"), &build.training)?;
            stdout(&(serde_json::to_string_pretty(&manifest)? + "\n"))?;
        }
    }
    Ok(Outcome::Done)
}
