use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use facepipe_core::augmentation::{apply_patches, augment_subject, random_rigid, AugmentKind};
use facepipe_core::depthmap::{export_pgm, import_pgm, render_face};
use facepipe_core::embedding::{baseline_train, external_backend};
use facepipe_core::matching::{cmc_csv, roc_csv};
use facepipe_core::morphable::{random_expression, save_model};
use facepipe_core::pipeline::evaluate_features;
use facepipe_core::pointcloud::{apply_transform, load_ply, save_ply};
use facepipe_core::registration::preprocess as align;
use facepipe_core::synthetic::{random_identity, sample_scan};
use facepipe_core::{DepthMap, EmbeddingBackend, FeatureVector, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::{Backend, PipelineConfig};
use crate::items::{item_seed, list_items, par_map, Item, Manifest, ManifestEntry};

fn prepare_output(input: &Path, output: &Path) -> Result<()> {
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    if fs::canonicalize(input)? == fs::canonicalize(output)? {
        bail!("output directory must differ from the input directory");
    }
    Ok(())
}

fn inputs(dir: &Path, ext: &str, manifest: &mut Manifest) -> Result<Vec<Item>> {
    let (items, bad) = list_items(dir, ext)?;
    for path in bad {
        let name = path
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        manifest.fail(name, "file name does not follow <subject>_<scan>".into());
    }
    Ok(items)
}

fn summarize(manifest: &Manifest, inputs: usize) {
    if manifest.failures.is_empty() {
        log::info!("{} inputs, {} outputs", inputs, manifest.entries.len());
    } else {
        let names: Vec<&str> = manifest.failures.iter().map(|f| f.input.as_str()).collect();
        log::error!(
            "{} inputs, {} outputs, {} failed: {}",
            inputs,
            manifest.entries.len(),
            names.len(),
            names.join(", ")
        );
    }
}

/// Crops and rigidly aligns every scan to the reference face.
pub fn preprocess(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    workers: usize,
) -> Result<Manifest> {
    prepare_output(input, output)?;
    let mut manifest = Manifest::new("preprocess");
    let items = inputs(input, "ply", &mut manifest)?;
    let reference = cfg.reference()?;
    let results = par_map(workers, &items, |item| -> Result<ManifestEntry> {
        let cloud = load_ply(&item.path)?;
        let aligned = align(&cloud, &reference, &cfg.icp, cfg.render.crop_radius)?;
        let name = item.file_name();
        save_ply(&aligned.cloud, output.join(&name))?;
        let icp = &aligned.icp;
        log::info!(
            "{name}: rmse {:.4} mm after {} iterations{}",
            icp.rmse,
            icp.iterations_used,
            if icp.converged {
                ""
            } else {
                " (not converged)"
            }
        );
        Ok(ManifestEntry {
            output: name.clone(),
            subject: item.subject.clone(),
            scan: item.scan.clone(),
            source: name,
            seed: None,
            details: json!({
                "rmse": icp.rmse,
                "iterations": icp.iterations_used,
                "converged": icp.converged,
                "points": aligned.cloud.len(),
            }),
        })
    })?;
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(e) => manifest.entries.push(e),
            Err(e) => manifest.fail(item.file_name(), format!("{e:#}")),
        }
    }
    finish(cfg, output, &manifest, items.len())?;
    Ok(manifest)
}

fn finish(cfg: &PipelineConfig, output: &Path, manifest: &Manifest, inputs: usize) -> Result<()> {
    manifest.write(output)?;
    cfg.write_resolved(output)?;
    summarize(manifest, inputs);
    Ok(())
}

/// Expression variants of each subject's first scan (lowest scan id) and
/// pose variants of every scan.
pub fn augment(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    workers: usize,
) -> Result<Manifest> {
    prepare_output(input, output)?;
    let mut manifest = Manifest::new("augment");
    let items = inputs(input, "ply", &mut manifest)?;
    let model = cfg.morphable_model()?;
    let mut firsts = BTreeSet::new();
    let jobs: Vec<(Item, bool)> = items
        .iter()
        .map(|it| (it.clone(), firsts.insert(it.subject.clone())))
        .collect();
    let results = par_map(
        workers,
        &jobs,
        |(item, first)| -> Result<Vec<ManifestEntry>> {
            let name = item.file_name();
            let seed = item_seed(cfg.seed, "augment", &name);
            let mut plan = cfg.augment;
            plan.seed = seed;
            if !first {
                plan.expressions_per_subject = 0;
            }
            let cloud = load_ply(&item.path)?;
            let variants = augment_subject(&cloud, &model, &plan, &cfg.fit)?;
            variants
                .into_iter()
                .map(|v| {
                    let suffix = match &v.kind {
                        AugmentKind::Expression { index, .. } => format!("expr{index:02}"),
                        AugmentKind::Pose { index, .. } => format!("pose{index:02}"),
                    };
                    let scan = format!("{}-{suffix}", item.scan);
                    let out = format!("{}_{scan}.ply", item.subject);
                    save_ply(&v.cloud, output.join(&out))?;
                    Ok(ManifestEntry {
                        output: out,
                        subject: item.subject.clone(),
                        scan,
                        source: name.clone(),
                        seed: Some(seed),
                        details: serde_json::to_value(&v.kind)?,
                    })
                })
                .collect()
        },
    )?;
    for ((item, _), r) in jobs.iter().zip(results) {
        match r {
            Ok(entries) => {
                log::info!("{}: {} variants", item.file_name(), entries.len());
                manifest.entries.extend(entries);
            }
            Err(e) => manifest.fail(item.file_name(), format!("{e:#}")),
        }
    }
    finish(cfg, output, &manifest, items.len())?;
    Ok(manifest)
}

/// Renders every cloud to a normalized depth map, optionally with patch
/// variants.
pub fn render(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    patches: bool,
    workers: usize,
) -> Result<Manifest> {
    prepare_output(input, output)?;
    let mut manifest = Manifest::new("render");
    let items = inputs(input, "ply", &mut manifest)?;
    let augmented: BTreeSet<String> = match Manifest::read(input)? {
        Some(m) if m.command == "augment" => m.entries.into_iter().map(|e| e.output).collect(),
        _ => BTreeSet::new(),
    };
    let plan = cfg.augment;
    let results = par_map(workers, &items, |item| -> Result<Vec<ManifestEntry>> {
        let name = item.file_name();
        let map = render_face(&load_ply(&item.path)?, &cfg.render)?;
        let stem = item.stem();
        let out = format!("{stem}.pgm");
        export_pgm(&map, output.join(&out))?;
        let entry = |output: String, scan: String, seed: Option<u64>, details| ManifestEntry {
            output,
            subject: item.subject.clone(),
            scan,
            source: name.clone(),
            seed,
            details,
        };
        let mut entries = vec![entry(
            out,
            item.scan.clone(),
            None,
            json!({"valid_pixels": map.valid_count()}),
        )];
        if patches && (plan.patch_augmented || !augmented.contains(&name)) {
            let seed = item_seed(cfg.seed, "patch", &name);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in 0..plan.patch_variants_per_scan {
                let patched = apply_patches(&map, &mut rng, plan.patch_count, plan.patch_size)?;
                let scan = format!("{}-patch{v:02}", item.scan);
                let out = format!("{}_{scan}.pgm", item.subject);
                export_pgm(&patched, output.join(&out))?;
                entries.push(entry(out, scan, Some(seed), json!({"patch_variant": v})));
            }
        }
        Ok(entries)
    })?;
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(entries) => manifest.entries.extend(entries),
            Err(e) => manifest.fail(item.file_name(), format!("{e:#}")),
        }
    }
    finish(cfg, output, &manifest, items.len())?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub probes: usize,
    pub gallery_size: usize,
    pub rank1: f64,
    pub rank2: f64,
    pub backend: Backend,
    pub embedding_dim: usize,
    pub feature_dim: usize,
    pub gallery: Vec<String>,
}

fn load_maps(workers: usize, items: &[Item]) -> Result<Vec<DepthMap>> {
    let maps = par_map(workers, items, |it| import_pgm(&it.path))?;
    let mut out = Vec::with_capacity(maps.len());
    let mut failed = Vec::new();
    for (it, m) in items.iter().zip(maps) {
        match m {
            Ok(m) => out.push(m),
            Err(e) => {
                log::error!("{}: {e}", it.file_name());
                failed.push(it.file_name());
            }
        }
    }
    if !failed.is_empty() {
        bail!(
            "{} depth maps could not be read: {}",
            failed.len(),
            failed.join(", ")
        );
    }
    Ok(out)
}

fn embed_all(
    workers: usize,
    backend: &dyn EmbeddingBackend,
    items: &[Item],
    maps: &[DepthMap],
) -> Result<Vec<(String, FeatureVector)>> {
    let feats = par_map(workers, maps, |m| backend.embed(m))?;
    let mut out = Vec::with_capacity(feats.len());
    let mut failed = Vec::new();
    for (it, f) in items.iter().zip(feats) {
        match f {
            Ok(f) => out.push((it.subject.clone(), f)),
            Err(e) => {
                log::error!("{}: {e}", it.file_name());
                failed.push(it.file_name());
            }
        }
    }
    if !failed.is_empty() {
        bail!(
            "{} depth maps could not be embedded: {}",
            failed.len(),
            failed.join(", ")
        );
    }
    Ok(out)
}

/// Identifies every probe against the first scan of each gallery subject
/// and writes CMC / ROC curves, per-probe ranks and a summary.
pub fn evaluate(
    cfg: &PipelineConfig,
    gallery_dir: &Path,
    probe_dir: &Path,
    report_dir: &Path,
    workers: usize,
) -> Result<Report> {
    let (all_gallery, bad) = list_items(gallery_dir, "pgm")?;
    let (probes, bad_probes) = list_items(probe_dir, "pgm")?;
    if let Some(p) = bad.iter().chain(&bad_probes).next() {
        bail!("{} does not follow <subject>_<scan>", p.display());
    }
    let mut first: BTreeMap<String, Item> = BTreeMap::new();
    for it in all_gallery {
        first.entry(it.subject.clone()).or_insert(it);
    }
    let gallery: Vec<Item> = first.into_values().collect();
    for p in &probes {
        if !gallery.iter().any(|g| g.subject == p.subject) {
            bail!(
                "probe {} belongs to subject '{}', which has no gallery scan",
                p.file_name(),
                p.subject
            );
        }
    }
    if probes.is_empty() {
        bail!("no inputs: {} holds no probes", probe_dir.display());
    }
    let gallery_maps = load_maps(workers, &gallery)?;
    let probe_maps = load_maps(workers, &probes)?;

    let backend: Box<dyn EmbeddingBackend> = match cfg.embedding.backend {
        Backend::Baseline => {
            let train = match &cfg.embedding.train_dir {
                Some(dir) => {
                    let (items, _) = list_items(dir, "pgm")?;
                    load_maps(workers, &items)?
                }
                None => gallery_maps.clone(),
            };
            if train.len() < 2 {
                bail!(
                    "the baseline embedder needs at least 2 training maps, got {}",
                    train.len()
                );
            }
            let d = cfg.embedding.dimension.min(train.len() - 1);
            log::info!(
                "training baseline embedder: {} maps, {d} dimensions",
                train.len()
            );
            Box::new(baseline_train(&train, d)?)
        }
        Backend::External => {
            let dir = cfg.embedding.features_dir.as_ref().expect("validated");
            Box::new(external_backend(dir)?)
        }
    };
    let gallery_feats = embed_all(workers, backend.as_ref(), &gallery, &gallery_maps)?;
    let probe_feats = embed_all(workers, backend.as_ref(), &probes, &probe_maps)?;
    let eval = evaluate_features(gallery_feats, probe_feats, &cfg.match_settings())?;

    fs::create_dir_all(report_dir).with_context(|| format!("creating {}", report_dir.display()))?;
    let write = |name: &str, text: String| -> Result<()> {
        let path = report_dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write("cmc.csv", cmc_csv(&eval.cmc))?;
    write("roc.csv", roc_csv(&eval.roc))?;
    let mut ranks = String::from("probe,subject,rank,best_match,distance\n");
    for (item, (subject, ranked)) in probes.iter().zip(&eval.results) {
        let best = ranked.best();
        let rank = ranked.rank_of(subject).expect("accounted");
        ranks += &format!(
            "{},{},{},{},{}\n",
            item.file_name(),
            subject,
            rank,
            best.subject_id,
            best.distance
        );
    }
    write("ranks.csv", ranks)?;
    let report = Report {
        probes: eval.summary.probes,
        gallery_size: eval.summary.gallery_size,
        rank1: eval.summary.rank1,
        rank2: eval.summary.rank2,
        backend: cfg.embedding.backend,
        embedding_dim: backend.dimension(),
        feature_dim: eval.feature_dim,
        gallery: gallery.iter().map(Item::file_name).collect(),
    };
    write(
        "summary.json",
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    cfg.write_resolved(report_dir)?;
    log::info!(
        "{} probes against {} gallery subjects: rank-1 {:.4}, rank-2 {:.4}",
        report.probes,
        report.gallery_size,
        report.rank1,
        report.rank2
    );
    Ok(report)
}

/// Writes the configured morphable model, the reference face and toy scans
/// `<id>_<nn>.ply` into `output` (scan 00 neutral and frontal, later scans
/// with a random expression and pose).
pub fn synth(
    cfg: &PipelineConfig,
    output: &Path,
    identities: usize,
    scans: usize,
    spacing: f64,
) -> Result<Vec<PathBuf>> {
    if !(spacing > 0.0) {
        bail!("spacing must be positive");
    }
    let scan_dir = output.join("scans");
    fs::create_dir_all(&scan_dir).with_context(|| format!("creating {}", scan_dir.display()))?;
    let face = cfg.toy_model.face();
    let model = face.model();
    save_model(model, output.join("model.mlmm"))?;
    save_ply(&cfg.reference_cloud()?, output.join("reference.ply"))?;
    let plan = cfg.augment;
    let mut written = Vec::new();
    for id in 0..identities {
        let subject = format!("id{id:03}");
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed(cfg.seed, "synth", &subject));
        let alpha = random_identity(&mut rng, model.shape_components());
        for s in 0..scans {
            let beta = if s == 0 {
                vec![0.0; model.expression_components()]
            } else {
                random_expression(&mut rng, model.expression_components())
            };
            let params = ModelParams {
                alpha: alpha.clone(),
                beta,
            };
            let mut cloud = sample_scan(&face, &params, spacing, &mut rng);
            if s > 0 {
                let t = random_rigid(&mut rng, plan.angle_bound, plan.translation_bound);
                cloud = apply_transform(&cloud, &t);
            }
            let path = scan_dir.join(format!("{subject}_{s:02}.ply"));
            save_ply(&cloud, &path)?;
            written.push(path);
        }
    }
    cfg.write_resolved(output)?;
    log::info!(
        "{} scans of {identities} identities in {}",
        written.len(),
        scan_dir.display()
    );
    Ok(written)
}
