use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use targan::data_model::{
    generate_phantom_dataset, load_dataset, read_image_png, write_image_png, Dataset, Modality,
};
use targan::evaluation::{
    evaluate, config_hash, run_ablation, ablation_variants, train_reference_segmenter, translate_images,
    FeatureEmbedder, Metric, MetricsReport, Segmenter,
};
use targan::training::{load_checkpoint, load_checkpoint_expecting, train_with, TrainerState};
use targan::{Error, Result};

use crate::config::RunConfig;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, text).map_err(io(path))
}

fn progress(line: &str) {
    eprintln!("{line}");
}

fn dataset(run: &RunConfig, manifest: Option<&Path>) -> Result<Dataset> {
    let path = manifest.map(Path::to_path_buf).unwrap_or_else(|| run.manifest_path());
    load_dataset(&path).map_err(|e| match e {
        Error::MissingFile(p) if p == path => Error::Config(format!(
            "dataset manifest {} not found; run `targan gen-data` first",
            p.display()
        )),
        other => other,
    })
}

pub fn gen_data(run: &RunConfig) -> Result<()> {
    let root = run.data_dir();
    let manifest = generate_phantom_dataset(&run.phantom, run.seed, &root)?;
    run.write_resolved(&root)?;
    eprintln!("wrote {} samples to {}", manifest.samples.len(), manifest.path().display());
    Ok(())
}

pub fn train(run: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let ds = dataset(run, None)?;
    let dir = run.out_dir.join("train");
    let state = match resume {
        Some(ckpt) => {
            let mut s = load_checkpoint_expecting(ckpt, Some(ds.n_modalities()))?;
            s.config.epochs = run.train.epochs;
            eprintln!("resuming from step {}", s.step);
            s
        }
        None => TrainerState::new(run.train.clone(), ds.n_modalities())?,
    };
    run.write_resolved(&dir)?;
    let outcome = train_with(state, &ds, Some(&dir), &mut |l| progress(l))?;
    eprintln!("finished at step {}; checkpoints in {}", outcome.state.step, dir.join("checkpoints").display());
    Ok(())
}

/// Modality id from a name like `M1` or a bare index.
fn modality_id(spec: &str, n: usize) -> Result<usize> {
    let id = Modality::default_set(n)
        .into_iter()
        .find(|m| m.name == spec)
        .map(|m| m.id)
        .or_else(|| spec.parse::<usize>().ok());
    match id {
        Some(i) if i < n => Ok(i),
        _ => Err(Error::Config(format!("unknown modality {spec:?} for a model with {n} modalities"))),
    }
}

pub fn translate(run: &RunConfig, ckpt: &Path, input: &Path, source: &str, target: &str, use_ema: bool) -> Result<()> {
    let state = load_checkpoint(ckpt)?;
    let n = state.n_modalities;
    let s = modality_id(source, n)?;
    let t = modality_id(target, n)?;
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(io(input))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    let images = files.iter().map(|p| read_image_png(p)).collect::<Result<Vec<_>>>()?;
    let g = state.inference_generator(use_ema);
    let outputs = translate_images(g, &images, t)?;
    let dir = run.out_dir.join("translated");
    run.write_resolved(&dir)?;
    for (path, img) in files.iter().zip(&outputs) {
        let name = path.file_name().expect("file has a name");
        write_image_png(&dir.join(name), img)?;
    }
    eprintln!(
        "translated {} images from modality {s} to {t} ({} parameters) into {}",
        outputs.len(),
        if use_ema && state.ema.is_some() { "EMA" } else { "raw" },
        dir.display()
    );
    Ok(())
}

fn load_segmenters(run: &RunConfig, ds: &Dataset) -> Result<BTreeMap<usize, Segmenter>> {
    let mut out = BTreeMap::new();
    for m in &ds.modalities {
        let path = run.segmenter_path(&m.name);
        if path.exists() {
            out.insert(m.id, Segmenter::load(&path)?);
        }
    }
    Ok(out)
}

pub fn eval(run: &RunConfig, ckpt: &Path, manifest: Option<&Path>, metrics: &[String], use_ema: bool) -> Result<()> {
    let metrics: Vec<Metric> = if metrics.is_empty() {
        run.evaluation.metrics.clone()
    } else {
        metrics.iter().map(|m| m.parse()).collect::<Result<_>>()?
    };
    let ds = dataset(run, manifest)?;
    let state = load_checkpoint_expecting(ckpt, Some(ds.n_modalities()))?;
    let segmenters = load_segmenters(run, &ds)?;
    let embedder = FeatureEmbedder::new(run.evaluation.embedder_seed, run.evaluation.embedder_dim);
    let (per_modality, mean) =
        evaluate(state.inference_generator(use_ema), &ds, &metrics, &segmenters, &embedder)?;
    let report = MetricsReport {
        per_modality,
        mean,
        config_hash: config_hash(&state.config),
        checkpoint_path: ckpt.display().to_string(),
        metrics,
    };
    let dir = run.out_dir.join("eval");
    run.write_resolved(&dir)?;
    write_text(&dir.join("metrics.json"), &serde_json::to_string_pretty(&report).expect("report serialises"))?;
    write_text(&dir.join("metrics.csv"), &report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn train_segmenter(run: &RunConfig, names: &[String]) -> Result<()> {
    let ds = dataset(run, None)?;
    let selected: Vec<&Modality> = if names.is_empty() {
        ds.modalities.iter().collect()
    } else {
        names
            .iter()
            .map(|n| ds.modality_by_name(n).ok_or_else(|| Error::Config(format!("unknown modality {n:?}"))))
            .collect::<Result<_>>()?
    };
    run.write_resolved(&run.out_dir.join("segmenters"))?;
    for m in selected {
        let seg = train_reference_segmenter(&ds, m.id, &run.evaluation.segmenter)?;
        seg.save(&run.segmenter_path(&m.name))?;
        eprintln!("segmenter {}: validation DICE {:.4} after {} steps", m.name, seg.val_dice, seg.steps);
    }
    Ok(())
}

pub fn ablate(run: &RunConfig) -> Result<()> {
    let variants = run.evaluation.ablation_variants.clone().unwrap_or_else(|| ablation_variants().to_vec());
    for v in &variants {
        v.validate()?;
    }
    let ds = dataset(run, None)?;
    let mut segmenters = load_segmenters(run, &ds)?;
    for m in &ds.modalities {
        if !segmenters.contains_key(&m.id) {
            let seg = train_reference_segmenter(&ds, m.id, &run.evaluation.segmenter)?;
            seg.save(&run.segmenter_path(&m.name))?;
            eprintln!("segmenter {}: validation DICE {:.4}", m.name, seg.val_dice);
            segmenters.insert(m.id, seg);
        }
    }
    let dir = run.out_dir.join("ablation");
    run.write_resolved(&dir)?;
    let table = run_ablation(
        &variants,
        &run.train,
        &ds,
        &run.evaluation.ablation_seeds,
        &segmenters,
        Some(&dir),
        &mut |l| progress(l),
    )?;
    write_text(&dir.join("ablation.csv"), &table.to_csv())?;
    write_text(&dir.join("runs.json"), &serde_json::to_string_pretty(&table).expect("table serialises"))?;
    print!("{}", table.to_csv());
    Ok(())
}
