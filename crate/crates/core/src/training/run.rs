use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use autograd::{no_grad, Tensor, Var};

use super::{save_checkpoint, train_iteration, TrainConfig, TrainerState};
use crate::data_model::{write_image_png, Dataset, ImageTensor, Split};
use crate::error::{Error, Result};
use crate::losses::{LossReport, LOSS_CSV_HEADER};
use crate::networks::Generator;

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainerState,
    /// `(step, report)` for every generator step of this run.
    pub losses: Vec<(u64, LossReport)>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainOutcome {
    /// Mean of `f` over the generator steps of each epoch, in epoch order.
    pub fn epoch_means(&self, iterations_per_epoch: usize, f: impl Fn(&LossReport) -> f64) -> Vec<f64> {
        let ipe = iterations_per_epoch as u64;
        let mut sums: Vec<(f64, usize)> = Vec::new();
        for (step, r) in &self.losses {
            let epoch = ((step - 1) / ipe) as usize;
            if sums.len() <= epoch {
                sums.resize(epoch + 1, (0.0, 0));
            }
            sums[epoch].0 += f(r);
            sums[epoch].1 += 1;
        }
        sums.into_iter().map(|(s, n)| if n == 0 { f64::NAN } else { s / n as f64 }).collect()
    }
}

/// One epoch is one pass over the training samples of all modalities.
pub fn iterations_per_epoch(train_size: usize, batch_size: usize) -> usize {
    (train_size / batch_size).max(1)
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join("checkpoints").join(format!("epoch_{epoch}.safetensors"))
}

fn check_dataset(config: &TrainConfig, dataset: &Dataset) -> Result<()> {
    for m in &dataset.modalities {
        let count = dataset.split(Split::Train, Some(m.id)).count();
        if count < config.batch_size {
            return Err(Error::Config(format!(
                "modality {} has {count} training samples, fewer than batch_size {}",
                m.name, config.batch_size
            )));
        }
    }
    Ok(())
}

/// Trains from scratch. With `out_dir`, writes `losses.csv`, a checkpoint
/// per epoch and (if enabled) per-epoch sample grids.
pub fn train(config: &TrainConfig, dataset: &Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let state = TrainerState::new(config.clone(), dataset.n_modalities())?;
    train_with(state, dataset, out_dir, &mut |_| {})
}

fn open_csv(out_dir: &Path, step: u64) -> Result<fs::File> {
    let path = out_dir.join("losses.csv");
    let mut kept = vec![LOSS_CSV_HEADER.to_string()];
    if step > 0 {
        if let Ok(text) = fs::read_to_string(&path) {
            kept.extend(
                text.lines()
                    .skip(1)
                    .filter(|l| l.split(',').next().and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s <= step))
                    .map(str::to_string),
            );
        }
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{}", kept.join("\n")).map_err(|e| Error::io(&path, e))?;
    Ok(f)
}

/// Continues training `state` until `config.epochs` epochs are complete.
/// `progress` receives one line per finished epoch.
pub fn train_with(
    mut state: TrainerState,
    dataset: &Dataset,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&str),
) -> Result<TrainOutcome> {
    check_dataset(&state.config, dataset)?;
    if dataset.n_modalities() != state.n_modalities {
        return Err(Error::Config(format!(
            "state expects {} modalities, dataset has {}",
            state.n_modalities,
            dataset.n_modalities()
        )));
    }
    let ipe = iterations_per_epoch(dataset.train_indices().len(), state.config.batch_size);
    let total = (state.config.epochs * ipe) as u64;
    let mut csv = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(open_csv(dir, state.step)?)
        }
        None => None,
    };
    let mut losses = Vec::new();
    let mut checkpoints = Vec::new();
    while state.step < total {
        let report = match train_iteration(&mut state, dataset) {
            Ok(r) => r,
            Err(e @ Error::NonFinite { .. }) => {
                if let Some(dir) = out_dir {
                    let path = dir.join("checkpoints").join(format!("abort_step_{}.safetensors", state.step));
                    save_checkpoint(&state, &path)?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if let (Some(f), Some(dir)) = (&mut csv, out_dir) {
            writeln!(f, "{}", report.csv_row(state.step)).map_err(|e| Error::io(dir.join("losses.csv"), e))?;
        }
        losses.push((state.step, report));
        if state.step % ipe as u64 == 0 {
            let epoch = (state.step / ipe as u64) as usize;
            if let Some(dir) = out_dir {
                let path = checkpoint_path(dir, epoch);
                save_checkpoint(&state, &path)?;
                checkpoints.push(path);
                if state.config.sample_grids {
                    let grid = sample_grid(state.inference_generator(true), dataset)?;
                    write_image_png(&dir.join("samples").join(format!("epoch_{epoch}.png")), &grid)?;
                }
            }
            let recent = &losses[losses.len().saturating_sub(ipe)..];
            let mean = |f: fn(&LossReport) -> f64| recent.iter().map(|(_, r)| f(r)).sum::<f64>() / recent.len() as f64;
            progress(&format!(
                "epoch {epoch}/{} step {} total_G {:.4} total_Dx {:.4} cross {:.4} rec_x {:.4}",
                state.config.epochs,
                state.step,
                mean(|r| r.total_g),
                mean(|r| r.total_d_x),
                mean(|r| r.cross),
                mean(|r| r.rec_x)
            ));
        }
    }
    Ok(TrainOutcome { state, losses, checkpoints })
}

/// Grid of translations: row `s` holds the first test sample of modality `s`
/// (training sample if the test split is empty) translated to each target
/// modality in column order.
pub fn sample_grid(g: &Generator, dataset: &Dataset) -> Result<ImageTensor> {
    let n = dataset.n_modalities();
    let res = dataset.resolution();
    let mut canvas = vec![-1.0; n * res * n * res];
    for s in 0..n {
        let sample = dataset
            .split(Split::Test, Some(s))
            .next()
            .or_else(|| dataset.split(Split::Train, Some(s)).next())
            .ok_or_else(|| Error::Config(format!("no sample of modality {s}")))?;
        let x = Tensor::stack(&vec![sample.x.to_tensor(); n]).expect("same shape");
        let targets: Vec<usize> = (0..n).collect();
        let out = no_grad(|| g.translate(&Var::constant(x), &targets))?;
        for t in 0..n {
            for r in 0..res {
                for c in 0..res {
                    let v = out.value().get([t, 0, r, c]);
                    canvas[(s * res + r) * n * res + t * res + c] = v;
                }
            }
        }
    }
    ImageTensor::new(n * res, n * res, canvas)
}
