//! Checkpoints: one safetensors file of float64 arrays plus a JSON header.
//!
//! Array names: `G.*`, `S.*`, `Dx.*`, `Dr.*`, `G_ema.*` for parameters and
//! `adam.<opt>.m.<param>` / `adam.<opt>.v.<param>` for optimiser moments.

use std::collections::BTreeMap;
use std::path::Path;

use autograd::optim::{Adam, Moments};
use autograd::Tensor;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainerState};
use crate::error::{Error, Result};
use crate::tensorfile::{self, insert_module, restore_module};

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    n_modalities: usize,
    step: u64,
    ema: bool,
    adam_steps: [u64; 3],
    rng: ChaCha8Rng,
}

const OPTIMISERS: [&str; 3] = ["gs", "dx", "dr"];

/// Writes the complete trainer state to `path`.
pub fn save_checkpoint(state: &TrainerState, path: &Path) -> Result<()> {
    let mut arrays = BTreeMap::new();
    insert_module(&mut arrays, &state.g, "G");
    if let Some(s) = &state.s {
        insert_module(&mut arrays, s, "S");
    }
    insert_module(&mut arrays, &state.dx, "Dx");
    if let Some(dr) = &state.dr {
        insert_module(&mut arrays, dr, "Dr");
    }
    if let Some(e) = &state.ema {
        insert_module(&mut arrays, e, "G_ema");
    }
    let opts = [&state.opt_gs, &state.opt_dx, &state.opt_dr];
    for (key, opt) in OPTIMISERS.iter().zip(opts) {
        for (name, mom) in &opt.moments {
            arrays.insert(format!("adam.{key}.m.{name}"), mom.m.clone());
            arrays.insert(format!("adam.{key}.v.{name}"), mom.v.clone());
        }
    }
    let header = Header {
        config: state.config.clone(),
        n_modalities: state.n_modalities,
        step: state.step,
        ema: state.ema.is_some(),
        adam_steps: opts.map(|o| o.step),
        rng: state.rng.clone(),
    };
    tensorfile::write(path, &arrays, serde_json::to_string(&header).expect("header serialises"))
}

fn restore_moments(opt: &mut Adam, key: &str, arrays: &BTreeMap<String, Tensor>) -> Result<()> {
    let prefix = format!("adam.{key}.m.");
    for (name, m) in arrays {
        if let Some(param) = name.strip_prefix(&prefix) {
            let v = arrays
                .get(&format!("adam.{key}.v.{param}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing second moment for {param}")))?;
            opt.moments.insert(param.to_string(), Moments { m: m.clone(), v: v.clone() });
        }
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<TrainerState> {
    load_checkpoint_expecting(path, None)
}

/// Like [`load_checkpoint`], failing with a configuration error when the
/// checkpoint was trained for a different number of modalities.
pub fn load_checkpoint_expecting(path: &Path, n_modalities: Option<usize>) -> Result<TrainerState> {
    let (arrays, header) = tensorfile::read(path)?;
    let header: Header = serde_json::from_str(&header)
        .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
    if let Some(n) = n_modalities {
        if n != header.n_modalities {
            return Err(Error::Config(format!(
                "checkpoint was trained with {} modalities, dataset has {n}",
                header.n_modalities
            )));
        }
    }
    let mut state = TrainerState::new(header.config, header.n_modalities)?;
    restore_module(&mut state.g, "G", &arrays)?;
    if let Some(s) = &mut state.s {
        restore_module(s, "S", &arrays)?;
    }
    restore_module(&mut state.dx, "Dx", &arrays)?;
    if let Some(dr) = &mut state.dr {
        restore_module(dr, "Dr", &arrays)?;
    }
    if header.ema {
        let mut ema = state.g.clone();
        restore_module(&mut ema, "G_ema", &arrays)?;
        state.ema = Some(ema);
    }
    let [gs, dx, dr] = header.adam_steps;
    let opts = [(&mut state.opt_gs, gs), (&mut state.opt_dx, dx), (&mut state.opt_dr, dr)];
    for (key, (opt, step)) in OPTIMISERS.iter().zip(opts) {
        opt.step = step;
        restore_moments(opt, key, &arrays)?;
    }
    state.step = header.step;
    state.rng = header.rng;
    Ok(state)
}
