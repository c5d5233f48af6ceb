//! One-layer model that estimates missing direction speeds of a (cell,
//! interval) from its other observed directions and the window-averaged grids.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gps::{
    build_averaged_grid, AveragedGrid, DirStat, GpsKnowledgeGrid, SpeedProfile, MAX_SPEED,
    MIN_SPEED,
};
use crate::error::{Error, Result};
use crate::geo::{CellIndex, CompassDirection};
use crate::neural::{fit, Activation, DenseNet, History, LayerSpec, Matrix, Targets, TrainConfig};

/// Window sizes of the averaged-grid family fed to the interpolator.
pub const DEFAULT_WINDOWS: [usize; 3] = [2, 4, 8];

/// Fewest training examples accepted.
const MIN_EXAMPLES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolatorModel {
    pub net: DenseNet,
    pub windows: Vec<usize>,
}

/// Averaged grids for every window in `windows` that fits `T/2`.
pub fn build_star_family(gps: &GpsKnowledgeGrid, windows: &[usize]) -> Result<Vec<AveragedGrid>> {
    let max = gps.grid().intervals as usize / 2;
    windows
        .iter()
        .filter(|&&w| w <= max)
        .map(|&w| build_averaged_grid(gps, w))
        .collect()
}

pub fn input_width(star_len: usize) -> usize {
    16 * (1 + star_len)
}

fn encode_input(
    observed: Option<&SpeedProfile>,
    masked: Option<CompassDirection>,
    star: &[AveragedGrid],
    cell: CellIndex,
    interval: u32,
    out: &mut Vec<f64>,
) {
    for d in CompassDirection::ALL {
        let v = observed
            .and_then(|p| p[d.index()])
            .filter(|s| !s.interpolated && Some(d) != masked);
        match v {
            Some(s) => out.extend_from_slice(&[s.speed / MAX_SPEED, 1.0]),
            None => out.extend_from_slice(&[0.0, 0.0]),
        }
    }
    for a in star {
        for d in CompassDirection::ALL {
            match a.get(cell, interval, d) {
                Some(s) => out.extend_from_slice(&[s / MAX_SPEED, 1.0]),
                None => out.extend_from_slice(&[0.0, 0.0]),
            }
        }
    }
}

/// Leave-direction-out training set: one row per observed (key, direction),
/// with that direction hidden from the input and used as the target.
fn training_set(gps: &GpsKnowledgeGrid, star: &[AveragedGrid]) -> (Matrix, Vec<usize>, Vec<f64>) {
    let mut data = Vec::new();
    let mut slots = Vec::new();
    let mut values = Vec::new();
    for ((cell, t), p) in gps.iter() {
        for d in CompassDirection::ALL {
            let Some(s) = p[d.index()].filter(|s| !s.interpolated) else {
                continue;
            };
            encode_input(Some(p), Some(d), star, *cell, *t, &mut data);
            slots.push(d.index());
            values.push(s.speed / MAX_SPEED);
        }
    }
    let rows = slots.len();
    (
        Matrix::from_vec(rows, input_width(star.len()), data),
        slots,
        values,
    )
}

/// Fits the interpolator with squared error on the held-out direction.
pub fn train_interpolator(
    gps: &GpsKnowledgeGrid,
    star: &[AveragedGrid],
    cfg: &TrainConfig,
) -> Result<(InterpolatorModel, History)> {
    if star.is_empty() {
        return Err(Error::BadConfig(
            "interpolator needs at least one averaged grid".into(),
        ));
    }
    let (x, slots, values) = training_set(gps, star);
    if x.rows() < MIN_EXAMPLES {
        return Err(Error::InsufficientData(format!(
            "{} observed direction slots, need at least {MIN_EXAMPLES}",
            x.rows()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = DenseNet::build(
        x.cols(),
        &[LayerSpec {
            outputs: 8,
            activation: Activation::Identity,
        }],
        0.0,
        &mut rng,
    )?;
    if x.rows() < 10 * net.trainable_param_count() {
        log::warn!(
            "interpolator has {} examples for {} parameters",
            x.rows(),
            net.trainable_param_count()
        );
    }
    let targets = Targets::Slot { slots, values };
    let history = fit(&mut net, &x, &targets, None, cfg)?;
    Ok((
        InterpolatorModel {
            net,
            windows: star.iter().map(AveragedGrid::window).collect(),
        },
        history,
    ))
}

/// Mean held-out-direction squared error of `net` on the training set.
pub fn interpolator_loss(
    net: &DenseNet,
    gps: &GpsKnowledgeGrid,
    star: &[AveragedGrid],
) -> Result<f64> {
    let (x, slots, values) = training_set(gps, star);
    let out = net.predict(&x)?;
    Ok(crate::neural::slot_squared_error(&out, &slots, &values)?.0)
}

/// Fills missing direction slots that have window-averaged evidence.
/// Observed slots are never modified; filled slots are clipped to the
/// plausible speed range and flagged as interpolated.
pub fn fill_missing(
    gps: &GpsKnowledgeGrid,
    star: &[AveragedGrid],
    mi: &InterpolatorModel,
) -> Result<GpsKnowledgeGrid> {
    let windows: Vec<usize> = star.iter().map(AveragedGrid::window).collect();
    if windows != mi.windows || mi.net.input_width() != input_width(star.len()) {
        return Err(Error::ShapeMismatch(format!(
            "interpolator trained for windows {:?}, got {:?}",
            mi.windows, windows
        )));
    }
    let keys: BTreeSet<(CellIndex, u32)> = star.iter().flat_map(|a| a.keys().copied()).collect();
    let mut pending = Vec::new();
    let mut data = Vec::new();
    for (cell, t) in keys {
        let observed = gps.profile(cell, t);
        for d in CompassDirection::ALL {
            if observed.and_then(|p| p[d.index()]).is_some() {
                continue;
            }
            if star.iter().any(|a| a.get(cell, t, d).is_some()) {
                encode_input(observed, None, star, cell, t, &mut data);
                pending.push((cell, t, d));
            }
        }
    }
    let mut out = gps.clone();
    if pending.is_empty() {
        return Ok(out);
    }
    let x = Matrix::from_vec(pending.len(), input_width(star.len()), data);
    let pred = mi.net.predict(&x)?;
    for (r, (cell, t, d)) in pending.into_iter().enumerate() {
        let speed = (pred[(r, d.index())] * MAX_SPEED).clamp(MIN_SPEED, MAX_SPEED);
        out.set(
            cell,
            t,
            d,
            Some(DirStat {
                speed,
                count: 0,
                interpolated: true,
            }),
        );
    }
    Ok(out)
}
