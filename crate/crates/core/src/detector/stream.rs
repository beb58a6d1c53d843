use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{
    delta_scores, error_sequence, normalize_two_step, DeltaScoreSeries, DetectorError, WindowConfig,
};
use crate::frame::{Channel, TimeSeriesFrame};
use crate::koopman::{fit, SnapshotMatrix};

/// Error sequences whose largest singular value is below this fraction of the observed
/// signal's scale carry no dynamics.
const ERROR_COLLAPSE_RTOL: f64 = 1e-10;

/// Run the detector on one channel of a simulator (or ingested) output.
pub fn run_stream(
    frames: &BTreeMap<Channel, TimeSeriesFrame>,
    cfg: &WindowConfig,
    channel: Channel,
) -> Result<DeltaScoreSeries, DetectorError> {
    let frame = frames
        .get(&channel)
        .ok_or(DetectorError::MissingChannel(channel))?;
    run_frame(frame, cfg)
}

/// Run the detector on several channels stacked row-wise.
pub fn run_stacked(
    frames: &BTreeMap<Channel, TimeSeriesFrame>,
    cfg: &WindowConfig,
    channels: &[Channel],
) -> Result<DeltaScoreSeries, DetectorError> {
    let parts = channels
        .iter()
        .map(|c| frames.get(c).ok_or(DetectorError::MissingChannel(*c)))
        .collect::<Result<Vec<_>, _>>()?;
    let stacked = TimeSeriesFrame::stack(&parts)?;
    run_frame(&stacked, cfg)
}

/// Slide the window over `frame`; one output row per anchor
/// `s = learning_len, learning_len + stride, …` with `s + prediction_len ≤ m`.
pub fn run_frame(
    frame: &TimeSeriesFrame,
    cfg: &WindowConfig,
) -> Result<DeltaScoreSeries, DetectorError> {
    cfg.validate()?;
    let m = frame.n_samples();
    if m < cfg.span() {
        return Err(DetectorError::TooShort {
            have: m,
            need: cfg.span(),
        });
    }
    let p = frame.n_sensors();
    let anchors: Vec<usize> = (0..cfg.window_count(m))
        .map(|w| cfg.learning_len + w * cfg.stride)
        .collect();
    let period = frame.sample_period();
    let rows: Vec<(DVector<f64>, DVector<f64>)> = anchors
        .par_iter()
        .map(|&s| {
            score_window(frame.values(), s, cfg, period).unwrap_or_else(|_| {
                (
                    DVector::from_element(p, f64::NAN),
                    DVector::from_element(p, f64::NAN),
                )
            })
        })
        .collect();
    let mut scores = DMatrix::zeros(anchors.len(), p);
    let mut distances = DMatrix::zeros(anchors.len(), p);
    for (w, (d, s)) in rows.iter().enumerate() {
        distances.set_row(w, &d.transpose());
        scores.set_row(w, &s.transpose());
    }
    Ok(DeltaScoreSeries {
        sensor_ids: frame.sensor_ids().to_vec(),
        window_times: anchors.iter().map(|&s| frame.times()[s]).collect(),
        scores,
        distances,
    })
}

/// Distances and scores for the window anchored at sample `s`.
fn score_window(
    values: &DMatrix<f64>,
    s: usize,
    cfg: &WindowConfig,
    period: f64,
) -> Result<(DVector<f64>, DVector<f64>), DetectorError> {
    let p = values.nrows();
    let learn = values
        .columns(s - cfg.learning_len, cfg.learning_len)
        .into_owned();
    let observed = values.columns(s, cfg.prediction_len).into_owned();
    let opts = cfg.fit_options();

    let predictor = fit(
        &SnapshotMatrix::new(learn.clone(), period)?,
        cfg.backend,
        &opts,
    )?;
    let predicted = predictor.forecast(&learn, cfg.prediction_len)?;
    let error = error_sequence(&observed, &predicted)?;

    let scale = learn.amax().max(observed.amax());
    let mut error_opts = opts;
    error_opts.collapse_tol =
        ERROR_COLLAPSE_RTOL * scale * ((p * cfg.prediction_len) as f64).sqrt();
    let error_model = fit(
        &SnapshotMatrix::new(error, period)?,
        cfg.backend,
        &error_opts,
    )?;
    if error_model.is_zero_dynamics() {
        return Ok((DVector::zeros(p), DVector::from_element(p, 1.0)));
    }
    let amplitudes = error_model.mode_amplitude_matrix_with(cfg.prediction_len, cfg.combination);
    let nkm = normalize_two_step(&amplitudes)?;
    delta_scores(&nkm, cfg.divergence, cfg.tau, cfg.epsilon)
}
