use log::warn;

use super::{EegRecording, EegWindow};

/// Outcome of windowing one recording.
#[derive(Clone, Debug, Default)]
pub struct Windowing {
    pub windows: Vec<EegWindow>,
    /// Frames without enough preceding (or any following) samples.
    pub dropped: usize,
    pub warnings: Vec<String>,
}

/// Exclusive end sample of the window for a frame at `time` seconds.
///
/// Each index is rounded independently so fractional strides never drift.
pub fn end_sample_index(recording: &EegRecording, time: f64) -> i64 {
    ((time - recording.start_time) * recording.sample_rate).round() as i64
}

/// One causal window per frame: the `window` samples ending at the frame time.
pub fn segment_windows(
    recording: &EegRecording,
    frames: &[f64],
    window: usize,
    trial_id: &str,
    subject_id: &str,
) -> Windowing {
    let ch = recording.channels;
    let total = recording.num_samples() as i64;
    let mut out = Windowing::default();
    for (frame_index, &t) in frames.iter().enumerate() {
        let end = end_sample_index(recording, t);
        if end < window as i64 || end > total {
            let msg = if end < window as i64 {
                format!("{trial_id}: frame {frame_index} at {t:.3}s has only {} of {window} preceding samples", end.max(0))
            } else {
                format!("{trial_id}: frame {frame_index} at {t:.3}s is past the end of the recording")
            };
            warn!("{msg}");
            out.warnings.push(msg);
            out.dropped += 1;
            continue;
        }
        let end = end as usize;
        out.windows.push(EegWindow {
            data: recording.samples[(end - window) * ch..end * ch].to_vec(),
            window,
            channels: ch,
            frame_index,
            trial_id: trial_id.to_owned(),
            subject_id: subject_id.to_owned(),
        });
    }
    out
}
