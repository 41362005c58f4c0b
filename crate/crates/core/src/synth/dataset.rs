//! On-disk layout:
//!
//! ```text
//! manifest.json            frame alignment table and split annotations
//! synth_config.json        generator settings
//! template.obj             rest-pose mesh (shared topology and UV chart)
//! trial_k/recording.eegb   raw EEG of trial k, lead-in included
//! trial_k/NNNNN.pmap       position map of video frame NNNNN
//! trial_k/NNNNN.obj        mesh of video frame NNNNN
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_eeg, latent_trajectory, FaceModel, SynthConfig};
use crate::error::{Error, Result};
use crate::geometry::{PositionMap, TriMesh, UvRaster};
use crate::model::{make_splits, PairMeta, PairSource, Splits};
use crate::signal::{
    apply_zscore, fit_norm_stats, load_eegb, save_eegb, segment_windows, EegRecording, EegWindow, NormStats,
    PreprocessConfig, WINDOW,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "synth_config.json";
pub const TEMPLATE_FILE: &str = "template.obj";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Video frame index within the trial.
    pub index: usize,
    /// Frame time in seconds on the trial's recording clock.
    pub time: f64,
    /// `[start, end)` samples of the causal EEG window ending at this frame.
    pub eeg_span: [usize; 2],
    pub pmap_path: String,
    pub obj_path: String,
    pub latent: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub index: usize,
    pub frames: Vec<FrameRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: String,
    pub recording: String,
    pub segments: Vec<SegmentRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub trial: String,
    pub segment: usize,
}

/// Last segment of each training trial is test; the holdout trial is withheld.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub holdout_trial: Option<String>,
    pub train: Vec<SegmentRef>,
    pub test: Vec<SegmentRef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub subject_id: String,
    pub sample_rate: f64,
    pub channels: usize,
    pub fps: f64,
    pub window: usize,
    pub latent_dim: usize,
    pub map_resolution: usize,
    pub template: String,
    pub trials: Vec<TrialRecord>,
    pub split: SplitRecord,
}

impl Manifest {
    pub fn frame_count(&self) -> usize {
        self.trials.iter().flat_map(|t| &t.segments).map(|s| s.frames.len()).sum()
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let file = std::fs::File::open(&path)
            .map_err(|e| Error::Data(format!("cannot open manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Data(format!("malformed manifest {}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Data(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    fn build(cfg: &SynthConfig, latents: &[Vec<f32>]) -> Self {
        let d = cfg.latent_dim;
        let per_segment = cfg.frames_per_segment();
        let lead = cfg.lead_in_frames();
        let holdout = cfg.holdout_trial();
        let mut split = SplitRecord { holdout_trial: holdout.clone(), ..Default::default() };
        let trials = (0..cfg.total_trials())
            .map(|t| {
                let id = cfg.trial_id(t);
                let segments = (0..cfg.segments_per_trial)
                    .map(|s| {
                        if holdout.as_deref() != Some(id.as_str()) {
                            let r = SegmentRef { trial: id.clone(), segment: s };
                            if s + 1 == cfg.segments_per_trial {
                                split.test.push(r);
                            } else {
                                split.train.push(r);
                            }
                        }
                        let frames = (s * per_segment..(s + 1) * per_segment)
                            .map(|k| {
                                let time = (lead + k) as f64 / cfg.fps;
                                let end = (time * cfg.sample_rate).round() as usize;
                                FrameRecord {
                                    index: k,
                                    time,
                                    eeg_span: [end.saturating_sub(WINDOW), end],
                                    pmap_path: format!("{id}/{k:05}.pmap"),
                                    obj_path: format!("{id}/{k:05}.obj"),
                                    latent: latents[t][k * d..(k + 1) * d].to_vec(),
                                }
                            })
                            .collect();
                        SegmentRecord { index: s, frames }
                    })
                    .collect();
                TrialRecord { recording: format!("{id}/recording.eegb"), id, segments }
            })
            .collect();
        Self {
            version: MANIFEST_VERSION,
            subject_id: cfg.subject_id.clone(),
            sample_rate: cfg.sample_rate,
            channels: cfg.channels,
            fps: cfg.fps,
            window: WINDOW,
            latent_dim: d,
            map_resolution: cfg.map_resolution,
            template: TEMPLATE_FILE.into(),
            trials,
            split,
        }
    }
}

/// One trial of generated data.
#[derive(Clone, Debug)]
pub struct TrialData {
    pub id: String,
    pub recording: EegRecording,
    /// Row-major `[frames × D]` latents of the video frames (lead-in excluded).
    pub latents: Vec<f32>,
    /// Vertex positions per video frame; topology is the template's.
    pub vertices: Vec<Vec<[f32; 3]>>,
}

/// A generated dataset held in memory.
///
/// Frames share one topology, so meshes and position maps are produced on
/// demand from per-frame vertices instead of being stored densely.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub config: SynthConfig,
    pub template: TriMesh,
    pub raster: UvRaster,
    pub trials: Vec<TrialData>,
    pub manifest: Manifest,
}

impl SyntheticDataset {
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let face = FaceModel::new(cfg)?;
        let raster = UvRaster::build(&face.template, cfg.map_resolution, cfg.map_resolution);
        let d = cfg.latent_dim;
        let lead = cfg.lead_in_frames() * d;
        let trials = (0..cfg.total_trials())
            .into_par_iter()
            .map(|t| {
                let all = latent_trajectory(cfg, t);
                let recording = generate_eeg(&all, cfg, t)?;
                let latents = all[lead..].to_vec();
                let vertices = latents.chunks_exact(d).map(|e| face.vertices(e)).collect();
                Ok(TrialData { id: cfg.trial_id(t), recording, latents, vertices })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = Manifest::build(cfg, &trials.iter().map(|t| t.latents.clone()).collect::<Vec<_>>());
        Ok(Self { config: cfg.clone(), template: face.template, raster, trials, manifest })
    }

    pub fn frame_count(&self) -> usize {
        self.trials.iter().map(|t| t.vertices.len()).sum()
    }

    pub fn map(&self, trial: usize, frame: usize) -> PositionMap {
        self.raster.apply(&self.trials[trial].vertices[frame])
    }

    pub fn mesh(&self, trial: usize, frame: usize) -> TriMesh {
        self.template.with_vertices(self.trials[trial].vertices[frame].clone())
    }

    /// Write every file of the on-disk layout under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json(&dir.join(CONFIG_FILE), &self.config)?;
        std::fs::write(dir.join(TEMPLATE_FILE), self.template.to_obj())?;
        for (t, (trial, record)) in self.trials.iter().zip(&self.manifest.trials).enumerate() {
            std::fs::create_dir_all(dir.join(&trial.id))?;
            save_eegb(&dir.join(&record.recording), &trial.recording)?;
            record
                .segments
                .par_iter()
                .flat_map(|s| &s.frames)
                .try_for_each(|f| -> Result<()> {
                    self.map(t, f.index).save(&dir.join(&f.pmap_path))?;
                    self.mesh(t, f.index).save_obj(&dir.join(&f.obj_path))
                })?;
        }
        write_json(&dir.join(MANIFEST_FILE), &self.manifest)
    }

    /// Read back a dataset written by [`SyntheticDataset::write`].
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        let config: SynthConfig = serde_json::from_reader(BufReader::new(std::fs::File::open(dir.join(CONFIG_FILE))?))?;
        let template = TriMesh::load_obj(&dir.join(&manifest.template))?;
        let raster = UvRaster::build(&template, manifest.map_resolution, manifest.map_resolution);
        let trials = manifest
            .trials
            .iter()
            .map(|t| {
                let frames: Vec<&FrameRecord> = t.segments.iter().flat_map(|s| &s.frames).collect();
                let vertices = frames
                    .par_iter()
                    .map(|f| Ok(TriMesh::load_obj(&dir.join(&f.obj_path))?.vertices))
                    .collect::<Result<Vec<_>>>()?;
                Ok(TrialData {
                    id: t.id.clone(),
                    recording: load_eegb(&dir.join(&t.recording))?,
                    latents: frames.iter().flat_map(|f| f.latent.iter().copied()).collect(),
                    vertices,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, template, raster, trials, manifest })
    }

    /// Pairs preprocessed with the default chain, targets rasterized on demand.
    pub fn pairs(&self) -> Result<FramePairs> {
        self.pairs_with(&PreprocessConfig::default())
    }

    pub fn pairs_with(&self, pre: &PreprocessConfig) -> Result<FramePairs> {
        let recordings: Vec<&EegRecording> = self.trials.iter().map(|t| &t.recording).collect();
        let prepared = prepare_pairs(&self.manifest, &recordings, pre)?;
        let vertices = self.trials.iter().flat_map(|t| t.vertices.iter().cloned()).collect();
        Ok(FramePairs::new(prepared, Targets::Vertices { raster: self.raster.clone(), frames: vertices }, &self.manifest))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Generate the dataset for `cfg` and write it under `dir`.
pub fn build_dataset(cfg: &SynthConfig, dir: &Path) -> Result<SyntheticDataset> {
    let ds = SyntheticDataset::generate(cfg)?;
    ds.write(dir)?;
    Ok(ds)
}

/// Windows and pair metadata in manifest order, plus the normalization fitted on training trials.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub meta: Vec<PairMeta>,
    pub windows: Vec<EegWindow>,
    pub norm: NormStats,
}

/// Band-pass every trial, z-score with statistics of the non-holdout trials,
/// and cut one causal window per manifest frame.
pub fn prepare_pairs(manifest: &Manifest, recordings: &[&EegRecording], pre: &PreprocessConfig) -> Result<Prepared> {
    pre.validate()?;
    if recordings.len() != manifest.trials.len() {
        return Err(Error::Data(format!("{} recordings for {} trials", recordings.len(), manifest.trials.len())));
    }
    let filtered = recordings.iter().map(|r| pre.bandpass(r)).collect::<Result<Vec<_>>>()?;
    let holdout = manifest.split.holdout_trial.as_deref();
    let fit_on: Vec<EegRecording> = manifest
        .trials
        .iter()
        .zip(&filtered)
        .filter(|(t, _)| Some(t.id.as_str()) != holdout)
        .map(|(_, r)| r.clone())
        .collect();
    let norm = fit_norm_stats(&fit_on)?;
    let mut meta = Vec::with_capacity(manifest.frame_count());
    let mut windows = Vec::with_capacity(manifest.frame_count());
    for (trial, rec) in manifest.trials.iter().zip(&filtered) {
        let rec = apply_zscore(rec, &norm)?;
        let frames: Vec<(usize, &FrameRecord)> = trial.segments.iter().flat_map(|s| s.frames.iter().map(move |f| (s.index, f))).collect();
        let times: Vec<f64> = frames.iter().map(|(_, f)| f.time).collect();
        let cut = segment_windows(&rec, &times, pre.window, &trial.id, &manifest.subject_id);
        if cut.dropped > 0 {
            return Err(Error::Data(format!("trial {}: {} frames lack a full EEG window", trial.id, cut.dropped)));
        }
        for (mut w, (segment, f)) in cut.windows.into_iter().zip(&frames) {
            w.frame_index = f.index;
            meta.push(PairMeta {
                subject_id: manifest.subject_id.clone(),
                trial_id: trial.id.clone(),
                segment: *segment,
                frame_index: f.index,
            });
            windows.push(w);
        }
    }
    Ok(Prepared { meta, windows, norm })
}

enum Targets {
    Vertices { raster: UvRaster, frames: Vec<Vec<[f32; 3]>> },
    Files(Vec<PathBuf>),
}

/// Aligned (EEG window, position map) pairs of a synthetic dataset.
pub struct FramePairs {
    meta: Vec<PairMeta>,
    windows: Vec<EegWindow>,
    targets: Targets,
    pub norm: NormStats,
    pub holdout_trial: Option<String>,
}

impl FramePairs {
    fn new(p: Prepared, targets: Targets, manifest: &Manifest) -> Self {
        Self {
            meta: p.meta,
            windows: p.windows,
            targets,
            norm: p.norm,
            holdout_trial: manifest.split.holdout_trial.clone(),
        }
    }

    /// Pairs of a dataset directory; targets are read from the `.pmap` files
    /// when requested.
    pub fn open(dir: &Path, pre: &PreprocessConfig) -> Result<Self> {
        let manifest = Manifest::load(dir)?;
        let recordings = manifest.trials.iter().map(|t| load_eegb(&dir.join(&t.recording))).collect::<Result<Vec<_>>>()?;
        let prepared = prepare_pairs(&manifest, &recordings.iter().collect::<Vec<_>>(), pre)?;
        Self::from_prepared(dir, &manifest, prepared)
    }

    /// Pairs from windows preprocessed earlier (see [`write_windows`]).
    pub fn from_prepared(dir: &Path, manifest: &Manifest, prepared: Prepared) -> Result<Self> {
        if prepared.meta.len() != manifest.frame_count() {
            return Err(Error::Data(format!(
                "{} windows for {} manifest frames",
                prepared.meta.len(),
                manifest.frame_count()
            )));
        }
        let paths = manifest
            .trials
            .iter()
            .flat_map(|t| &t.segments)
            .flat_map(|s| &s.frames)
            .map(|f| dir.join(&f.pmap_path))
            .collect();
        Ok(Self::new(prepared, Targets::Files(paths), manifest))
    }

    pub fn splits(&self) -> Result<Splits> {
        make_splits(&self.meta, self.holdout_trial.as_deref())
    }

    pub fn windows(&self) -> &[EegWindow] {
        &self.windows
    }
}

impl PairSource for FramePairs {
    fn len(&self) -> usize {
        self.meta.len()
    }

    fn meta(&self, i: usize) -> &PairMeta {
        &self.meta[i]
    }

    fn window(&self, i: usize) -> &EegWindow {
        &self.windows[i]
    }

    fn target(&self, i: usize) -> Result<PositionMap> {
        match &self.targets {
            Targets::Vertices { raster, frames } => Ok(raster.apply(&frames[i])),
            Targets::Files(paths) => PositionMap::load(&paths[i]),
        }
    }
}

const WINDOWS_MAGIC: &[u8; 4] = b"EEGW";
const WINDOWS_VERSION: u32 = 1;

/// Binary archive of preprocessed windows:
///
/// ```text
/// b"EEGW"  u32 version  u32 count  u32 window  u32 channels
/// per window: u32 len + subject, u32 len + trial, u32 segment, u32 frame,
///             f32 data[window × channels]
/// ```
pub fn write_windows<W: Write>(mut w: W, meta: &[PairMeta], windows: &[EegWindow]) -> Result<()> {
    let first = windows.first().ok_or_else(|| Error::Data("no windows to archive".into()))?;
    let u = |v: usize| (v as u32).to_le_bytes();
    w.write_all(WINDOWS_MAGIC)?;
    w.write_all(&WINDOWS_VERSION.to_le_bytes())?;
    for v in [windows.len(), first.window, first.channels] {
        w.write_all(&u(v))?;
    }
    for (m, win) in meta.iter().zip(windows) {
        if win.window != first.window || win.channels != first.channels {
            return Err(Error::dim("write_windows", "windows of differing shape"));
        }
        for s in [&m.subject_id, &m.trial_id] {
            w.write_all(&u(s.len()))?;
            w.write_all(s.as_bytes())?;
        }
        w.write_all(&u(m.segment))?;
        w.write_all(&u(m.frame_index))?;
        let bytes: Vec<u8> = win.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_windows<R: Read>(mut r: R) -> Result<(Vec<PairMeta>, Vec<EegWindow>)> {
    let bad = |m: &str| Error::format("EEGW", m.to_owned());
    let u32_at = |r: &mut R| -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != WINDOWS_MAGIC {
        return Err(bad("bad magic"));
    }
    if u32_at(&mut r)? != WINDOWS_VERSION as usize {
        return Err(bad("unsupported version"));
    }
    let (count, window, channels) = (u32_at(&mut r)?, u32_at(&mut r)?, u32_at(&mut r)?);
    let mut meta = Vec::with_capacity(count);
    let mut windows = Vec::with_capacity(count);
    for _ in 0..count {
        let mut text = || -> Result<String> {
            let n = u32_at(&mut r)?;
            let mut b = vec![0u8; n];
            r.read_exact(&mut b).map_err(|_| bad("truncated id"))?;
            String::from_utf8(b).map_err(|_| bad("id is not UTF-8"))
        };
        let (subject_id, trial_id) = (text()?, text()?);
        let (segment, frame_index) = (u32_at(&mut r)?, u32_at(&mut r)?);
        let mut buf = vec![0u8; window * channels * 4];
        r.read_exact(&mut buf).map_err(|_| bad("truncated window data"))?;
        let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        windows.push(EegWindow { data, window, channels, frame_index, trial_id: trial_id.clone(), subject_id: subject_id.clone() });
        meta.push(PairMeta { subject_id, trial_id, segment, frame_index });
    }
    Ok((meta, windows))
}
