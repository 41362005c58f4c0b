//! One function per subcommand.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use mindmesh::autodiff::{load_checkpoint, save_checkpoint, GradCheckConfig};
use mindmesh::geometry::{kabsch_align, sample_vertices, PositionMap, RigidTransform, TriMesh, UvRaster};
use mindmesh::metrics::MetricReport;
use mindmesh::model::{batch_windows, evaluate, gradient_suite, loss_csv, Model, PairMeta, PairSource, Trainer};
use mindmesh::signal::{apply_zscore, load_eegb, segment_windows, EegWindow, NormStats};
use mindmesh::splat::{init_splats, render, GaussianSplat};
use mindmesh::synth::{build_dataset, read_windows, write_windows, FramePairs, Manifest, Prepared};
use mindmesh::Error;
use serde::Serialize;

use crate::config::RunConfig;
use crate::Failure;

pub const WINDOWS_FILE: &str = "windows.eegw";
pub const NORM_FILE: &str = "norm.json";
pub const FINAL_CHECKPOINT: &str = "model.mmck";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_TEXT: &str = "metrics.txt";
pub const TRANSFORMS_FILE: &str = "transforms.json";

type Outcome = Result<(), Failure>;

pub fn checkpoint_name(step: usize) -> String {
    format!("checkpoint_{step:06}.mmck")
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    std::fs::write(path, text).map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let f = File::open(path).map_err(|e| Failure::Data(format!("cannot open {}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Failure::Data(format!("malformed {}: {e}", path.display())))
}

/// Files in `dir` with extension `ext`, sorted by name.
fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::Data(format!("cannot list {}: {e}", dir.display())))?;
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Failure::Data(format!("no .{ext} files in {}", dir.display())));
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Outcome {
    create_dir(out)?;
    crate::logging::attach_file(out).ok();
    let ds = build_dataset(&cfg.synth, out)?;
    cfg.echo(out)?;
    info!(
        "wrote {} trials, {} frames to {}",
        ds.trials.len(),
        ds.frame_count(),
        out.display()
    );
    Ok(())
}

pub fn preprocess(cfg: &RunConfig, data: &Path, out: &Path) -> Outcome {
    let pairs = FramePairs::open(data, &cfg.preprocess)?;
    create_dir(out)?;
    crate::logging::attach_file(out).ok();
    let meta: Vec<PairMeta> = (0..pairs.len()).map(|i| pairs.meta(i).clone()).collect();
    let path = out.join(WINDOWS_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(Error::from)?);
    write_windows(&mut w, &meta, pairs.windows())?;
    w.flush().map_err(Error::from)?;
    write_json(&out.join(NORM_FILE), &pairs.norm)?;
    cfg.echo(out)?;
    info!("wrote {} windows to {}", meta.len(), path.display());
    Ok(())
}

/// Pairs of the dataset at `data`, from an earlier `preprocess` output when given.
fn open_pairs(cfg: &RunConfig, data: &Path, windows: Option<&Path>) -> Result<FramePairs, Failure> {
    let Some(dir) = windows else {
        return Ok(FramePairs::open(data, &cfg.preprocess)?);
    };
    let manifest = Manifest::load(data)?;
    let f = File::open(dir.join(WINDOWS_FILE)).map_err(|e| Failure::Data(format!("cannot open window archive: {e}")))?;
    let (meta, windows) = read_windows(BufReader::new(f))?;
    let norm: NormStats = read_json(&dir.join(NORM_FILE))?;
    if windows.first().is_some_and(|w| w.window != cfg.preprocess.window) {
        return Err(Failure::Config(format!(
            "archived windows hold {} samples, the config expects {}",
            windows[0].window, cfg.preprocess.window
        )));
    }
    Ok(FramePairs::from_prepared(data, &manifest, Prepared { meta, windows, norm })?)
}

fn init_model(cfg: &RunConfig) -> Result<Model, Failure> {
    Ok(Model::init(cfg.encoder.clone(), cfg.decoder.clone(), cfg.seed)?)
}

pub fn train(cfg: &RunConfig, data: &Path, windows: Option<&Path>, out: &Path) -> Outcome {
    let pairs = open_pairs(cfg, data, windows)?;
    create_dir(out)?;
    crate::logging::attach_file(out).ok();
    cfg.echo(out)?;
    let splits = pairs.splits()?;
    write_json(&out.join(NORM_FILE), &pairs.norm)?;
    info!(
        "training on {} pairs ({} test, {} holdout), {} steps at most",
        splits.train.len(),
        splits.test.len(),
        splits.holdout.len(),
        cfg.train.max_steps.map_or("unbounded".to_string(), |s| s.to_string())
    );
    let mut trainer = Trainer::new(init_model(cfg)?, cfg.train.clone())?;
    let every = cfg.train.checkpoint_every;
    trainer.fit(&pairs, &splits.train, |t, rec| {
        if every.is_some_and(|n| n > 0 && rec.step % n == 0) {
            save_checkpoint(&out.join(checkpoint_name(rec.step)), &t.model.checkpoint_entries())?;
        }
        Ok(())
    })?;
    save_checkpoint(&out.join(FINAL_CHECKPOINT), &trainer.model.checkpoint_entries())?;
    std::fs::write(out.join(LOSS_FILE), loss_csv(&trainer.history)).map_err(Error::from)?;
    if let Some(last) = trainer.history.last() {
        info!("finished after {} steps, final loss {:.6e}", last.step, last.total);
    }
    Ok(())
}

fn load_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Model, Failure> {
    let mut model = init_model(cfg)?;
    match checkpoint {
        Some(path) => {
            let entries = load_checkpoint(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
            model.load_entries(&entries)?;
            info!("loaded {}", path.display());
        }
        None => warn!("no checkpoint given; evaluating the initialized model"),
    }
    Ok(model)
}

pub fn eval(cfg: &RunConfig, data: &Path, checkpoint: Option<&Path>, out: &Path) -> Result<MetricReport, Failure> {
    let model = load_model(cfg, checkpoint)?;
    let pairs = FramePairs::open(data, &cfg.preprocess)?;
    create_dir(out)?;
    crate::logging::attach_file(out).ok();
    let splits = pairs.splits()?;
    let report = evaluate(&model, &pairs, &splits)?;
    std::fs::write(out.join(METRICS_CSV), report.to_csv()?).map_err(Error::from)?;
    std::fs::write(out.join(METRICS_TEXT), report.to_text()).map_err(Error::from)?;
    cfg.echo(out)?;
    print!("{}", report.to_text());
    Ok(report)
}

pub struct InferArgs<'a> {
    pub checkpoint: &'a Path,
    pub eeg: &'a Path,
    pub norm: &'a Path,
    pub template: Option<&'a Path>,
    pub fps: f64,
    pub batch: usize,
    pub out: &'a Path,
}

pub fn infer(cfg: &RunConfig, a: &InferArgs) -> Outcome {
    if !(a.fps > 0.0) || a.batch == 0 {
        return Err(Failure::Config(format!("fps {} and batch {} must be positive", a.fps, a.batch)));
    }
    create_dir(a.out)?;
    crate::logging::attach_file(a.out).ok();
    let model = load_model(cfg, Some(a.checkpoint))?;
    let norm: NormStats = read_json(a.norm)?;
    let raw = load_eegb(a.eeg).map_err(|e| Failure::Data(format!("cannot read {}: {e}", a.eeg.display())))?;
    if raw.channels != cfg.encoder.channels {
        return Err(Failure::Data(format!(
            "{} has {} channels, the model expects {}",
            a.eeg.display(),
            raw.channels,
            cfg.encoder.channels
        )));
    }
    let rec = apply_zscore(&cfg.preprocess.bandpass(&raw)?, &norm)?;

    // Every frame with a full window behind it.
    let window = cfg.preprocess.window;
    let first = (window as f64 / rec.sample_rate * a.fps).ceil() as usize;
    let last = (rec.duration() * a.fps).floor() as usize;
    let frames: Vec<usize> = (first..=last).collect();
    let times: Vec<f64> = frames.iter().map(|&k| rec.start_time + k as f64 / a.fps).collect();
    let cut = segment_windows(&rec, &times, window, &stem(a.eeg), "unknown");
    if cut.windows.is_empty() {
        return Err(Failure::Data(format!("{} is shorter than one {window}-sample window", a.eeg.display())));
    }
    let size = cfg.decoder.output_size();
    let mask = match a.template {
        Some(p) => UvRaster::build(&TriMesh::load_obj(p)?, size, size).mask(),
        None => vec![1; size * size],
    };
    let kept: Vec<(usize, &EegWindow)> = cut.windows.iter().map(|w| (frames[w.frame_index], w)).collect();
    for chunk in kept.chunks(a.batch) {
        let batch: Vec<&EegWindow> = chunk.iter().map(|(_, w)| *w).collect();
        let pred = model.predict(batch_windows(&batch)?)?;
        let per = 3 * size * size;
        for ((k, _), planar) in chunk.iter().zip(pred.data().chunks_exact(per)) {
            let map = PositionMap::from_planar(size, size, planar, mask.clone())?;
            map.save(&a.out.join(format!("{k:05}.pmap")))?;
        }
    }
    cfg.echo(a.out)?;
    info!("wrote {} position maps to {}", kept.len(), a.out.display());
    Ok(())
}

pub fn render_frames(cfg: &RunConfig, maps: &Path, template: &Path, splats: Option<&Path>, out: &Path) -> Outcome {
    create_dir(out)?;
    crate::logging::attach_file(out).ok();
    let template = TriMesh::load_obj(template)?;
    let splats: Vec<GaussianSplat> = match splats {
        Some(p) => read_json(p)?,
        None => init_splats(&template, cfg.splat.init_scale, cfg.splat.init_opacity),
    };
    for s in &splats {
        s.validate()?;
        if s.face >= template.faces.len() {
            return Err(Failure::Data(format!("splat bound to face {} of a {}-face mesh", s.face, template.faces.len())));
        }
    }
    let camera = cfg.splat.camera.camera()?;
    let files = list_files(maps, "pmap")?;
    for path in &files {
        let map = PositionMap::load(path)?;
        let sampled = sample_vertices(&map, &template);
        if !sampled.exceptions.is_empty() {
            warn!("{}: {} vertices kept their template position", path.display(), sampled.exceptions.len());
        }
        let mesh = template.with_vertices(sampled.positions);
        let frame = render(&splats, &mesh, &camera, &cfg.splat.render)?;
        frame.image.save_png(&out.join(format!("{}.png", stem(path))))?;
    }
    cfg.echo(out)?;
    info!("rendered {} frames to {}", files.len(), out.display());
    Ok(())
}

pub fn gradcheck(seeds: u64, report: Option<&Path>) -> Outcome {
    let cfg = GradCheckConfig::default();
    let suite = gradient_suite(0..seeds, &cfg)?;
    println!("{:<20}  {:>12}  result", "case", "max rel err");
    for (name, err, passed) in suite.summary() {
        println!("{name:<20}  {err:>12.3e}  {}", if passed { "PASS" } else { "FAIL" });
    }
    let verdict = if suite.passed() { "PASS" } else { "FAIL" };
    println!("{} seeds, max rel err {:.3e} (tol {:.0e}): {verdict}", seeds, suite.max_rel_error(), cfg.tol);
    if let Some(path) = report {
        write_json(path, &suite)?;
    }
    if suite.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!("gradient check failed, max rel err {:.3e}", suite.max_rel_error())))
    }
}

#[derive(Serialize)]
struct Aligned {
    file: String,
    transform: RigidTransform,
}

pub fn align(input: &Path, out: &Path) -> Outcome {
    let files = list_files(input, "obj")?;
    create_dir(out)?;
    crate::logging::attach_file(out).ok();
    let reference = TriMesh::load_obj(&files[0])?;
    let mut transforms = Vec::with_capacity(files.len());
    for path in &files {
        let mesh = TriMesh::load_obj(path)?;
        if mesh.vertices.len() != reference.vertices.len() {
            return Err(Failure::Data(format!(
                "{} has {} vertices, frame 0 has {}",
                path.display(),
                mesh.vertices.len(),
                reference.vertices.len()
            )));
        }
        let t = kabsch_align(&mesh.vertices, &reference.vertices)?;
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        mesh.with_vertices(t.apply_all(&mesh.vertices)).save_obj(&out.join(&name))?;
        transforms.push(Aligned { file: name, transform: t });
    }
    write_json(&out.join(TRANSFORMS_FILE), &transforms)?;
    info!("aligned {} meshes to {}", files.len(), files[0].display());
    Ok(())
}
