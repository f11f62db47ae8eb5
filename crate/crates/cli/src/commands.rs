use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};
use rayon::prelude::*;

use backmap_core::backmap::model::FitMetadata;
use backmap_core::backmap::{
    backmap, fit_tables, prepare_frames, train_torsion_net, BackmapError, BackmapModel, BackmapOptions, FeatureSpec,
    TrainConfig,
};
use backmap_core::fetch::{validate_entry_id, FetchClient, UreqTransport};
use backmap_core::metrics::{distance_histogram, evaluate_frame, pair_distances, AtomSpec, Histogram, MetricsReport};
use backmap_core::pdb::{parse_pdb_logged, write_pdb_frames};
use backmap_core::preprocess::{preprocess, PreprocessPolicy};
use backmap_core::stats::{compactness_csv, compactness_stats};
use backmap_core::structure::cg_map;
use backmap_core::topology::Exclusions;
use backmap_core::zmatrix::{extract, parse_zmatrix_text, reconstruct_frame, write_zmatrix_text, ZMatrixError};
use backmap_core::{metrics, CGTrace, Ensemble, Structure};

use crate::{BackmapArgs, Command, FitArgs, StatsArgs, ZmatCommand};

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Numeric(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Data(e) | Failure::Numeric(e) => format!("{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<ZMatrixError> for Failure {
    fn from(e: ZMatrixError) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.into())
        } else {
            Failure::Data(e.into())
        }
    }
}

impl From<BackmapError> for Failure {
    fn from(e: BackmapError) -> Self {
        if e.is_numeric() {
            Failure::Numeric(e.into())
        } else {
            Failure::Data(e.into())
        }
    }
}

type Outcome<T = ()> = Result<T, Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Fetch { ids, out } => cmd_fetch(&ids, &out),
        Command::Preprocess { input, output, cap, seed, log } => cmd_preprocess(&input, &output, cap, seed, log),
        Command::Zmat(ZmatCommand::Extract { input, output }) => cmd_zmat_extract(&input, &output),
        Command::Zmat(ZmatCommand::Rebuild { zmatrix, trace, out }) => cmd_zmat_rebuild(&zmatrix, &trace, &out),
        Command::Fit(args) => cmd_fit(&args),
        Command::Backmap(args) => with_threads(args.threads, || cmd_backmap(&args)),
        Command::Eval { truth, generated, report, bond_tol, threads } => {
            with_threads(threads, || cmd_eval(&truth, &generated, report.as_deref(), bond_tol))
        }
        Command::Stats(args) => cmd_stats(&args),
    }
}

fn with_threads(threads: Option<usize>, f: impl FnOnce() -> Outcome + Send) -> Outcome {
    match threads {
        Some(0) => Err(Failure::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Failure::Data(anyhow!(e)))?
            .install(f),
        None => f(),
    }
}

fn read_ensemble(path: &Path) -> anyhow::Result<Ensemble> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let (mut ensemble, notes) = parse_pdb_logged(file).with_context(|| format!("reading {}", path.display()))?;
    for note in notes {
        info!("{}: {note}", path.display());
    }
    ensemble.id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(ensemble)
}

/// Parse and clean, keeping every frame.
fn read_clean(path: &Path) -> anyhow::Result<Ensemble> {
    let raw = read_ensemble(path)?;
    let policy = PreprocessPolicy { frame_cap: usize::MAX, ..Default::default() };
    let (clean, _) = preprocess(&raw, &policy).with_context(|| format!("preprocessing {}", path.display()))?;
    Ok(clean)
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn traces(ensemble: &Ensemble) -> anyhow::Result<Vec<CGTrace>> {
    ensemble.frames.iter().map(|f| cg_map(f).map_err(anyhow::Error::from)).collect()
}

fn cmd_fetch(ids: &[String], out: &Path) -> Outcome {
    let client = FetchClient::new(Box::new(UreqTransport::default()));
    for id in ids {
        if let Err(e) = validate_entry_id(id) {
            return Err(Failure::Usage(e.to_string()));
        }
        if let Some(path) = client.cached_path(id, out) {
            info!("cache hit for {id}");
            println!("{}", path.display());
            continue;
        }
        info!("fetching {id} from {}", client.url_for(id));
        match client.fetch_entry(id, out) {
            Ok(path) => println!("{}", path.display()),
            Err(e) => return Err(Failure::Data(anyhow!(e).context(format!("fetching {id}")))),
        }
    }
    Ok(())
}

fn cmd_preprocess(input: &Path, output: &Path, cap: usize, seed: u64, log_path: Option<PathBuf>) -> Outcome {
    if cap == 0 {
        return Err(Failure::Usage("--cap must be at least 1".into()));
    }
    let raw = read_ensemble(input)?;
    let (clean, log) = preprocess(&raw, &PreprocessPolicy { frame_cap: cap, seed })
        .with_context(|| format!("preprocessing {}", input.display()))?;
    write_file(output, &write_pdb_frames(&clean.frames).map_err(anyhow::Error::from)?)?;
    let log_path = log_path.unwrap_or_else(|| with_suffix(output, ".log"));
    write_file(&log_path, &log.to_text())?;
    info!(
        "seed {seed}: {} -> {} frames, {} hydrogens removed, {} terminal residues masked; log at {}",
        log.frames_in,
        log.frames_out,
        log.hydrogens_removed,
        log.terminal_residues,
        log_path.display()
    );
    Ok(())
}

fn cmd_zmat_extract(input: &Path, output: &Path) -> Outcome {
    let ensemble = read_clean(input)?;
    let frames = ensemble
        .frames
        .iter()
        .zip(traces(&ensemble)?)
        .map(|(f, t)| extract(f, &t))
        .collect::<Result<Vec<_>, _>>()?;
    write_file(output, &write_zmatrix_text(&frames))?;
    info!("{} frames, {} rows per frame", frames.len(), frames.first().map_or(0, |f| f.row_count()));
    Ok(())
}

fn cmd_zmat_rebuild(zpath: &Path, trace_path: &Path, out: &Path) -> Outcome {
    let reference = read_clean(trace_path)?;
    let traces = traces(&reference)?;
    let text = fs::read_to_string(zpath).with_context(|| format!("cannot read {}", zpath.display()))?;
    let zframes = parse_zmatrix_text(&text, &traces)?;
    let rebuilt = zframes
        .iter()
        .enumerate()
        .map(|(k, z)| {
            let trace = if traces.len() == 1 { &traces[0] } else { &traces[k] };
            reconstruct_frame(trace, z).map(|mut s| {
                s.frame_id = k;
                s
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_file(out, &write_pdb_frames(&rebuilt).map_err(anyhow::Error::from)?)?;
    let all_atom = reference.frames[0].masked_atoms().len() > reference.frames[0].residues().filter(|r| !r.is_terminal()).count();
    if all_atom && reference.frames.len() == rebuilt.len() {
        let mut worst: f64 = 0.0;
        for (k, (truth, gen)) in reference.frames.iter().zip(&rebuilt).enumerate() {
            let r = metrics::rmsd(truth, gen).map_err(anyhow::Error::from)?;
            worst = worst.max(r);
            println!("frame {k} rmsd {r:.3e}");
        }
        println!("max_rmsd {worst:.3e}");
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs) -> Outcome {
    if args.cap == 0 || args.batch == 0 || args.lr.is_nan() || args.lr <= 0.0 {
        return Err(Failure::Usage("--cap, --batch and --lr must be positive".into()));
    }
    let policy = PreprocessPolicy { frame_cap: args.cap, seed: args.seed };
    let mut ensembles = Vec::new();
    for path in &args.inputs {
        let raw = read_ensemble(path)?;
        let (clean, _) = preprocess(&raw, &policy).with_context(|| format!("preprocessing {}", path.display()))?;
        ensembles.push(clean);
    }
    let frames = prepare_frames(&ensembles)?;
    if frames.is_empty() {
        return Err(Failure::Data(anyhow!("no frames to fit")));
    }
    let tables = fit_tables(frames.iter().map(|f| &f.zmatrix));
    let mut metadata = FitMetadata::new(ensembles.iter().map(|e| e.id.clone()).collect(), args.seed);
    metadata.frames = frames.len();
    let mut model = BackmapModel::from_tables(tables, metadata);
    model.feature_spec = FeatureSpec { window: args.window };
    info!("fitted tables on {} frames (seed {})", frames.len(), args.seed);

    if args.train_net {
        let config = TrainConfig {
            learning_rate: args.lr,
            epochs: args.epochs,
            batch_size: args.batch,
            seed: args.seed,
            ..Default::default()
        };
        let outcome = train_torsion_net(&frames, &model.tables, &model.feature_spec, &config)?;
        info!(
            "trained torsion net: mean L_recon {:.6} -> {:.6}",
            outcome.trajectory[0],
            outcome.trajectory.last().copied().unwrap_or(f64::NAN)
        );
        let mut csv = String::from("epoch,mean_recon_loss\n");
        for (epoch, loss) in outcome.trajectory.iter().enumerate() {
            csv.push_str(&format!("{epoch},{loss:.8}\n"));
        }
        write_file(&args.loss_csv.clone().unwrap_or_else(|| with_suffix(&args.model, ".loss.csv")), &csv)?;
        model.net = Some(outcome.net);
        model.fit_metadata.loss_trajectory = outcome.trajectory;
        model.fit_metadata.train_config = Some(config);
    }
    write_file(&args.model, &model.to_json())?;
    Ok(())
}

fn cmd_backmap(args: &BackmapArgs) -> Outcome {
    let text = fs::read_to_string(&args.model).with_context(|| format!("cannot read {}", args.model.display()))?;
    let model = BackmapModel::from_json(&text)?;
    let input = read_clean(&args.input)?;
    let has_side_atoms = input.frames[0].residues().any(|r| r.residue.atoms.iter().any(|a| a.name.as_str() != "CA"));
    if has_side_atoms && !args.cg_map {
        return Err(Failure::Usage(format!(
            "{} contains atoms other than CA; pass --cg-map to backmap its alpha-carbon trace",
            args.input.display()
        )));
    }
    let traces = traces(&input)?;
    let generated: Vec<Structure> = traces
        .par_iter()
        .enumerate()
        .map(|(k, trace)| {
            let options = BackmapOptions { mode: args.mode, seed: args.seed.wrapping_add(k as u64), allow_fallback: !args.no_fallback };
            backmap(trace, &model, &options).map(|mut s| {
                s.frame_id = k;
                s
            })
        })
        .collect::<Result<_, _>>()?;
    if !args.no_fallback {
        let kinds = input.frames[0].residues().filter(|r| !r.is_terminal()).map(|r| r.residue.kind);
        for kind in kinds.collect::<std::collections::BTreeSet<_>>() {
            if model.tables.uses_fallback(kind) {
                warn!("residue type {kind} uses fallback statistics");
            }
        }
    }
    let mode = match args.mode {
        backmap_core::backmap::Mode::Deterministic => "deterministic",
        backmap_core::backmap::Mode::Stochastic => "stochastic",
    };
    let header = format!("REMARK   1 BACKMAP MODE {mode} SEED {}\n", args.seed);
    write_file(&args.out, &(header + &write_pdb_frames(&generated).map_err(anyhow::Error::from)?))?;
    info!("{} frames written to {} (mode {mode}, seed {})", generated.len(), args.out.display(), args.seed);
    Ok(())
}

fn cmd_eval(truth_path: &Path, gen_path: &Path, report: Option<&Path>, bond_tol: f64) -> Outcome {
    let truth = read_clean(truth_path)?;
    let generated = read_clean(gen_path)?;
    if truth.frames.len() != 1 && truth.frames.len() != generated.frames.len() {
        return Err(Failure::Data(anyhow!(
            "{} truth frames for {} generated frames",
            truth.frames.len(),
            generated.frames.len()
        )));
    }
    let exclusions = Exclusions::for_chains(&truth.frames[0].sequence());
    let frames = generated
        .frames
        .par_iter()
        .enumerate()
        .map(|(k, gen)| {
            let t = if truth.frames.len() == 1 { &truth.frames[0] } else { &truth.frames[k] };
            evaluate_frame(k, t, gen, &exclusions, bond_tol)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(anyhow::Error::from)?;
    let report_json = serde_json::to_string_pretty(&MetricsReport::from_frames(frames)).expect("report serializes");
    match report {
        Some(path) => write_file(path, &(report_json + "\n"))?,
        None => println!("{report_json}"),
    }
    Ok(())
}

fn cmd_stats(args: &StatsArgs) -> Outcome {
    if !(args.bin_width > 0.0 && args.hist_max > 0.0) {
        return Err(Failure::Usage("--bin-width and --hist-max must be positive".into()));
    }
    let pair = match &args.pair {
        Some(spec) => {
            let (a, b) = spec.split_once(',').ok_or_else(|| Failure::Usage(format!("--pair expects two atoms, got `{spec}`")))?;
            let parse = |s: &str| s.trim().parse::<AtomSpec>().map_err(|e| Failure::Usage(e.to_string()));
            Some((parse(a)?, parse(b)?))
        }
        None => None,
    };
    let ensembles = args.inputs.iter().map(|p| read_clean(p)).collect::<anyhow::Result<Vec<_>>>()?;

    let table = compactness_csv(&compactness_stats(&ensembles));
    match &args.csv {
        Some(path) => write_file(path, &table)?,
        None => print!("{table}"),
    }
    if let Some(path) = &args.hist {
        let mut total = Histogram::new(args.hist_max, args.bin_width);
        for e in &ensembles {
            let exclusions = Exclusions::for_chains(&e.frames[0].sequence());
            let h = distance_histogram(&e.frames, &exclusions, args.hist_max, args.bin_width);
            for (t, c) in total.counts.iter_mut().zip(h.counts) {
                *t += c;
            }
        }
        write_file(path, &total.to_csv())?;
    }
    if let Some((a, b)) = pair {
        let mut csv = String::from("entry,frame,distance\n");
        for e in &ensembles {
            for (k, d) in pair_distances(&e.frames, &a, &b).map_err(anyhow::Error::from)?.into_iter().enumerate() {
                csv.push_str(&format!("{},{k},{d:.4}\n", e.id));
            }
        }
        match &args.pair_csv {
            Some(path) => write_file(path, &csv)?,
            None => print!("{csv}"),
        }
    }
    Ok(())
}
