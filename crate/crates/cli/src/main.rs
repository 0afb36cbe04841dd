use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use occseg::dataset::{self, Dataset};
use occseg::evaluation::{evaluate, extract_mesh, segment_mesh, write_labels, NetworkModel, OracleModel, ShapeModel};
use occseg::geometry::input_cloud;
use occseg::models::{Checkpoint, Topology};
use occseg::rng::derive_seed;
use occseg::training::{train, write_loss_csv, Init, TaskSet};
use occseg::{Error, Result};

mod config;

use config::{set, RunConfig};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Occupancy reconstruction, classification and part segmentation on
/// synthetic primitive shapes.
#[derive(Debug, Parser)]
#[command(name = "occseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset: manifest, OCCS samples and OFF meshes.
    GenData {
        /// Comma list of `name` or `name:count` (spheres, dumbbell, table, cross).
        #[arg(long)]
        families: Option<String>,
        /// Number of shapes when the family list has no counts.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Query points stored per shape.
        #[arg(long)]
        n_query: Option<usize>,
        /// Input-cloud noise standard deviation.
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Ground-truth mesh grid resolution.
        #[arg(long)]
        mesh_res: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train a network and write a checkpoint plus a loss CSV.
    Train {
        /// Dataset directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Comma list of rec, cls, seg.
        #[arg(long)]
        tasks: Option<TaskSet>,
        /// parallel or joint.
        #[arg(long)]
        topology: Option<Topology>,
        /// Keep the encoder of the starting checkpoint fixed.
        #[arg(long)]
        freeze_encoder: bool,
        /// Starting checkpoint.
        #[arg(long, value_name = "CKPT")]
        from: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        /// Step at which the learning rate drops by `lr_drop_factor` (config, default 0.1).
        #[arg(long)]
        lr_drop_at: Option<usize>,
        /// Shapes per step.
        #[arg(long)]
        batch_size: Option<usize>,
        /// Query points per shape per step.
        #[arg(long)]
        n_query: Option<usize>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        lambda_cls: Option<f64>,
        #[arg(long)]
        lambda_seg: Option<f64>,
        /// Loss history CSV; defaults to the checkpoint path with a .csv extension.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Output checkpoint.
        #[arg(long, value_name = "CKPT")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint and write a JSON metrics report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_name = "CKPT", required_unless_present = "oracle")]
        ckpt: Option<PathBuf>,
        /// Score the ground-truth oracle instead of a network.
        #[arg(long)]
        oracle: bool,
        /// Comma list of iou, chamfer, acc, miou.
        #[arg(long)]
        metrics: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Extract the predicted surface of one shape as an OFF mesh.
    Reconstruct {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_name = "CKPT", required_unless_present = "oracle")]
        ckpt: Option<PathBuf>,
        /// Use the ground-truth oracle instead of a network.
        #[arg(long)]
        oracle: bool,
        /// Shape id from the manifest.
        #[arg(long)]
        shape: String,
        /// Grid resolution per axis.
        #[arg(long)]
        res: Option<usize>,
        /// Occupancy probability level of the surface.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write per-vertex part labels next to the mesh.
        #[arg(long)]
        segment: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::BadFamilySpec(_)
        | Error::UnknownFamily(_)
        | Error::InvalidArgument { .. } => 2,
        Error::NonFiniteLoss { .. } => 3,
        Error::Io { .. } | Error::Format { .. } | Error::Decode(_) | Error::Json(_) => 4,
        _ => 1,
    }
}

fn print_config(cfg: &RunConfig) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(cfg)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            families,
            count,
            seed,
            n_query,
            noise_sigma,
            mesh_res,
            out,
            common,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            let g = &mut cfg.gen;
            set(&mut g.families, families);
            set(&mut g.count, count);
            set(&mut g.seed, seed);
            set(&mut g.n_query, n_query);
            set(&mut g.noise_sigma, noise_sigma);
            set(&mut g.mesh_resolution, mesh_res);
            if common.print_config {
                return print_config(&cfg);
            }
            let manifest = dataset::generate(&out, &cfg.gen)?;
            eprintln!("wrote {} shapes to {}", manifest.shapes.len(), out.display());
            Ok(())
        }
        Command::Train {
            data,
            tasks,
            topology,
            freeze_encoder,
            from,
            steps,
            seed,
            lr,
            lr_drop_at,
            batch_size,
            n_query,
            noise_sigma,
            lambda_cls,
            lambda_seg,
            loss_csv,
            out,
            common,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            let t = &mut cfg.train;
            set(&mut t.tasks, tasks);
            set(&mut t.topology, topology);
            t.freeze_encoder |= freeze_encoder;
            set(&mut t.steps, steps);
            set(&mut t.seed, seed);
            set(&mut t.adam.lr, lr);
            if lr_drop_at.is_some() {
                t.lr_drop_at = lr_drop_at;
            }
            set(&mut t.batch_size, batch_size);
            set(&mut t.n_query, n_query);
            set(&mut t.noise_sigma, noise_sigma);
            set(&mut t.weights.cls, lambda_cls);
            set(&mut t.weights.seg, lambda_seg);
            if common.print_config {
                return print_config(&cfg);
            }
            cfg.train.validate()?;
            let ds = Dataset::load(&data)?;
            let init = match &from {
                Some(path) => Init::From(Checkpoint::load(path)?.network),
                None => {
                    let mut model = cfg.model.clone();
                    model.n_classes = ds.manifest.n_classes;
                    model.n_parts = ds.manifest.n_parts as usize;
                    Init::Fresh(model)
                }
            };
            let steps = cfg.train.steps;
            let output = train(&ds.shapes, init, &cfg.train, |step, l| {
                if (step + 1) % 100 == 0 || step + 1 == steps {
                    eprintln!(
                        "step {:>6}  rec {:.4}  cls {:.4}  seg {:.4}  total {:.4}",
                        step + 1,
                        l.rec,
                        l.cls,
                        l.seg,
                        l.total
                    );
                }
            })?;
            if output.empty_seg_steps > 0 {
                eprintln!(
                    "warning: {} steps had no interior query points; their segmentation loss was 0",
                    output.empty_seg_steps
                );
            }
            let meta = serde_json::to_value(&cfg.train)?;
            Checkpoint::new(output.network, meta).save(&out)?;
            write_loss_csv(loss_csv.unwrap_or_else(|| out.with_extension("csv")), &output.history)?;
            Ok(())
        }
        Command::Eval {
            data,
            ckpt,
            oracle,
            metrics,
            seed,
            out,
            common,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            if let Some(m) = metrics {
                cfg.eval.metrics = m.parse()?;
            }
            set(&mut cfg.eval.seed, seed);
            if common.print_config {
                return print_config(&cfg);
            }
            let ds = Dataset::load(&data)?;
            let ckpt = load_model(oracle, ckpt.as_deref())?;
            let report = match &ckpt {
                Some(c) => evaluate(&NetworkModel::new(&c.network), &ds.shapes, &ds.ids(), &cfg.eval)?,
                None => evaluate(&OracleModel::default(), &ds.shapes, &ds.ids(), &cfg.eval)?,
            };
            let text = report.to_json()?;
            std::fs::write(&out, text + "\n").map_err(|e| Error::Io { path: out.clone(), source: e })?;
            Ok(())
        }
        Command::Reconstruct {
            data,
            ckpt,
            oracle,
            shape,
            res,
            tau,
            seed,
            segment,
            out,
            common,
        } => {
            let mut cfg = RunConfig::load(common.config.as_deref())?;
            let r = &mut cfg.reconstruct;
            set(&mut r.resolution, res);
            set(&mut r.tau, tau);
            set(&mut r.seed, seed);
            if common.print_config {
                return print_config(&cfg);
            }
            let r = &cfg.reconstruct;
            if !(r.tau > 0.0 && r.tau < 1.0) {
                return Err(Error::Config(format!("tau {} must lie in (0, 1)", r.tau)));
            }
            let ds = Dataset::load(&data)?;
            let index = ds
                .find(&shape)
                .ok_or_else(|| Error::Config(format!("unknown shape id `{shape}`")))?;
            let target = &ds.shapes[index];
            let ckpt = load_model(oracle, ckpt.as_deref())?;
            let oracle_model = OracleModel::default();
            let network_model = ckpt.as_ref().map(|c| NetworkModel::new(&c.network));
            let model: &dyn ShapeModel = match &network_model {
                Some(m) => m,
                None => &oracle_model,
            };
            let cloud = input_cloud(target, r.noise_sigma, derive_seed(r.seed, &[index as u64]));
            let predictor = model.predictor(target, &cloud)?;
            let domain = target.bbox().padded(r.pad_fraction * target.bbox().diagonal());
            let extracted = extract_mesh(predictor.as_ref(), domain, r.resolution, r.tau)?;
            extracted.mesh.write_off(&out)?;
            if segment {
                let labels = if extracted.mesh.is_empty() {
                    Vec::new()
                } else {
                    segment_mesh(predictor.as_ref(), &extracted)?
                };
                write_labels(labels_path(&out), &labels)?;
            }
            eprintln!(
                "{}: {} vertices, {} triangles",
                out.display(),
                extracted.mesh.vertices.len(),
                extracted.mesh.triangles.len()
            );
            Ok(())
        }
    }
}

fn load_model(oracle: bool, ckpt: Option<&Path>) -> Result<Option<Checkpoint>> {
    match (oracle, ckpt) {
        (true, Some(_)) => Err(Error::Config("--oracle and --ckpt are exclusive".into())),
        (true, None) => Ok(None),
        (false, Some(p)) => Checkpoint::load(p).map(Some),
        (false, None) => Err(Error::Config("--ckpt is required".into())),
    }
}

fn labels_path(mesh: &Path) -> PathBuf {
    mesh.with_extension("labels")
}
