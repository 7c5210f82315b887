use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pcsig::ingest::{self, CsvOptions, Dataset};
use pcsig::pipeline::{self, AnalysisConfig};
use pcsig::synthgen::{self, Scenario, SyntheticSpec};
use pcsig::{Error, Result};
use serde_json::json;

use crate::{AnalysisFlags, AnalyzeArgs, Format, SynthArgs, ValidateArgs};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a sibling temporary file so readers never see a partial file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, contents),
        None => std::io::stdout()
            .write_all(contents.as_bytes())
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

impl AnalysisFlags {
    fn config(&self) -> AnalysisConfig {
        AnalysisConfig {
            alpha: self.alpha,
            null_samples: self.null_samples,
            iters: self.iters,
            seed: self.seed,
            q_min: self.q_min,
            q_max: self.q_max,
            missing_threshold: self.missing_threshold,
        }
    }

    /// Runs `f` on a pool of the requested size.
    fn in_pool<T: Send>(&self, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(Error::Config("--workers must be at least 1".into()));
            }
            builder = builder.num_threads(w);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(f)
    }
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let cfg = args.analysis.config();
    cfg.validate()?;
    let schema = match &args.schema {
        Some(path) => ingest::read_schema(path)?,
        None => ingest::continuous_schema_from_header(&args.data, args.label_column.as_deref())?,
    };
    let mut opts = CsvOptions {
        label_column: args.label_column.clone(),
        ..CsvOptions::default()
    };
    if !args.missing_tokens.is_empty() {
        opts.missing_tokens = args.missing_tokens.clone();
    }
    let raw = ingest::load_csv(&args.data, &schema, &opts)?;
    let id = args
        .data
        .file_name()
        .map_or_else(|| args.data.display().to_string(), |f| f.to_string_lossy().into_owned());
    let (processed, report) = args.analysis.in_pool(|| pipeline::analyze_dataset(&raw, &id, &cfg))?;

    let text = match args.format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv(),
    };
    if let Some(dir) = &args.processed_dir {
        write_processed(dir, &processed)?;
    }
    emit(args.out.as_deref(), &text)
}

fn write_processed(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    ingest::write_matrix_and_mask(ds, &dir.join("matrix.csv"), &dir.join("mask.csv"))?;
    write_atomic(&dir.join("provenance.jsonl"), &ds.provenance.to_text())
}

fn parse_scenario(s: &str) -> Result<Scenario> {
    s.parse()
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let specs: Vec<(String, SyntheticSpec)> = if let Some(scenario) = &args.scenario {
        let scenario = parse_scenario(scenario)?;
        if args.replicates == 0 {
            return Err(Error::Config("--replicates must be at least 1".into()));
        }
        synthgen::scenario_grid_replicates(scenario, args.seed, args.replicates)
            .into_iter()
            .enumerate()
            .map(|(k, s)| {
                let name = format!(
                    "{scenario}_{}x{}_w{}_r{}.csv",
                    s.n_rows,
                    s.n_cols,
                    s.n_significant,
                    k % args.replicates
                );
                (name, s)
            })
            .collect()
    } else if let Some(path) = &args.spec {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let spec: SyntheticSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        vec![(spec_file_name(&spec), spec)]
    } else if let (Some(n), Some(p), Some(w)) = (args.rows, args.cols, args.significant) {
        let spec = SyntheticSpec::new(n, p, w, args.seed);
        vec![(spec_file_name(&spec), spec)]
    } else {
        return Err(Error::Config(
            "give --rows/--cols/--significant, --scenario, or --spec".into(),
        ));
    };
    for (_, spec) in &specs {
        spec.validate()?;
    }

    fs::create_dir_all(&args.out_dir).map_err(io_err(&args.out_dir))?;
    let mut manifest = Vec::new();
    for (name, spec) in &specs {
        let ds = Dataset::from_matrix(synthgen::generate(spec)?, name.clone());
        let mut buf = Vec::new();
        ingest::write_csv(&ds, &mut buf, "NA")?;
        let text = String::from_utf8(buf).expect("csv output is UTF-8");
        write_atomic(&args.out_dir.join(name), &text)?;
        manifest.push(json!({ "file": name, "spec": spec }));
    }
    let manifest = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&args.out_dir.join("manifest.json"), &manifest)
}

fn spec_file_name(spec: &SyntheticSpec) -> String {
    format!(
        "synth_{}x{}_w{}_seed{}.csv",
        spec.n_rows, spec.n_cols, spec.n_significant, spec.seed
    )
}

pub fn validate(args: ValidateArgs) -> Result<()> {
    let scenario = parse_scenario(&args.scenario)?;
    if args.replicates == 0 {
        return Err(Error::Config("--replicates must be at least 1".into()));
    }
    let cfg = args.analysis.config();
    cfg.validate()?;
    let (runs, rows) = args.analysis.in_pool(|| {
        pipeline::run_validation(scenario, args.replicates, args.data_seed, &cfg, |run| {
            eprintln!(
                "{}x{} w={} seed={}: q={} estimate={}",
                run.spec.n_rows, run.spec.n_cols, run.spec.n_significant, run.spec.seed, run.q, run.w_estimate
            );
        })
    })?;
    if let Some(path) = &args.runs_out {
        let mut text = String::from("n,p,w,seed,q,w_estimate\n");
        for r in &runs {
            text += &format!(
                "{},{},{},{},{},{}\n",
                r.spec.n_rows, r.spec.n_cols, r.spec.n_significant, r.spec.seed, r.q, r.w_estimate
            );
        }
        write_atomic(path, &text)?;
    }
    emit(args.out.as_deref(), &pipeline::validation_csv(&rows))
}
